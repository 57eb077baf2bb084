//! Experiment config (`[system]`, `[distribution]`, `[sweep]`) and the
//! users CSV table.

use std::path::Path;

use meco::sim::{AccessMode, ScenarioDistribution};
use meco::{CloudModel, Scenario, SystemConfig, UserProfile};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every field is optional; missing ones fall back to the defaults of the
/// access mode being run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub distribution: DistributionSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub bandwidth_hz: Option<f64>,
    pub noise_w: Option<f64>,
    pub subchannel_bandwidth_hz: Option<f64>,
    pub subchannel_noise_w: Option<f64>,
    pub slot_s: Option<f64>,
    pub subchannels: Option<usize>,
    pub cloud: Option<CloudModel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSection {
    pub users: Option<usize>,
    pub mean_gain: Option<f64>,
    pub cpu_hz_set: Option<Vec<f64>>,
    pub energy_per_cycle: Option<(f64, f64)>,
    pub data_kb: Option<(f64, f64)>,
    pub cycles_per_bit: Option<(f64, f64)>,
    pub weight: Option<f64>,
    pub bits_per_kb: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
    pub policies: Option<Vec<String>>,
    pub realizations: Option<usize>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("{}: {msg}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn system(&self, mode: AccessMode) -> Result<SystemConfig, CliError> {
        let base = match mode {
            AccessMode::Tdma => SystemConfig::tdma_default(),
            AccessMode::Ofdma => SystemConfig::ofdma_default(),
        };
        let s = &self.system;
        let cfg = SystemConfig {
            bandwidth_hz: s.bandwidth_hz.unwrap_or(base.bandwidth_hz),
            noise_w: s.noise_w.unwrap_or(base.noise_w),
            subchannel_bandwidth_hz: s.subchannel_bandwidth_hz.unwrap_or(base.subchannel_bandwidth_hz),
            subchannel_noise_w: s.subchannel_noise_w.unwrap_or(base.subchannel_noise_w),
            slot_s: s.slot_s.unwrap_or(base.slot_s),
            subchannels: s.subchannels.unwrap_or(base.subchannels),
            cloud: s.cloud.unwrap_or(base.cloud),
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[system]: {e}")))?;
        Ok(cfg)
    }

    pub fn distribution(&self, mode: AccessMode, seed: Option<u64>) -> Result<ScenarioDistribution, CliError> {
        let base = match mode {
            AccessMode::Tdma => ScenarioDistribution::default(),
            AccessMode::Ofdma => ScenarioDistribution::ofdma_default(),
        };
        let d = self.distribution.clone();
        let dist = ScenarioDistribution {
            users: d.users.unwrap_or(base.users),
            mean_gain: d.mean_gain.unwrap_or(base.mean_gain),
            cpu_hz_set: d.cpu_hz_set.unwrap_or(base.cpu_hz_set),
            energy_per_cycle: d.energy_per_cycle.unwrap_or(base.energy_per_cycle),
            data_kb: d.data_kb.unwrap_or(base.data_kb),
            cycles_per_bit: d.cycles_per_bit.unwrap_or(base.cycles_per_bit),
            weight: d.weight.unwrap_or(base.weight),
            bits_per_kb: d.bits_per_kb.unwrap_or(base.bits_per_kb),
            seed: seed.or(d.seed).unwrap_or(base.seed),
        };
        dist.validate().map_err(|e| CliError::Config(format!("[distribution]: {e}")))?;
        Ok(dist)
    }
}

/// One row of the users table; sub-channel gains are `;`-separated.
#[derive(Debug, Serialize, Deserialize)]
struct UserRow {
    weight: f64,
    cycles_per_bit: f64,
    energy_per_cycle: f64,
    cpu_hz: f64,
    data_bits: f64,
    gain: f64,
    #[serde(default)]
    subchannel_gains: String,
}

pub fn users_to_csv(users: &[UserProfile]) -> Result<String, CliError> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["weight", "cycles_per_bit", "energy_per_cycle", "cpu_hz", "data_bits", "gain", "subchannel_gains"])
        .map_err(|e| CliError::Config(e.to_string()))?;
    for u in users {
        let gains: Vec<String> = u.subchannel_gains.iter().map(|g| g.to_string()).collect();
        out.write_record([
            u.weight.to_string(),
            u.cycles_per_bit.to_string(),
            u.energy_per_cycle.to_string(),
            u.cpu_hz.to_string(),
            u.data_bits.to_string(),
            u.gain.to_string(),
            gains.join(";"),
        ])
        .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(e.to_string()))
}

pub fn users_from_csv(text: &str) -> Result<Vec<UserProfile>, CliError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut users = Vec::new();
    for (i, row) in reader.deserialize::<UserRow>().enumerate() {
        let row = row.map_err(|e| CliError::Config(format!("users table row {}: {e}", i + 1)))?;
        let subchannel_gains = row
            .subchannel_gains
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("users table row {}: bad sub-channel gain: {e}", i + 1)))?;
        users.push(UserProfile {
            weight: row.weight,
            cycles_per_bit: row.cycles_per_bit,
            energy_per_cycle: row.energy_per_cycle,
            cpu_hz: row.cpu_hz,
            data_bits: row.data_bits,
            gain: row.gain,
            subchannel_gains,
        });
    }
    Ok(users)
}

/// Loads a scenario: a TOML scenario file, or a users CSV paired with the
/// `[system]` section of the config.
pub fn load_scenario(path: &Path, config: &Config, mode: AccessMode) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let scenario = if is_csv {
        Scenario::new(config.system(mode)?, users_from_csv(&text)?)
    } else {
        Scenario::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    let checked = match mode {
        AccessMode::Tdma => scenario.validate(),
        AccessMode::Ofdma => scenario.validate_ofdma(),
    };
    checked.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_published_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.system(AccessMode::Tdma).unwrap(), SystemConfig::tdma_default());
        assert_eq!(c.system(AccessMode::Ofdma).unwrap(), SystemConfig::ofdma_default());
        assert_eq!(c.distribution(AccessMode::Tdma, None).unwrap().users, 30);
        assert_eq!(c.distribution(AccessMode::Ofdma, None).unwrap().users, 8);
    }

    #[test]
    fn sections_override_defaults() {
        let c = Config::parse(
            "[system]\nslot_s = 0.02\ncloud = { kind = \"shared-cpu\", cycles_per_s = 1e10 }\n\
             [distribution]\nusers = 4\ndata_kb = [10.0, 20.0]\nseed = 3\n\
             [sweep]\naxis = \"T\"\nvalues = [0.05, 0.1]\n",
        )
        .unwrap();
        let sys = c.system(AccessMode::Tdma).unwrap();
        assert_eq!(sys.slot_s, 0.02);
        assert_eq!(sys.cloud, CloudModel::SharedCpu { cycles_per_s: 1e10 });
        let d = c.distribution(AccessMode::Tdma, Some(9)).unwrap();
        assert_eq!((d.users, d.data_kb, d.seed), (4, (10.0, 20.0), 9));
        assert_eq!(c.sweep.values, Some(vec![0.05, 0.1]));
    }

    #[test]
    fn errors_point_at_the_line() {
        let err = Config::parse("[system]\nslot_s = 0.1\nslot = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = Config::parse("[system]\nslot_s = -1.0\n").unwrap().system(AccessMode::Tdma).unwrap_err();
        assert!(err.to_string().contains("slot"), "{err}");
    }

    #[test]
    fn users_table_round_trips() {
        let users = vec![
            UserProfile {
                weight: 1.0,
                cycles_per_bit: 733.1,
                energy_per_cycle: 1.2345678901234567e-10,
                cpu_hz: 3e8,
                data_bits: 1638400.0,
                gain: 0.1 + 0.2,
                subchannel_gains: vec![1e-3, 2.5e-4],
            },
            UserProfile {
                weight: 2.0,
                cycles_per_bit: 1000.0,
                energy_per_cycle: 0.0,
                cpu_hz: 1e9,
                data_bits: 0.0,
                gain: 1e-3,
                subchannel_gains: Vec::new(),
            },
        ];
        let text = users_to_csv(&users).unwrap();
        assert!(text.starts_with("weight,cycles_per_bit,"));
        assert_eq!(users_from_csv(&text).unwrap(), users);
        assert!(users_from_csv("weight,cycles_per_bit\n1,x\n").is_err());
    }
}
