use std::path::Path;

use meco::model::min_offload;
use meco::oracle::{oracle_ofdma_exhaustive, oracle_tdma, OracleResolution, TdmaVariant};
use meco::sim::{self, AccessMode, Policy, ScenarioDistribution, SweepAxis};
use meco::tdma::{self, TdmaSolverOptions};
use meco::{ofdma, CloudModel, PolicyReport, Scenario, SystemConfig};
use serde::Serialize;

use crate::config::{load_scenario, Config};
use crate::CliError;

#[derive(Serialize)]
struct SolveOutput<A: Serialize> {
    policy: &'static str,
    report: PolicyReport,
    allocation: A,
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn solve(path: &Path, config: &Config, mode: AccessMode, policy: Policy) -> Result<String, CliError> {
    if policy.mode() != mode {
        return Err(CliError::Config(format!("policy {} does not apply to this access mode", policy.name())));
    }
    let scenario = load_scenario(path, config, mode)?;
    let opts = TdmaSolverOptions::default();
    let cloud = scenario.system.cloud;
    let name = policy.name();
    match mode {
        AccessMode::Tdma => {
            let (allocation, report) = match (policy, cloud) {
                (Policy::Equal, _) => tdma::baseline_equal_allocation(&scenario)?,
                (_, CloudModel::Infinite) => tdma::solve_infinite(&scenario, &opts)?,
                (Policy::Suboptimal, CloudModel::BoundedLoad { .. }) => tdma::solve_finite_suboptimal(&scenario, &opts)?,
                (_, CloudModel::BoundedLoad { .. }) => tdma::solve_finite_optimal(&scenario, &opts)?,
                (_, CloudModel::SharedCpu { .. }) => tdma::solve_shared_cpu(&scenario, &opts)?,
            };
            to_json(&SolveOutput { policy: name, report, allocation })
        }
        AccessMode::Ofdma => {
            let (allocation, report) = match (policy, cloud) {
                (Policy::Greedy, _) => ofdma::baseline_greedy(&scenario)?,
                (_, CloudModel::BoundedLoad { .. }) => ofdma::solve_ofdma_suboptimal_finite(&scenario, &opts)?,
                _ => ofdma::solve_ofdma_suboptimal(&scenario, &opts)?,
            };
            to_json(&SolveOutput { policy: name, report, allocation })
        }
    }
}

pub fn generate(config: &Config, mode: AccessMode, seed: Option<u64>, realization: u64) -> Result<Scenario, CliError> {
    let dist = config.distribution(mode, seed)?;
    let cfg = config.system(mode)?;
    Ok(sim::generate_scenario(&dist, &cfg, mode, realization)?)
}

pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub policies: Vec<Policy>,
    pub realizations: usize,
    pub seed: Option<u64>,
}

pub const SWEEP_HEADER: [&str; 6] = ["axis_value", "policy", "mean_energy_J", "std_energy_J", "n_ok", "n_failed"];

pub fn sweep(config: &Config, spec: &SweepSpec) -> Result<String, CliError> {
    let mode = spec.policies[0].mode();
    if spec.policies.iter().any(|p| p.mode() != mode) {
        return Err(CliError::Config("a sweep cannot mix TDMA and OFDMA policies".into()));
    }
    if spec.values.is_empty() {
        return Err(CliError::Config("no sweep values given".into()));
    }
    let dist = config.distribution(mode, spec.seed)?;
    let cfg = config.system(mode)?;
    let rows = sim::sweep(&dist, &cfg, spec.axis, &spec.values, &spec.policies, spec.realizations, &TdmaSolverOptions::default())
        .map_err(|e| match e {
            meco::Error::Invalid(msg) => CliError::Config(msg),
            other => CliError::Solver(other),
        })?;
    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    out.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for row in rows {
        let s = &row.stats;
        out.write_record([
            row.axis_value.to_string(),
            s.policy.name().to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.n_ok.to_string(),
            s.n_failed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(e.to_string()))
}

struct Check {
    name: &'static str,
    instances: usize,
    worst: f64,
    ok: bool,
}

fn small_distribution(users: usize, seed: u64) -> ScenarioDistribution {
    ScenarioDistribution {
        users,
        data_kb: (10.0, 300.0),
        cpu_hz_set: (1..=10).map(|i| i as f64 * 1e9).collect(),
        seed,
        ..ScenarioDistribution::default()
    }
}

fn forced_cycles(s: &Scenario) -> f64 {
    s.users.iter().map(|u| min_offload(u, s.system.slot_s) * u.cycles_per_bit).sum()
}

/// Solver energy divided by oracle energy on `instances` random scenarios
/// per check.
pub fn validate(seed: u64, instances: usize) -> Result<(String, bool), CliError> {
    if instances == 0 {
        return Err(CliError::Config("need at least one instance".into()));
    }
    let opts = TdmaSolverOptions::default();
    let tdma_cfg = SystemConfig { cloud: CloudModel::Infinite, ..SystemConfig::tdma_default() };
    let in_band = |r: f64| (0.999..=1.005).contains(&r);
    let mut checks = Vec::new();

    let mut worst = 1.0f64;
    let mut ok = true;
    for i in 0..instances {
        let k = 1 + i % 3;
        let s = sim::generate_scenario(&small_distribution(k, seed), &tdma_cfg, AccessMode::Tdma, i as u64)?;
        let e = tdma::solve_infinite(&s, &opts)?.1.total_weighted_energy;
        let (_, o) = oracle_tdma(&s, TdmaVariant::Unbounded, OracleResolution::for_users(k, 8_000))?;
        let r = e / o;
        ok &= in_band(r);
        worst = if (r - 1.0).abs() > (worst - 1.0).abs() { r } else { worst };
    }
    checks.push(Check { name: "tdma-infinite", instances, worst, ok });

    let (mut worst, mut ok, mut done, mut r_index) = (1.0f64, true, 0, 0u64);
    while done < instances && r_index < 50 * instances as u64 {
        let k = 1 + done % 3;
        let probe = sim::generate_scenario(&small_distribution(k, seed ^ 0x5eed), &tdma_cfg, AccessMode::Tdma, r_index)?;
        r_index += 1;
        let free = tdma::solve_infinite(&probe, &opts)?.0.cloud_cycles(&probe);
        let forced = forced_cycles(&probe);
        if free <= forced * 1.01 {
            continue;
        }
        let cap = 0.5 * (forced + free);
        let s = Scenario {
            system: SystemConfig { cloud: CloudModel::BoundedLoad { capacity_cycles: cap }, ..tdma_cfg.clone() },
            users: probe.users,
        };
        let e = tdma::solve_finite_optimal(&s, &opts)?.1.total_weighted_energy;
        let (_, o) = oracle_tdma(&s, TdmaVariant::BoundedLoad { capacity_cycles: cap }, OracleResolution::for_users(k, 8_000))?;
        let r = e / o;
        ok &= in_band(r);
        worst = if (r - 1.0).abs() > (worst - 1.0).abs() { r } else { worst };
        done += 1;
    }
    checks.push(Check { name: "tdma-bounded-load", instances: done, worst, ok: ok && done > 0 });

    let (mut worst, mut ok, mut done, mut r_index) = (1.0f64, true, 0, 0u64);
    while done < instances && r_index < 50 * instances as u64 {
        let k = 1 + done % 2;
        let probe = sim::generate_scenario(&small_distribution(k, seed ^ 0xc0de), &tdma_cfg, AccessMode::Tdma, r_index)?;
        r_index += 1;
        let total: f64 = probe.users.iter().map(|u| u.cycles_per_bit * u.data_bits).sum();
        let cloud = total / probe.system.slot_s;
        let s = Scenario {
            system: SystemConfig { cloud: CloudModel::SharedCpu { cycles_per_s: cloud }, ..tdma_cfg.clone() },
            users: probe.users,
        };
        if forced_cycles(&s) / cloud >= 0.9 * s.system.slot_s {
            continue;
        }
        let e = tdma::solve_shared_cpu(&s, &opts)?.1.total_weighted_energy;
        let (_, o) = oracle_tdma(&s, TdmaVariant::SharedCpu { cycles_per_s: cloud }, OracleResolution::for_users(k, 8_000))?;
        let r = e / o;
        ok &= in_band(r);
        worst = if (r - 1.0).abs() > (worst - 1.0).abs() { r } else { worst };
        done += 1;
    }
    checks.push(Check { name: "tdma-shared-cpu", instances: done, worst, ok: ok && done > 0 });

    // The sequential OFDMA heuristic is not optimal; the check is that the
    // enumeration never loses to it.
    let ofdma_cfg = SystemConfig { subchannels: 4, cloud: CloudModel::Infinite, ..SystemConfig::ofdma_default() };
    let (mut worst, mut ok) = (1.0f64, true);
    for i in 0..instances {
        let s = sim::generate_scenario(&small_distribution(2, seed ^ 0x0fd), &ofdma_cfg, AccessMode::Ofdma, i as u64)?;
        let e = ofdma::solve_ofdma_suboptimal(&s, &opts)?.1.total_weighted_energy;
        let (_, o) = oracle_ofdma_exhaustive(&s)?;
        let r = e / o;
        ok &= r >= 1.0 - 1e-9;
        worst = worst.max(r);
    }
    checks.push(Check { name: "ofdma-sequential-vs-enumeration", instances, worst, ok });

    let mut table = format!("{:<34} {:>9} {:>14} {:>6}\n", "check", "instances", "energy_ratio", "status");
    for c in &checks {
        let status = if c.ok { "PASS" } else { "FAIL" };
        table.push_str(&format!("{:<34} {:>9} {:>14.6} {:>6}\n", c.name, c.instances, c.worst, status));
    }
    Ok((table, checks.iter().all(|c| c.ok)))
}
