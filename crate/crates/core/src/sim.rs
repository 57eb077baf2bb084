//! Random scenario generation and Monte-Carlo sweeps.
//!
//! Every realization draws from its own ChaCha8 stream: the generator is
//! seeded with the master seed and switched to stream `realization`. Inside
//! that stream user `k` reads from word offset `k << 40`, so the draws of a
//! user never depend on how many users or sub-channels come before it. A
//! sweep therefore reuses the same random numbers at every axis value.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CloudModel, PolicyReport, Scenario, SystemConfig, UserProfile, BITS_PER_KB};
use crate::{ofdma, tdma};

/// Parameter ranges of the random users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDistribution {
    pub users: usize,
    /// Mean channel power gain; gains are exponential (Rayleigh amplitude).
    pub mean_gain: f64,
    /// Local CPU speeds, drawn uniformly from this set, Hz.
    pub cpu_hz_set: Vec<f64>,
    /// Local energy per cycle, uniform on `(lo, hi)`, J/cycle.
    pub energy_per_cycle: (f64, f64),
    /// Input size, uniform on `[lo, hi]`, KB.
    pub data_kb: (f64, f64),
    /// Cycles per bit, uniform on `[lo, hi]`.
    pub cycles_per_bit: (f64, f64),
    pub weight: f64,
    pub bits_per_kb: f64,
    pub seed: u64,
}

impl Default for ScenarioDistribution {
    fn default() -> Self {
        ScenarioDistribution {
            users: 30,
            mean_gain: 1e-3,
            cpu_hz_set: (1..=10).map(|i| i as f64 * 1e8).collect(),
            energy_per_cycle: (1e-15, 20e-11),
            data_kb: (100.0, 500.0),
            cycles_per_bit: (500.0, 1500.0),
            weight: 1.0,
            bits_per_kb: BITS_PER_KB,
            seed: 0,
        }
    }
}

impl ScenarioDistribution {
    /// Defaults for OFDMA runs (8 users).
    pub fn ofdma_default() -> Self {
        ScenarioDistribution { users: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), strict_lo: bool| {
            let lo_ok = if strict_lo { lo > 0.0 } else { lo >= 0.0 };
            if lo_ok && lo < hi && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} range must satisfy 0 <= lo < hi < inf, got ({lo}, {hi})")))
            }
        };
        if self.users == 0 {
            return Err(Error::invalid("users must be at least 1"));
        }
        if !(self.mean_gain > 0.0 && self.mean_gain.is_finite()) {
            return Err(Error::invalid(format!("mean_gain must be positive, got {}", self.mean_gain)));
        }
        if self.cpu_hz_set.is_empty() || self.cpu_hz_set.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::invalid("cpu_hz_set must be a non-empty list of positive speeds"));
        }
        range("energy_per_cycle", self.energy_per_cycle, false)?;
        range("data_kb", self.data_kb, false)?;
        range("cycles_per_bit", self.cycles_per_bit, true)?;
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::invalid(format!("weight must be positive, got {}", self.weight)));
        }
        if !(self.bits_per_kb > 0.0 && self.bits_per_kb.is_finite()) {
            return Err(Error::invalid(format!("bits_per_kb must be positive, got {}", self.bits_per_kb)));
        }
        Ok(())
    }
}

/// Multiple access scheme of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Tdma,
    Ofdma,
}

fn user_rng(seed: u64, realization: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    rng.set_word_pos((k as u128) << 40);
    rng
}

/// Draws realization `realization` of `dist` under `cfg`.
///
/// TDMA users get one gain each; OFDMA users get one gain per sub-channel
/// and their TDMA gain is set to the mean of those.
pub fn generate_scenario(dist: &ScenarioDistribution, cfg: &SystemConfig, mode: AccessMode, realization: u64) -> Result<Scenario> {
    dist.validate()?;
    cfg.validate()?;
    let fading = Exp::new(1.0 / dist.mean_gain).map_err(|e| Error::invalid(e.to_string()))?;
    let users = (0..dist.users)
        .map(|k| {
            let mut rng = user_rng(dist.seed, realization, k);
            let cpu_hz = dist.cpu_hz_set[rng.random_range(0..dist.cpu_hz_set.len())];
            let (plo, phi) = dist.energy_per_cycle;
            let mut energy_per_cycle = rng.random_range(plo..phi);
            if energy_per_cycle <= 0.0 {
                energy_per_cycle = f64::MIN_POSITIVE;
            }
            let data_bits = rng.random_range(dist.data_kb.0..=dist.data_kb.1) * dist.bits_per_kb;
            let cycles_per_bit = rng.random_range(dist.cycles_per_bit.0..=dist.cycles_per_bit.1);
            let (gain, subchannel_gains) = match mode {
                AccessMode::Tdma => (fading.sample(&mut rng).max(f64::MIN_POSITIVE), Vec::new()),
                AccessMode::Ofdma => {
                    let gains: Vec<f64> =
                        (0..cfg.subchannels).map(|_| fading.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
                    (gains.iter().sum::<f64>() / gains.len() as f64, gains)
                }
            };
            UserProfile { weight: dist.weight, cycles_per_bit, energy_per_cycle, cpu_hz, data_bits, gain, subchannel_gains }
        })
        .collect();
    let scenario = Scenario::new(cfg.clone(), users);
    match mode {
        AccessMode::Tdma => scenario.validate()?,
        AccessMode::Ofdma => scenario.validate_ofdma()?,
    }
    Ok(scenario)
}

/// Allocation policy evaluated by the Monte-Carlo runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Optimal TDMA policy for the configured cloud model.
    Optimal,
    /// Greedy cloud filling for a bounded-load cloud; optimal otherwise.
    Suboptimal,
    /// Equal time slots and offloading up to the break-even rate.
    Equal,
    /// OFDMA greedy baseline.
    Greedy,
    /// Sequential OFDMA allocation.
    OfdmaSeq,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Optimal, Policy::Suboptimal, Policy::Equal, Policy::Greedy, Policy::OfdmaSeq];

    pub fn mode(self) -> AccessMode {
        match self {
            Policy::Greedy | Policy::OfdmaSeq => AccessMode::Ofdma,
            _ => AccessMode::Tdma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Optimal => "optimal",
            Policy::Suboptimal => "suboptimal",
            Policy::Equal => "equal",
            Policy::Greedy => "greedy",
            Policy::OfdmaSeq => "ofdma-seq",
        }
    }

    /// Solves one scenario.
    pub fn solve(self, scenario: &Scenario, opts: &tdma::TdmaSolverOptions) -> Result<PolicyReport> {
        let cloud = scenario.system.cloud;
        let report = match (self, cloud) {
            (Policy::Optimal | Policy::Suboptimal, CloudModel::Infinite) => tdma::solve_infinite(scenario, opts)?.1,
            (Policy::Optimal, CloudModel::BoundedLoad { .. }) => tdma::solve_finite_optimal(scenario, opts)?.1,
            (Policy::Suboptimal, CloudModel::BoundedLoad { .. }) => tdma::solve_finite_suboptimal(scenario, opts)?.1,
            (Policy::Optimal | Policy::Suboptimal, CloudModel::SharedCpu { .. }) => tdma::solve_shared_cpu(scenario, opts)?.1,
            (Policy::Equal, _) => tdma::baseline_equal_allocation(scenario)?.1,
            (Policy::Greedy, _) => ofdma::baseline_greedy(scenario)?.1,
            (Policy::OfdmaSeq, CloudModel::BoundedLoad { .. }) => ofdma::solve_ofdma_suboptimal_finite(scenario, opts)?.1,
            (Policy::OfdmaSeq, _) => ofdma::solve_ofdma_suboptimal(scenario, opts)?.1,
        };
        Ok(report)
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy {s:?}")))
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Per-realization energies of one policy and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStats {
    pub policy: Policy,
    /// Total weighted energy per realization; `None` where the solver failed.
    pub samples: Vec<Option<f64>>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single success).
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl MonteCarloStats {
    fn from_samples(policy: Policy, samples: Vec<Option<f64>>) -> Self {
        let ok: Vec<f64> = samples.iter().flatten().copied().collect();
        let n_ok = ok.len();
        let mean = if n_ok == 0 { f64::NAN } else { compensated_sum(ok.iter().copied()) / n_ok as f64 };
        let std = if n_ok < 2 {
            if n_ok == 1 { 0.0 } else { f64::NAN }
        } else {
            (compensated_sum(ok.iter().map(|x| (x - mean) * (x - mean))) / (n_ok - 1) as f64).sqrt()
        };
        MonteCarloStats { policy, n_failed: samples.len() - n_ok, samples, mean, std, n_ok }
    }

    /// Means of `self` and `other` over the realizations where both succeeded.
    pub fn paired_means(&self, other: &MonteCarloStats) -> Option<(f64, f64, usize)> {
        let pairs: Vec<(f64, f64)> = self
            .samples
            .iter()
            .zip(&other.samples)
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        Some((
            compensated_sum(pairs.iter().map(|p| p.0)) / n,
            compensated_sum(pairs.iter().map(|p| p.1)) / n,
            pairs.len(),
        ))
    }
}

/// Worker pool; `MECO_THREADS` caps its size.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("MECO_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
        builder.build().expect("failed to start worker threads")
    })
}

/// Solves `realizations` random scenarios with `policy`. Solver failures are
/// counted, not returned; only an invalid distribution or config is an error.
pub fn run_monte_carlo(
    dist: &ScenarioDistribution,
    cfg: &SystemConfig,
    policy: Policy,
    realizations: usize,
    opts: &tdma::TdmaSolverOptions,
) -> Result<MonteCarloStats> {
    if realizations == 0 {
        return Err(Error::invalid("need at least one realization"));
    }
    dist.validate()?;
    cfg.validate()?;
    opts.validate()?;
    let samples: Vec<Option<f64>> = thread_pool().install(|| {
        (0..realizations as u64)
            .into_par_iter()
            .map(|r| {
                let scenario = generate_scenario(dist, cfg, policy.mode(), r).ok()?;
                let report = policy.solve(&scenario, opts).ok()?;
                report.total_weighted_energy.is_finite().then_some(report.total_weighted_energy)
            })
            .collect()
    });
    Ok(MonteCarloStats::from_samples(policy, samples))
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Slot length, s.
    T,
    /// Bounded cloud load, cycles.
    F,
    /// Shared cloud CPU speed, cycles/s.
    FPrime,
    /// Number of users.
    K,
    /// Number of sub-channels.
    N,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::T => "T",
            SweepAxis::F => "F",
            SweepAxis::FPrime => "F_prime",
            SweepAxis::K => "K",
            SweepAxis::N => "N",
        }
    }

    /// Applies `value` to copies of the distribution and config.
    pub fn apply(self, value: f64, dist: &ScenarioDistribution, cfg: &SystemConfig) -> Result<(ScenarioDistribution, SystemConfig)> {
        let (mut dist, mut cfg) = (dist.clone(), cfg.clone());
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value < 1e9 {
                Ok(value as usize)
            } else {
                Err(Error::invalid(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::T => cfg.slot_s = value,
            SweepAxis::F => cfg.cloud = CloudModel::BoundedLoad { capacity_cycles: value },
            SweepAxis::FPrime => cfg.cloud = CloudModel::SharedCpu { cycles_per_s: value },
            SweepAxis::K => dist.users = count()?,
            SweepAxis::N => cfg.subchannels = count()?,
        }
        cfg.validate()?;
        dist.validate()?;
        Ok((dist, cfg))
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(SweepAxis::T),
            "F" | "f" => Ok(SweepAxis::F),
            "F_prime" | "f_prime" | "F'" | "fprime" => Ok(SweepAxis::FPrime),
            "K" | "k" => Ok(SweepAxis::K),
            "N" | "n" => Ok(SweepAxis::N),
            _ => Err(Error::invalid(format!("unknown sweep axis {s:?}; expected T, F, F_prime, K or N"))),
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub stats: MonteCarloStats,
}

/// Runs every policy at every axis value with the same realizations.
pub fn sweep(
    dist: &ScenarioDistribution,
    cfg: &SystemConfig,
    axis: SweepAxis,
    values: &[f64],
    policies: &[Policy],
    realizations: usize,
    opts: &tdma::TdmaSolverOptions,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || policies.is_empty() {
        return Err(Error::invalid("a sweep needs at least one value and one policy"));
    }
    let mut rows = Vec::with_capacity(values.len() * policies.len());
    for &value in values {
        let (d, c) = axis.apply(value, dist, cfg)?;
        for &policy in policies {
            rows.push(SweepRow { axis_value: value, stats: run_monte_carlo(&d, &c, policy, realizations, opts)? });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let dist = ScenarioDistribution { seed: 7, ..Default::default() };
        let cfg = SystemConfig::tdma_default();
        let a = generate_scenario(&dist, &cfg, AccessMode::Tdma, 3).unwrap();
        let b = generate_scenario(&dist, &cfg, AccessMode::Tdma, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml_string().unwrap(), b.to_toml_string().unwrap());
        let c = generate_scenario(&dist, &cfg, AccessMode::Tdma, 4).unwrap();
        assert_ne!(a, c);
        for u in &a.users {
            assert!(u.energy_per_cycle > 0.0 && u.energy_per_cycle < 20e-11);
            assert!((500.0..=1500.0).contains(&u.cycles_per_bit));
            assert!(u.data_bits >= 100.0 * 8192.0 && u.data_bits <= 500.0 * 8192.0);
            assert!(dist.cpu_hz_set.contains(&u.cpu_hz));
        }
    }

    #[test]
    fn users_keep_their_draws_when_the_population_grows() {
        let dist = ScenarioDistribution { seed: 11, users: 3, ..Default::default() };
        let cfg = SystemConfig::ofdma_default();
        let small = generate_scenario(&dist, &cfg, AccessMode::Ofdma, 0).unwrap();
        let big = generate_scenario(&ScenarioDistribution { users: 5, ..dist.clone() }, &cfg, AccessMode::Ofdma, 0).unwrap();
        assert_eq!(small.users[..], big.users[..3]);
        let fewer = SystemConfig { subchannels: 16, ..cfg };
        let narrow = generate_scenario(&dist, &fewer, AccessMode::Ofdma, 0).unwrap();
        for (u, v) in narrow.users.iter().zip(&small.users) {
            assert_eq!(u.cycles_per_bit, v.cycles_per_bit);
            assert_eq!(u.subchannel_gains[..], v.subchannel_gains[..16]);
        }
    }

    #[test]
    fn gain_mean_matches_distribution() {
        let dist = ScenarioDistribution { seed: 1, users: 1, ..Default::default() };
        let cfg = SystemConfig { subchannels: 1000, ..SystemConfig::ofdma_default() };
        let gains: Vec<f64> = (0..100)
            .flat_map(|r| generate_scenario(&dist, &cfg, AccessMode::Ofdma, r).unwrap().users[0].subchannel_gains.clone())
            .collect();
        assert_eq!(gains.len(), 100_000);
        let mean = compensated_sum(gains.iter().copied()) / gains.len() as f64;
        assert!((mean / 1e-3 - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
        assert_eq!(compensated_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn monte_carlo_single_realization_equals_direct_solve() {
        let dist = ScenarioDistribution { seed: 5, users: 4, ..Default::default() };
        let cfg = SystemConfig { cloud: CloudModel::Infinite, ..SystemConfig::tdma_default() };
        let opts = tdma::TdmaSolverOptions::default();
        let stats = run_monte_carlo(&dist, &cfg, Policy::Optimal, 1, &opts).unwrap();
        let direct = tdma::solve_infinite(&generate_scenario(&dist, &cfg, AccessMode::Tdma, 0).unwrap(), &opts).unwrap().1;
        assert_eq!(stats.n_ok, 1);
        assert_eq!(stats.mean, direct.total_weighted_energy);
        assert_eq!(stats.std, 0.0);
        let again = run_monte_carlo(&dist, &cfg, Policy::Optimal, 1, &opts).unwrap();
        assert_eq!(stats, again);
    }

    #[test]
    fn optimal_dominates_equal_allocation() {
        let dist = ScenarioDistribution { seed: 9, users: 6, ..Default::default() };
        let cfg = SystemConfig { cloud: CloudModel::Infinite, ..SystemConfig::tdma_default() };
        let opts = tdma::TdmaSolverOptions::default();
        let best = run_monte_carlo(&dist, &cfg, Policy::Optimal, 30, &opts).unwrap();
        let equal = run_monte_carlo(&dist, &cfg, Policy::Equal, 30, &opts).unwrap();
        for (a, b) in best.samples.iter().zip(&equal.samples) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(*a <= b * (1.0 + 1e-9));
            }
        }
        let (a, b, n) = best.paired_means(&equal).unwrap();
        assert!(n > 0 && a <= b);
    }

    #[test]
    fn sweep_single_value_matches_monte_carlo() {
        let dist = ScenarioDistribution { seed: 2, users: 3, ..Default::default() };
        let cfg = SystemConfig::tdma_default();
        let opts = tdma::TdmaSolverOptions::default();
        let rows = sweep(&dist, &cfg, SweepAxis::T, &[0.2], &[Policy::Optimal], 5, &opts).unwrap();
        let (d, c) = SweepAxis::T.apply(0.2, &dist, &cfg).unwrap();
        assert_eq!(rows[0].stats, run_monte_carlo(&d, &c, Policy::Optimal, 5, &opts).unwrap());
        assert!(SweepAxis::K.apply(2.5, &dist, &cfg).is_err());
        assert!("Q".parse::<SweepAxis>().is_err());
        assert_eq!("ofdma-seq".parse::<Policy>().unwrap(), Policy::OfdmaSeq);
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let bad = ScenarioDistribution { data_kb: (5.0, 5.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioDistribution { cpu_hz_set: vec![], ..Default::default() };
        assert!(generate_scenario(&bad, &SystemConfig::tdma_default(), AccessMode::Tdma, 0).is_err());
    }
}
