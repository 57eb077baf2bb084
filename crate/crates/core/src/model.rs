//! Domain types and energy accounting.
//!
//! All quantities are SI: bits, seconds, hertz, watts, joules, CPU cycles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::f_energy;

/// Bits per kilobyte used when converting data sizes given in KB.
pub const BITS_PER_KB: f64 = 8192.0;

/// Relative slack accepted when checking allocations produced by the solvers.
pub const DEFAULT_CHECK_TOL: f64 = 1e-6;

/// One mobile's task and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Fairness weight of the user's energy in the objective.
    pub weight: f64,
    /// CPU cycles needed per input bit.
    pub cycles_per_bit: f64,
    /// Local computing energy per CPU cycle, J/cycle.
    pub energy_per_cycle: f64,
    /// Local CPU speed, cycles/s.
    pub cpu_hz: f64,
    /// Input data that must be processed within the slot, bits.
    pub data_bits: f64,
    /// TDMA channel power gain.
    pub gain: f64,
    /// Per-sub-channel power gains (OFDMA only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subchannel_gains: Vec<f64>,
}

impl UserProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("weight", self.weight)?;
        positive("cycles_per_bit", self.cycles_per_bit)?;
        positive("cpu_hz", self.cpu_hz)?;
        positive("gain", self.gain)?;
        if !(self.energy_per_cycle >= 0.0 && self.energy_per_cycle.is_finite()) {
            return Err(Error::invalid(format!(
                "energy_per_cycle must be non-negative, got {}",
                self.energy_per_cycle
            )));
        }
        if !(self.data_bits >= 0.0 && self.data_bits.is_finite()) {
            return Err(Error::invalid(format!("data_bits must be non-negative, got {}", self.data_bits)));
        }
        for (n, &g) in self.subchannel_gains.iter().enumerate() {
            positive(&format!("subchannel_gains[{n}]"), g)?;
        }
        Ok(())
    }

    /// Local computing energy per bit, `C P`.
    pub fn energy_per_bit(&self) -> f64 {
        self.cycles_per_bit * self.energy_per_cycle
    }

    /// Bits the local CPU can process within `slot_s`.
    pub fn local_capacity_bits(&self, slot_s: f64) -> f64 {
        self.cpu_hz * slot_s / self.cycles_per_bit
    }
}

/// How the edge cloud limits offloaded work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CloudModel {
    /// No computation limit.
    Infinite,
    /// At most `capacity_cycles` CPU cycles of offloaded work per slot.
    BoundedLoad { capacity_cycles: f64 },
    /// A shared CPU running at `cycles_per_s`; its computing time counts
    /// against the slot.
    SharedCpu { cycles_per_s: f64 },
}

impl CloudModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CloudModel::Infinite => Ok(()),
            CloudModel::BoundedLoad { capacity_cycles: v } | CloudModel::SharedCpu { cycles_per_s: v } => {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("cloud capacity must be positive, got {v}")))
                }
            }
        }
    }
}

/// Bandwidth and noise of an uplink as seen by the energy function
/// `noise (2^(x / bandwidth) - 1)`.
///
/// For TDMA `x` is a rate in bits/s and `bandwidth` is in Hz. For one OFDMA
/// sub-channel `x` is the bits sent in the slot and `bandwidth` is `B̄ T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub bandwidth: f64,
    pub noise: f64,
}

impl Link {
    pub fn power(&self, x: f64) -> Result<f64> {
        f_energy(x, self.bandwidth, self.noise)
    }
}

/// Radio and cloud parameters shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// TDMA bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// TDMA noise power, W.
    pub noise_w: f64,
    /// OFDMA per-sub-channel bandwidth, Hz.
    pub subchannel_bandwidth_hz: f64,
    /// OFDMA per-sub-channel noise power, W.
    pub subchannel_noise_w: f64,
    /// Slot duration (latency budget), s.
    pub slot_s: f64,
    /// Number of OFDMA sub-channels.
    pub subchannels: usize,
    pub cloud: CloudModel,
}

impl SystemConfig {
    /// TDMA setup: 10 MHz, 1e-9 W noise, 100 ms slot, 6e9 cycles per slot.
    pub fn tdma_default() -> Self {
        SystemConfig {
            bandwidth_hz: 10e6,
            noise_w: 1e-9,
            subchannel_bandwidth_hz: 1e6,
            subchannel_noise_w: 1e-9,
            slot_s: 0.1,
            subchannels: 128,
            cloud: CloudModel::BoundedLoad { capacity_cycles: 6e9 },
        }
    }

    /// OFDMA setup: 128 sub-channels of 1 MHz, 1e-9 W noise, 5e15 cycles per slot.
    pub fn ofdma_default() -> Self {
        SystemConfig {
            cloud: CloudModel::BoundedLoad { capacity_cycles: 5e15 },
            ..Self::tdma_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_w", self.noise_w),
            ("subchannel_bandwidth_hz", self.subchannel_bandwidth_hz),
            ("subchannel_noise_w", self.subchannel_noise_w),
            ("slot_s", self.slot_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        self.cloud.validate()
    }

    pub fn tdma_link(&self) -> Link {
        Link { bandwidth: self.bandwidth_hz, noise: self.noise_w }
    }

    pub fn subchannel_link(&self) -> Link {
        Link { bandwidth: self.subchannel_bandwidth_hz * self.slot_s, noise: self.subchannel_noise_w }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: SystemConfig,
    #[serde(rename = "user", default)]
    pub users: Vec<UserProfile>,
}

impl Scenario {
    pub fn new(system: SystemConfig, users: Vec<UserProfile>) -> Self {
        Scenario { system, users }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        for (k, user) in self.users.iter().enumerate() {
            user.validate().map_err(|e| Error::invalid(format!("user {k}: {e}")))?;
        }
        Ok(())
    }

    /// Checks that every user carries exactly `system.subchannels` gains.
    pub fn validate_ofdma(&self) -> Result<()> {
        self.validate()?;
        if self.system.subchannels == 0 {
            return Err(Error::invalid("OFDMA needs at least one sub-channel"));
        }
        for (k, user) in self.users.iter().enumerate() {
            if user.subchannel_gains.len() != self.system.subchannels {
                return Err(Error::invalid(format!(
                    "user {k} has {} sub-channel gains, expected {}",
                    user.subchannel_gains.len(),
                    self.system.subchannels
                )));
            }
        }
        Ok(())
    }

    pub fn min_offloads(&self) -> Vec<f64> {
        self.users.iter().map(|u| min_offload(u, self.system.slot_s)).collect()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize scenario: {e}")))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::invalid(format!("cannot parse scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Minimum bits a user must offload to meet the deadline, `(R - F T / C)^+`.
pub fn min_offload(user: &UserProfile, slot_s: f64) -> f64 {
    (user.data_bits - user.local_capacity_bits(slot_s)).max(0.0)
}

fn clamp_bits(user: &UserProfile, bits: f64) -> Result<f64> {
    let slack = 1e-9 * user.data_bits.max(1.0);
    if !(bits >= -slack && bits <= user.data_bits + slack) {
        return Err(Error::invalid(format!(
            "offloaded bits {bits:e} outside [0, {:e}]",
            user.data_bits
        )));
    }
    Ok(bits.clamp(0.0, user.data_bits))
}

/// Energy for computing the `R - ell` bits kept on the mobile.
pub fn local_energy(user: &UserProfile, offloaded_bits: f64) -> Result<f64> {
    let ell = clamp_bits(user, offloaded_bits)?;
    Ok((user.data_bits - ell) * user.energy_per_bit())
}

/// TDMA offloading energy `(t / h^2) f(ell / t)`; zero when nothing is sent.
pub fn offload_energy_tdma(user: &UserProfile, cfg: &SystemConfig, bits: f64, slot_s: f64) -> Result<f64> {
    if !(bits >= 0.0) || !(slot_s >= 0.0) {
        return Err(Error::invalid(format!("negative bits ({bits:e}) or time ({slot_s:e})")));
    }
    if bits == 0.0 {
        return Ok(0.0);
    }
    if slot_s == 0.0 {
        return Err(Error::Inconsistent(format!("{bits:e} bits offloaded in zero time")));
    }
    Ok(slot_s / user.gain * cfg.tdma_link().power(bits / slot_s)?)
}

/// OFDMA offloading energy summed over the user's sub-channels,
/// `sum_n T N̄0 (2^(ell_n / (B̄ T)) - 1) / h_n^2` over assigned channels.
pub fn offload_energy_ofdma(
    user: &UserProfile,
    cfg: &SystemConfig,
    assigned: &[bool],
    bits: &[f64],
) -> Result<f64> {
    if assigned.len() != bits.len() || bits.len() > user.subchannel_gains.len() {
        return Err(Error::invalid("assignment row, bit row and gains differ in length"));
    }
    let link = cfg.subchannel_link();
    let mut total = 0.0;
    for (n, (&on, &ell)) in assigned.iter().zip(bits).enumerate() {
        if !(ell >= 0.0) {
            return Err(Error::invalid(format!("negative bits {ell:e} on sub-channel {n}")));
        }
        if ell == 0.0 {
            continue;
        }
        if !on {
            return Err(Error::Inconsistent(format!("{ell:e} bits on unassigned sub-channel {n}")));
        }
        // h̄² = h² / T
        let gain = user.subchannel_gains[n] / cfg.slot_s;
        total += link.power(ell)? / gain;
    }
    Ok(total)
}

/// Outcome of [`check_feasibility`].
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible,
    Infeasible { reason: String },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }

    pub fn into_result(self) -> Result<()> {
        match self {
            Feasibility::Feasible => Ok(()),
            Feasibility::Infeasible { reason } => Err(Error::Infeasible(reason)),
        }
    }
}

/// Cloud-capacity feasibility of the minimum offloads.
///
/// A bounded-load cloud needs `sum m_k C_k <= F`; a shared CPU needs
/// `sum m_k C_k / F' < T` strictly, since equality leaves no time to transmit.
pub fn check_feasibility(scenario: &Scenario) -> Feasibility {
    let slot = scenario.system.slot_s;
    let required: f64 = scenario
        .users
        .iter()
        .map(|u| min_offload(u, slot) * u.cycles_per_bit)
        .sum();
    match scenario.system.cloud {
        CloudModel::Infinite => Feasibility::Feasible,
        CloudModel::BoundedLoad { capacity_cycles } => {
            if required <= capacity_cycles {
                Feasibility::Feasible
            } else {
                Feasibility::Infeasible {
                    reason: format!(
                        "sum of m_k C_k = {required:e} cycles exceeds cloud capacity F = {capacity_cycles:e}"
                    ),
                }
            }
        }
        CloudModel::SharedCpu { cycles_per_s } => {
            let compute_time = required / cycles_per_s;
            if compute_time < slot {
                Feasibility::Feasible
            } else {
                Feasibility::Infeasible {
                    reason: format!(
                        "cloud time for minimum offloads sum m_k C_k / F' = {compute_time:e} s is not below T = {slot:e} s"
                    ),
                }
            }
        }
    }
}

/// Offloaded bits and transmit time per user, plus the multipliers that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmaAllocation {
    pub offload_bits: Vec<f64>,
    pub slot_s: Vec<f64>,
    /// Multiplier of the time-sharing constraint.
    pub lambda: f64,
    /// Multiplier of the cloud-load constraint; zero when inactive.
    pub mu: f64,
}

impl TdmaAllocation {
    pub fn local_only(k: usize) -> Self {
        TdmaAllocation { offload_bits: vec![0.0; k], slot_s: vec![0.0; k], lambda: 0.0, mu: 0.0 }
    }

    pub fn total_time(&self) -> f64 {
        self.slot_s.iter().sum()
    }

    pub fn cloud_cycles(&self, scenario: &Scenario) -> f64 {
        self.offload_bits
            .iter()
            .zip(&scenario.users)
            .map(|(l, u)| l * u.cycles_per_bit)
            .sum()
    }

    /// Checks every allocation invariant with relative slack `tol`.
    pub fn validate(&self, scenario: &Scenario, tol: f64) -> Result<()> {
        let k = scenario.users.len();
        if self.offload_bits.len() != k || self.slot_s.len() != k {
            return Err(Error::Inconsistent(format!("allocation sized for a different user count than {k}")));
        }
        let slot = scenario.system.slot_s;
        for (i, user) in scenario.users.iter().enumerate() {
            let (ell, t) = (self.offload_bits[i], self.slot_s[i]);
            let m = min_offload(user, slot);
            let scale = user.data_bits.max(1.0);
            if ell < m - tol * scale || ell > user.data_bits + tol * scale {
                return Err(Error::Inconsistent(format!(
                    "user {i}: offloaded {ell:e} bits outside [{m:e}, {:e}]",
                    user.data_bits
                )));
            }
            if !(t >= 0.0) {
                return Err(Error::Inconsistent(format!("user {i}: negative time {t:e}")));
            }
            if ell > 0.0 && t == 0.0 {
                return Err(Error::Inconsistent(format!("user {i}: {ell:e} bits in zero time")));
            }
        }
        let time = self.total_time();
        match scenario.system.cloud {
            CloudModel::SharedCpu { cycles_per_s } => {
                let used = time + self.cloud_cycles(scenario) / cycles_per_s;
                if used > slot * (1.0 + tol) {
                    return Err(Error::Inconsistent(format!("transmit plus cloud time {used:e} exceeds T = {slot:e}")));
                }
            }
            _ => {
                if time > slot * (1.0 + tol) {
                    return Err(Error::Inconsistent(format!("total time {time:e} exceeds T = {slot:e}")));
                }
            }
        }
        if let CloudModel::BoundedLoad { capacity_cycles } = scenario.system.cloud {
            let cycles = self.cloud_cycles(scenario);
            if cycles > capacity_cycles * (1.0 + tol) {
                return Err(Error::Inconsistent(format!(
                    "cloud load {cycles:e} exceeds F = {capacity_cycles:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Sub-channel assignment and per-(user, sub-channel) offloaded bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmaAllocation {
    /// `assignment[k][n]` is true when sub-channel `n` belongs to user `k`.
    pub assignment: Vec<Vec<bool>>,
    pub offload_bits: Vec<Vec<f64>>,
}

impl OfdmaAllocation {
    pub fn empty(users: usize, subchannels: usize) -> Self {
        OfdmaAllocation {
            assignment: vec![vec![false; subchannels]; users],
            offload_bits: vec![vec![0.0; subchannels]; users],
        }
    }

    pub fn user_total(&self, k: usize) -> f64 {
        self.offload_bits[k].iter().sum()
    }

    pub fn cloud_cycles(&self, scenario: &Scenario) -> f64 {
        (0..self.offload_bits.len())
            .map(|k| self.user_total(k) * scenario.users[k].cycles_per_bit)
            .sum()
    }

    pub fn validate(&self, scenario: &Scenario, tol: f64) -> Result<()> {
        let k = scenario.users.len();
        let n = scenario.system.subchannels;
        if self.assignment.len() != k
            || self.offload_bits.len() != k
            || self.assignment.iter().any(|r| r.len() != n)
            || self.offload_bits.iter().any(|r| r.len() != n)
        {
            return Err(Error::Inconsistent(format!("allocation is not {k} x {n}")));
        }
        for ch in 0..n {
            let holders = (0..k).filter(|&u| self.assignment[u][ch]).count();
            if holders > 1 {
                return Err(Error::Inconsistent(format!("sub-channel {ch} assigned to {holders} users")));
            }
        }
        let slot = scenario.system.slot_s;
        for (i, user) in scenario.users.iter().enumerate() {
            for ch in 0..n {
                let ell = self.offload_bits[i][ch];
                if !(ell >= 0.0) {
                    return Err(Error::Inconsistent(format!("user {i}: negative bits on sub-channel {ch}")));
                }
                if ell > 0.0 && !self.assignment[i][ch] {
                    return Err(Error::Inconsistent(format!("user {i}: bits on unassigned sub-channel {ch}")));
                }
            }
            let total = self.user_total(i);
            let m = min_offload(user, slot);
            let scale = user.data_bits.max(1.0);
            if total < m - tol * scale || total > user.data_bits + tol * scale {
                return Err(Error::Inconsistent(format!(
                    "user {i}: offloaded {total:e} bits outside [{m:e}, {:e}]",
                    user.data_bits
                )));
            }
        }
        if let CloudModel::BoundedLoad { capacity_cycles } = scenario.system.cloud {
            let cycles = self.cloud_cycles(scenario);
            if cycles > capacity_cycles * (1.0 + tol) {
                return Err(Error::Inconsistent(format!("cloud load {cycles:e} exceeds F = {capacity_cycles:e}")));
            }
        }
        Ok(())
    }
}

/// Remaining room in one constraint: bound minus usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlack {
    pub name: String,
    pub slack: f64,
}

/// Energy breakdown and diagnostics for one solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub solver: String,
    pub total_weighted_energy: f64,
    pub per_user_offload_energy: Vec<f64>,
    pub per_user_local_energy: Vec<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub constraint_slacks: Vec<ConstraintSlack>,
    pub iterations: usize,
}

impl PolicyReport {
    fn assemble(
        scenario: &Scenario,
        solver: &str,
        offload: Vec<f64>,
        local: Vec<f64>,
        iterations: usize,
    ) -> Self {
        let total = scenario
            .users
            .iter()
            .zip(offload.iter().zip(&local))
            .map(|(u, (o, l))| u.weight * (o + l))
            .sum();
        PolicyReport {
            solver: solver.to_string(),
            total_weighted_energy: total,
            per_user_offload_energy: offload,
            per_user_local_energy: local,
            lambda: None,
            mu: None,
            constraint_slacks: Vec::new(),
            iterations,
        }
    }

    pub fn slack(&self, name: &str) -> Option<f64> {
        self.constraint_slacks.iter().find(|s| s.name == name).map(|s| s.slack)
    }
}

/// Evaluates the weighted-energy objective of a TDMA allocation.
pub fn tdma_report(
    scenario: &Scenario,
    alloc: &TdmaAllocation,
    solver: &str,
    iterations: usize,
) -> Result<PolicyReport> {
    let k = scenario.users.len();
    if alloc.offload_bits.len() != k || alloc.slot_s.len() != k {
        return Err(Error::Inconsistent("allocation and scenario differ in user count".into()));
    }
    let mut offload = Vec::with_capacity(k);
    let mut local = Vec::with_capacity(k);
    for (i, user) in scenario.users.iter().enumerate() {
        offload.push(offload_energy_tdma(user, &scenario.system, alloc.offload_bits[i], alloc.slot_s[i])?);
        local.push(local_energy(user, alloc.offload_bits[i])?);
    }
    let mut report = PolicyReport::assemble(scenario, solver, offload, local, iterations);
    report.lambda = Some(alloc.lambda);
    report.mu = Some(alloc.mu);
    let slot = scenario.system.slot_s;
    let time = alloc.total_time();
    match scenario.system.cloud {
        CloudModel::Infinite => {
            report.constraint_slacks.push(ConstraintSlack { name: "time".into(), slack: slot - time });
        }
        CloudModel::BoundedLoad { capacity_cycles } => {
            report.constraint_slacks.push(ConstraintSlack { name: "time".into(), slack: slot - time });
            report.constraint_slacks.push(ConstraintSlack {
                name: "cloud".into(),
                slack: capacity_cycles - alloc.cloud_cycles(scenario),
            });
        }
        CloudModel::SharedCpu { cycles_per_s } => {
            report.constraint_slacks.push(ConstraintSlack {
                name: "time".into(),
                slack: slot - time - alloc.cloud_cycles(scenario) / cycles_per_s,
            });
        }
    }
    Ok(report)
}

/// Evaluates the weighted-energy objective of an OFDMA allocation.
pub fn ofdma_report(
    scenario: &Scenario,
    alloc: &OfdmaAllocation,
    solver: &str,
    iterations: usize,
) -> Result<PolicyReport> {
    let k = scenario.users.len();
    if alloc.assignment.len() != k || alloc.offload_bits.len() != k {
        return Err(Error::Inconsistent("allocation and scenario differ in user count".into()));
    }
    let mut offload = Vec::with_capacity(k);
    let mut local = Vec::with_capacity(k);
    for (i, user) in scenario.users.iter().enumerate() {
        offload.push(offload_energy_ofdma(user, &scenario.system, &alloc.assignment[i], &alloc.offload_bits[i])?);
        local.push(local_energy(user, alloc.user_total(i))?);
    }
    let mut report = PolicyReport::assemble(scenario, solver, offload, local, iterations);
    let used = (0..scenario.system.subchannels)
        .filter(|&n| alloc.assignment.iter().any(|row| row[n]))
        .count();
    report.constraint_slacks.push(ConstraintSlack {
        name: "subchannels".into(),
        slack: (scenario.system.subchannels - used) as f64,
    });
    if let CloudModel::BoundedLoad { capacity_cycles } = scenario.system.cloud {
        report.constraint_slacks.push(ConstraintSlack {
            name: "cloud".into(),
            slack: capacity_cycles - alloc.cloud_cycles(scenario),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn user() -> UserProfile {
        UserProfile {
            weight: 1.0,
            cycles_per_bit: 1000.0,
            energy_per_cycle: 1e-10,
            cpu_hz: 1e9,
            data_bits: 1e6,
            gain: 1e-3,
            subchannel_gains: vec![1e-3, 1e-3],
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn min_offload_examples() {
        assert!(rel(min_offload(&user(), 0.1), 9e5) < 1e-15);
        let idle = UserProfile { data_bits: 1e4, ..user() };
        assert_eq!(min_offload(&idle, 0.1), 0.0);

        let u = UserProfile { data_bits: 500.0 * BITS_PER_KB, cycles_per_bit: 1500.0, cpu_hz: 1e8, ..user() };
        let m = min_offload(&u, 0.1);
        assert!(rel(m, 4.096e6 - 1e7 / 1500.0) < 1e-15);
        // local part finishes exactly at the deadline
        assert!(rel(u.cycles_per_bit * (u.data_bits - m) / u.cpu_hz, 0.1) < 1e-12);
    }

    #[test]
    fn local_energy_examples() {
        let u = user();
        assert_eq!(local_energy(&u, u.data_bits).unwrap(), 0.0);
        assert!(rel(local_energy(&u, 0.0).unwrap(), 0.1) < 1e-15);
        assert!(rel(local_energy(&u, 5e5).unwrap(), 0.05) < 1e-15);
        assert!(local_energy(&u, 2e6).is_err());
        assert!(local_energy(&u, -1.0).is_err());
    }

    #[test]
    fn offload_energy_tdma_examples() {
        let u = user();
        let cfg = SystemConfig::tdma_default();
        assert_eq!(offload_energy_tdma(&u, &cfg, 0.0, 0.05).unwrap(), 0.0);
        assert_eq!(offload_energy_tdma(&u, &cfg, 0.0, 0.0).unwrap(), 0.0);
        let t = 0.05;
        let e = offload_energy_tdma(&u, &cfg, cfg.bandwidth_hz * t, t).unwrap();
        assert!(rel(e, t * cfg.noise_w / u.gain) < 1e-14);

        // p = f(r) / h^2 with r = 2e7 bits/s, then E = p t.
        let power = cfg.noise_w * (2f64.powf(1e6 / (t * 1e7)) - 1.0) / u.gain;
        let e = offload_energy_tdma(&u, &cfg, 1e6, t).unwrap();
        assert!(rel(e, power * t) < 1e-14);
        assert!(rel(e, 1.5e-7) < 1e-14);

        assert!(matches!(offload_energy_tdma(&u, &cfg, 1.0, 0.0), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn offload_energy_ofdma_examples() {
        let u = user();
        let cfg = SystemConfig::ofdma_default();
        assert_eq!(offload_energy_ofdma(&u, &cfg, &[true, true], &[0.0, 0.0]).unwrap(), 0.0);
        let btot = cfg.subchannel_bandwidth_hz * cfg.slot_s;
        let e = offload_energy_ofdma(&u, &cfg, &[true, false], &[btot, 0.0]).unwrap();
        assert!(rel(e, cfg.slot_s * cfg.subchannel_noise_w / u.subchannel_gains[0]) < 1e-14);

        let even = offload_energy_ofdma(&u, &cfg, &[true, true], &[btot, btot]).unwrap();
        let lumped = offload_energy_ofdma(&u, &cfg, &[true, true], &[2.0 * btot, 0.0]).unwrap();
        assert!(even < lumped);

        assert!(matches!(
            offload_energy_ofdma(&u, &cfg, &[false, true], &[1.0, 0.0]),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn report_of_local_only_allocation() {
        let users = vec![user(), UserProfile { weight: 2.0, data_bits: 5e5, ..user() }];
        let scenario = Scenario::new(SystemConfig::tdma_default(), users);
        let report = tdma_report(&scenario, &TdmaAllocation::local_only(2), "local", 0).unwrap();
        let expected: f64 = scenario.users.iter().map(|u| u.weight * u.data_bits * u.energy_per_bit()).sum();
        assert!(rel(report.total_weighted_energy, expected) < 1e-15);
        assert_eq!(report.slack("time"), Some(0.1));
    }

    #[test]
    fn single_user_full_offload_report() {
        let scenario = Scenario::new(SystemConfig::tdma_default(), vec![user()]);
        let alloc = TdmaAllocation { offload_bits: vec![1e6], slot_s: vec![0.1], lambda: 0.0, mu: 0.0 };
        let report = tdma_report(&scenario, &alloc, "x", 0).unwrap();
        assert_eq!(report.per_user_local_energy[0], 0.0);
        assert!(rel(report.total_weighted_energy, report.per_user_offload_energy[0]) < 1e-15);
    }

    #[test]
    fn feasibility_verdicts() {
        let idle = UserProfile { data_bits: 1e4, ..user() };
        for cloud in [
            CloudModel::Infinite,
            CloudModel::BoundedLoad { capacity_cycles: 1.0 },
            CloudModel::SharedCpu { cycles_per_s: 1.0 },
        ] {
            let cfg = SystemConfig { cloud, ..SystemConfig::tdma_default() };
            assert!(check_feasibility(&Scenario::new(cfg, vec![idle.clone()])).is_feasible());
        }

        // m = 9e5 bits, C = 1000 -> 9e8 cycles
        let cfg = SystemConfig { cloud: CloudModel::BoundedLoad { capacity_cycles: 9e8 }, ..SystemConfig::tdma_default() };
        assert!(check_feasibility(&Scenario::new(cfg, vec![user()])).is_feasible());
        let cfg = SystemConfig { cloud: CloudModel::BoundedLoad { capacity_cycles: 8.9e8 }, ..SystemConfig::tdma_default() };
        assert!(!check_feasibility(&Scenario::new(cfg, vec![user()])).is_feasible());

        // 9e8 cycles / 9e9 cycles/s = 0.1 s = T exactly
        let cfg = SystemConfig { cloud: CloudModel::SharedCpu { cycles_per_s: 9e9 }, ..SystemConfig::tdma_default() };
        let verdict = check_feasibility(&Scenario::new(cfg, vec![user()]));
        assert!(!verdict.is_feasible());
        assert!(verdict.into_result().unwrap_err().is_infeasible());
    }

    #[test]
    fn scenario_toml_round_trip() {
        let scenario = Scenario::new(SystemConfig::ofdma_default(), vec![user(), user()]);
        let text = scenario.to_toml_string().unwrap();
        assert!(text.contains("[system.cloud]"));
        assert!(text.contains("[[user]]"));
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), scenario);
    }

    #[test]
    fn validation_rejects_bad_users() {
        assert!(UserProfile { weight: 0.0, ..user() }.validate().is_err());
        assert!(UserProfile { gain: -1.0, ..user() }.validate().is_err());
        assert!(UserProfile { subchannel_gains: vec![0.0], ..user() }.validate().is_err());
        assert!(UserProfile { energy_per_cycle: 0.0, ..user() }.validate().is_ok());
    }

    fn objective(u: &UserProfile, cfg: &SystemConfig, ell: f64, t: f64) -> f64 {
        offload_energy_tdma(u, cfg, ell, t).unwrap() + local_energy(u, ell).unwrap()
    }

    proptest! {
        #[test]
        fn objective_midpoint_convex(
            l1 in 0.0..1e6f64, l2 in 0.0..1e6f64, t1 in 1e-3..0.1f64, t2 in 1e-3..0.1f64,
        ) {
            let (u, cfg) = (user(), SystemConfig::tdma_default());
            let mid = objective(&u, &cfg, 0.5 * (l1 + l2), 0.5 * (t1 + t2));
            let avg = 0.5 * (objective(&u, &cfg, l1, t1) + objective(&u, &cfg, l2, t2));
            prop_assert!(mid <= avg + 1e-12 * avg.abs().max(1.0));
        }

        #[test]
        fn min_offload_monotone(t1 in 1e-3..1.0f64, t2 in 1e-3..1.0f64, f1 in 1e8..1e9f64, r in 0.0..5e6f64) {
            let u = UserProfile { data_bits: r, cpu_hz: f1, ..user() };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(min_offload(&u, hi) <= min_offload(&u, lo));
            let faster = UserProfile { cpu_hz: f1 * 1.5, ..u.clone() };
            prop_assert!(min_offload(&faster, t1) <= min_offload(&u, t1));
            let bigger = UserProfile { data_bits: r * 1.5, ..u.clone() };
            prop_assert!(min_offload(&bigger, t1) >= min_offload(&u, t1));
        }
    }
}
