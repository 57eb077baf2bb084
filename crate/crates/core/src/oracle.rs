//! Brute-force reference solvers for small instances.
//!
//! Nothing here calls into `tdma`, `ofdma` or `priority`; the oracles share
//! only the energy model and the scalar primitives in `numerics`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{min_offload, ofdma_report, tdma_report, OfdmaAllocation, Scenario, TdmaAllocation, UserProfile};
use crate::numerics::{bisect, f_prime_inverse, g_inverse, BisectionSpec};

/// Which TDMA problem the oracle solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TdmaVariant {
    /// Time sharing only; the cloud is unconstrained.
    Unbounded,
    /// Time sharing plus `sum C_k ℓ_k <= capacity`.
    BoundedLoad { capacity_cycles: f64 },
    /// Cloud computing time `sum C_k ℓ_k / F'` shares the slot.
    SharedCpu { cycles_per_s: f64 },
}

/// Grid density and refinement depth of [`oracle_tdma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResolution {
    /// Grid points per offloaded-data dimension.
    pub points: usize,
    /// Grid rounds; each shrinks the box 4x around the incumbent.
    pub rounds: usize,
    /// Finish with a pattern search from the incumbent.
    pub polish: bool,
}

impl Default for OracleResolution {
    fn default() -> Self {
        OracleResolution { points: 64, rounds: 3, polish: true }
    }
}

impl OracleResolution {
    /// Keeps the grid near `budget` points in total for `users` dimensions.
    pub fn for_users(users: usize, budget: usize) -> Self {
        let per_dim = (budget as f64).powf(1.0 / users.max(1) as f64).floor() as usize;
        OracleResolution { points: per_dim.clamp(3, 64), ..Self::default() }
    }
}

struct Tdma<'a> {
    scenario: &'a Scenario,
    variant: TdmaVariant,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Tdma<'_> {
    /// Time left for transmission, or `None` when the point breaks a cloud
    /// constraint.
    fn airtime(&self, bits: &[f64]) -> Option<f64> {
        let slot = self.scenario.system.slot_s;
        let cycles: f64 = bits.iter().zip(&self.scenario.users).map(|(x, u)| x * u.cycles_per_bit).sum();
        match self.variant {
            TdmaVariant::Unbounded => Some(slot),
            TdmaVariant::BoundedLoad { capacity_cycles } => (cycles <= capacity_cycles * (1.0 + 1e-12)).then_some(slot),
            TdmaVariant::SharedCpu { cycles_per_s } => {
                let left = slot - cycles / cycles_per_s;
                (left > 0.0).then_some(left)
            }
        }
    }

    fn rate(&self, u: &UserProfile, lambda: f64) -> f64 {
        let cfg = &self.scenario.system;
        g_inverse(-u.gain * lambda / u.weight, cfg.bandwidth_hz, cfg.noise_w).unwrap_or(0.0)
    }

    /// Optimal time split for fixed data: the multiplier `λ` with
    /// `sum ℓ_k / g^-1(-h_k^2 λ / β_k) = airtime`, found on `ln λ`.
    fn split(&self, bits: &[f64], airtime: f64) -> Option<(Vec<f64>, f64)> {
        let users = &self.scenario.users;
        if bits.iter().all(|&x| x == 0.0) {
            return Some((vec![0.0; bits.len()], 0.0));
        }
        let used = |x: f64| -> f64 {
            let lambda = x.exp();
            users
                .iter()
                .zip(bits)
                .filter(|(_, &b)| b > 0.0)
                .map(|(u, &b)| b / self.rate(u, lambda))
                .sum::<f64>()
                - airtime
        };
        let scale = users.iter().map(|u| u.weight * self.scenario.system.noise_w / u.gain).fold(0.0, f64::max);
        let (mut lo, mut hi) = (scale.ln(), scale.ln());
        while used(lo) <= 0.0 {
            lo -= 8.0;
            if lo < -700.0 {
                break;
            }
        }
        while used(hi) > 0.0 {
            hi += 8.0;
            if hi > 700.0 {
                return None;
            }
        }
        let x = if lo < hi {
            let spec = BisectionSpec::new(lo, hi).tolerances(1e-11, 0.0).max_iter(400);
            bisect(used, &spec).ok()?.hi
        } else {
            hi
        };
        let lambda = x.exp();
        let slots = users
            .iter()
            .zip(bits)
            .map(|(u, &b)| if b > 0.0 { b / self.rate(u, lambda) } else { 0.0 })
            .collect();
        Some((slots, lambda))
    }

    fn allocation(&self, bits: &[f64]) -> Option<TdmaAllocation> {
        let airtime = self.airtime(bits)?;
        let (slots, lambda) = self.split(bits, airtime)?;
        Some(TdmaAllocation { offload_bits: bits.to_vec(), slot_s: slots, lambda, mu: 0.0 })
    }

    fn energy(&self, bits: &[f64]) -> f64 {
        self.allocation(bits)
            .and_then(|a| tdma_report(self.scenario, &a, "oracle", 0).ok())
            .map_or(f64::INFINITY, |r| r.total_weighted_energy)
    }

    fn clip(&self, bits: &mut [f64]) {
        for (k, x) in bits.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }

    fn grid_round(&self, lo: &[f64], hi: &[f64], points: usize, incumbent: (Vec<f64>, f64)) -> (Vec<f64>, f64) {
        let k = lo.len();
        let axis = |d: usize, i: usize| -> f64 {
            if points == 1 || hi[d] == lo[d] {
                lo[d]
            } else {
                lo[d] + (hi[d] - lo[d]) * i as f64 / (points - 1) as f64
            }
        };
        let total = points.pow(k as u32);
        let best = (0..total)
            .into_par_iter()
            .map(|mut idx| {
                let mut bits = vec![0.0; k];
                for (d, b) in bits.iter_mut().enumerate().rev() {
                    *b = axis(d, idx % points);
                    idx /= points;
                }
                self.energy(&bits)
            })
            .enumerate()
            .reduce(|| (usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
        if best.1 < incumbent.1 {
            let mut idx = best.0;
            let mut bits = vec![0.0; k];
            for (d, b) in bits.iter_mut().enumerate().rev() {
                *b = axis(d, idx % points);
                idx /= points;
            }
            (bits, best.1)
        } else {
            incumbent
        }
    }

    /// Compass search with coordinate moves and moves that trade data
    /// between two users at constant cloud load.
    fn polish(&self, start: (Vec<f64>, f64)) -> (Vec<f64>, f64) {
        let users = &self.scenario.users;
        let k = start.0.len();
        let (mut x, mut e) = start;
        let mut step: Vec<f64> = (0..k).map(|d| 0.25 * (self.upper[d] - self.lower[d])).collect();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for i in 0..k {
            let mut d = vec![0.0; k];
            d[i] = 1.0;
            dirs.push(d.clone());
            d[i] = -1.0;
            dirs.push(d);
            for j in 0..k {
                if i != j {
                    let mut d = vec![0.0; k];
                    d[i] = 1.0;
                    d[j] = -users[i].cycles_per_bit / users[j].cycles_per_bit;
                    dirs.push(d);
                }
            }
        }
        let floor: Vec<f64> = (0..k).map(|d| 1e-10 * self.upper[d].max(1.0)).collect();
        for _ in 0..4000 {
            let mut improved = false;
            for dir in &dirs {
                // cross moves use the step of the coordinate pushed up
                let lead = dir.iter().position(|&v| v != 0.0).unwrap_or(0);
                let mut y: Vec<f64> = (0..k).map(|d| x[d] + dir[d] * step[lead]).collect();
                self.clip(&mut y);
                let ey = self.energy(&y);
                if ey < e {
                    x = y;
                    e = ey;
                    improved = true;
                }
            }
            if !improved {
                let mut all_small = true;
                for d in 0..k {
                    step[d] *= 0.5;
                    if step[d] > floor[d] {
                        all_small = false;
                    }
                }
                if all_small {
                    break;
                }
            }
        }
        (x, e)
    }
}

/// Minimises the TDMA objective over offloaded data by grid rounds and a
/// final pattern search; for each data vector the slot is split optimally by
/// bisection on the time multiplier.
pub fn oracle_tdma(scenario: &Scenario, variant: TdmaVariant, resolution: OracleResolution) -> Result<(TdmaAllocation, f64)> {
    scenario.validate()?;
    if resolution.points < 2 || resolution.rounds == 0 {
        return Err(Error::invalid("oracle needs at least 2 points and 1 round"));
    }
    let slot = scenario.system.slot_s;
    let lower: Vec<f64> = scenario.users.iter().map(|u| min_offload(u, slot)).collect();
    let upper: Vec<f64> = scenario.users.iter().map(|u| u.data_bits).collect();
    let problem = Tdma { scenario, variant, lower: lower.clone(), upper: upper.clone() };
    if problem.energy(&lower).is_infinite() {
        return Err(Error::Infeasible("the minimum offloads already break a constraint".into()));
    }
    let mut best = (lower.clone(), problem.energy(&lower));
    let (mut lo, mut hi) = (lower.clone(), upper.clone());
    for _ in 0..resolution.rounds {
        best = problem.grid_round(&lo, &hi, resolution.points, best);
        for d in 0..lo.len() {
            let half = 0.125 * (hi[d] - lo[d]);
            lo[d] = (best.0[d] - half).max(lower[d]);
            hi[d] = (best.0[d] + half).min(upper[d]);
        }
    }
    if resolution.polish {
        best = problem.polish(best);
    }
    let alloc = problem
        .allocation(&best.0)
        .ok_or_else(|| Error::Inconsistent("oracle incumbent lost feasibility".into()))?;
    Ok((alloc, best.1))
}

/// Best data split for one user on a fixed set of sub-channels when each
/// offloaded bit is worth `value` joules (weighted), within `[lower, upper]`.
struct ChannelUser<'a> {
    user: &'a UserProfile,
    gains: Vec<f64>,
    width: f64,
    noise: f64,
}

impl ChannelUser<'_> {
    /// Bits on each channel when the weighted marginal transmit cost is `nu`.
    fn bits_at(&self, nu: f64) -> Vec<f64> {
        self.gains
            .iter()
            .map(|&g| {
                let level = nu * g * self.width / (self.user.weight * self.noise * std::f64::consts::LN_2);
                if level > 1.0 {
                    self.width * level.log2()
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn total_at(&self, nu: f64) -> f64 {
        self.bits_at(nu).iter().sum()
    }

    fn solve(&self, value: f64, lower: f64, upper: f64) -> Vec<f64> {
        if self.gains.is_empty() {
            return Vec::new();
        }
        let free = if value > 0.0 { self.total_at(value) } else { 0.0 };
        let target = free.clamp(lower, upper);
        if target == free && value > 0.0 {
            return self.bits_at(value);
        }
        if target == 0.0 {
            return vec![0.0; self.gains.len()];
        }
        // log-space bisection on the water level for the clamped total
        let gap = |x: f64| self.total_at(x.exp()) - target;
        let mut hi = value.max(1e-300).ln().max(-700.0);
        while gap(hi) < 0.0 {
            hi += 4.0;
        }
        let mut lo = hi;
        while gap(lo) >= 0.0 && lo > -745.0 {
            lo -= 4.0;
        }
        let spec = BisectionSpec::new(lo, hi).tolerances(1e-15, 0.0).max_iter(400);
        let x = bisect(gap, &spec).map(|o| o.root).unwrap_or(hi);
        let mut bits = self.bits_at(x.exp());
        let sum: f64 = bits.iter().sum();
        if sum > 0.0 {
            for b in bits.iter_mut() {
                *b *= target / sum;
            }
        }
        bits
    }
}

/// Enumerates every sub-channel assignment (each channel to one user or to
/// nobody) and solves the continuous part of each exactly. Limited to
/// `(K + 1)^N <= 10^6` assignments.
pub fn oracle_ofdma_exhaustive(scenario: &Scenario) -> Result<(OfdmaAllocation, f64)> {
    scenario.validate_ofdma()?;
    let cfg = &scenario.system;
    let k_users = scenario.users.len();
    let n = cfg.subchannels;
    let choices = k_users + 1;
    let total = (choices as f64).powi(n as i32);
    if total > 1e6 {
        return Err(Error::TooLarge(format!("{total:e} assignments exceed the enumeration budget of 1e6")));
    }
    let slot = cfg.slot_s;
    let lower: Vec<f64> = scenario.users.iter().map(|u| min_offload(u, slot)).collect();
    let capacity = match cfg.cloud {
        crate::model::CloudModel::BoundedLoad { capacity_cycles } => Some(capacity_cycles),
        _ => None,
    };
    if let Some(cap) = capacity {
        let forced: f64 = lower.iter().zip(&scenario.users).map(|(m, u)| m * u.cycles_per_bit).sum();
        if forced > cap {
            return Err(Error::Infeasible(format!("sum of m_k C_k = {forced:e} exceeds F = {cap:e}")));
        }
    }
    let link = cfg.subchannel_link();

    let evaluate = |code: usize| -> Option<(OfdmaAllocation, f64)> {
        let mut owner = vec![k_users; n];
        let mut c = code;
        for slot_owner in owner.iter_mut().rev() {
            *slot_owner = c % choices;
            c /= choices;
        }
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); k_users];
        for (ch, &o) in owner.iter().enumerate() {
            if o < k_users {
                sets[o].push(ch);
            }
        }
        if (0..k_users).any(|k| lower[k] > 0.0 && sets[k].is_empty()) {
            return None;
        }
        let solvers: Vec<ChannelUser> = scenario
            .users
            .iter()
            .zip(&sets)
            .map(|(u, set)| ChannelUser {
                user: u,
                gains: set.iter().map(|&ch| u.subchannel_gains[ch] / slot).collect(),
                width: link.bandwidth,
                noise: link.noise,
            })
            .collect();
        let split = |mu: f64| -> Vec<Vec<f64>> {
            solvers
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let u = s.user;
                    let value = u.cycles_per_bit * (u.weight * u.energy_per_cycle - mu);
                    s.solve(value, lower[k], u.data_bits)
                })
                .collect()
        };
        let load = |bits: &[Vec<f64>]| -> f64 {
            bits.iter().zip(&scenario.users).map(|(b, u)| b.iter().sum::<f64>() * u.cycles_per_bit).sum()
        };
        let mut bits = split(0.0);
        if let Some(cap) = capacity {
            if load(&bits) > cap {
                let top = scenario.users.iter().map(|u| u.weight * u.energy_per_cycle).fold(0.0, f64::max);
                let spec = BisectionSpec::new(0.0, top).tolerances(1e-30, 1e-13).max_iter(400);
                let mu = bisect(|mu| load(&split(mu)) - cap, &spec).ok()?.hi;
                bits = split(mu);
            }
        }
        let mut alloc = OfdmaAllocation::empty(k_users, n);
        for k in 0..k_users {
            for (i, &ch) in sets[k].iter().enumerate() {
                alloc.assignment[k][ch] = true;
                alloc.offload_bits[k][ch] = bits[k][i];
            }
        }
        let energy = ofdma_report(scenario, &alloc, "oracle", 0).ok()?.total_weighted_energy;
        Some((alloc, energy))
    };

    let best = (0..total as usize)
        .into_par_iter()
        .filter_map(|code| evaluate(code).map(|(a, e)| (code, a, e)))
        .reduce_with(|a, b| if b.2 < a.2 || (b.2 == a.2 && b.0 < a.0) { b } else { a });
    best.map(|(_, a, e)| (a, e))
        .ok_or_else(|| Error::Infeasible("no sub-channel assignment serves every user that must offload".into()))
}

/// Which priority [`numeric_priority_root`] recovers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorityVariant {
    Unbounded,
    SharedCpu { cycles_per_s: f64 },
}

/// Solves `f'^-1(C P h^2 - x C h^2 / (β F')) = g^-1(-h^2 x / β)` for `x` by
/// bisection (the `F'` term vanishes for an unbounded cloud). Returns 0 when
/// offloading never pays.
pub fn numeric_priority_root(user: &UserProfile, cfg: &crate::model::SystemConfig, variant: PriorityVariant) -> Result<f64> {
    let (b, n0) = (cfg.bandwidth_hz, cfg.noise_w);
    let floor = n0 * std::f64::consts::LN_2 / b;
    let cloud = match variant {
        PriorityVariant::Unbounded => f64::INFINITY,
        PriorityVariant::SharedCpu { cycles_per_s } => cycles_per_s,
    };
    let slope = |x: f64| user.cycles_per_bit * user.gain * (user.energy_per_cycle - x / (user.weight * cloud));
    if slope(0.0) <= floor {
        return Ok(0.0);
    }
    let gap = |x: f64| -> f64 {
        let lhs = f_prime_inverse(slope(x).max(floor), b, n0).unwrap_or(0.0);
        lhs - g_inverse(-user.gain * x / user.weight, b, n0).unwrap_or(f64::INFINITY)
    };
    let mut hi = user.weight * n0 / user.gain;
    let mut guard = 0;
    while gap(hi) > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::NoConvergence(guard));
        }
    }
    let spec = BisectionSpec::new(0.0, hi).tolerances(1e-300, 1e-14).max_iter(2000);
    Ok(bisect(gap, &spec)?.root)
}
