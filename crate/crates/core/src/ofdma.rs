//! OFDMA resource allocation.
//!
//! The sequential solver runs four phases:
//!
//! 1. reserve one sub-channel for every user that must offload,
//! 2. average each user's gain over the free sub-channels and solve the
//!    resulting TDMA-like problem for a fractional channel count and a data
//!    size per user,
//! 3. turn the fractional counts into concrete sub-channels by priority,
//! 4. spread each user's data over its sub-channels by water-filling.
//!
//! Sub-channel gains enter the energy as `h̄^2 = h^2 / T` and one sub-channel
//! carries `x` bits per slot at power `N̄0 (2^(x / (B̄ T)) - 1)`.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::{min_offload, ofdma_report, CloudModel, OfdmaAllocation, PolicyReport, Scenario, SystemConfig, UserProfile};
use crate::priority::link_priority;
use crate::tdma::{solve_bounded, Lane, ThresholdProblem, TdmaSolverOptions};

/// Sub-channel ownership during the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubchannelPlan {
    /// Sub-channels held by each user, in assignment order.
    pub assigned: Vec<Vec<usize>>,
    /// Parallel to `assigned`: true for channels reserved for users that
    /// must offload.
    pub reserved: Vec<Vec<bool>>,
    /// Sub-channels nobody holds yet, ascending.
    pub unassigned: Vec<usize>,
}

impl SubchannelPlan {
    pub fn new(users: usize, subchannels: usize) -> Self {
        SubchannelPlan {
            assigned: vec![Vec::new(); users],
            reserved: vec![Vec::new(); users],
            unassigned: (0..subchannels).collect(),
        }
    }

    fn give(&mut self, user: usize, channel: usize, reserved: bool) {
        self.unassigned.retain(|&n| n != channel);
        self.assigned[user].push(channel);
        self.reserved[user].push(reserved);
    }

    pub fn holder(&self, channel: usize) -> Option<usize> {
        self.assigned.iter().position(|set| set.contains(&channel))
    }

    /// The 0/1 assignment matrix.
    pub fn matrix(&self, subchannels: usize) -> Vec<Vec<bool>> {
        self.assigned
            .iter()
            .map(|set| {
                let mut row = vec![false; subchannels];
                for &n in set {
                    row[n] = true;
                }
                row
            })
            .collect()
    }
}

/// Effective gain `h̄^2 = h^2 / T` of user `k` on sub-channel `n`.
pub fn effective_gain(user: &UserProfile, cfg: &SystemConfig, n: usize) -> Result<f64> {
    user.subchannel_gains
        .get(n)
        .map(|g| g / cfg.slot_s)
        .ok_or_else(|| Error::invalid(format!("sub-channel {n} out of range ({} gains)", user.subchannel_gains.len())))
}

/// Priority of a user on one sub-channel: the TDMA priority with the
/// sub-channel gain, noise and `B̄ T` in place of the TDMA link.
pub fn subchannel_priority(user: &UserProfile, cfg: &SystemConfig, n: usize) -> Result<f64> {
    let gain = effective_gain(user, cfg, n)?;
    Ok(link_priority(cfg.subchannel_link(), user.weight, user.energy_per_bit(), gain))
}

/// Marginal transmit energy `f̄'(ℓ) / h̄^2` of `bits` on sub-channel `n`.
pub fn subchannel_marginal_cost(user: &UserProfile, cfg: &SystemConfig, n: usize, bits: f64) -> Result<f64> {
    let gain = effective_gain(user, cfg, n)?;
    let link = cfg.subchannel_link();
    Ok(link.noise * LN_2 / link.bandwidth * (bits * LN_2 / link.bandwidth).exp() / gain)
}

struct PriorityTable {
    phi: Vec<Vec<f64>>,
    gain: Vec<Vec<f64>>,
}

impl PriorityTable {
    fn new(scenario: &Scenario) -> Result<Self> {
        let cfg = &scenario.system;
        let mut phi = Vec::with_capacity(scenario.users.len());
        let mut gain = Vec::with_capacity(scenario.users.len());
        for u in &scenario.users {
            phi.push((0..cfg.subchannels).map(|n| subchannel_priority(u, cfg, n)).collect::<Result<Vec<_>>>()?);
            gain.push((0..cfg.subchannels).map(|n| effective_gain(u, cfg, n)).collect::<Result<Vec<_>>>()?);
        }
        Ok(PriorityTable { phi, gain })
    }

    /// Orders (user, channel) pairs: higher priority first, then higher gain
    /// (which separates pairs whose priority is zero), then lower user and
    /// channel index.
    fn better(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        let by_phi = self.phi[a.0][a.1].total_cmp(&self.phi[b.0][b.1]);
        let by_gain = self.gain[a.0][a.1].total_cmp(&self.gain[b.0][b.1]);
        match by_phi.then(by_gain) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (a.0, a.1) < (b.0, b.1),
        }
    }

    fn best(&self, users: impl Iterator<Item = usize> + Clone, channels: &[usize]) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for k in users {
            for &n in channels {
                if best.map_or(true, |b| self.better((k, n), b)) {
                    best = Some((k, n));
                }
            }
        }
        best
    }
}

/// Phase 1: every user that must offload gets one sub-channel, taken in
/// descending order of per-sub-channel priority.
pub fn reserve_required_subchannels(scenario: &Scenario) -> Result<SubchannelPlan> {
    scenario.validate_ofdma()?;
    let table = PriorityTable::new(scenario)?;
    reserve_with(scenario, &table)
}

fn reserve_with(scenario: &Scenario, table: &PriorityTable) -> Result<SubchannelPlan> {
    let slot = scenario.system.slot_s;
    let n = scenario.system.subchannels;
    let mut required: Vec<usize> = (0..scenario.users.len())
        .filter(|&k| min_offload(&scenario.users[k], slot) > 0.0)
        .collect();
    if required.len() > n {
        return Err(Error::Infeasible(format!(
            "{} users must offload but only {n} sub-channels exist",
            required.len()
        )));
    }
    let mut plan = SubchannelPlan::new(scenario.users.len(), n);
    while !required.is_empty() {
        let (k, ch) = table
            .best(required.iter().copied(), &plan.unassigned)
            .ok_or_else(|| Error::Inconsistent("ran out of sub-channels during reservation".into()))?;
        plan.give(k, ch, true);
        required.retain(|&u| u != k);
    }
    Ok(plan)
}

/// Phase 2 input: `H_k = sqrt(mean_{n free} h̄^2_{k,n})`.
pub fn average_channel_gains(scenario: &Scenario, plan: &SubchannelPlan) -> Result<Vec<f64>> {
    if plan.unassigned.is_empty() {
        return Err(Error::Degenerate("no free sub-channels to average over".into()));
    }
    let cfg = &scenario.system;
    scenario
        .users
        .iter()
        .map(|u| {
            let mut sum = 0.0;
            for &n in &plan.unassigned {
                sum += effective_gain(u, cfg, n)?;
            }
            Ok((sum / plan.unassigned.len() as f64).sqrt())
        })
        .collect()
}

fn counterpart_problem(scenario: &Scenario, avg_gain: &[f64], budget: f64, mu: f64) -> ThresholdProblem {
    let cfg = &scenario.system;
    let link = cfg.subchannel_link();
    let lanes = scenario
        .users
        .iter()
        .zip(avg_gain)
        .map(|(u, &h)| {
            let gain = h * h;
            let slope = (u.cycles_per_bit * (u.energy_per_cycle - mu / u.weight)).max(0.0);
            Lane {
                weight: u.weight,
                gain,
                priority: link_priority(link, u.weight, slope, gain),
                lower: min_offload(u, cfg.slot_s),
                upper: u.data_bits,
                extra_per_bit: 0.0,
            }
        })
        .collect();
    ThresholdProblem { link, budget, lanes }
}

/// Phase 2: fractional sub-channel counts `n_k` and data sizes `ℓ_k` from the
/// averaged problem, with the free sub-channels as the shared budget.
pub fn solve_tdma_counterpart(
    scenario: &Scenario,
    avg_gain: &[f64],
    plan: &SubchannelPlan,
    opts: &TdmaSolverOptions,
) -> Result<Vec<(f64, f64)>> {
    let budget = plan.unassigned.len() as f64;
    let sol = counterpart_problem(scenario, avg_gain, budget, 0.0).solve(opts)?;
    Ok(sol.share.into_iter().zip(sol.load).collect())
}

fn solve_counterpart_bounded(
    scenario: &Scenario,
    avg_gain: &[f64],
    plan: &SubchannelPlan,
    capacity: f64,
    opts: &TdmaSolverOptions,
) -> Result<(Vec<(f64, f64)>, f64)> {
    let budget = plan.unassigned.len() as f64;
    let link = scenario.system.subchannel_link();
    let mu_max = scenario
        .users
        .iter()
        .zip(avg_gain)
        .map(|(u, &h)| u.weight * (u.energy_per_cycle - link.noise * LN_2 / (link.bandwidth * u.cycles_per_bit * h * h)))
        .fold(0.0, f64::max);
    let cycles: Vec<f64> = scenario.users.iter().map(|u| u.cycles_per_bit).collect();
    let out = solve_bounded(|mu| counterpart_problem(scenario, avg_gain, budget, mu), &cycles, capacity, mu_max, opts)?;
    Ok((out.inner.share.into_iter().zip(out.inner.load).collect(), out.mu))
}

/// Phase 3: each user first receives `floor(n_k)` free sub-channels in
/// priority order; a user with `n_k > 0` still holding nothing then gets
/// one; every remaining sub-channel goes to its highest-priority user.
pub fn assign_integer_subchannels(scenario: &Scenario, plan: &SubchannelPlan, n_star: &[f64]) -> Result<SubchannelPlan> {
    let table = PriorityTable::new(scenario)?;
    assign_with(scenario, &table, plan, n_star)
}

fn assign_with(scenario: &Scenario, table: &PriorityTable, plan: &SubchannelPlan, n_star: &[f64]) -> Result<SubchannelPlan> {
    let k_users = scenario.users.len();
    if n_star.len() != k_users {
        return Err(Error::invalid("one sub-channel count per user is required"));
    }
    let quota: Vec<usize> = n_star.iter().map(|&n| n.max(0.0).floor() as usize).collect();
    if quota.iter().sum::<usize>() > plan.unassigned.len() {
        return Err(Error::Inconsistent(format!(
            "rounded counts need {} sub-channels but {} are free",
            quota.iter().sum::<usize>(),
            plan.unassigned.len()
        )));
    }
    let mut plan = plan.clone();
    let mut got = vec![0usize; k_users];
    let mut waiting: Vec<usize> = (0..k_users).filter(|&k| quota[k] > 0).collect();
    while !waiting.is_empty() {
        let Some((k, ch)) = table.best(waiting.iter().copied(), &plan.unassigned) else { break };
        plan.give(k, ch, false);
        got[k] += 1;
        if got[k] == quota[k] {
            waiting.retain(|&u| u != k);
        }
    }
    let mut starved: Vec<usize> = (0..k_users).filter(|&k| n_star[k] > 0.0 && plan.assigned[k].is_empty()).collect();
    while !starved.is_empty() {
        let Some((k, ch)) = table.best(starved.iter().copied(), &plan.unassigned) else { break };
        plan.give(k, ch, false);
        starved.retain(|&u| u != k);
    }
    for ch in plan.unassigned.clone() {
        if let Some((k, _)) = table.best(0..k_users, &[ch]) {
            plan.give(k, ch, false);
        }
    }
    Ok(plan)
}

/// Phase 4: water-filling of `total_bits` over `channels`,
/// `ℓ_n = [B̄T log2(ξ B̄T h̄_n^2 / (N̄0 ln 2))]^+` with `ξ` set by the total.
///
/// Returns one entry per listed channel.
pub fn allocate_data_over_subchannels(
    user: &UserProfile,
    cfg: &SystemConfig,
    channels: &[usize],
    total_bits: f64,
) -> Result<Vec<f64>> {
    if !(total_bits >= 0.0) {
        return Err(Error::invalid(format!("total bits {total_bits:e} must be non-negative")));
    }
    if total_bits == 0.0 {
        return Ok(vec![0.0; channels.len()]);
    }
    if channels.is_empty() {
        return Err(Error::invalid(format!("{total_bits:e} bits but no sub-channels to carry them")));
    }
    let link = cfg.subchannel_link();
    let width = link.bandwidth;
    // log2 of B̄T h̄^2 / (N̄0 ln 2), the per-channel water floor.
    let mut floors: Vec<(usize, f64)> = Vec::with_capacity(channels.len());
    for (i, &n) in channels.iter().enumerate() {
        let g = effective_gain(user, cfg, n)?;
        floors.push((i, (width * g / (link.noise * LN_2)).log2()));
    }
    floors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let target = total_bits / width;
    let mut sum = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for (j, &(_, c)) in floors.iter().enumerate() {
        sum += c;
        active = j + 1;
        level = (target - sum) / active as f64;
        if floors.get(j + 1).map_or(true, |&(_, next)| level + next <= 0.0) {
            break;
        }
    }
    let mut bits = vec![0.0; channels.len()];
    for &(i, c) in &floors[..active] {
        bits[i] = (width * (level + c)).max(0.0);
    }
    Ok(bits)
}

fn unconstrained_bits(user: &UserProfile, cfg: &SystemConfig, channels: &[usize]) -> Result<f64> {
    let width = cfg.subchannel_link().bandwidth;
    let mut total = 0.0;
    for &n in channels {
        let gain = effective_gain(user, cfg, n)?;
        let u = crate::priority::link_upsilon(cfg.subchannel_link(), user.energy_per_bit(), gain);
        if u > 1.0 {
            total += width * u.log2();
        }
    }
    Ok(total)
}

fn finish(scenario: &Scenario, plan: &SubchannelPlan, totals: &[f64], solver: &str, iterations: usize) -> Result<(OfdmaAllocation, PolicyReport)> {
    let cfg = &scenario.system;
    let mut alloc = OfdmaAllocation::empty(scenario.users.len(), cfg.subchannels);
    alloc.assignment = plan.matrix(cfg.subchannels);
    for (k, u) in scenario.users.iter().enumerate() {
        let bits = allocate_data_over_subchannels(u, cfg, &plan.assigned[k], totals[k])?;
        for (&n, b) in plan.assigned[k].iter().zip(bits) {
            alloc.offload_bits[k][n] = b;
        }
    }
    let report = ofdma_report(scenario, &alloc, solver, iterations)?;
    Ok((alloc, report))
}

enum Phase2 {
    Unbounded,
    Bounded(f64),
}

fn pipeline(scenario: &Scenario, opts: &TdmaSolverOptions, phase2: Phase2, solver: &str) -> Result<(OfdmaAllocation, PolicyReport)> {
    opts.validate()?;
    scenario.validate_ofdma()?;
    let cfg = &scenario.system;
    let table = PriorityTable::new(scenario)?;
    let reserved = reserve_with(scenario, &table)?;

    let (plan, mut totals) = if reserved.unassigned.is_empty() {
        // Nothing left to share: users keep their reserved channel and size
        // their data for it alone.
        let mut totals = Vec::with_capacity(scenario.users.len());
        for (k, u) in scenario.users.iter().enumerate() {
            let free = unconstrained_bits(u, cfg, &reserved.assigned[k])?;
            totals.push(free.clamp(min_offload(u, cfg.slot_s), u.data_bits));
        }
        if let Phase2::Bounded(capacity) = phase2 {
            let load: f64 = totals.iter().zip(&scenario.users).map(|(x, u)| x * u.cycles_per_bit).sum();
            if load > capacity {
                return Err(Error::Infeasible("every sub-channel is reserved and the cloud cannot take the resulting load".into()));
            }
        }
        (reserved, totals)
    } else {
        let avg = average_channel_gains(scenario, &reserved)?;
        let shares = match phase2 {
            Phase2::Unbounded => solve_tdma_counterpart(scenario, &avg, &reserved, opts)?,
            Phase2::Bounded(capacity) => solve_counterpart_bounded(scenario, &avg, &reserved, capacity, opts)?.0,
        };
        let n_star: Vec<f64> = shares.iter().map(|s| s.0).collect();
        let totals: Vec<f64> = shares.iter().map(|s| s.1).collect();
        (assign_with(scenario, &table, &reserved, &n_star)?, totals)
    };
    for (k, total) in totals.iter_mut().enumerate() {
        if plan.assigned[k].is_empty() {
            // Only reachable for users that need not offload.
            *total = 0.0;
        }
    }
    finish(scenario, &plan, &totals, solver, 0)
}

/// Sequential sub-optimal OFDMA allocation with an unconstrained cloud (any
/// cloud model in the scenario is ignored).
pub fn solve_ofdma_suboptimal(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(OfdmaAllocation, PolicyReport)> {
    pipeline(scenario, opts, Phase2::Unbounded, "ofdma-sequential")
}

/// Sequential OFDMA allocation for a bounded-load cloud: Phase 2 prices the
/// cloud load; the other phases are unchanged.
pub fn solve_ofdma_suboptimal_finite(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(OfdmaAllocation, PolicyReport)> {
    let capacity = match scenario.system.cloud {
        CloudModel::BoundedLoad { capacity_cycles } => capacity_cycles,
        other => return Err(Error::invalid(format!("this solver needs a bounded-load cloud, got {other:?}"))),
    };
    crate::model::check_feasibility(scenario).into_result()?;
    pipeline(scenario, opts, Phase2::Bounded(capacity), "ofdma-sequential-finite")
}

/// Greedy baseline: each sub-channel goes to its highest-priority user; each
/// user offloads up to where transmit cost meets local cost, clamped to its
/// bounds, then water-fills. Cloud load is not considered.
pub fn baseline_greedy(scenario: &Scenario) -> Result<(OfdmaAllocation, PolicyReport)> {
    scenario.validate_ofdma()?;
    let cfg = &scenario.system;
    let table = PriorityTable::new(scenario)?;
    let mut plan = SubchannelPlan::new(scenario.users.len(), cfg.subchannels);
    for ch in 0..cfg.subchannels {
        if let Some((k, _)) = table.best(0..scenario.users.len(), &[ch]) {
            plan.give(k, ch, false);
        }
    }
    let mut totals = Vec::with_capacity(scenario.users.len());
    for (k, u) in scenario.users.iter().enumerate() {
        let m = min_offload(u, cfg.slot_s);
        if plan.assigned[k].is_empty() {
            if m > 0.0 {
                return Err(Error::Infeasible(format!("user {k} must offload {m:e} bits but holds no sub-channel")));
            }
            totals.push(0.0);
            continue;
        }
        totals.push(unconstrained_bits(u, cfg, &plan.assigned[k])?.clamp(m, u.data_bits));
    }
    if let CloudModel::BoundedLoad { capacity_cycles } = cfg.cloud {
        let load: f64 = totals.iter().zip(&scenario.users).map(|(x, u)| x * u.cycles_per_bit).sum();
        if load > capacity_cycles {
            return Err(Error::Infeasible(format!(
                "greedy allocation loads the cloud with {load:e} cycles, above F = {capacity_cycles:e}"
            )));
        }
    }
    finish(scenario, &plan, &totals, "ofdma-greedy", 0)
}
