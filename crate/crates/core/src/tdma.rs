//! TDMA resource allocation.
//!
//! Every optimal policy here has the same shape: a multiplier `λ` prices the
//! shared time budget, users whose priority exceeds `λ` offload all their
//! data, users below it offload only their minimum, and each offloading user
//! transmits at the rate `g^-1(-h^2 λ / β)`. The solvers differ in which
//! priority they rank by and in how the cloud limit enters.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::{
    check_feasibility, min_offload, tdma_report, CloudModel, Link, PolicyReport, Scenario, TdmaAllocation,
};
use crate::numerics::{bisect, f_prime_inverse, g_inverse, BisectionSpec};
use crate::priority::{link_priority, link_priority_shared, priority_infinite, upsilon};

/// Stopping rules shared by the TDMA solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdmaSolverOptions {
    /// Relative tolerance on `λ`.
    pub lambda_tol: f64,
    /// Relative tolerance on `μ`.
    pub mu_tol: f64,
    pub max_iter: usize,
    /// Tune the marginal user so the budget is used exactly. When off, the
    /// marginal user stays at its minimum and some budget may be left idle.
    pub marginal_fill: bool,
}

impl Default for TdmaSolverOptions {
    fn default() -> Self {
        TdmaSolverOptions { lambda_tol: 1e-9, mu_tol: 1e-9, max_iter: 200, marginal_fill: true }
    }
}

impl TdmaSolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tol > 0.0 && self.mu_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// One user as seen by the threshold engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lane {
    pub weight: f64,
    pub gain: f64,
    pub priority: f64,
    pub lower: f64,
    pub upper: f64,
    /// Budget consumed per offloaded bit on top of the transmit share.
    pub extra_per_bit: f64,
}

/// Minimise `sum β_k s_k f(x_k / s_k) / g_k - ...` subject to
/// `sum_k (s_k + x_k extra_k) <= budget`, `lower_k <= x_k <= upper_k`.
#[derive(Debug, Clone)]
pub(crate) struct ThresholdProblem {
    pub link: Link,
    pub budget: f64,
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ThresholdSolution {
    pub load: Vec<f64>,
    pub share: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

impl ThresholdProblem {
    fn rate(&self, lane: &Lane, lambda: f64) -> f64 {
        g_inverse(-lane.gain * lambda / lane.weight, self.link.bandwidth, self.link.noise).unwrap_or(0.0)
    }

    fn per_bit(&self, lane: &Lane, lambda: f64) -> f64 {
        1.0 / self.rate(lane, lambda) + lane.extra_per_bit
    }

    /// Loads when every lane strictly above `level` (or at it, if
    /// `ties_up`) offloads fully.
    fn loads(&self, level: f64, ties_up: bool) -> Vec<f64> {
        self.lanes
            .iter()
            .map(|l| {
                let above = if ties_up { l.priority >= level } else { l.priority > level };
                if above && l.priority > 0.0 {
                    l.upper
                } else {
                    l.lower
                }
            })
            .collect()
    }

    fn usage(&self, load: &[f64], lambda: f64) -> f64 {
        self.lanes
            .iter()
            .zip(load)
            .filter(|(_, &x)| x > 0.0)
            .map(|(l, &x)| x * self.per_bit(l, lambda))
            .sum()
    }

    fn shares(&self, load: &[f64], lambda: f64) -> Vec<f64> {
        self.lanes
            .iter()
            .zip(load)
            .map(|(l, &x)| if x > 0.0 { x / self.rate(l, lambda) } else { 0.0 })
            .collect()
    }

    /// Smallest `λ` at which `load` fits the budget, by bisection on `ln λ`.
    fn fit_lambda(&self, load: &[f64], lo: f64, hi: f64, opts: &TdmaSolverOptions) -> Result<(f64, usize)> {
        if load.iter().all(|&x| x == 0.0) {
            return Ok((0.0, 0));
        }
        let excess = |lambda: f64| self.usage(load, lambda) - self.budget;
        let scale = self
            .lanes
            .iter()
            .map(|l| l.weight * self.link.noise / l.gain)
            .fold(f64::MIN_POSITIVE, f64::max);
        let mut iterations = 0;
        let mut hi = if hi.is_finite() { hi } else { (2.0 * lo).max(scale) };
        while excess(hi) > 0.0 {
            hi *= 4.0;
            iterations += 1;
            if !hi.is_finite() || iterations > 4 * opts.max_iter {
                return Err(Error::Infeasible(format!(
                    "minimum loads need more than the budget {:e} at any rate",
                    self.budget
                )));
            }
        }
        let mut lo = if lo > 0.0 { lo } else { (0.5 * hi).min(scale) };
        while excess(lo) <= 0.0 {
            if lo < 1e-300 {
                return Ok((lo, iterations));
            }
            lo *= 0.25;
            iterations += 1;
        }
        let spec = BisectionSpec::new(lo.ln(), hi.ln())
            .tolerances(1e-300, opts.lambda_tol * 1e-3)
            .max_iter(opts.max_iter);
        let out = bisect(|x| excess(x.exp()), &spec)?;
        // The hi end keeps usage at or below the budget.
        Ok((out.hi.exp(), iterations + out.iterations))
    }

    pub fn solve(&self, opts: &TdmaSolverOptions) -> Result<ThresholdSolution> {
        for (k, l) in self.lanes.iter().enumerate() {
            if !(l.lower >= 0.0 && l.lower <= l.upper) {
                return Err(Error::invalid(format!("lane {k}: bounds [{:e}, {:e}] are not ordered", l.lower, l.upper)));
            }
        }
        if !(self.budget > 0.0) {
            return Err(Error::Degenerate(format!("budget {:e} must be positive", self.budget)));
        }
        let forced: f64 = self.lanes.iter().map(|l| l.lower * l.extra_per_bit).sum();
        if forced >= self.budget {
            return Err(Error::Infeasible(format!(
                "minimum loads alone use {forced:e} of the budget {:e}",
                self.budget
            )));
        }

        let mut levels: Vec<f64> = self.lanes.iter().map(|l| l.priority).filter(|&p| p > 0.0).collect();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();

        // First level (in descending order) at which even the tied-down
        // configuration overruns the budget; usage grows as the level drops.
        let over = |p: f64| self.usage(&self.loads(p, false), p) > self.budget;
        let (mut a, mut b) = (0usize, levels.len());
        let mut iterations = 0;
        while a < b {
            let mid = (a + b) / 2;
            iterations += 1;
            if over(levels[mid]) {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        let first_over = a;

        if first_over > 0 {
            let p = levels[first_over - 1];
            let up = self.loads(p, true);
            if self.usage(&up, p) >= self.budget {
                return Ok(self.marginal_fill(p, opts, iterations + 1));
            }
        }
        let (lo, hi, load) = if first_over < levels.len() {
            let p = levels[first_over];
            let hi = if first_over == 0 { f64::INFINITY } else { levels[first_over - 1] };
            (p, hi, self.loads(p, false))
        } else {
            let hi = levels.last().copied().unwrap_or(f64::INFINITY);
            (0.0, hi, self.loads(0.0, false))
        };
        let (lambda, n) = self.fit_lambda(&load, lo, hi, opts)?;
        let share = self.shares(&load, lambda);
        Ok(ThresholdSolution { load, share, lambda, iterations: iterations + n })
    }

    /// `λ` sits exactly on the priority `p`; lanes tied at `p` absorb the
    /// leftover budget in index order.
    fn marginal_fill(&self, p: f64, opts: &TdmaSolverOptions, iterations: usize) -> ThresholdSolution {
        let mut load = self.loads(p, false);
        if opts.marginal_fill {
            let mut room = self.budget - self.usage(&load, p);
            for (k, lane) in self.lanes.iter().enumerate() {
                if lane.priority != p || room <= 0.0 {
                    continue;
                }
                let cost = self.per_bit(lane, p);
                let add = (lane.upper - lane.lower).min(room / cost).max(0.0);
                load[k] += add;
                room -= add * cost;
            }
        }
        let share = self.shares(&load, p);
        ThresholdSolution { load, share, lambda: p, iterations }
    }

    /// Fits `λ` to fixed loads; used once the loads are settled elsewhere.
    pub fn solve_fixed(&self, load: Vec<f64>, opts: &TdmaSolverOptions) -> Result<ThresholdSolution> {
        let (lambda, iterations) = self.fit_lambda(&load, 0.0, f64::INFINITY, opts)?;
        let share = self.shares(&load, lambda);
        Ok(ThresholdSolution { load, share, lambda, iterations })
    }
}

/// Outcome of a bounded-load solve: the allocation and the cloud price.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BoundedSolution {
    pub inner: ThresholdSolution,
    pub mu: f64,
}

/// Adds a cloud-load cap `sum cycles_k x_k <= capacity` on top of a threshold
/// problem whose priorities depend on the cloud price `μ`.
pub(crate) fn solve_bounded<F>(
    problem_at: F,
    cycles: &[f64],
    capacity: f64,
    mu_max: f64,
    opts: &TdmaSolverOptions,
) -> Result<BoundedSolution>
where
    F: Fn(f64) -> ThresholdProblem,
{
    let cloud = |s: &ThresholdSolution| -> f64 { s.load.iter().zip(cycles).map(|(x, c)| x * c).sum() };
    let free = problem_at(0.0).solve(opts)?;
    let mut iterations = free.iterations;
    if cloud(&free) <= capacity {
        return Ok(BoundedSolution { inner: free, mu: 0.0 });
    }
    let base = problem_at(0.0);
    let forced: f64 = base.lanes.iter().zip(cycles).map(|(l, c)| l.lower * c).sum();
    if forced > capacity {
        return Err(Error::Infeasible(format!(
            "sum of m_k C_k = {forced:e} cycles exceeds cloud capacity F = {capacity:e}"
        )));
    }

    let mut lo = 0.0;
    let mut lo_sol = free;
    let mut hi = mu_max.max(f64::MIN_POSITIVE);
    let mut hi_sol = problem_at(hi).solve(opts)?;
    let mut widen = 0;
    while cloud(&hi_sol) > capacity {
        hi *= 2.0;
        hi_sol = problem_at(hi).solve(opts)?;
        widen += 1;
        if widen > 64 {
            return Err(Error::NoConvergence(widen));
        }
    }

    let mut monotone = true;
    for _ in 0..opts.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= opts.mu_tol * 1e-3 * hi {
            break;
        }
        let sol = problem_at(mid).solve(opts)?;
        iterations += sol.iterations;
        let load = cloud(&sol);
        let slack = 1e-12 * capacity;
        if load > cloud(&lo_sol) + slack || load < cloud(&hi_sol) - slack {
            monotone = false;
            break;
        }
        if load == capacity {
            return Ok(BoundedSolution { inner: sol, mu: mid });
        }
        if load > capacity {
            lo = mid;
            lo_sol = sol;
        } else {
            hi = mid;
            hi_sol = sol;
        }
    }

    if !monotone {
        // Scan a grid for the first price that fits, then bisect inside it
        // without the monotonicity assumption.
        let steps = 2000;
        let top = hi.max(mu_max);
        let mut prev = (0.0, problem_at(0.0).solve(opts)?);
        for i in 1..=steps {
            let mu = top * i as f64 / steps as f64;
            let sol = problem_at(mu).solve(opts)?;
            if cloud(&sol) <= capacity {
                lo = prev.0;
                lo_sol = prev.1;
                hi = mu;
                hi_sol = sol;
                break;
            }
            prev = (mu, sol);
        }
        for _ in 0..opts.max_iter {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let sol = problem_at(mid).solve(opts)?;
            if cloud(&sol) > capacity {
                lo = mid;
                lo_sol = sol;
            } else {
                hi = mid;
                hi_sol = sol;
            }
        }
    }

    // The cloud load jumps across [lo, hi]. Start from the fitting side and
    // move the users that differ towards the other side until the cap binds.
    let mut load = hi_sol.load.clone();
    let mut room = capacity - cloud(&hi_sol);
    for k in 0..load.len() {
        let step = lo_sol.load[k] - hi_sol.load[k];
        if step <= 0.0 || room <= 0.0 {
            continue;
        }
        let add = step.min(room / cycles[k]);
        load[k] += add;
        room -= add * cycles[k];
    }
    let mu = 0.5 * (lo + hi);
    let mut inner = problem_at(mu).solve_fixed(load, opts)?;
    inner.iterations += iterations;
    Ok(BoundedSolution { inner, mu })
}

fn lanes_with(scenario: &Scenario, priority: impl Fn(usize) -> f64, extra: impl Fn(usize) -> f64) -> Vec<Lane> {
    let slot = scenario.system.slot_s;
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| Lane {
            weight: u.weight,
            gain: u.gain,
            priority: priority(k),
            lower: min_offload(u, slot),
            upper: u.data_bits,
            extra_per_bit: extra(k),
        })
        .collect()
}

fn p2_problem(scenario: &Scenario, mu: f64) -> ThresholdProblem {
    let link = scenario.system.tdma_link();
    let lanes = lanes_with(
        scenario,
        |k| {
            let u = &scenario.users[k];
            let slope = (u.cycles_per_bit * (u.energy_per_cycle - mu / u.weight)).max(0.0);
            link_priority(link, u.weight, slope, u.gain)
        },
        |_| 0.0,
    );
    ThresholdProblem { link, budget: scenario.system.slot_s, lanes }
}

fn into_allocation(sol: &ThresholdSolution, mu: f64) -> TdmaAllocation {
    TdmaAllocation { offload_bits: sol.load.clone(), slot_s: sol.share.clone(), lambda: sol.lambda, mu }
}

fn check_slot(scenario: &Scenario) -> Result<()> {
    scenario.validate()?;
    if !(scenario.system.slot_s > 0.0) {
        return Err(Error::Degenerate("slot duration must be positive".into()));
    }
    Ok(())
}

/// Slot length needed to send `bits` when the time price is `lambda`:
/// `ℓ / g^-1(-h^2 λ / β)`.
pub fn time_for_load(bits: f64, lambda: f64, user: &crate::model::UserProfile, cfg: &crate::model::SystemConfig) -> Result<f64> {
    if !(bits >= 0.0) || !(lambda >= 0.0) {
        return Err(Error::invalid(format!("bits {bits:e} and lambda {lambda:e} must be non-negative")));
    }
    if bits == 0.0 {
        return Ok(0.0);
    }
    let rate = g_inverse(-user.gain * lambda / user.weight, cfg.bandwidth_hz, cfg.noise_w)?;
    if rate <= 0.0 {
        return Err(Error::Degenerate(format!("lambda {lambda:e} gives zero rate, so {bits:e} bits need infinite time")));
    }
    Ok(bits / rate)
}

/// Optimal allocation with an unconstrained cloud (any cloud model in the
/// scenario is ignored).
pub fn solve_infinite(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(TdmaAllocation, PolicyReport)> {
    opts.validate()?;
    check_slot(scenario)?;
    let sol = p2_problem(scenario, 0.0).solve(opts)?;
    let alloc = into_allocation(&sol, 0.0);
    let report = tdma_report(scenario, &alloc, "tdma-infinite", sol.iterations)?;
    Ok((alloc, report))
}

/// The bracket `(0, max_k φ_k)` for the time multiplier.
///
/// When some user must offload but no user has positive priority the
/// bracket collapses to `(0, 0)`; the solvers then search above it.
pub fn lambda_bounds(scenario: &Scenario) -> (f64, f64) {
    let top = scenario
        .users
        .iter()
        .map(|u| priority_infinite(u, &scenario.system))
        .fold(0.0, f64::max);
    (0.0, top)
}

fn bounded_capacity(scenario: &Scenario) -> Result<f64> {
    match scenario.system.cloud {
        CloudModel::BoundedLoad { capacity_cycles } => Ok(capacity_cycles),
        other => Err(Error::invalid(format!("this solver needs a bounded-load cloud, got {other:?}"))),
    }
}

/// Largest useful cloud price: `max_k β_k (P_k - N0 ln 2 / (B C_k h_k^2))`.
/// Above it no user offloads voluntarily.
pub fn mu_upper_bound(scenario: &Scenario) -> f64 {
    let link = scenario.system.tdma_link();
    scenario
        .users
        .iter()
        .map(|u| u.weight * (u.energy_per_cycle - link.noise * LN_2 / (link.bandwidth * u.cycles_per_bit * u.gain)))
        .fold(0.0, f64::max)
}

/// Optimal allocation for a bounded-load cloud: thresholds on the effective
/// priority, with the cloud price found by bisection.
pub fn solve_finite_optimal(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(TdmaAllocation, PolicyReport)> {
    opts.validate()?;
    check_slot(scenario)?;
    let capacity = bounded_capacity(scenario)?;
    check_feasibility(scenario).into_result()?;
    let cycles: Vec<f64> = scenario.users.iter().map(|u| u.cycles_per_bit).collect();
    let out = solve_bounded(|mu| p2_problem(scenario, mu), &cycles, capacity, mu_upper_bound(scenario), opts)?;
    let alloc = into_allocation(&out.inner, out.mu);
    let report = tdma_report(scenario, &alloc, "tdma-finite-optimal", out.inner.iterations)?;
    Ok((alloc, report))
}

/// Low-complexity allocation for a bounded-load cloud.
///
/// The cloud is filled greedily in descending unconstrained priority, then
/// the slot is split for the resulting loads.
pub fn solve_finite_suboptimal(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(TdmaAllocation, PolicyReport)> {
    opts.validate()?;
    check_slot(scenario)?;
    let capacity = bounded_capacity(scenario)?;
    check_feasibility(scenario).into_result()?;
    let problem = p2_problem(scenario, 0.0);
    let free = problem.solve(opts)?;
    let cloud: f64 = free.load.iter().zip(&scenario.users).map(|(x, u)| x * u.cycles_per_bit).sum();
    let sol = if cloud <= capacity {
        free
    } else {
        let mut load: Vec<f64> = problem.lanes.iter().map(|l| l.lower).collect();
        let mut room = capacity
            - load.iter().zip(&scenario.users).map(|(x, u)| x * u.cycles_per_bit).sum::<f64>();
        let mut order: Vec<usize> = (0..load.len()).filter(|&k| problem.lanes[k].priority > 0.0).collect();
        order.sort_by(|&a, &b| problem.lanes[b].priority.total_cmp(&problem.lanes[a].priority).then(a.cmp(&b)));
        for k in order {
            if room <= 0.0 {
                break;
            }
            let c = scenario.users[k].cycles_per_bit;
            let add = (problem.lanes[k].upper - load[k]).min(room / c);
            load[k] += add;
            room -= add * c;
        }
        let mut sol = problem.solve_fixed(load, opts)?;
        sol.iterations += free.iterations;
        sol
    };
    let alloc = into_allocation(&sol, 0.0);
    let report = tdma_report(scenario, &alloc, "tdma-finite-suboptimal", sol.iterations)?;
    Ok((alloc, report))
}

/// Optimal allocation when the cloud CPU's computing time shares the slot.
pub fn solve_shared_cpu(scenario: &Scenario, opts: &TdmaSolverOptions) -> Result<(TdmaAllocation, PolicyReport)> {
    opts.validate()?;
    check_slot(scenario)?;
    let cloud_hz = match scenario.system.cloud {
        CloudModel::SharedCpu { cycles_per_s } => cycles_per_s,
        other => return Err(Error::invalid(format!("this solver needs a shared-CPU cloud, got {other:?}"))),
    };
    check_feasibility(scenario).into_result()?;
    let link = scenario.system.tdma_link();
    let lanes = lanes_with(
        scenario,
        |k| {
            let u = &scenario.users[k];
            link_priority_shared(link, u.weight, u.cycles_per_bit, u.energy_per_cycle, u.gain, cloud_hz)
        },
        |k| scenario.users[k].cycles_per_bit / cloud_hz,
    );
    let sol = ThresholdProblem { link, budget: scenario.system.slot_s, lanes }.solve(opts)?;
    let alloc = into_allocation(&sol, 0.0);
    let report = tdma_report(scenario, &alloc, "tdma-shared-cpu", sol.iterations)?;
    Ok((alloc, report))
}

fn top_priority(scenario: &Scenario) -> Result<(usize, f64)> {
    let mut best = (0, 0.0);
    for (k, u) in scenario.users.iter().enumerate() {
        let phi = priority_infinite(u, &scenario.system);
        if phi > best.1 {
            best = (k, phi);
        }
    }
    if best.1 <= 0.0 {
        return Err(Error::Degenerate("no user has a positive offloading priority".into()));
    }
    Ok(best)
}

/// Slot length at or below which only the top-priority user offloads
/// (when no user is forced to): `R_m / (B log2 υ_m)`.
pub fn exclusive_threshold(scenario: &Scenario) -> Result<f64> {
    let (m, _) = top_priority(scenario)?;
    let u = &scenario.users[m];
    Ok(u.data_bits / (scenario.system.bandwidth_hz * upsilon(u, &scenario.system).log2()))
}

/// Slot length at or above which every positive-priority user offloads all
/// of its data.
///
/// Sums the slot each user needs at the rate set by the smallest positive
/// priority: full data for positive-priority users, the forced minimum for
/// the rest.
pub fn inclusive_threshold(scenario: &Scenario) -> Result<f64> {
    top_priority(scenario)?;
    let cfg = &scenario.system;
    let phis: Vec<f64> = scenario.users.iter().map(|u| priority_infinite(u, cfg)).collect();
    let lambda_min = phis.iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (u, &phi) in scenario.users.iter().zip(&phis) {
        let bits = if phi > 0.0 { u.data_bits } else { min_offload(u, cfg.slot_s) };
        total += time_for_load(bits, lambda_min, u, cfg)?;
    }
    Ok(total)
}

/// Equal-time baseline: every user that gains from offloading or must
/// offload gets `T / n`, then sizes its data for that slot alone.
pub fn baseline_equal_allocation(scenario: &Scenario) -> Result<(TdmaAllocation, PolicyReport)> {
    check_slot(scenario)?;
    let cfg = &scenario.system;
    let slot = cfg.slot_s;
    let active: Vec<bool> = scenario
        .users
        .iter()
        .map(|u| upsilon(u, cfg) > 1.0 || min_offload(u, slot) > 0.0)
        .collect();
    let count = active.iter().filter(|&&a| a).count();
    let mut alloc = TdmaAllocation::local_only(scenario.users.len());
    if count > 0 {
        let t = match cfg.cloud {
            CloudModel::SharedCpu { .. } => {
                return Err(Error::invalid("the equal-time baseline does not model a shared cloud CPU"))
            }
            _ => slot / count as f64,
        };
        for (k, u) in scenario.users.iter().enumerate() {
            if !active[k] {
                continue;
            }
            let m = min_offload(u, slot);
            let bits = if upsilon(u, cfg) > 1.0 {
                let rate = f_prime_inverse(u.energy_per_bit() * u.gain, cfg.bandwidth_hz, cfg.noise_w)?;
                (t * rate).clamp(m, u.data_bits)
            } else {
                m
            };
            alloc.offload_bits[k] = bits;
            alloc.slot_s[k] = if bits > 0.0 { t } else { 0.0 };
        }
    }
    if let CloudModel::BoundedLoad { capacity_cycles } = cfg.cloud {
        let load = alloc.cloud_cycles(scenario);
        if load > capacity_cycles {
            return Err(Error::Infeasible(format!(
                "equal-time baseline loads the cloud with {load:e} cycles, above F = {capacity_cycles:e}"
            )));
        }
    }
    let report = tdma_report(scenario, &alloc, "tdma-equal", 0)?;
    Ok((alloc, report))
}

/// With identical channels and weights the optimal policy offloads in
/// descending order of local energy per bit. Returns that order and the
/// optimal allocation.
pub fn corollary_uniform_channels(
    scenario: &Scenario,
    opts: &TdmaSolverOptions,
) -> Result<(Vec<usize>, TdmaAllocation)> {
    let first = scenario.users.first().ok_or_else(|| Error::invalid("no users"))?;
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    if !scenario.users.iter().all(|u| same(u.gain, first.gain) && same(u.weight, first.weight)) {
        return Err(Error::invalid("uniform-channel ordering needs equal gains and equal weights"));
    }
    let mut order: Vec<usize> = (0..scenario.users.len()).collect();
    order.sort_by(|&a, &b| {
        scenario.users[b]
            .energy_per_bit()
            .total_cmp(&scenario.users[a].energy_per_bit())
            .then(a.cmp(&b))
    });
    let (alloc, _) = solve_infinite(scenario, opts)?;
    Ok((order, alloc))
}

/// Checks that users above `λ` offload fully and users below it offload
/// their minimum, with relative slack `tol` on both the comparison and the
/// loads.
pub fn check_threshold_structure(
    scenario: &Scenario,
    alloc: &TdmaAllocation,
    priorities: &[f64],
    tol: f64,
) -> Result<()> {
    let slot = scenario.system.slot_s;
    for (k, u) in scenario.users.iter().enumerate() {
        let (phi, ell) = (priorities[k], alloc.offload_bits[k]);
        let scale = u.data_bits.max(1.0);
        if phi > alloc.lambda * (1.0 + tol) && phi > 0.0 && (ell - u.data_bits).abs() > tol * scale {
            return Err(Error::Inconsistent(format!(
                "user {k}: priority {phi:e} above lambda {:e} but offloads {ell:e} of {:e} bits",
                alloc.lambda, u.data_bits
            )));
        }
        let m = min_offload(u, slot);
        if phi < alloc.lambda * (1.0 - tol) && (ell - m).abs() > tol * scale {
            return Err(Error::Inconsistent(format!(
                "user {k}: priority {phi:e} below lambda {:e} but offloads {ell:e} instead of {m:e} bits",
                alloc.lambda
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SystemConfig, UserProfile, DEFAULT_CHECK_TOL};
    use crate::priority::priority_effective;

    fn user(c: f64, p: f64, gain: f64, bits: f64) -> UserProfile {
        UserProfile {
            weight: 1.0,
            cycles_per_bit: c,
            energy_per_cycle: p,
            cpu_hz: 1e9,
            data_bits: bits,
            gain,
            subchannel_gains: Vec::new(),
        }
    }

    fn scenario(users: Vec<UserProfile>, cloud: CloudModel) -> Scenario {
        Scenario::new(SystemConfig { cloud, ..SystemConfig::tdma_default() }, users)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn opts() -> TdmaSolverOptions {
        TdmaSolverOptions::default()
    }

    #[test]
    fn time_for_load_examples() {
        let cfg = SystemConfig::tdma_default();
        let u = user(1000.0, 1e-10, 1e-3, 1e6);
        assert_eq!(time_for_load(0.0, 1.0, &u, &cfg).unwrap(), 0.0);
        // λ h^2 / β = N0 gives rate B / ln 2
        let lambda = cfg.noise_w / u.gain;
        let t = time_for_load(1e6, lambda, &u, &cfg).unwrap();
        assert!(rel(t, 1e6 * LN_2 / cfg.bandwidth_hz) < 1e-12);
        assert!(matches!(time_for_load(1.0, 0.0, &u, &cfg), Err(Error::Degenerate(_))));
        for lambda in [1e-4, 0.3, 7.0, 1e3] {
            let t = time_for_load(5e5, lambda, &u, &cfg).unwrap();
            let r = g_inverse(-u.gain * lambda, cfg.bandwidth_hz, cfg.noise_w).unwrap();
            assert!(rel(5e5 / t, r) < 1e-14);
        }
    }

    #[test]
    fn all_local_when_nobody_gains() {
        let users = vec![user(1000.0, 1e-17, 1e-3, 1e4), user(800.0, 1e-17, 1e-4, 2e4)];
        let s = scenario(users, CloudModel::Infinite);
        let (alloc, report) = solve_infinite(&s, &opts()).unwrap();
        assert!(alloc.offload_bits.iter().all(|&x| x == 0.0));
        assert!(alloc.slot_s.iter().all(|&x| x == 0.0));
        let local: f64 = s.users.iter().map(|u| u.weight * u.data_bits * u.energy_per_bit()).sum();
        assert!(rel(report.total_weighted_energy, local) < 1e-15);
    }

    #[test]
    fn single_small_user_offloads_everything_over_the_slot() {
        let s = scenario(vec![user(1000.0, 1e-10, 1e-3, 1e4)], CloudModel::Infinite);
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        assert_eq!(alloc.offload_bits[0], 1e4);
        assert!(rel(alloc.slot_s[0], 0.1) < 1e-9);
    }

    #[test]
    fn solution_satisfies_kkt_structure() {
        let users = vec![
            user(1000.0, 1e-10, 1e-3, 3e6),
            user(600.0, 5e-11, 2e-4, 2e6),
            user(1400.0, 1.5e-10, 5e-5, 4e6),
            user(900.0, 1e-12, 1e-3, 1e6),
        ];
        let s = scenario(users, CloudModel::Infinite);
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        alloc.validate(&s, DEFAULT_CHECK_TOL).unwrap();
        assert!(rel(alloc.total_time(), 0.1) < 1e-9);
        let phis: Vec<f64> = s.users.iter().map(|u| priority_infinite(u, &s.system)).collect();
        check_threshold_structure(&s, &alloc, &phis, 1e-9).unwrap();
        let (b, n0) = (s.system.bandwidth_hz, s.system.noise_w);
        for (k, u) in s.users.iter().enumerate() {
            if alloc.offload_bits[k] > 0.0 {
                let r = alloc.offload_bits[k] / alloc.slot_s[k];
                assert!(rel(r, g_inverse(-u.gain * alloc.lambda, b, n0).unwrap()) < 1e-9);
            }
        }
    }

    #[test]
    fn lambda_bounds_examples() {
        let u = user(1000.0, 1e-10, 1e-3, 1e6);
        let s = scenario(vec![u.clone()], CloudModel::Infinite);
        assert_eq!(lambda_bounds(&s), (0.0, priority_infinite(&u, &s.system)));
        let forced = scenario(vec![user(1000.0, 1e-17, 1e-3, 1e6)], CloudModel::Infinite);
        assert_eq!(lambda_bounds(&forced), (0.0, 0.0));
        // forced-only instance still solves: the multiplier lands above the bracket
        let (alloc, _) = solve_infinite(&forced, &opts()).unwrap();
        assert!(rel(alloc.offload_bits[0], 9e5) < 1e-15);
        assert!(rel(alloc.total_time(), 0.1) < 1e-9);
    }

    #[test]
    fn finite_matches_infinite_when_cloud_is_slack() {
        let users = vec![user(1000.0, 1e-10, 1e-3, 3e6), user(600.0, 5e-11, 2e-4, 2e6)];
        let inf = solve_infinite(&scenario(users.clone(), CloudModel::Infinite), &opts()).unwrap().0;
        let s = scenario(users, CloudModel::BoundedLoad { capacity_cycles: 1e12 });
        let fin = solve_finite_optimal(&s, &opts()).unwrap().0;
        let sub = solve_finite_suboptimal(&s, &opts()).unwrap().0;
        assert_eq!(fin, inf);
        assert_eq!(sub, inf);
    }

    #[test]
    fn finite_forced_to_minimum() {
        let users = vec![user(1000.0, 1e-10, 1e-3, 3e6), user(600.0, 5e-11, 2e-4, 2e6)];
        let probe = scenario(users.clone(), CloudModel::Infinite);
        let forced: f64 = probe.users.iter().map(|u| min_offload(u, 0.1) * u.cycles_per_bit).sum();
        let s = scenario(users, CloudModel::BoundedLoad { capacity_cycles: forced });
        let (alloc, _) = solve_finite_optimal(&s, &opts()).unwrap();
        for (k, u) in s.users.iter().enumerate() {
            assert!(rel(alloc.offload_bits[k], min_offload(u, 0.1)) < 1e-9);
        }
        let tight = scenario(probe.users.clone(), CloudModel::BoundedLoad { capacity_cycles: forced * 0.99 });
        assert!(solve_finite_optimal(&tight, &opts()).unwrap_err().is_infeasible());
    }

    #[test]
    fn finite_binding_cloud_is_exhausted() {
        let mk = |c, p, g, r| UserProfile { cpu_hz: 5e10, ..user(c, p, g, r) };
        let users = vec![mk(1000.0, 1e-10, 1e-3, 3e6), mk(600.0, 8e-11, 2e-4, 2e6), mk(1200.0, 1.2e-10, 5e-4, 1e6)];
        let probe = scenario(users.clone(), CloudModel::Infinite);
        let free = solve_infinite(&probe, &opts()).unwrap().0;
        let cap = 0.7 * free.cloud_cycles(&probe);
        let s = scenario(users, CloudModel::BoundedLoad { capacity_cycles: cap });
        let (opt, opt_r) = solve_finite_optimal(&s, &opts()).unwrap();
        opt.validate(&s, DEFAULT_CHECK_TOL).unwrap();
        assert!(rel(opt.cloud_cycles(&s), cap) < 1e-9);
        assert!(rel(opt.total_time(), 0.1) < 1e-9);
        assert!(opt.mu > 0.0);
        let eff: Vec<f64> = s.users.iter().map(|u| priority_effective(u, &s.system, opt.mu)).collect();
        check_threshold_structure(&s, &opt, &eff, 1e-6).unwrap();

        let (sub, sub_r) = solve_finite_suboptimal(&s, &opts()).unwrap();
        sub.validate(&s, DEFAULT_CHECK_TOL).unwrap();
        assert!(rel(sub.cloud_cycles(&s), cap) < 1e-9);
        let inf_r = solve_infinite(&probe, &opts()).unwrap().1;
        assert!(sub_r.total_weighted_energy >= opt_r.total_weighted_energy * (1.0 - 1e-12));
        assert!(opt_r.total_weighted_energy >= inf_r.total_weighted_energy * (1.0 - 1e-12));
    }

    #[test]
    fn suboptimal_breaks_ties_by_index() {
        let u = UserProfile { cpu_hz: 1e12, ..user(1000.0, 1e-10, 1e-3, 2e6) };
        let cap = u.cycles_per_bit * u.data_bits;
        let s = scenario(vec![u.clone(), u], CloudModel::BoundedLoad { capacity_cycles: cap });
        let (alloc, _) = solve_finite_suboptimal(&s, &opts()).unwrap();
        assert_eq!(alloc.offload_bits, vec![2e6, 0.0]);
    }

    #[test]
    fn shared_cpu_limits() {
        let users = vec![user(1000.0, 1e-10, 1e-3, 3e6), user(600.0, 5e-11, 2e-4, 2e6)];
        let inf = solve_infinite(&scenario(users.clone(), CloudModel::Infinite), &opts()).unwrap().1;
        let fast = scenario(users.clone(), CloudModel::SharedCpu { cycles_per_s: 1e18 });
        let shared = solve_shared_cpu(&fast, &opts()).unwrap().1;
        assert!(rel(shared.total_weighted_energy, inf.total_weighted_energy) < 1e-3);

        let s = scenario(users, CloudModel::SharedCpu { cycles_per_s: 1e11 });
        let (alloc, _) = solve_shared_cpu(&s, &opts()).unwrap();
        alloc.validate(&s, DEFAULT_CHECK_TOL).unwrap();
        let used = alloc.total_time() + alloc.cloud_cycles(&s) / 1e11;
        assert!(rel(used, 0.1) < 1e-9);

        let idle = scenario(vec![user(1000.0, 1e-17, 1e-3, 1e4)], CloudModel::SharedCpu { cycles_per_s: 1e10 });
        let (alloc, _) = solve_shared_cpu(&idle, &opts()).unwrap();
        assert_eq!(alloc.offload_bits, vec![0.0]);
    }

    #[test]
    fn exclusive_and_inclusive_thresholds() {
        let mk = |c, p, g, r| UserProfile { cpu_hz: 1e12, ..user(c, p, g, r) };
        let one = scenario(vec![mk(1000.0, 1e-10, 1e-3, 1e6)], CloudModel::Infinite);
        let u = &one.users[0];
        let bound = exclusive_threshold(&one).unwrap();
        assert!(rel(bound, 1e6 / (1e7 * upsilon(u, &one.system).log2())) < 1e-15);
        let phi = priority_infinite(u, &one.system);
        let incl = inclusive_threshold(&one).unwrap();
        let w = crate::numerics::lambert_w0((phi * u.gain - 1e-9) / (1e-9 * std::f64::consts::E)).unwrap();
        assert!(rel(incl, 1e6 * LN_2 / (1e7 * (w + 1.0))) < 1e-9);

        let users = vec![mk(1000.0, 1e-10, 1e-3, 1e6), mk(700.0, 9e-11, 4e-4, 2e6), mk(1300.0, 6e-11, 2e-4, 1.5e6)];
        let mut s = scenario(users, CloudModel::Infinite);
        let ex = exclusive_threshold(&s).unwrap();
        s.system.slot_s = 0.9 * ex;
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        assert_eq!(alloc.offload_bits.iter().filter(|&&x| x > 0.0).count(), 1);
        s.system.slot_s = 1.01 * ex;
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        let (m, _) = top_priority(&s).unwrap();
        assert_eq!(alloc.offload_bits[m], s.users[m].data_bits);

        let inc = inclusive_threshold(&s).unwrap();
        s.system.slot_s = inc;
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        for (k, u) in s.users.iter().enumerate() {
            assert!(rel(alloc.offload_bits[k], u.data_bits) < 1e-9);
        }
        s.system.slot_s = 0.5 * inc;
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        assert!(s.users.iter().zip(&alloc.offload_bits).any(|(u, &x)| x < u.data_bits * (1.0 - 1e-9)));

        let none = scenario(vec![mk(1000.0, 1e-17, 1e-3, 1e6)], CloudModel::Infinite);
        assert!(matches!(exclusive_threshold(&none), Err(Error::Degenerate(_))));
    }

    #[test]
    fn equal_baseline_examples() {
        let s = scenario(vec![user(1000.0, 1e-10, 1e-3, 3e6)], CloudModel::Infinite);
        let (alloc, _) = baseline_equal_allocation(&s).unwrap();
        assert_eq!(alloc.slot_s[0], 0.1);
        let r = f_prime_inverse(1e-10 * 1000.0 * 1e-3, 1e7, 1e-9).unwrap();
        assert!(rel(alloc.offload_bits[0], (0.1 * r).clamp(min_offload(&s.users[0], 0.1), 3e6)) < 1e-15);

        let idle = scenario(vec![user(1000.0, 1e-17, 1e-3, 1e4)], CloudModel::Infinite);
        let (alloc, report) = baseline_equal_allocation(&idle).unwrap();
        assert_eq!(alloc.offload_bits, vec![0.0]);
        assert!(rel(report.total_weighted_energy, 1e4 * 1000.0 * 1e-17) < 1e-15);

        let users = vec![user(1000.0, 1e-10, 1e-3, 3e6), user(600.0, 5e-11, 2e-4, 2e6), user(900.0, 1e-17, 1e-3, 2e6)];
        let s = scenario(users, CloudModel::Infinite);
        let (_, base) = baseline_equal_allocation(&s).unwrap();
        let (_, opt) = solve_infinite(&s, &opts()).unwrap();
        assert!(base.total_weighted_energy >= opt.total_weighted_energy);
    }

    #[test]
    fn uniform_channels_follow_energy_per_bit() {
        let mk = |p| UserProfile { cpu_hz: 1e12, ..user(1000.0, p, 1e-3, 2e6) };
        let mut s = scenario(vec![mk(5e-11), mk(1.5e-10)], CloudModel::Infinite);
        s.system.slot_s = 0.02;
        let (order, alloc) = corollary_uniform_channels(&s, &opts()).unwrap();
        assert_eq!(order, vec![1, 0]);
        assert_eq!(alloc.offload_bits[1], 2e6);
        assert!(alloc.offload_bits[0] < 2e6);

        let bad = scenario(vec![mk(1e-10), user(1000.0, 1e-10, 2e-3, 1e6)], CloudModel::Infinite);
        assert!(corollary_uniform_channels(&bad, &opts()).is_err());
    }

    #[test]
    fn uniform_users_any_split_costs_the_same() {
        // Identical users: energy depends only on the total offloaded data.
        let u = UserProfile { cpu_hz: 1e12, ..user(1000.0, 1e-10, 1e-3, 2e6) };
        let s = scenario(vec![u.clone(), u.clone(), u], CloudModel::Infinite);
        let cfg = &s.system;
        let total = 1.5e6;
        let rate = total / (0.5 * cfg.slot_s);
        let energy = |split: [f64; 3]| -> f64 {
            let alloc = TdmaAllocation {
                offload_bits: split.iter().map(|f| f * total).collect(),
                slot_s: split.iter().map(|f| f * total / rate).collect(),
                lambda: 0.0,
                mu: 0.0,
            };
            tdma_report(&s, &alloc, "x", 0).unwrap().total_weighted_energy
        };
        let base = energy([1.0, 0.0, 0.0]);
        for split in [[0.2, 0.3, 0.5], [0.0, 0.5, 0.5], [1.0 / 3.0; 3]] {
            assert!(rel(energy(split), base) < 1e-12);
        }
    }

    #[test]
    fn marginal_fill_disabled_leaves_budget_idle() {
        let mk = |p| UserProfile { cpu_hz: 1e12, ..user(1000.0, p, 1e-3, 2e6) };
        let s = scenario(vec![mk(1e-10), mk(1e-10)], CloudModel::Infinite);
        let (alloc, _) = solve_infinite(&s, &opts()).unwrap();
        assert!(rel(alloc.total_time(), 0.1) < 1e-9);
        let lazy = TdmaSolverOptions { marginal_fill: false, ..opts() };
        let (alloc, _) = solve_infinite(&s, &lazy).unwrap();
        assert!(alloc.total_time() <= 0.1);
    }

    #[test]
    fn energy_non_increasing_in_slot() {
        let users = vec![user(1000.0, 1e-10, 1e-3, 3e6), user(600.0, 5e-11, 2e-4, 2e6), user(1400.0, 1.5e-10, 5e-5, 4e6)];
        let mut s = scenario(users, CloudModel::Infinite);
        let mut prev = f64::INFINITY;
        for t in [0.02, 0.05, 0.1, 0.2, 0.5] {
            s.system.slot_s = t;
            let e = solve_infinite(&s, &opts()).unwrap().1.total_weighted_energy;
            assert!(e <= prev * (1.0 + 1e-12));
            prev = e;
        }
    }
}
