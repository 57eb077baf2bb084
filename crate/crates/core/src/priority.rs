//! Offloading priority functions.
//!
//! A user's priority is the value of the time multiplier at which it is
//! indifferent between offloading one more bit and computing it locally.
//! Users above the optimal multiplier offload everything, users below it
//! offload only what the deadline forces.

use std::f64::consts::LN_2;

use crate::model::{Link, SystemConfig, UserProfile};
use crate::numerics::solve_xlnx;

/// `υ ln υ - υ + 1`, accurate near `υ = 1` where the naive form cancels.
pub fn tangent_excess(upsilon: f64) -> f64 {
    let d = upsilon - 1.0;
    if d.abs() < 1e-3 {
        // (1 + d) ln(1 + d) - d = sum_{n>=2} (-1)^n d^n / (n (n - 1))
        let mut power = d * d;
        let mut sum = 0.0;
        for n in 2..12 {
            let nf = n as f64;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * power / (nf * (nf - 1.0));
            power *= d;
        }
        sum
    } else {
        upsilon * upsilon.ln() - d
    }
}

/// `υ = B s h^2 / (N0 ln 2)` for a marginal local cost `s` J/bit.
pub fn link_upsilon(link: Link, energy_per_bit: f64, gain: f64) -> f64 {
    link.bandwidth * energy_per_bit * gain / (link.noise * LN_2)
}

/// Priority on a link: `(β N0 / h^2)(υ ln υ - υ + 1)` for `υ >= 1`, else 0.
pub fn link_priority(link: Link, weight: f64, energy_per_bit: f64, gain: f64) -> f64 {
    priority_from_upsilon(link, weight, gain, link_upsilon(link, energy_per_bit, gain))
}

pub(crate) fn priority_from_upsilon(link: Link, weight: f64, gain: f64, upsilon: f64) -> f64 {
    if upsilon < 1.0 {
        return 0.0;
    }
    weight * link.noise / gain * tangent_excess(upsilon)
}

/// `υ̂` for a cloud CPU of speed `cloud_hz` shared through the slot.
///
/// Solves `υ̂ ln υ̂ + (a - 1) υ̂ = b - 1` with `a = F' ln 2 / (B C)` and
/// `b = F' P h^2 / N0`; returns 0 when `b <= 1`, where no user offloads
/// voluntarily.
pub fn link_upsilon_shared(link: Link, cycles_per_bit: f64, energy_per_cycle: f64, gain: f64, cloud_hz: f64) -> f64 {
    let a = cloud_hz * LN_2 / (link.bandwidth * cycles_per_bit);
    let b = cloud_hz * energy_per_cycle * gain / link.noise;
    if b <= 1.0 {
        debug_assert!(link_upsilon(link, cycles_per_bit * energy_per_cycle, gain) <= 1.0 + 1e-9);
        return 0.0;
    }
    solve_xlnx(a - 1.0, b - 1.0).unwrap_or(0.0)
}

pub fn link_priority_shared(
    link: Link,
    weight: f64,
    cycles_per_bit: f64,
    energy_per_cycle: f64,
    gain: f64,
    cloud_hz: f64,
) -> f64 {
    let u = link_upsilon_shared(link, cycles_per_bit, energy_per_cycle, gain, cloud_hz);
    priority_from_upsilon(link, weight, gain, u)
}

/// `υ_k = B C_k P_k h_k^2 / (N0 ln 2)` on the TDMA link.
pub fn upsilon(user: &UserProfile, cfg: &SystemConfig) -> f64 {
    link_upsilon(cfg.tdma_link(), user.energy_per_bit(), user.gain)
}

/// TDMA priority with an unconstrained cloud.
pub fn priority_infinite(user: &UserProfile, cfg: &SystemConfig) -> f64 {
    link_priority(cfg.tdma_link(), user.weight, user.energy_per_bit(), user.gain)
}

/// Energy per bit after charging the cloud-load price `mu` (J/cycle):
/// `C (P - mu / β)`, floored at zero.
pub fn effective_energy_per_bit(user: &UserProfile, mu: f64) -> f64 {
    (user.cycles_per_bit * (user.energy_per_cycle - mu / user.weight)).max(0.0)
}

/// TDMA priority when offloaded cycles cost `mu` per cycle.
pub fn priority_effective(user: &UserProfile, cfg: &SystemConfig, mu: f64) -> f64 {
    link_priority(cfg.tdma_link(), user.weight, effective_energy_per_bit(user, mu), user.gain)
}

/// `υ̂_k` for a shared cloud CPU of speed `cloud_hz`.
pub fn upsilon_shared_cpu(user: &UserProfile, cfg: &SystemConfig, cloud_hz: f64) -> f64 {
    link_upsilon_shared(cfg.tdma_link(), user.cycles_per_bit, user.energy_per_cycle, user.gain, cloud_hz)
}

/// TDMA priority when cloud computing time counts against the slot.
pub fn priority_shared_cpu(user: &UserProfile, cfg: &SystemConfig, cloud_hz: f64) -> f64 {
    link_priority_shared(
        cfg.tdma_link(),
        user.weight,
        user.cycles_per_bit,
        user.energy_per_cycle,
        user.gain,
        cloud_hz,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{f_prime_inverse, g_inverse};
    use proptest::prelude::*;

    fn user() -> UserProfile {
        UserProfile {
            weight: 1.0,
            cycles_per_bit: 1000.0,
            energy_per_cycle: 1e-10,
            cpu_hz: 1e9,
            data_bits: 1e6,
            gain: 1e-3,
            subchannel_gains: Vec::new(),
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    /// Independent root of `f'^-1(CPh^2 - x C h^2 / (β F')) = g^-1(-h^2 x / β)`.
    fn root(u: &UserProfile, cfg: &SystemConfig, cloud_hz: f64) -> f64 {
        let (b, n0) = (cfg.bandwidth_hz, cfg.noise_w);
        let gap = |x: f64| {
            let slope = u.cycles_per_bit * u.gain * (u.energy_per_cycle - x / (u.weight * cloud_hz));
            let lhs = f_prime_inverse(slope.max(n0 * LN_2 / b), b, n0).unwrap();
            lhs - g_inverse(-u.gain * x / u.weight, b, n0).unwrap()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while gap(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn upsilon_examples() {
        let cfg = SystemConfig::tdma_default();
        assert!(rel(upsilon(&user(), &cfg), 1e-3 / (1e-9 * LN_2)) < 1e-14);
        let doubled = UserProfile { gain: 2e-3, ..user() };
        assert!(rel(upsilon(&doubled, &cfg), 2.0 * upsilon(&user(), &cfg)) < 1e-14);
        // C P = N0 ln2 / (B h^2) puts the user exactly on the boundary
        let edge = UserProfile { energy_per_cycle: 1e-9 * LN_2 / (1e7 * 1e-3 * 1000.0), ..user() };
        assert!(rel(upsilon(&edge, &cfg), 1.0) < 1e-14);
        assert!(priority_infinite(&edge, &cfg).abs() < 1e-20);
    }

    #[test]
    fn priority_infinite_examples() {
        let cfg = SystemConfig::tdma_default();
        let phi = priority_infinite(&user(), &cfg);
        // frozen from the independent root search
        assert!(rel(phi, 19.017640901380108) < 1e-12);
        assert!(rel(phi, root(&user(), &cfg, f64::INFINITY)) < 1e-9);
        let weak = UserProfile { gain: 1e-12, ..user() };
        assert_eq!(priority_infinite(&weak, &cfg), 0.0);
    }

    #[test]
    fn tangent_excess_is_continuous_across_series_switch() {
        let below = tangent_excess(1.0 + 0.999_999e-3);
        let above = tangent_excess(1.0 + 1.000_001e-3);
        assert!(below < above && rel(below, above) < 1e-5);
        for d in [2f64.powi(-40), 2f64.powi(-30), 2f64.powi(-20), -2f64.powi(-20)] {
            assert!(rel(tangent_excess(1.0 + d), d * d / 2.0 - d * d * d / 6.0) < 1e-5);
        }
        assert_eq!(tangent_excess(1.0), 0.0);
        assert!(tangent_excess(1.0 + 1e-9) <= 1e-9);
    }

    #[test]
    fn effective_priority_examples() {
        let cfg = SystemConfig::tdma_default();
        let u = user();
        assert_eq!(priority_effective(&u, &cfg, 0.0), priority_infinite(&u, &cfg));
        assert_eq!(priority_effective(&u, &cfg, u.energy_per_cycle), 0.0);
        assert_eq!(priority_effective(&u, &cfg, 2.0 * u.energy_per_cycle), 0.0);
        let half = priority_effective(&u, &cfg, u.energy_per_cycle / 2.0);
        let halved = UserProfile { energy_per_cycle: u.energy_per_cycle / 2.0, ..u.clone() };
        assert!(rel(half, priority_infinite(&halved, &cfg)) < 1e-14);
        assert!(rel(half, root(&halved, &cfg, f64::INFINITY)) < 1e-9);
    }

    #[test]
    fn shared_cpu_examples() {
        let cfg = SystemConfig::tdma_default();
        let u = user();
        let phi = priority_shared_cpu(&u, &cfg, 1e10);
        assert!(phi > 0.0 && phi < priority_infinite(&u, &cfg));
        assert!(rel(phi, root(&u, &cfg, 1e10)) < 1e-9);

        // a = b puts υ̂ at 1
        let cloud = 1e11;
        let a = cloud * LN_2 / (cfg.bandwidth_hz * u.cycles_per_bit);
        let p = a * cfg.noise_w / (cloud * u.gain);
        let edge = UserProfile { energy_per_cycle: p, ..u.clone() };
        assert!(rel(upsilon_shared_cpu(&edge, &cfg, cloud), 1.0) < 1e-9);
        assert!(priority_shared_cpu(&edge, &cfg, cloud) < 1e-15);

        let weak = UserProfile { gain: 1e-12, ..u.clone() };
        assert_eq!(priority_shared_cpu(&weak, &cfg, cloud), 0.0);

        let fast = priority_shared_cpu(&u, &cfg, 1e18);
        assert!(rel(fast, priority_infinite(&u, &cfg)) < 1e-6);
    }

    fn draw(c: f64, p: f64, g: f64, w: f64) -> UserProfile {
        UserProfile { weight: w, cycles_per_bit: c, energy_per_cycle: p, gain: g, ..user() }
    }

    proptest! {
        #[test]
        fn monotone_in_each_parameter(
            c in 500.0..1500.0f64, p in 1e-12..2e-10f64, g in 1e-5..1e-2f64, w in 0.5..2.0f64,
            k in 1.0..3.0f64, which in 0usize..4,
        ) {
            let cfg = SystemConfig::tdma_default();
            let base = draw(c, p, g, w);
            let up = match which {
                0 => draw(c * k, p, g, w),
                1 => draw(c, p * k, g, w),
                2 => draw(c, p, g * k, w),
                _ => draw(c, p, g, w * k),
            };
            prop_assume!(upsilon(&base, &cfg) >= 1.0 && upsilon(&up, &cfg) >= 1.0);
            prop_assert!(priority_infinite(&up, &cfg) >= priority_infinite(&base, &cfg) * (1.0 - 1e-12));
        }

        #[test]
        fn shared_monotone_in_each_parameter(
            c in 500.0..1500.0f64, p in 1e-12..2e-10f64, g in 1e-5..1e-2f64, w in 0.5..2.0f64,
            cloud in 1e9..1e12f64, k in 1.0..3.0f64, which in 0usize..5,
        ) {
            let cfg = SystemConfig::tdma_default();
            let base = draw(c, p, g, w);
            let (up, cloud_up) = match which {
                0 => (draw(c * k, p, g, w), cloud),
                1 => (draw(c, p * k, g, w), cloud),
                2 => (draw(c, p, g * k, w), cloud),
                3 => (draw(c, p, g, w * k), cloud),
                _ => (base.clone(), cloud * k),
            };
            prop_assume!(upsilon_shared_cpu(&base, &cfg, cloud) >= 1.0);
            let lo = priority_shared_cpu(&base, &cfg, cloud);
            let hi = priority_shared_cpu(&up, &cfg, cloud_up);
            prop_assert!(hi >= lo * (1.0 - 1e-9));
        }

        #[test]
        fn shared_threshold_matches_plain_threshold(
            c in 500.0..1500.0f64, p in 1e-14..2e-10f64, g in 1e-8..1e-2f64, cloud in 1e8..1e12f64,
        ) {
            let cfg = SystemConfig::tdma_default();
            let u = draw(c, p, g, 1.0);
            let plain = upsilon(&u, &cfg);
            prop_assume!((plain - 1.0).abs() > 1e-9);
            let shared = upsilon_shared_cpu(&u, &cfg, cloud);
            prop_assert_eq!(plain > 1.0, shared > 1.0);
        }

        #[test]
        fn effective_priority_non_increasing_in_mu(mu1 in 0.0..2e-10f64, mu2 in 0.0..2e-10f64) {
            let cfg = SystemConfig::tdma_default();
            let u = user();
            let (lo, hi) = if mu1 < mu2 { (mu1, mu2) } else { (mu2, mu1) };
            prop_assert!(priority_effective(&u, &cfg, hi) <= priority_effective(&u, &cfg, lo));
        }

        #[test]
        fn continuous_at_threshold(eps in 0.0..1e-9f64, noise_scale in 1e-3..1e3f64) {
            let cfg = SystemConfig { noise_w: 1e-9 * noise_scale, ..SystemConfig::tdma_default() };
            let link = cfg.tdma_link();
            let u = user();
            let phi = priority_from_upsilon(link, u.weight, u.gain, 1.0 + eps);
            prop_assert!(phi.abs() <= 1e-9);
        }
    }
}
