//! Time dilation: increasing maps t in [0,1] -> tau in [0, inf).
//!
//! The classical preset is tau_t = -1/2 log(1 - t(1-eps)), capped by eps so
//! tau_1 stays finite. The population variant rescales a base dilation so a
//! zeta-individual mutation process limits onto the same Gaussian diffusion.

use serde::{Deserialize, Serialize};

pub const CLASSICAL_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeDilation {
    /// tau_t = -1/2 log(1 - t(1-eps)).
    Classical { eps: f64 },
    /// tau_t = rate * t.
    Linear { rate: f64 },
    /// tau^zeta_t = tau_t + 1/2 log(zeta - (zeta-1) e^{-2 tau_t}).
    Population { base: Box<TimeDilation>, zeta: u64 },
}

impl TimeDilation {
    pub fn classical() -> Self {
        TimeDilation::Classical { eps: CLASSICAL_EPS }
    }

    pub fn linear(rate: f64) -> Self {
        TimeDilation::Linear { rate }
    }

    /// The zeta-population dilation of this base dilation.
    pub fn population(self, zeta: u64) -> Self {
        assert!(zeta >= 1, "population size must be >= 1");
        TimeDilation::Population { base: Box::new(self), zeta }
    }

    pub fn tau(&self, t: f64) -> f64 {
        match self {
            TimeDilation::Classical { eps } => -0.5 * (1.0 - t * (1.0 - eps)).ln(),
            TimeDilation::Linear { rate } => rate * t,
            TimeDilation::Population { base, zeta } => {
                let tau = base.tau(t);
                let z = *zeta as f64;
                // 1/2 log(z e^{2tau} - z + 1) written overflow-free.
                tau + 0.5 * (z - (z - 1.0) * (-2.0 * tau).exp()).ln()
            }
        }
    }

    pub fn tau_dot(&self, t: f64) -> f64 {
        match self {
            TimeDilation::Classical { eps } => 0.5 * (1.0 - eps) / (1.0 - t * (1.0 - eps)),
            TimeDilation::Linear { rate } => *rate,
            TimeDilation::Population { base, zeta } => {
                let tau = base.tau(t);
                let z = *zeta as f64;
                base.tau_dot(t) * z / (z - (z - 1.0) * (-2.0 * tau).exp())
            }
        }
    }

    /// Smallest t in [0,1] with tau(t) >= target, by bisection.
    pub fn t_for_tau(&self, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.tau(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero_and_increases() {
        for d in [TimeDilation::classical(), TimeDilation::linear(3.0)] {
            assert_eq!(d.tau(0.0), 0.0);
            let mut last = 0.0;
            for i in 1..=100 {
                let t = i as f64 / 101.0;
                let tau = d.tau(t);
                assert!(tau > last, "tau not increasing at t={t}");
                assert!(d.tau_dot(t) > 0.0);
                last = tau;
            }
        }
    }

    #[test]
    fn finite_difference_matches_derivative() {
        // 100 interior grid points, kept away from the t=1 cap where the
        // third derivative of the classical preset overwhelms h=1e-5
        // central differences.
        let h = 1e-5;
        for d in [
            TimeDilation::classical(),
            TimeDilation::linear(2.0),
            TimeDilation::classical().population(100),
        ] {
            for i in 0..100 {
                let t = 0.05 + 0.9 * (i as f64 + 0.5) / 100.0;
                let fd = (d.tau(t + h) - d.tau(t - h)) / (2.0 * h);
                assert!(
                    (d.tau_dot(t) - fd).abs() <= 1e-6,
                    "fd mismatch at t={t}: {} vs {}",
                    d.tau_dot(t),
                    fd
                );
            }
        }
    }

    #[test]
    fn population_reduces_to_base_at_zeta_one() {
        let base = TimeDilation::classical();
        let pop = base.clone().population(1);
        for i in 1..20 {
            let t = i as f64 / 20.0;
            assert!((pop.tau(t) - base.tau(t)).abs() < 1e-14);
            assert!((pop.tau_dot(t) - base.tau_dot(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn population_dilation_fixed_value() {
        // zeta=100, tau_t=1: 1/2 log(100 e^2 - 99), evaluated here in the
        // naive (overflowing) form as an independent route.
        let base = TimeDilation::linear(1.0);
        let pop = base.population(100);
        let direct = 0.5 * (100.0 * (2.0f64).exp() - 99.0).ln();
        assert!((pop.tau(1.0) - direct).abs() < 1e-12);
        assert!((pop.tau(1.0) - 3.230_660_340_5).abs() < 1e-7);
    }

    #[test]
    fn population_tau_zero_stays_zero() {
        for zeta in [1u64, 5, 1000] {
            let pop = TimeDilation::classical().population(zeta);
            assert_eq!(pop.tau(0.0), 0.0);
        }
    }
}
