//! Residual-based fitting criteria.
//!
//! The central piece is the penalised censored least trimmed squares (PCLTS)
//! objective: residuals below `C*s` (with `s` the median absolute residual)
//! count squared, residuals beyond `C*s*(1+a)` pay a flat penalty `B`, and a
//! linear ramp joins the two branches so the whole criterion stays Lipschitz.
//! Setting `C=1, B=0, a -> 0` recovers least trimmed squares; `B = (C*s)^2`
//! gives a Huber-type censored loss with a robustly estimated scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Dataset, NetworkParams};

/// Parameters of the censored penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLossConfig {
    /// Censoring factor: residuals up to `c` times the median scale count
    /// squared. Must be >= 1 so the median half of the data always survives.
    #[serde(rename = "C")]
    pub c: f64,
    /// Flat penalty paid by each censored residual, in squared-residual
    /// units. `b <= (c*s)^2` keeps the penalty below the censoring point;
    /// larger values are allowed but flagged at evaluation time.
    #[serde(rename = "B")]
    pub b: f64,
    /// Relative width of the linear ramp between the branches.
    pub a: f64,
    /// Lower clamp for the scale, guarding against `s = 0` when half the
    /// data is fitted exactly.
    pub s_floor: f64,
}

impl RobustLossConfig {
    pub fn new(c: f64, b: f64, a: f64, s_floor: f64) -> Result<Self> {
        if !(c >= 1.0) {
            return Err(Error::InvalidArgument(format!("C must be >= 1, got {c}")));
        }
        if !(b >= 0.0) {
            return Err(Error::InvalidArgument(format!("B must be >= 0, got {b}")));
        }
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!("a must be > 0, got {a}")));
        }
        if !(s_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("s_floor must be > 0, got {s_floor}")));
        }
        Ok(Self { c, b, a, s_floor })
    }

    /// Config with the scale floor derived from the targets.
    pub fn with_default_floor(c: f64, b: f64, a: f64, y: &[f64]) -> Result<Self> {
        Self::new(c, b, a, default_scale_floor(y)?)
    }

    /// True when the flat penalty exceeds the squared censoring point at
    /// scale `s`, i.e. `B > (C*s)^2`. Allowed, but worth surfacing: the ramp
    /// then slopes upward and removal costs more than any retained residual.
    pub fn penalty_saturated(&self, s: f64) -> bool {
        self.b > (self.c * s) * (self.c * s)
    }
}

impl Default for RobustLossConfig {
    /// `C=8, B=8, a=0.1`: the best-performing setting in the benchmark
    /// suite. The floor is an absolute fallback; prefer
    /// [`with_default_floor`](Self::with_default_floor) when data is at hand.
    fn default() -> Self {
        Self { c: 8.0, b: 8.0, a: 0.1, s_floor: 1e-8 }
    }
}

/// Default scale floor: `1e-8 * (1 + median |y|)`.
pub fn default_scale_floor(y: &[f64]) -> Result<f64> {
    Ok(1e-8 * (1.0 + median_of_abs(y)?))
}

fn median_of_abs(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median of an empty vector"));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let n = abs.len();
    let mid = n / 2;
    let (low, pivot, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        Ok(*pivot)
    } else {
        // Even length: mean of the two middle order statistics.
        let lower = low.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + *pivot))
    }
}

/// Median of absolute values, clamped below by `s_floor`.
pub fn median_abs(residuals: &[f64], s_floor: f64) -> Result<f64> {
    if !(s_floor > 0.0) {
        return Err(Error::InvalidArgument(format!("s_floor must be > 0, got {s_floor}")));
    }
    Ok(median_of_abs(residuals)?.max(s_floor))
}

/// The censored penalty `G(t)` at scale `s`:
/// `t^2` for `|t| <= C*s`, the flat penalty `B` for `|t| >= C*s*(1+a)`, and
/// the linear interpolation between `(C*s, (C*s)^2)` and `(C*s*(1+a), B)`
/// in between. Even and continuous everywhere.
pub fn g_penalty(t: f64, s: f64, cfg: &RobustLossConfig) -> f64 {
    let t = t.abs();
    let cs = cfg.c * s;
    if t <= cs {
        t * t
    } else if t >= cs * (1.0 + cfg.a) {
        cfg.b
    } else {
        (t - cs) * (cfg.b - cs * cs) / (cs * cfg.a) + cs * cs
    }
}

/// The PCLTS objective: residuals are scaled by their own median and each
/// contributes `G(r_i)`. Invariant under row permutation of `data`.
pub fn pclts_objective(params: &NetworkParams, data: &Dataset, cfg: &RobustLossConfig) -> Result<f64> {
    let residuals = params.residuals(data)?;
    let s = median_abs(&residuals, cfg.s_floor)?;
    Ok(residuals.iter().map(|&r| g_penalty(r, s, cfg)).sum())
}

/// Least trimmed squares: the sum of the `h` smallest squared residuals with
/// `h = floor((n + p + 1) / 2)` and `p` = inputs + 1. Kept as the comparison
/// baseline; the trimming count is clamped to `n` for tiny samples.
pub fn lts_objective(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let residuals = params.residuals(data)?;
    let n = residuals.len();
    let p = data.num_inputs() + 1;
    let h = ((n + p + 1) / 2).min(n);
    let mut sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    if h < n {
        sq.select_nth_unstable_by(h, f64::total_cmp);
    }
    Ok(sq[..h].iter().sum())
}

/// Rows that survive cleaning: `|r_i| <= C*s`. With `C >= 1` at least the
/// median half of the rows is kept.
pub fn clean_mask(params: &NetworkParams, data: &Dataset, cfg: &RobustLossConfig) -> Result<Vec<bool>> {
    let residuals = params.residuals(data)?;
    let s = median_abs(&residuals, cfg.s_floor)?;
    let threshold = cfg.c * s;
    Ok(residuals.iter().map(|r| r.abs() <= threshold).collect())
}

/// Residual vector together with its robust scale and the permutation that
/// sorts absolute residuals ascending.
#[derive(Debug, Clone)]
pub struct ScaledResiduals {
    residuals: Vec<f64>,
    scale: f64,
    order: Vec<usize>,
}

impl ScaledResiduals {
    pub fn new(residuals: Vec<f64>, s_floor: f64) -> Result<Self> {
        let scale = median_abs(&residuals, s_floor)?;
        let mut order: Vec<usize> = (0..residuals.len()).collect();
        order.sort_by(|&i, &j| {
            f64::total_cmp(&residuals[i].abs(), &residuals[j].abs()).then(i.cmp(&j))
        });
        Ok(Self { residuals, scale, order })
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Permutation sorting `|r|` ascending (ties broken by index).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `|r_i| <= factor * scale` per row.
    pub fn within(&self, factor: f64) -> Vec<bool> {
        let threshold = factor * self.scale;
        self.residuals.iter().map(|r| r.abs() <= threshold).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::NetworkShape;
    use proptest::prelude::*;

    /// Dataset whose residuals under the all-zero network are exactly `r`
    /// (zero network output means r_i = -y_i).
    fn stub(r: &[f64]) -> (NetworkParams, Dataset) {
        let shape = NetworkShape::new(1, 1).unwrap();
        let params = NetworkParams::zeros(shape);
        let rows: Vec<Vec<f64>> = r.iter().map(|_| vec![0.0]).collect();
        let y: Vec<f64> = r.iter().map(|v| -v).collect();
        (params, Dataset::from_rows(&rows, &y).unwrap())
    }

    #[test]
    fn median_odd_even_and_floor() {
        assert_eq!(median_abs(&[-3.0, 1.0, 2.0], 1e-12).unwrap(), 2.0);
        assert_eq!(median_abs(&[1.0, -2.0, 3.0, -4.0], 1e-12).unwrap(), 2.5);
        assert_eq!(median_abs(&[0.0; 7], 1e-6).unwrap(), 1e-6);
        assert!(matches!(median_abs(&[], 1e-6), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn penalty_branches() {
        let cfg = RobustLossConfig::new(2.0, 2.0, 0.1, 1e-12).unwrap();
        assert_eq!(g_penalty(0.0, 1.0, &cfg), 0.0);
        // Transition zone by direct substitution: (0.1)(2-4)/(0.2) + 4 = 3.
        assert!((g_penalty(2.1, 1.0, &cfg) - 3.0).abs() < 1e-12);
        assert_eq!(g_penalty(5.0, 1.0, &cfg), 2.0);
        assert_eq!(g_penalty(-5.0, 1.0, &cfg), 2.0);
    }

    #[test]
    fn penalty_lts_breakpoints() {
        let cfg = RobustLossConfig::new(1.0, 0.0, 1e-6, 1e-12).unwrap();
        let below = 0.999999f64;
        assert_eq!(g_penalty(below, 1.0, &cfg), below * below);
        assert_eq!(g_penalty(1.0000011, 1.0, &cfg), 0.0);
    }

    #[test]
    fn objective_hand_evaluations() {
        let (params, data) = stub(&[0.1, 0.2, 5.0, 10_000.0]);
        // s = (0.2 + 5) / 2 = 2.6; with C=8 the first three are quadratic and
        // the large one is flat: 0.01 + 0.04 + 25 + 8.
        let cfg = RobustLossConfig::new(8.0, 8.0, 0.1, 1e-12).unwrap();
        let f = pclts_objective(&params, &data, &cfg).unwrap();
        assert!((f - 33.05).abs() < 1e-9, "got {f}");

        // With C=1, B=0 the larger half is trimmed: 0.01 + 0.04.
        let cfg = RobustLossConfig::new(1.0, 0.0, 1e-6, 1e-12).unwrap();
        let f = pclts_objective(&params, &data, &cfg).unwrap();
        assert!((f - 0.05).abs() < 1e-12, "got {f}");
    }

    #[test]
    fn objective_zero_for_interpolating_network() {
        let (params, data) = stub(&[0.0, 0.0, 0.0]);
        let cfg = RobustLossConfig::default();
        assert_eq!(pclts_objective(&params, &data, &cfg).unwrap(), 0.0);
        assert_eq!(lts_objective(&params, &data).unwrap(), 0.0);
        assert!(clean_mask(&params, &data, &cfg).unwrap().iter().all(|&k| k));
    }

    #[test]
    fn lts_trims_the_tail() {
        // n=4, m=1 so p=2 and h = floor(7/2) = 3.
        let (params, data) = stub(&[0.1, 0.2, 5.0, 10_000.0]);
        let f = lts_objective(&params, &data).unwrap();
        assert!((f - 25.05).abs() < 1e-9, "got {f}");
    }

    #[test]
    fn clean_mask_thresholds() {
        let (params, data) = stub(&[0.1, 0.2, 5.0, 10_000.0]);
        let cfg = RobustLossConfig::new(1.0, 0.0, 0.1, 1e-12).unwrap();
        assert_eq!(clean_mask(&params, &data, &cfg).unwrap(), vec![true, true, false, false]);
        let cfg = RobustLossConfig::new(8.0, 8.0, 0.1, 1e-12).unwrap();
        assert_eq!(clean_mask(&params, &data, &cfg).unwrap(), vec![true, true, true, false]);
    }

    #[test]
    fn saturation_flag() {
        let cfg = RobustLossConfig::new(8.0, 8.0, 0.1, 1e-12).unwrap();
        assert!(cfg.penalty_saturated(0.1)); // (0.8)^2 < 8
        assert!(!cfg.penalty_saturated(1.0)); // 64 > 8
    }

    #[test]
    fn scaled_residuals_order() {
        let sr = ScaledResiduals::new(vec![-5.0, 1.0, -2.0, 0.5], 1e-12).unwrap();
        assert_eq!(sr.order(), &[3, 1, 2, 0]);
        assert_eq!(sr.scale(), 1.5);
        assert_eq!(sr.within(1.0), vec![false, true, false, true]);
    }

    #[test]
    fn config_validation() {
        assert!(RobustLossConfig::new(0.5, 0.0, 0.1, 1e-8).is_err());
        assert!(RobustLossConfig::new(1.0, -1.0, 0.1, 1e-8).is_err());
        assert!(RobustLossConfig::new(1.0, 0.0, 0.0, 1e-8).is_err());
        assert!(RobustLossConfig::new(1.0, 0.0, 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn penalty_is_even_and_bounded(
            t in -1e6f64..1e6,
            s in 1e-6f64..1e3,
            c in 1.0f64..16.0,
            a in 1e-4f64..1.0,
            frac in 0.0f64..1.0,
        ) {
            // B within [0, (Cs)^2]: the documented validity range.
            let b = frac * (c * s) * (c * s);
            let cfg = RobustLossConfig::new(c, b, a, 1e-9).unwrap();
            let g = g_penalty(t, s, &cfg);
            prop_assert_eq!(g, g_penalty(-t, s, &cfg));
            prop_assert!(g >= 0.0);
            prop_assert!(g <= (c * s) * (c * s) * (1.0 + 1e-12));
        }

        #[test]
        fn objective_is_permutation_invariant(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            use rand::seq::SliceRandom;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2usize..12);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let (params, data) = stub(&r);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<f64> = perm.iter().map(|&i| r[i]).collect();
            let (params2, data2) = stub(&shuffled);
            let cfg = RobustLossConfig::new(2.0, 1.0, 0.1, 1e-9).unwrap();
            let f1 = pclts_objective(&params, &data, &cfg).unwrap();
            let f2 = pclts_objective(&params2, &data2, &cfg).unwrap();
            prop_assert!((f1 - f2).abs() <= 1e-9 * (1.0 + f1.abs()));
            let l1 = lts_objective(&params, &data).unwrap();
            let l2 = lts_objective(&params2, &data2).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-9 * (1.0 + l1.abs()));
        }

        #[test]
        fn clean_mask_keeps_majority(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1usize..25);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let (params, data) = stub(&r);
            let c = rng.gen_range(1.0..10.0);
            let cfg = RobustLossConfig::new(c, 0.0, 0.1, 1e-9).unwrap();
            let mask = clean_mask(&params, &data, &cfg).unwrap();
            let kept = mask.iter().filter(|&&k| k).count();
            prop_assert!(kept >= n.div_ceil(2), "kept {} of {}", kept, n);
        }
    }
}
