//! M-spline and I-spline bases for the hazard.
//!
//! The raw basis is the order-`k` (degree `k - 1`) B-spline basis on a knot
//! vector with `k`-fold boundary knots at `L` and `U`, rescaled so every
//! member integrates to one over `[L, U]`:
//!
//! ```text
//! M_i(t) = k / (tau_{i+k} - tau_i) * B_i(t)
//! ```
//!
//! The I-spline `I_i(t) = int_L^t M_i` is the tail sum of order-`k + 1`
//! B-splines on the same knots with one extra boundary repeat at each end.
//!
//! # Degrees of freedom
//!
//! With `m` interior knots and degree `d` there are `m + d + 1` raw terms.
//!
//! * Standard basis: `df = m + d + 1`, so a cubic needs `df >= 4`.
//! * Smoothed basis: the last three raw terms are replaced by one composite
//!   term `(B_{n-3} + B_{n-2} + B_{n-1}) / Z`, which has zero first and second
//!   derivative at `U` (it equals `1 - B_{n-4}` on the last knot interval and
//!   `B_{n-4}` is C² there). This gives `df = m + d - 1`, so a cubic with `df`
//!   free coefficients uses `df - 2` interior knots and `df >= 2`.
//!
//! Beyond `U` the hazard basis is held constant at its value at `U`, and the
//! I-spline grows linearly with that slope.

use log::warn;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid spline configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "too few distinct event times: {distinct} distinct, need at least {needed} to place knots for df = {df}"
    )]
    TooFewEventTimes {
        df: usize,
        distinct: usize,
        needed: usize,
    },
    #[error("basis evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("constant-hazard calibration failed: {0}")]
    Calibration(String),
}

/// Knots, degree and boundary behaviour of an M-spline hazard basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineConfig {
    pub degree: usize,
    pub df: usize,
    pub interior_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
    pub bsmooth: bool,
}

impl SplineConfig {
    /// Builds a config from explicit knots; `df` is derived.
    pub fn new(
        degree: usize,
        interior_knots: Vec<f64>,
        boundary_knots: (f64, f64),
        bsmooth: bool,
    ) -> Result<Self, BasisError> {
        let (lower, upper) = boundary_knots;
        if degree == 0 {
            return Err(BasisError::InvalidConfig(
                "degree must be at least 1".into(),
            ));
        }
        if bsmooth && degree < 3 {
            return Err(BasisError::InvalidConfig(
                "the smoothed boundary needs degree >= 3".into(),
            ));
        }
        if !(lower.is_finite() && upper.is_finite() && lower >= 0.0 && lower < upper) {
            return Err(BasisError::InvalidConfig(format!(
                "boundary knots ({lower}, {upper}) must satisfy 0 <= L < U"
            )));
        }
        for w in interior_knots.windows(2) {
            if w[1] <= w[0] {
                return Err(BasisError::InvalidConfig(
                    "interior knots must be strictly increasing".into(),
                ));
            }
        }
        if interior_knots.iter().any(|&k| !(k > lower && k < upper)) {
            return Err(BasisError::InvalidConfig(
                "interior knots must lie strictly inside the boundary knots".into(),
            ));
        }
        let n_raw = interior_knots.len() + degree + 1;
        let df = if bsmooth { n_raw - 2 } else { n_raw };
        Ok(Self {
            degree,
            df,
            interior_knots,
            boundary_knots,
            bsmooth,
        })
    }

    /// Number of interior knots implied by `df` for a basis variant, or
    /// `None` when `df` is too small.
    pub fn interior_count_for(df: usize, degree: usize, bsmooth: bool) -> Option<usize> {
        let n_raw = if bsmooth { df + 2 } else { df };
        n_raw.checked_sub(degree + 1)
    }

    pub fn lower(&self) -> f64 {
        self.boundary_knots.0
    }

    pub fn upper(&self) -> f64 {
        self.boundary_knots.1
    }

    /// Width of the boundary span, `U - L`.
    pub fn span(&self) -> f64 {
        self.boundary_knots.1 - self.boundary_knots.0
    }

    fn n_raw(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }
}

/// Places knots at quantiles of the event times, with `L = 0` and
/// `U = max(event_times)`.
pub fn make_knots(
    event_times: &[f64],
    df: usize,
    degree: usize,
    bsmooth: bool,
) -> Result<SplineConfig, BasisError> {
    let upper = event_times
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    make_knots_with_upper(event_times, upper, df, degree, bsmooth)
}

/// As [`make_knots`], with an explicit upper boundary (typically the largest
/// observed time including censored ones).
pub fn make_knots_with_upper(
    event_times: &[f64],
    upper: f64,
    df: usize,
    degree: usize,
    bsmooth: bool,
) -> Result<SplineConfig, BasisError> {
    if event_times.is_empty() {
        return Err(BasisError::TooFewEventTimes {
            df,
            distinct: 0,
            needed: 1,
        });
    }
    if let Some(&bad) = event_times.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(BasisError::InvalidConfig(format!(
            "event times must be positive and finite, got {bad}"
        )));
    }
    let m = SplineConfig::interior_count_for(df, degree, bsmooth).ok_or_else(|| {
        let min = if bsmooth { degree - 1 } else { degree + 1 };
        BasisError::InvalidConfig(format!(
            "df = {df} is below the minimum {min} for degree {degree} ({} basis)",
            if bsmooth { "smoothed" } else { "standard" }
        ))
    })?;

    let mut sorted = event_times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if m > 0 && distinct.len() < 2 {
        return Err(BasisError::TooFewEventTimes {
            df,
            distinct: distinct.len(),
            needed: 2,
        });
    }

    let lower = 0.0;
    let mut interior: Vec<f64> = (1..=m)
        .map(|j| quantile_sorted(&sorted, j as f64 / (m + 1) as f64))
        .filter(|&q| q > lower && q < upper)
        .collect();
    interior.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    if interior.len() < m {
        warn!(
            "collapsed {} coincident knot(s); df reduced from {} to {}",
            m - interior.len(),
            df,
            df - (m - interior.len())
        );
    }
    SplineConfig::new(degree, interior, (lower, upper), bsmooth)
}

/// Linear-interpolation sample quantile of sorted data (the common
/// "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Basis values at one time point, either `b_i(t)` or `I_i(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisValues(pub Vec<f64>);

impl std::ops::Deref for BasisValues {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An evaluated M-spline basis ready for repeated use.
#[derive(Debug, Clone)]
pub struct MSplineBasis {
    config: SplineConfig,
    order: usize,
    /// Full knot vector with `order`-fold boundary knots.
    knots: Vec<f64>,
    /// `knots` with one extra boundary repeat on each side.
    aug_knots: Vec<f64>,
    /// `order / (tau_{i+k} - tau_i)` for each raw term.
    m_scale: Vec<f64>,
    /// Weights of the raw terms folded into the composite term.
    composite: Vec<f64>,
    at_upper: Vec<f64>,
}

impl MSplineBasis {
    pub fn new(config: SplineConfig) -> Result<Self, BasisError> {
        let config = SplineConfig::new(
            config.degree,
            config.interior_knots,
            config.boundary_knots,
            config.bsmooth,
        )?;
        let order = config.degree + 1;
        let (lower, upper) = config.boundary_knots;
        let mut knots = vec![lower; order];
        knots.extend_from_slice(&config.interior_knots);
        knots.extend(std::iter::repeat_n(upper, order));
        let mut aug_knots = Vec::with_capacity(knots.len() + 2);
        aug_knots.push(lower);
        aug_knots.extend_from_slice(&knots);
        aug_knots.push(upper);

        let n_raw = config.n_raw();
        let m_scale: Vec<f64> = (0..n_raw)
            .map(|i| order as f64 / (knots[i + order] - knots[i]))
            .collect();
        let composite = if config.bsmooth {
            // (B_{n-3} + B_{n-2} + B_{n-1}) / Z as a mixture of raw M-splines.
            let spans: Vec<f64> = (n_raw - 3..n_raw).map(|i| 1.0 / m_scale[i]).collect();
            let z: f64 = spans.iter().sum();
            spans.iter().map(|s| s / z).collect()
        } else {
            Vec::new()
        };
        let mut basis = Self {
            config,
            order,
            knots,
            aug_knots,
            m_scale,
            composite,
            at_upper: Vec::new(),
        };
        let mut at_upper = vec![0.0; basis.len()];
        basis.mspline_unchecked(upper, &mut at_upper);
        basis.at_upper = at_upper;
        Ok(basis)
    }

    pub fn config(&self) -> &SplineConfig {
        &self.config
    }

    /// Number of basis terms (`df`).
    pub fn len(&self) -> usize {
        self.config.df
    }

    pub fn is_empty(&self) -> bool {
        self.config.df == 0
    }

    /// The full knot vector including repeated boundary knots.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn eval_mspline(&self, t: f64) -> Result<BasisValues, BasisError> {
        if t < 0.0 || t.is_nan() {
            return Err(BasisError::NegativeTime(t));
        }
        let mut out = vec![0.0; self.len()];
        self.mspline_into(t, &mut out);
        Ok(BasisValues(out))
    }

    pub fn eval_ispline(&self, t: f64) -> Result<BasisValues, BasisError> {
        if t < 0.0 || t.is_nan() {
            return Err(BasisError::NegativeTime(t));
        }
        let mut out = vec![0.0; self.len()];
        self.ispline_into(t, &mut out);
        Ok(BasisValues(out))
    }

    /// Writes `b_i(t)` into `out`, applying the constant extension above
    /// `U` and zero below `L`. `t` must be non-negative.
    pub fn mspline_into(&self, t: f64, out: &mut [f64]) {
        if t > self.config.upper() {
            out.copy_from_slice(&self.at_upper);
        } else if t < self.config.lower() {
            out.fill(0.0);
        } else {
            self.mspline_unchecked(t, out);
        }
    }

    /// Writes `I_i(t)` into `out`; linear growth above `U`.
    pub fn ispline_into(&self, t: f64, out: &mut [f64]) {
        let (lower, upper) = self.config.boundary_knots;
        if t <= lower {
            out.fill(0.0);
            return;
        }
        let tc = t.min(upper);
        let n_raw = self.config.n_raw();
        let k1 = self.order + 1;
        // Order k+1 B-splines on the augmented knots; raw I_i = sum_{j>i} B'_j.
        let mu = find_interval(&self.aug_knots, k1, n_raw + 1, tc);
        let mut vals = [0.0; 16];
        bspline_values(&self.aug_knots, k1, tc, mu, &mut vals[..k1]);
        let first = mu + 1 - k1;
        let mut raw = vec![0.0; n_raw];
        // I_i = sum_{j = i+1}^{n_raw} B'_j; only B'_first..=B'_mu are non-zero.
        let mut acc = 0.0;
        for i in (0..n_raw).rev() {
            let j = i + 1;
            if j >= first && j <= mu {
                acc += vals[j - first];
            }
            raw[i] = acc;
        }
        self.fold_raw(&raw, out);
        if t > upper {
            let dt = t - upper;
            for (o, b) in out.iter_mut().zip(&self.at_upper) {
                *o += b * dt;
            }
        }
    }

    /// Raw evaluation on `[L, U]` without extension.
    fn mspline_unchecked(&self, t: f64, out: &mut [f64]) {
        let n_raw = self.config.n_raw();
        let k = self.order;
        let mu = find_interval(&self.knots, k, n_raw, t);
        let mut vals = [0.0; 16];
        bspline_values(&self.knots, k, t, mu, &mut vals[..k]);
        let first = mu + 1 - k;
        let mut raw = vec![0.0; n_raw];
        for (r, v) in vals[..k].iter().enumerate() {
            raw[first + r] = v * self.m_scale[first + r];
        }
        self.fold_raw(&raw, out);
    }

    fn fold_raw(&self, raw: &[f64], out: &mut [f64]) {
        if self.config.bsmooth {
            let keep = raw.len() - 3;
            out[..keep].copy_from_slice(&raw[..keep]);
            out[keep] = raw[keep..]
                .iter()
                .zip(&self.composite)
                .map(|(r, c)| r * c)
                .sum();
        } else {
            out.copy_from_slice(raw);
        }
    }

    /// Support `[lo, hi]` of basis term `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        let k = self.order;
        let n_raw = self.config.n_raw();
        if self.config.bsmooth && i == self.len() - 1 {
            (self.knots[n_raw - 3], self.knots[n_raw - 1 + k])
        } else {
            (self.knots[i], self.knots[i + k])
        }
    }

    /// Simplex coefficients whose hazard is as flat as possible.
    ///
    /// Minimises the variance of `sum_i p_i b_i(t)` over a dense grid on
    /// `(L, U)` subject to `sum_i p_i = 1`, by solving the KKT system of the
    /// equality-constrained quadratic program.
    pub fn constant_coefs(&self) -> Result<Vec<f64>, BasisError> {
        let n = self.len();
        let (lower, upper) = self.config.boundary_knots;
        let grid = 2000;
        let h = (upper - lower) / grid as f64;
        let mut design = DMatrix::<f64>::zeros(grid, n);
        let mut row = vec![0.0; n];
        for g in 0..grid {
            self.mspline_into(lower + (g as f64 + 0.5) * h, &mut row);
            for (j, v) in row.iter().enumerate() {
                design[(g, j)] = *v;
            }
        }
        let means = design.row_mean();
        for mut r in design.row_iter_mut() {
            r -= &means;
        }
        let gram = design.transpose() * &design / grid as f64;
        let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(gram * 2.0));
        for i in 0..n {
            kkt[(i, n)] = 1.0;
            kkt[(n, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n + 1);
        rhs[n] = 1.0;
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| BasisError::Calibration("singular KKT system".into()))?;
        let p: Vec<f64> = sol.iter().take(n).copied().collect();
        if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(BasisError::Calibration(format!(
                "calibrated coefficients left the simplex: {p:?}"
            )));
        }
        let s: f64 = p.iter().sum();
        Ok(p.into_iter().map(|v| v / s).collect())
    }

    /// Random-walk scale for each term: mean distinct-knot spacing across
    /// the term's support, relative to term 2. Uniform knots give all ones.
    pub fn random_walk_weights(&self) -> Vec<f64> {
        let mut distinct = vec![self.config.lower()];
        distinct.extend_from_slice(&self.config.interior_knots);
        distinct.push(self.config.upper());
        let spacing = |i: usize| {
            let (lo, hi) = self.support(i);
            let inside = distinct.iter().filter(|&&k| k >= lo && k <= hi).count();
            (hi - lo) / (inside.max(2) - 1) as f64
        };
        let n = self.len();
        if n < 2 {
            return vec![1.0; n];
        }
        let reference = spacing(1);
        (0..n).map(|i| spacing(i) / reference).collect()
    }
}

/// Index `mu` of the knot interval `[knots[mu], knots[mu+1])` holding `t`,
/// clamped to the valid range `[k-1, n-1]` so `t = U` uses the last piece.
fn find_interval(knots: &[f64], k: usize, n: usize, t: f64) -> usize {
    let mut lo = k - 1;
    let mut hi = n - 1;
    if t >= knots[hi] {
        return hi;
    }
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if knots[mid] <= t {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// de Boor's triangular scheme: the `k` non-zero order-`k` B-splines at `t`
/// in interval `mu`, i.e. `B_{mu-k+1}, ..., B_mu`.
fn bspline_values(knots: &[f64], k: usize, t: f64, mu: usize, out: &mut [f64]) {
    let mut left = [0.0; 16];
    let mut right = [0.0; 16];
    out[0] = 1.0;
    for j in 0..k - 1 {
        right[j] = knots[mu + 1 + j] - t;
        left[j] = t - knots[mu - j];
        let mut saved = 0.0;
        for r in 0..=j {
            let denom = right[r] + left[j - r];
            let term = if denom > 0.0 { out[r] / denom } else { 0.0 };
            out[r] = saved + right[r] * term;
            saved = left[j - r] * term;
        }
        out[j + 1] = saved;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(interior: &[f64], upper: f64, bsmooth: bool) -> MSplineBasis {
        MSplineBasis::new(SplineConfig::new(3, interior.to_vec(), (0.0, upper), bsmooth).unwrap())
            .unwrap()
    }

    #[test]
    fn df_equal_to_order_has_no_interior_knots() {
        let times: Vec<f64> = (1..=9).map(f64::from).collect();
        let cfg = make_knots(&times, 4, 3, false).unwrap();
        assert!(cfg.interior_knots.is_empty());
        assert_eq!(cfg.boundary_knots, (0.0, 9.0));
        assert_eq!(cfg.df, 4);
    }

    #[test]
    fn df_ten_places_knots_at_equally_spaced_quantiles() {
        let times: Vec<f64> = (1..=101).map(|i| i as f64 / 10.0).collect();
        let cfg = make_knots(&times, 10, 3, false).unwrap();
        assert_eq!(cfg.interior_knots.len(), 6);
        for (j, k) in cfg.interior_knots.iter().enumerate() {
            let want = 0.1 + 10.0 * (j + 1) as f64 / 7.0;
            assert!((k - want).abs() < 1e-12, "{k} vs {want}");
        }
        let smooth = make_knots(&times, 10, 3, true).unwrap();
        assert_eq!(smooth.interior_knots.len(), 8);
        assert_eq!(smooth.df, 10);
    }

    #[test]
    fn degenerate_event_times_are_rejected() {
        let err = make_knots(&[2.0, 2.0, 2.0, 2.0], 6, 3, false).unwrap_err();
        assert_eq!(
            err,
            BasisError::TooFewEventTimes {
                df: 6,
                distinct: 1,
                needed: 2
            }
        );
    }

    #[test]
    fn coincident_quantiles_collapse_and_reduce_df() {
        let times = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0];
        let cfg = make_knots(&times, 7, 3, false).unwrap();
        assert_eq!(cfg.interior_knots, vec![1.0]);
        assert_eq!(cfg.df, 5);
    }

    #[test]
    fn standard_cubic_needs_four_df() {
        assert!(make_knots(&[1.0, 2.0, 3.0], 3, 3, false).is_err());
        assert_eq!(make_knots(&[1.0, 2.0, 3.0], 3, 3, true).unwrap().df, 3);
    }

    #[test]
    fn rejects_invalid_knots() {
        assert!(SplineConfig::new(3, vec![2.0, 1.0], (0.0, 3.0), false).is_err());
        assert!(SplineConfig::new(3, vec![3.0], (0.0, 3.0), false).is_err());
        assert!(SplineConfig::new(3, vec![], (2.0, 1.0), false).is_err());
    }

    #[test]
    fn negative_time_is_a_domain_error() {
        let b = cubic(&[1.0], 3.0, false);
        assert_eq!(b.eval_mspline(-0.1), Err(BasisError::NegativeTime(-0.1)));
        assert!(b.eval_ispline(-1.0).is_err());
    }

    #[test]
    fn constant_beyond_upper_boundary() {
        for bsmooth in [false, true] {
            let b = cubic(&[1.0, 2.5], 4.0, bsmooth);
            let at_u = b.eval_mspline(4.0).unwrap();
            let beyond = b.eval_mspline(5.0).unwrap();
            assert_eq!(at_u, beyond);
            let iu = b.eval_ispline(4.0).unwrap();
            let i5 = b.eval_ispline(5.0).unwrap();
            for j in 0..b.len() {
                assert!((i5[j] - iu[j] - at_u[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ispline_is_zero_at_origin_and_one_at_upper() {
        for bsmooth in [false, true] {
            let b = cubic(&[0.7, 1.9, 2.2], 4.0, bsmooth);
            assert!(b.eval_ispline(0.0).unwrap().iter().all(|&v| v == 0.0));
            for v in b.eval_ispline(4.0).unwrap().iter() {
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn constant_coefs_match_knot_span_formula() {
        // A constant is sum_i B_i = sum_i span_i / k * M_i, so p_i is
        // proportional to the knot span of term i.
        let b = cubic(&[0.5, 0.9, 2.0, 3.1], 4.0, false);
        let p = b.constant_coefs().unwrap();
        let k = b.knots();
        let spans: Vec<f64> = (0..b.len()).map(|i| k[i + 4] - k[i]).collect();
        let z: f64 = spans.iter().sum();
        for (pi, s) in p.iter().zip(&spans) {
            assert!((pi - s / z).abs() < 1e-8, "{pi} vs {}", s / z);
        }
    }

    #[test]
    fn uniform_knots_give_unit_random_walk_weights() {
        for bsmooth in [false, true] {
            let b = cubic(&[1.0, 2.0, 3.0, 4.0], 5.0, bsmooth);
            for w in b.random_walk_weights() {
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
        let skewed = cubic(&[0.2, 0.4, 3.0], 5.0, false);
        assert!(skewed
            .random_walk_weights()
            .iter()
            .any(|w| (w - 1.0).abs() > 0.1));
    }

    #[test]
    fn quantile_type_seven() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert!((quantile_sorted(&xs, 1.0 / 3.0) - 2.0).abs() < 1e-12);
    }
}
