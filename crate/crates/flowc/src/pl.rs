//! Exact algebra of scalar continuous piecewise-linear functions and the
//! leaky-ReLU primitive.
//!
//! A [`PlFunc`] is stored as strictly increasing breakpoints, one slope per
//! linear piece (left to right, including the two unbounded outer pieces) and
//! the function value at each breakpoint. Composition with the leaky ReLU and
//! post-affine maps are exact up to float rounding, which is what makes the
//! width-one network extraction in [`crate::scalar`] work.

use crate::error::{Error, Result};

/// Relative tolerance for continuity checks and breakpoint merging.
pub const PL_TOL: f64 = 1e-12;

/// Leaky ReLU `max(alpha*x, x)` with leak slope `alpha` in (0, 1).
pub fn leaky_relu(x: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(lrelu(x, alpha))
}

/// Unchecked leaky ReLU for hot paths; `alpha` validated at construction time.
#[inline]
pub(crate) fn lrelu(x: f64, alpha: f64) -> f64 {
    (alpha * x).max(x)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "leak slope alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Scalar continuous piecewise-linear function with finitely many pieces.
///
/// With `n` breakpoints there are `n + 1` pieces; the outer two extend to
/// infinity. A breakpoint-free function is affine and anchored by its value
/// at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PlFunc {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    node_values: Vec<f64>,
    /// f(0); only meaningful when `breakpoints` is empty.
    affine_value: f64,
}

impl PlFunc {
    /// Affine function `slope * x + intercept`.
    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            slopes: vec![slope],
            node_values: Vec::new(),
            affine_value: intercept,
        }
    }

    /// Constant function.
    pub fn constant(value: f64) -> Self {
        Self::affine(0.0, value)
    }

    /// Builds a function from breakpoints, per-piece slopes and node values,
    /// validating lengths, ordering, finiteness and continuity.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, node_values: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 || node_values.len() != breakpoints.len() {
            return Err(Error::InvalidParameter(format!(
                "inconsistent lengths: {} breakpoints, {} slopes, {} node values",
                breakpoints.len(),
                slopes.len(),
                node_values.len()
            )));
        }
        if breakpoints.is_empty() {
            return Err(Error::InvalidParameter(
                "use PlFunc::affine for breakpoint-free functions".into(),
            ));
        }
        for v in breakpoints.iter().chain(&slopes).chain(&node_values) {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite entry".into()));
            }
        }
        for w in breakpoints.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "breakpoints not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let f = Self {
            breakpoints,
            slopes,
            node_values,
            affine_value: 0.0,
        };
        f.check_continuity()?;
        Ok(f)
    }

    fn check_continuity(&self) -> Result<()> {
        for i in 0..self.breakpoints.len().saturating_sub(1) {
            let dx = self.breakpoints[i + 1] - self.breakpoints[i];
            let predicted = self.node_values[i] + self.slopes[i + 1] * dx;
            let actual = self.node_values[i + 1];
            let scale = predicted.abs().max(actual.abs()).max(1.0);
            if (predicted - actual).abs() > PL_TOL * scale {
                return Err(Error::InvalidParameter(format!(
                    "discontinuity at breakpoint {}: expected {predicted}, got {actual}",
                    self.breakpoints[i + 1]
                )));
            }
        }
        Ok(())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    /// Number of linear pieces (`breakpoints + 1`).
    pub fn piece_count(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_constant(&self) -> bool {
        self.slopes.iter().all(|&s| s == 0.0)
    }

    /// All slopes strictly positive or all strictly negative.
    pub fn is_strictly_monotone(&self) -> bool {
        self.slopes.iter().all(|&s| s > 0.0) || self.slopes.iter().all(|&s| s < 0.0)
    }

    /// All slopes of one (weak) sign.
    pub fn is_weakly_monotone(&self) -> bool {
        self.slopes.iter().all(|&s| s >= 0.0) || self.slopes.iter().all(|&s| s <= 0.0)
    }

    /// Exact evaluation. Returns the stored node value on breakpoints and
    /// extrapolates with the outer slopes beyond the breakpoint range.
    pub fn eval(&self, x: f64) -> f64 {
        if self.breakpoints.is_empty() {
            return self.affine_value + self.slopes[0] * x;
        }
        // partition_point: number of breakpoints strictly below x.
        let idx = self.breakpoints.partition_point(|&b| b < x);
        if idx < self.breakpoints.len() && self.breakpoints[idx] == x {
            return self.node_values[idx];
        }
        if idx == 0 {
            return self.node_values[0] + self.slopes[0] * (x - self.breakpoints[0]);
        }
        let i = idx - 1;
        self.node_values[i] + self.slopes[i + 1] * (x - self.breakpoints[i])
    }

    fn x_scale(&self) -> f64 {
        self.breakpoints
            .iter()
            .fold(1.0_f64, |m, b| m.max(b.abs()))
    }

    /// Post-composition with an affine map: returns `w*f + b`.
    ///
    /// Breakpoints are unchanged; slopes scale by `w` and node values map
    /// affinely.
    pub fn affine_post(&self, w: f64, b: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            slopes: self.slopes.iter().map(|s| w * s).collect(),
            node_values: self.node_values.iter().map(|v| w * v + b).collect(),
            affine_value: w * self.affine_value + b,
        }
    }

    /// Pre-composition with an affine map: returns `x -> f(a*x + c)` for `a != 0`.
    pub fn affine_pre(&self, a: f64, c: f64) -> Result<Self> {
        if a == 0.0 || !a.is_finite() || !c.is_finite() {
            return Err(Error::InvalidParameter(
                "affine_pre needs a finite nonzero inner slope".into(),
            ));
        }
        if self.breakpoints.is_empty() {
            return Ok(Self::affine(
                self.slopes[0] * a,
                self.affine_value + self.slopes[0] * c,
            ));
        }
        // Breakpoint xi of f corresponds to (xi - c)/a for the composite.
        let mut breakpoints: Vec<f64> = self.breakpoints.iter().map(|b| (b - c) / a).collect();
        let mut node_values = self.node_values.clone();
        let mut slopes: Vec<f64> = self.slopes.iter().map(|s| s * a).collect();
        if a < 0.0 {
            breakpoints.reverse();
            node_values.reverse();
            slopes.reverse();
        }
        Self::new(breakpoints, slopes, node_values)
    }

    /// Composition with the leaky ReLU: returns `sigma_alpha . f` for strictly
    /// monotone `f`.
    ///
    /// The unique root of `f` becomes at most one new breakpoint; slopes on
    /// the negative side of `f` are scaled by `alpha`, so the slope set of the
    /// result lies in `S(f) ∪ alpha*S(f)`. If the root lands on an existing
    /// breakpoint (relative tolerance [`PL_TOL`]) it is merged rather than
    /// inserted, keeping piece counts canonical.
    pub fn compose_leaky(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !self.is_strictly_monotone() {
            return Err(Error::UnsupportedShape(
                "compose_leaky requires a strictly monotone function".into(),
            ));
        }
        let increasing = self.slopes[0] > 0.0;

        if self.breakpoints.is_empty() {
            let s = self.slopes[0];
            let xi = -self.affine_value / s;
            let (left, right) = if increasing {
                (alpha * s, s)
            } else {
                (s, alpha * s)
            };
            return Ok(Self {
                breakpoints: vec![xi],
                slopes: vec![left, right],
                node_values: vec![0.0],
                affine_value: 0.0,
            });
        }

        let xi = self.monotone_root();
        let merge_tol = PL_TOL * self.x_scale();
        // Index of the first breakpoint at or beyond the root.
        let insert_at = self.breakpoints.partition_point(|&b| b < xi - merge_tol);
        let merged = insert_at < self.breakpoints.len()
            && (self.breakpoints[insert_at] - xi).abs() <= merge_tol;

        let mut breakpoints = self.breakpoints.clone();
        let mut node_values: Vec<f64> = self
            .node_values
            .iter()
            .map(|&v| lrelu(v, alpha))
            .collect();
        let mut slopes = self.slopes.clone();
        // Piece k spans (bp[k-1], bp[k]); pieces on the negative side of f get
        // scaled by alpha. For increasing f the negative side is left of xi.
        let boundary_piece = insert_at; // pieces 0..=insert_at-1 lie fully left of xi
        if !merged {
            breakpoints.insert(insert_at, xi);
            node_values.insert(insert_at, 0.0);
            // Split the piece containing xi into two with the same base slope.
            slopes.insert(boundary_piece, slopes[boundary_piece]);
            if increasing {
                for s in slopes.iter_mut().take(boundary_piece + 1) {
                    *s *= alpha;
                }
            } else {
                for s in slopes.iter_mut().skip(boundary_piece + 1) {
                    *s *= alpha;
                }
            }
        } else if increasing {
            for s in slopes.iter_mut().take(boundary_piece + 1) {
                *s *= alpha;
            }
        } else {
            for s in slopes.iter_mut().skip(boundary_piece + 1) {
                *s *= alpha;
            }
        }
        Ok(Self {
            breakpoints,
            slopes,
            node_values,
            affine_value: 0.0,
        })
    }

    /// Root of a strictly monotone function with breakpoints.
    fn monotone_root(&self) -> f64 {
        let n = self.breakpoints.len();
        let increasing = self.slopes[0] > 0.0;
        // Find the piece where the sign changes.
        let crossing = if increasing {
            self.node_values.partition_point(|&v| v < 0.0)
        } else {
            self.node_values.partition_point(|&v| v > 0.0)
        };
        if crossing == 0 {
            // Root on the left outer piece (or exactly at the first node).
            self.breakpoints[0] - self.node_values[0] / self.slopes[0]
        } else if crossing == n {
            self.breakpoints[n - 1] - self.node_values[n - 1] / self.slopes[n]
        } else {
            self.breakpoints[crossing] - self.node_values[crossing] / self.slopes[crossing]
        }
    }

    /// Merges breakpoints whose adjacent pieces have (relatively) equal slopes.
    pub fn canonicalized(&self) -> Self {
        if self.breakpoints.is_empty() {
            return self.clone();
        }
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len());
        let mut node_values = Vec::with_capacity(self.node_values.len());
        let mut slopes = vec![self.slopes[0]];
        for i in 0..self.breakpoints.len() {
            let s_next = self.slopes[i + 1];
            let s_prev = *slopes.last().unwrap();
            let scale = s_prev.abs().max(s_next.abs()).max(1e-300);
            if (s_next - s_prev).abs() <= PL_TOL * scale {
                continue;
            }
            breakpoints.push(self.breakpoints[i]);
            node_values.push(self.node_values[i]);
            slopes.push(s_next);
        }
        if breakpoints.is_empty() {
            // All pieces merged into one line.
            let anchor = self.node_values[0] - self.slopes[0] * self.breakpoints[0];
            return Self::affine(self.slopes[0], anchor);
        }
        Self {
            breakpoints,
            slopes,
            node_values,
            affine_value: 0.0,
        }
    }

    /// Reflection `x -> f(-x)`.
    pub(crate) fn reflect_x(&self) -> Self {
        if self.breakpoints.is_empty() {
            return Self::affine(-self.slopes[0], self.affine_value);
        }
        let breakpoints: Vec<f64> = self.breakpoints.iter().rev().map(|b| -b).collect();
        let node_values: Vec<f64> = self.node_values.iter().rev().copied().collect();
        let slopes: Vec<f64> = self.slopes.iter().rev().map(|s| -s).collect();
        Self {
            breakpoints,
            slopes,
            node_values,
            affine_value: 0.0,
        }
    }

    /// Composition with the plain ReLU `max(0, x)` for weakly monotone `f`.
    ///
    /// Unlike [`PlFunc::compose_leaky`] this tolerates flat pieces; it exists
    /// to support exact piece counting for width-one ReLU networks.
    pub(crate) fn compose_relu(&self) -> Result<Self> {
        if !self.is_weakly_monotone() {
            return Err(Error::UnsupportedShape(
                "compose_relu requires a weakly monotone function".into(),
            ));
        }
        if self.is_constant() {
            let v = if self.breakpoints.is_empty() {
                self.affine_value
            } else {
                self.node_values[0]
            };
            return Ok(Self::constant(v.max(0.0)));
        }
        let increasing = self.slopes.iter().any(|&s| s > 0.0);
        if !increasing {
            return Ok(self.reflect_x().compose_relu()?.reflect_x());
        }

        if self.breakpoints.is_empty() {
            let s = self.slopes[0];
            let xi = -self.affine_value / s;
            return Ok(Self {
                breakpoints: vec![xi],
                slopes: vec![0.0, s],
                node_values: vec![0.0],
                affine_value: 0.0,
            });
        }

        let n = self.breakpoints.len();
        let first_nonneg = self.node_values.partition_point(|&v| v < 0.0);
        if first_nonneg == 0 && self.slopes[0] == 0.0 {
            // min f = node_values[0] >= 0: ReLU is the identity here.
            return Ok(self.clone());
        }
        if first_nonneg == n && self.slopes[n] == 0.0 {
            // max f = node_values[n-1] < 0: clipped to zero everywhere.
            return Ok(Self::constant(0.0));
        }
        // Root of f on the crossing piece (slope there is > 0).
        let xi = if first_nonneg == 0 {
            self.breakpoints[0] - self.node_values[0] / self.slopes[0]
        } else if first_nonneg == n {
            self.breakpoints[n - 1] - self.node_values[n - 1] / self.slopes[n]
        } else {
            self.breakpoints[first_nonneg] - self.node_values[first_nonneg] / self.slopes[first_nonneg]
        };
        let merge_tol = PL_TOL * self.x_scale();
        // Keep nodes strictly right of the root; left of it everything is 0.
        let keep_from = self.breakpoints.partition_point(|&b| b <= xi + merge_tol);
        let mut breakpoints = vec![xi];
        let mut node_values = vec![0.0];
        let mut slopes = vec![0.0];
        // Slope of the piece immediately right of xi.
        slopes.push(self.slopes[keep_from]);
        for i in keep_from..n {
            breakpoints.push(self.breakpoints[i]);
            node_values.push(self.node_values[i]);
            slopes.push(self.slopes[i + 1]);
        }
        Ok(Self {
            breakpoints,
            slopes,
            node_values,
            affine_value: 0.0,
        }
        .canonicalized())
    }
}

/// Piecewise-linear function whose slopes are all `c * alpha^k` for integer `k`.
///
/// These are exactly the functions realized by width-one leaky-ReLU networks.
#[derive(Debug, Clone)]
pub struct AlphaPl {
    base: PlFunc,
    alpha: f64,
    c: f64,
    exponents: Vec<i32>,
}

impl AlphaPl {
    pub fn new(base: PlFunc, alpha: f64, c: f64, exponents: Vec<i32>) -> Result<Self> {
        check_alpha(alpha)?;
        if c == 0.0 || !c.is_finite() {
            return Err(Error::InvalidParameter("alpha-power constant c must be nonzero".into()));
        }
        if exponents.len() != base.slopes().len() {
            return Err(Error::InvalidParameter(
                "one exponent per piece required".into(),
            ));
        }
        for (s, &k) in base.slopes().iter().zip(&exponents) {
            let expected = c * alpha.powi(k);
            if (s - expected).abs() > PL_TOL * c.abs().max(expected.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "slope {s} is not c*alpha^{k} = {expected}"
                )));
            }
        }
        Ok(Self {
            base,
            alpha,
            c,
            exponents,
        })
    }

    pub fn base(&self) -> &PlFunc {
        &self.base
    }

    pub fn into_base(self) -> PlFunc {
        self.base
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn exponents(&self) -> &[i32] {
        &self.exponents
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.base.eval(x)
    }
}

/// Recognizes `f` as an alpha-power PL function, pinning `c` to the leftmost
/// slope.
///
/// Exponents are recovered as `round(log(slope/c) / log(alpha))` and verified
/// against `tol * |c|`. Returns `None` when any slope is zero, has a sign
/// different from `c`, or misses every power.
pub fn classify_alpha_power(f: &PlFunc, alpha: f64, tol: f64) -> Option<AlphaPl> {
    if alpha <= 0.0 || alpha >= 1.0 {
        return None;
    }
    let c = f.slopes()[0];
    if c == 0.0 || !c.is_finite() {
        return None;
    }
    let mut exponents = Vec::with_capacity(f.slopes().len());
    for &s in f.slopes() {
        if s == 0.0 || s.signum() != c.signum() {
            return None;
        }
        let k = ((s / c).ln() / alpha.ln()).round();
        if !k.is_finite() || k.abs() > i32::MAX as f64 {
            return None;
        }
        let k = k as i32;
        if (s - c * alpha.powi(k)).abs() > tol * c.abs() {
            return None;
        }
        exponents.push(k);
    }
    AlphaPl::new(f.clone(), alpha, c, exponents).ok()
}

/// Tightest integer bracket `c*alpha^j_lo <= s < c*alpha^j_hi` with
/// `j_lo = j_hi + 1`.
pub fn quantize_slope(s: f64, alpha: f64, c: f64) -> Result<(i32, i32)> {
    check_alpha(alpha)?;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidSlope(s));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "quantize_slope anchor c must be positive, got {c}"
        )));
    }
    let mut j = ((s / c).ln() / alpha.ln()).ceil();
    if !j.is_finite() {
        return Err(Error::InvalidSlope(s));
    }
    // Fix up float error in the logarithm against the actual powers.
    while c * alpha.powi(j as i32) > s {
        j += 1.0;
    }
    while c * alpha.powi(j as i32 - 1) <= s {
        j -= 1.0;
    }
    let j = j as i32;
    Ok((j, j - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    }

    #[test]
    fn leaky_relu_basics() {
        assert_eq!(leaky_relu(2.0, 0.5).unwrap(), 2.0);
        assert_eq!(leaky_relu(-2.0, 0.5).unwrap(), -1.0);
        assert_eq!(leaky_relu(0.0, 0.3).unwrap(), 0.0);
        assert!(leaky_relu(1.0, 1.0).is_err());
        assert!(leaky_relu(1.0, 0.0).is_err());
    }

    #[test]
    fn leaky_relu_positive_homogeneity() {
        for a in [0.5, 2.0, 13.7] {
            for x in [-3.0, -0.1, 0.0, 0.4, 9.0] {
                for alpha in [0.3, 0.5, 0.7] {
                    let lhs = lrelu(a * x, alpha);
                    let rhs = a * lrelu(x, alpha);
                    assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn leaky_relu_identity_representation() {
        for alpha in [0.3, 0.5, 0.7] {
            for x in grid(-5.0, 5.0, 100) {
                let v = (1.0 / alpha) * lrelu(-lrelu(-x, alpha), alpha);
                assert!((v - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn eval_two_slope_function() {
        let f = PlFunc::new(vec![0.0], vec![1.0, 2.0], vec![0.0]).unwrap();
        assert_eq!(f.eval(-1.0), -1.0);
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.eval(0.0), 0.0);
    }

    #[test]
    fn new_rejects_discontinuity_and_disorder() {
        assert!(PlFunc::new(vec![0.0, 1.0], vec![1.0, 1.0, 1.0], vec![0.0, 5.0]).is_err());
        assert!(PlFunc::new(vec![1.0, 0.0], vec![1.0, 1.0, 1.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn compose_leaky_on_identity() {
        let f = PlFunc::affine(1.0, 0.0);
        let g = f.compose_leaky(0.5).unwrap();
        assert_eq!(g.breakpoints(), &[0.0]);
        assert_eq!(g.slopes(), &[0.5, 1.0]);
        assert_eq!(g.node_values(), &[0.0]);
    }

    #[test]
    fn compose_leaky_root_shift() {
        let f = PlFunc::affine(1.0, 1.0);
        let g = f.compose_leaky(0.5).unwrap();
        assert_eq!(g.breakpoints(), &[-1.0]);
        assert_eq!(g.slopes(), &[0.5, 1.0]);
    }

    #[test]
    fn compose_leaky_decreasing_three_pieces() {
        // Strictly decreasing, 3 pieces, root inside the middle piece.
        let f = PlFunc::new(vec![-1.0, 1.0], vec![-2.0, -1.0, -0.5], vec![1.0, -1.0]).unwrap();
        let g = f.compose_leaky(0.5).unwrap();
        assert_eq!(g.piece_count(), 4);
        for s in g.slopes() {
            let in_sf = f.slopes().iter().any(|t| (t - s).abs() < 1e-15);
            let in_asf = f.slopes().iter().any(|t| (0.5 * t - s).abs() < 1e-15);
            assert!(in_sf || in_asf, "slope {s} escaped S(f) ∪ 0.5 S(f)");
        }
        // Dense-grid oracle: sigma_alpha(f(x)) pointwise.
        for x in grid(-4.0, 4.0, 4001) {
            let expected = lrelu(f.eval(x), 0.5);
            let got = g.eval(x);
            assert!(
                (expected - got).abs() <= 1e-12 * expected.abs().max(1.0),
                "mismatch at {x}: {expected} vs {got}"
            );
        }
    }

    #[test]
    fn compose_leaky_merges_root_on_breakpoint() {
        let f = PlFunc::new(vec![0.0], vec![1.0, 2.0], vec![0.0]).unwrap();
        let g = f.compose_leaky(0.5).unwrap();
        assert_eq!(g.piece_count(), 2, "root at existing breakpoint must merge");
        assert_eq!(g.slopes(), &[0.5, 2.0]);
    }

    #[test]
    fn compose_leaky_piece_growth_at_most_one() {
        let f = PlFunc::new(vec![-2.0, 0.5, 3.0], vec![0.5, 1.0, 4.0, 0.25], vec![-3.0, -0.5, 9.5])
            .unwrap();
        let g = f.compose_leaky(0.3).unwrap();
        assert!(g.piece_count() <= f.piece_count() + 1);
    }

    #[test]
    fn compose_leaky_rejects_non_monotone() {
        let f = PlFunc::new(vec![0.0], vec![1.0, -1.0], vec![0.0]).unwrap();
        assert!(matches!(
            f.compose_leaky(0.5),
            Err(Error::UnsupportedShape(_))
        ));
    }

    #[test]
    fn affine_post_examples() {
        let id = PlFunc::affine(1.0, 0.0);
        assert_eq!(id.affine_post(1.0, 0.0), id);
        let g = id.affine_post(-2.0, 3.0);
        for x in grid(-3.0, 3.0, 50) {
            assert_eq!(g.eval(x), -2.0 * x + 3.0);
        }
        let f = PlFunc::new(vec![-1.0, 1.0], vec![1.0, 2.0, 4.0], vec![0.0, 4.0]).unwrap();
        let h = f.affine_post(0.25, -1.0);
        assert_eq!(h.slopes(), &[0.25, 0.5, 1.0]);
        for x in grid(-5.0, 5.0, 2000) {
            let expected = 0.25 * f.eval(x) - 1.0;
            assert!((h.eval(x) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn affine_pre_matches_pointwise() {
        let f = PlFunc::new(vec![-1.0, 1.0], vec![1.0, 2.0, 4.0], vec![0.0, 4.0]).unwrap();
        for (a, c) in [(2.0, 0.5), (-1.5, 1.0), (0.25, -2.0)] {
            let g = f.affine_pre(a, c).unwrap();
            for x in grid(-6.0, 6.0, 500) {
                let expected = f.eval(a * x + c);
                assert!((g.eval(x) - expected).abs() <= 1e-10 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn classify_exact_powers() {
        let f = PlFunc::new(vec![0.0, 1.0], vec![1.0, 0.5, 0.25], vec![0.0, 0.5]).unwrap();
        let g = classify_alpha_power(&f, 0.5, 1e-9).expect("exact powers must classify");
        assert_eq!(g.c(), 1.0);
        assert_eq!(g.exponents(), &[0, 1, 2]);
    }

    #[test]
    fn classify_rejects_non_power() {
        let f = PlFunc::new(vec![0.0], vec![1.0, 0.7], vec![0.0]).unwrap();
        assert!(classify_alpha_power(&f, 0.5, 1e-9).is_none());
    }

    #[test]
    fn quantize_slope_brackets() {
        // Frozen from the direct checks below.
        assert_eq!(quantize_slope(0.7, 0.5, 1.0).unwrap(), (1, 0));
        assert_eq!(quantize_slope(1.0, 0.5, 1.0).unwrap(), (0, -1));
        assert_eq!(quantize_slope(0.03, 0.5, 1.0).unwrap(), (6, 5));
        assert!(0.5_f64.powi(6) <= 0.03 && 0.03 < 0.5_f64.powi(5));
        assert!(quantize_slope(-1.0, 0.5, 1.0).is_err());
        // Bracket property on a slope sweep.
        for i in 1..200 {
            let s = 0.013 * i as f64;
            for alpha in [0.3, 0.5, 0.7] {
                for c in [0.5, 1.0, 2.7] {
                    let (lo, hi) = quantize_slope(s, alpha, c).unwrap();
                    assert_eq!(lo, hi + 1);
                    assert!(c * alpha.powi(lo) <= s && s < c * alpha.powi(hi));
                }
            }
        }
    }

    #[test]
    fn canonicalize_merges_equal_slopes() {
        let f = PlFunc::new(vec![0.0, 1.0], vec![1.0, 1.0, 2.0], vec![0.0, 1.0]).unwrap();
        let g = f.canonicalized();
        assert_eq!(g.piece_count(), 2);
        for x in grid(-2.0, 3.0, 100) {
            assert!((f.eval(x) - g.eval(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_round_trip() {
        let f = PlFunc::new(vec![-1.0, 2.0], vec![0.5, 1.0, 3.0], vec![0.0, 3.0]).unwrap();
        let r = f.reflect_x();
        for x in grid(-4.0, 4.0, 200) {
            assert!((r.eval(x) - f.eval(-x)).abs() < 1e-12);
        }
        assert_eq!(r.reflect_x(), f);
    }

    #[test]
    fn compose_relu_flat_regions() {
        // Increasing line: ReLU clips the negative half.
        let f = PlFunc::affine(2.0, -1.0);
        let g = f.compose_relu().unwrap();
        assert_eq!(g.slopes(), &[0.0, 2.0]);
        assert_eq!(g.breakpoints(), &[0.5]);
        for x in grid(-2.0, 2.0, 200) {
            assert!((g.eval(x) - f.eval(x).max(0.0)).abs() < 1e-12);
        }
        // Entirely negative constant clips to zero.
        let c = PlFunc::constant(-3.0);
        assert!(c.compose_relu().unwrap().is_constant());
    }
}
