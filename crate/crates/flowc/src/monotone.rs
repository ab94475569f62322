//! Compilation of continuous monotone scalar functions into width-one
//! leaky-ReLU networks with a certified uniform error bound.
//!
//! The pipeline mirrors the constructive argument behind the width-one
//! universal approximation result: make the target strictly monotone
//! (half the budget), interpolate it on a value grid (a quarter), fold each
//! linear piece into two alpha-power slopes (the last quarter), and emit the
//! exact network for the resulting alpha-power PL function.

use crate::error::{Error, Result};
use crate::pl::{check_alpha, quantize_slope, AlphaPl, PlFunc};
use crate::scalar::{from_alpha_pl, ScalarNet};

/// Monotonicity direction of a compilation target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// A scalar function to compile, with its interval and declared direction.
///
/// The direction is spot-checked on a sample grid at compile time; a
/// violation is a contract error.
pub struct MonotoneTarget<F: Fn(f64) -> f64> {
    pub f: F,
    pub interval: (f64, f64),
    pub direction: Direction,
}

impl<F: Fn(f64) -> f64> MonotoneTarget<F> {
    pub fn new(f: F, interval: (f64, f64), direction: Direction) -> Result<Self> {
        if !(interval.0 < interval.1) || !interval.0.is_finite() || !interval.1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "degenerate interval [{}, {}]",
                interval.0, interval.1
            )));
        }
        Ok(Self {
            f,
            interval,
            direction,
        })
    }
}

/// Strict-monotonization on `[-1, 1]`: returns `u(x) + (eps/2) x` for
/// increasing targets and `u(x) - (eps/2) x` for decreasing ones, so the
/// perturbation stays within `eps/2` on the interval.
pub fn strictify<F: Fn(f64) -> f64>(
    u: F,
    eps: f64,
    direction: Direction,
) -> Result<impl Fn(f64) -> f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "strictify needs eps > 0, got {eps}"
        )));
    }
    let sign = match direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    Ok(move |x: f64| u(x) + sign * (eps / 2.0) * x)
}

/// Interpolating PL function for a strictly increasing `u` on `[-1, 1]` whose
/// consecutive node-value gaps stay at or below `delta_h`, so
/// `sup |h - u| <= delta_h`.
///
/// Nodes are found by bisecting `u` for the next value increment; the first
/// node is -1 and the last is 1.
pub fn build_value_grid<F: Fn(f64) -> f64>(u: F, delta_h: f64) -> Result<PlFunc> {
    if !(delta_h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta_h must be positive, got {delta_h}"
        )));
    }
    const MAX_NODES: usize = 2_000_000;
    let eval = |x: f64| -> Result<f64> {
        let v = u(x);
        if !v.is_finite() {
            return Err(Error::InvalidTarget(format!("non-finite sample at x = {x}")));
        }
        Ok(v)
    };

    let mut xs = vec![-1.0];
    let mut vs = vec![eval(-1.0)?];
    let v_end = eval(1.0)?;
    // Slight undershoot keeps gaps strictly within delta_h despite the
    // bisection's x-tolerance.
    let target_step = delta_h * (1.0 - 1e-3);
    loop {
        let x_i = *xs.last().unwrap();
        let v_i = *vs.last().unwrap();
        if v_end <= v_i + delta_h {
            if x_i < 1.0 {
                xs.push(1.0);
                vs.push(v_end);
            }
            break;
        }
        let target = v_i + target_step;
        let (mut lo, mut hi) = (x_i, 1.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if eval(mid)? <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x_next = (lo.max(x_i + 1e-12)).min(1.0);
        let v_next = eval(x_next)?;
        if v_next > v_i + delta_h {
            return Err(Error::InvalidTarget(
                "value grid cannot meet the gap bound; target too steep or not monotone".into(),
            ));
        }
        xs.push(x_next);
        vs.push(v_next);
        if xs.len() > MAX_NODES {
            return Err(Error::InvalidTarget(format!(
                "value grid exceeded {MAX_NODES} nodes"
            )));
        }
    }

    pl_from_nodes(&xs, &vs)
}

/// PL interpolant through nodes, outer pieces extending the end segments.
fn pl_from_nodes(xs: &[f64], vs: &[f64]) -> Result<PlFunc> {
    if xs.len() < 2 {
        return Err(Error::InvalidTarget("need at least two grid nodes".into()));
    }
    let mut slopes = Vec::with_capacity(xs.len() + 1);
    slopes.push((vs[1] - vs[0]) / (xs[1] - xs[0]));
    for i in 0..xs.len() - 1 {
        slopes.push((vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i]));
    }
    slopes.push(*slopes.last().unwrap());
    PlFunc::new(xs.to_vec(), slopes, vs.to_vec())
}

/// Folds each piece of a strictly increasing PL function into at most two
/// alpha-power pieces anchored at `c`, matching `h` at every one of its
/// breakpoints.
///
/// Per segment the sup deviation is bounded by the segment's value gap. The
/// two-slope variant (shallow-then-steep vs steep-then-shallow) is chosen
/// greedily so junction slopes merge when possible.
pub fn fold_to_alpha(h: &PlFunc, alpha: f64, c: f64) -> Result<AlphaPl> {
    check_alpha(alpha)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "fold anchor c must be positive, got {c}"
        )));
    }
    if h.breakpoints().is_empty() {
        return Err(Error::UnsupportedShape(
            "fold_to_alpha needs at least one segment".into(),
        ));
    }
    if !h.is_strictly_monotone() {
        return Err(Error::ContractViolation(
            "fold_to_alpha requires strictly monotone input".into(),
        ));
    }
    if h.slopes()[0] < 0.0 {
        // Fold the increasing mirror and negate.
        let g = fold_to_alpha(&h.affine_post(-1.0, 0.0), alpha, c)?;
        let exps = g.exponents().to_vec();
        return AlphaPl::new(g.base().affine_post(-1.0, 0.0), alpha, -g.c(), exps);
    }

    let xs = h.breakpoints();
    let vs = h.node_values();
    let n = xs.len();

    if n == 1 {
        // No interior segments: both rays must already be alpha-powers.
        let mut exps = Vec::with_capacity(2);
        for &s in h.slopes() {
            let (j_lo, _) = quantize_slope(s, alpha, c)?;
            if (s - c * alpha.powi(j_lo)).abs() > 4e-12 * s {
                return Err(Error::UnsupportedShape(format!(
                    "unbounded ray of slope {s} is not an alpha-power; cannot fold"
                )));
            }
            exps.push(j_lo);
        }
        return AlphaPl::new(h.clone(), alpha, c, exps);
    }

    let mut bps: Vec<f64> = Vec::with_capacity(2 * n);
    let mut vals: Vec<f64> = Vec::with_capacity(2 * n);
    let mut slopes: Vec<f64> = Vec::with_capacity(2 * n + 1);
    let mut exps: Vec<i32> = Vec::with_capacity(2 * n + 1);

    let push_piece = |slopes: &mut Vec<f64>,
                          exps: &mut Vec<i32>,
                          bps: &mut Vec<f64>,
                          vals: &mut Vec<f64>,
                          x: f64,
                          v: f64,
                          exp: i32| {
        // Starting a piece at (x, v) with exponent `exp`; merge if the
        // running piece already has that slope.
        if exps.last() == Some(&exp) {
            return;
        }
        if let Some(&last_bp) = bps.last() {
            if x <= last_bp {
                // The running piece collapsed to zero width (fold point hit a
                // segment endpoint in floats); overwrite it, merging with the
                // piece before if the slopes now agree.
                if exps.len() >= 2 && exps[exps.len() - 2] == exp {
                    slopes.pop();
                    exps.pop();
                    bps.pop();
                    vals.pop();
                } else {
                    *slopes.last_mut().unwrap() = c * alpha.powi(exp);
                    *exps.last_mut().unwrap() = exp;
                    *vals.last_mut().unwrap() = v;
                }
                return;
            }
        }
        if !slopes.is_empty() {
            bps.push(x);
            vals.push(v);
        }
        slopes.push(c * alpha.powi(exp));
        exps.push(exp);
    };

    for i in 0..n - 1 {
        let (x0, x1) = (xs[i], xs[i + 1]);
        let (v0, v1) = (vs[i], vs[i + 1]);
        let w = x1 - x0;
        let k = (v1 - v0) / w;
        if !(k > 0.0) {
            return Err(Error::ContractViolation(format!(
                "segment {i} has non-positive slope {k}"
            )));
        }
        let (j_lo, j_hi) = quantize_slope(k, alpha, c)?;
        let lo = c * alpha.powi(j_lo);
        let hi = c * alpha.powi(j_hi);
        if (k - lo).abs() <= 4e-12 * k {
            // Representable to rounding: one piece.
            push_piece(&mut slopes, &mut exps, &mut bps, &mut vals, x0, v0, j_lo);
            continue;
        }
        // Greedy junction matching: continue with the previous slope first
        // when one of the two variants allows it.
        let prev = exps.last().copied();
        let steep_first = prev == Some(j_hi);
        let (first, second, frac) = if steep_first {
            (j_hi, j_lo, (k - lo) / (hi - lo))
        } else {
            (j_lo, j_hi, (hi - k) / (hi - lo))
        };
        let xi = (x0 + w * frac).clamp(x0 + w * 1e-15, x1 - w * 1e-15);
        let v_xi = v0 + c * alpha.powi(first) * (xi - x0);
        push_piece(&mut slopes, &mut exps, &mut bps, &mut vals, x0, v0, first);
        push_piece(&mut slopes, &mut exps, &mut bps, &mut vals, xi, v_xi, second);
    }

    // Outer pieces extend the first/last fold slopes; nothing to add.
    let base = PlFunc::new(bps, slopes, vals)?;
    AlphaPl::new(base, alpha, c, exps)
}

/// Anchor for slope quantization: the secant slope of the widest segment. An
/// exactly representable dominant slope keeps near-affine compilations flat.
fn widest_segment_slope(h: &PlFunc) -> f64 {
    let xs = h.breakpoints();
    let vs = h.node_values();
    let mut best_w = -1.0;
    let mut best_k = 1.0;
    for i in 0..xs.len() - 1 {
        let w = xs[i + 1] - xs[i];
        if w > best_w {
            best_w = w;
            best_k = (vs[i + 1] - vs[i]) / w;
        }
    }
    best_k.abs()
}

/// Compiles a monotone target into a width-one leaky-ReLU net with certified
/// `sup |net - u| <= eps` on the target interval, verified on a dense audit
/// grid before returning.
pub fn compile_monotone<F: Fn(f64) -> f64>(
    target: &MonotoneTarget<F>,
    eps: f64,
    alpha: f64,
) -> Result<ScalarNet> {
    check_alpha(alpha)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let (a, b) = target.interval;
    // Work on [-1, 1].
    let to_x = |y: f64| a + (b - a) * (y + 1.0) / 2.0;
    let u = |y: f64| (target.f)(to_x(y));

    let strictly_increasing_samples = spot_check_monotone(&u, target.direction)?;

    let increasing = target.direction == Direction::Increasing;
    let u_inc = |y: f64| if increasing { u(y) } else { -u(y) };

    // A target that is already strictly increasing needs no slope tilt; the
    // full budget goes to the grid and the fold (eps/2 each), which keeps
    // exactly representable targets exact.
    let h = if strictly_increasing_samples {
        let h = build_value_grid(&u_inc, eps / 2.0)?;
        let gaps_ok = h.node_values().windows(2).all(|w| w[1] > w[0]);
        if gaps_ok {
            Some(h)
        } else {
            None
        }
    } else {
        None
    };
    let h = match h {
        Some(h) => h,
        None => {
            let u_strict = strictify(u_inc, eps, Direction::Increasing)?;
            build_value_grid(&u_strict, eps / 4.0)?
        }
    };
    let c = widest_segment_slope(&h);
    let g = fold_to_alpha(&h, alpha, c)?;
    let mut net = from_alpha_pl(&g)?;

    if !increasing {
        net = net.then(&ScalarNet::new(alpha, vec![(-1.0, 0.0)])?)?;
    }
    // Map the original interval onto [-1, 1] in the leading layer.
    let s = 2.0 / (b - a);
    let t = -(a + b) / (b - a);
    net = ScalarNet::new(alpha, vec![(s, t)])?.then(&net)?;

    audit_scalar(&net, &target.f, (a, b), eps, 10_000)?;
    Ok(net)
}

/// Adaptive variant for strictly increasing smooth targets, used by the
/// substep synthesizer where budgets get small. Nodes are placed by measured
/// interpolation error plus the exact fold deviation instead of uniform value
/// gaps, which keeps near-affine targets shallow.
pub(crate) fn compile_increasing_adaptive<F: Fn(f64) -> f64>(
    f: F,
    interval: (f64, f64),
    delta: f64,
    alpha: f64,
) -> Result<ScalarNet> {
    check_alpha(alpha)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("bad interval [{a}, {b}]")));
    }
    let to_x = |y: f64| a + (b - a) * (y + 1.0) / 2.0;
    let u = |y: f64| f(to_x(y));

    let mut budget = delta;
    for attempt in 0..4 {
        let net_core = adaptive_core(&u, budget, alpha)?;
        let s = 2.0 / (b - a);
        let t = -(a + b) / (b - a);
        let net = ScalarNet::new(alpha, vec![(s, t)])?.then(&net_core)?;
        if audit_scalar(&net, &f, (a, b), delta, 4_001).is_ok() {
            return Ok(net);
        }
        budget /= 2.0;
        if attempt == 3 {
            break;
        }
    }
    Err(Error::SynthesisFailure(format!(
        "adaptive monotone compile missed delta = {delta} after refinement"
    )))
}

fn adaptive_core<U: Fn(f64) -> f64>(u: &U, delta: f64, alpha: f64) -> Result<ScalarNet> {
    const MAX_NODES: usize = 400_000;
    // Pass 1: refine until measured interpolation error fits half the budget.
    let interp_budget = delta * 0.45;
    let mut xs = vec![-1.0, 1.0];
    let mut i = 0;
    while i + 1 < xs.len() {
        let (x0, x1) = (xs[i], xs[i + 1]);
        if x1 - x0 <= 1e-9 {
            i += 1;
            continue;
        }
        let (v0, v1) = (u(x0), u(x1));
        if !v0.is_finite() || !v1.is_finite() {
            return Err(Error::InvalidTarget("non-finite sample".into()));
        }
        if !(v1 >= v0) {
            return Err(Error::ContractViolation(
                "adaptive compile requires an increasing target".into(),
            ));
        }
        let k = (v1 - v0) / (x1 - x0);
        let mut worst = 0.0_f64;
        for s in 1..16 {
            let x = x0 + (x1 - x0) * s as f64 / 16.0;
            let lin = v0 + k * (x - x0);
            worst = worst.max((u(x) - lin).abs());
        }
        if worst * 1.3 > interp_budget {
            xs.insert(i + 1, 0.5 * (x0 + x1));
            if xs.len() > MAX_NODES {
                return Err(Error::SynthesisFailure("adaptive grid exploded".into()));
            }
        } else {
            i += 1;
        }
    }

    // Anchor c on the widest segment, then pass 2: refine until the exact
    // fold deviation fits the other half.
    let fold_budget = delta * 0.45;
    let mut vs: Vec<f64> = xs.iter().map(|&x| u(x)).collect();
    let c = {
        let mut best = (xs[1] - xs[0], (vs[1] - vs[0]) / (xs[1] - xs[0]));
        for i in 1..xs.len() - 1 {
            let w = xs[i + 1] - xs[i];
            if w > best.0 {
                best = (w, (vs[i + 1] - vs[i]) / w);
            }
        }
        best.1.max(1e-300)
    };
    let mut i = 0;
    while i + 1 < xs.len() {
        let (x0, x1) = (xs[i], xs[i + 1]);
        let (v0, v1) = (vs[i], vs[i + 1]);
        let w = x1 - x0;
        let k = (v1 - v0) / w;
        let err = if k <= 0.0 {
            0.0
        } else {
            let (j_lo, j_hi) = quantize_slope(k, alpha, c)?;
            let lo = c * alpha.powi(j_lo);
            let hi = c * alpha.powi(j_hi);
            (k - lo) * (hi - k) * w / (hi - lo)
        };
        if err > fold_budget && w > 1e-9 {
            let xm = 0.5 * (x0 + x1);
            xs.insert(i + 1, xm);
            vs.insert(i + 1, u(xm));
            if xs.len() > MAX_NODES {
                return Err(Error::SynthesisFailure("adaptive grid exploded".into()));
            }
        } else {
            i += 1;
        }
    }

    // Strictly increasing nodes are required by the fold; nudge exact ties.
    for i in 1..vs.len() {
        if vs[i] <= vs[i - 1] {
            vs[i] = vs[i - 1] + f64::EPSILON * vs[i - 1].abs().max(1e-12);
        }
    }
    let h = pl_from_nodes(&xs, &vs)?;
    let g = fold_to_alpha(&h, alpha, c)?;
    from_alpha_pl(&g)
}

/// Validates the declared direction on a 257-point grid. Returns whether the
/// samples were strictly monotone, in which case strictification is skipped.
fn spot_check_monotone<U: Fn(f64) -> f64>(u: &U, direction: Direction) -> Result<bool> {
    let n = 256;
    let mut prev = u(-1.0);
    if !prev.is_finite() {
        return Err(Error::InvalidTarget("non-finite sample at -1".into()));
    }
    let mut strict = true;
    for i in 1..=n {
        let x = -1.0 + 2.0 * i as f64 / n as f64;
        let v = u(x);
        if !v.is_finite() {
            return Err(Error::InvalidTarget(format!("non-finite sample at {x}")));
        }
        let (ok, strictly) = match direction {
            Direction::Increasing => (v >= prev - 1e-12 * prev.abs().max(1.0), v > prev),
            Direction::Decreasing => (v <= prev + 1e-12 * prev.abs().max(1.0), v < prev),
        };
        if !ok {
            return Err(Error::ContractViolation(format!(
                "target is not {direction:?} near x = {x}"
            )));
        }
        strict &= strictly;
        prev = v;
    }
    Ok(strict)
}

fn audit_scalar<F: Fn(f64) -> f64>(
    net: &ScalarNet,
    f: &F,
    interval: (f64, f64),
    eps: f64,
    points: usize,
) -> Result<()> {
    let (a, b) = interval;
    let mut worst = 0.0_f64;
    let mut at = a;
    for i in 0..=points {
        let x = a + (b - a) * i as f64 / points as f64;
        let d = (net.eval(x) - f(x)).abs();
        if d > worst {
            worst = d;
            at = x;
        }
    }
    if worst > eps {
        return Err(Error::InternalError(format!(
            "audit failed: sup error {worst} > eps {eps} at x = {at}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictify_formula() {
        let u = |_x: f64| 0.0;
        let s = strictify(u, 0.1, Direction::Increasing).unwrap();
        assert_eq!(s(1.0), 0.05);
        assert_eq!(s(-1.0), -0.05);
        let v = strictify(|x: f64| x, 0.2, Direction::Increasing).unwrap();
        assert!((v(1.0) - 1.1).abs() < 1e-15);
        assert!(strictify(|x: f64| x, 0.0, Direction::Increasing).is_err());
    }

    #[test]
    fn strictify_makes_cubic_strict() {
        let s = strictify(|x: f64| x * x * x, 0.01, Direction::Increasing).unwrap();
        let n = 2000;
        for i in 0..n {
            let x0 = -1.0 + 2.0 * i as f64 / n as f64;
            let x1 = x0 + 2.0 / n as f64;
            let slope = (s(x1) - s(x0)) / (x1 - x0);
            assert!(slope >= 0.005 - 1e-9, "min slope {slope} too small at {x0}");
        }
    }

    #[test]
    fn value_grid_linear_target_is_exact() {
        let h = build_value_grid(|x| x, 0.5).unwrap();
        for i in 0..h.node_values().len() - 1 {
            assert!(h.node_values()[i + 1] - h.node_values()[i] <= 0.5 + 1e-12);
        }
        for i in 0..=100 {
            let x = -1.0 + 0.02 * i as f64;
            assert!((h.eval(x) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn value_grid_tanh_meets_gap_and_sup_bounds() {
        let u = |x: f64| (2.0 * x).tanh();
        let h = build_value_grid(u, 0.01).unwrap();
        let vs = h.node_values();
        for i in 0..vs.len() - 1 {
            assert!(vs[i + 1] - vs[i] <= 0.01, "gap {} too wide", vs[i + 1] - vs[i]);
        }
        let mut sup = 0.0_f64;
        for i in 0..=10_000 {
            let x = -1.0 + 2.0 * i as f64 / 10_000.0;
            sup = sup.max((h.eval(x) - u(x)).abs());
        }
        assert!(sup <= 0.01, "sup error {sup}");
    }

    #[test]
    fn value_grid_flat_then_steep() {
        let u = |x: f64| x * x * x + 0.005 * x;
        let h = build_value_grid(u, 0.02).unwrap();
        let vs = h.node_values();
        for i in 0..vs.len() - 1 {
            assert!(vs[i + 1] - vs[i] <= 0.02);
        }
    }

    #[test]
    fn fold_single_segment_example() {
        // Slope 0.7 over [0, 1] with alpha = 0.5, c = 1: interior breakpoint
        // at 0.6 (solves 0.5*xi + (1 - xi) = 0.7), slopes {0.5, 1}.
        let h = PlFunc::new(vec![0.0, 1.0], vec![0.7, 0.7, 0.7], vec![0.0, 0.7]).unwrap();
        let g = fold_to_alpha(&h, 0.5, 1.0).unwrap();
        let interior: Vec<f64> = g
            .base()
            .breakpoints()
            .iter()
            .copied()
            .filter(|&x| x > 0.0 && x < 1.0)
            .collect();
        assert_eq!(interior.len(), 1);
        assert!((interior[0] - 0.6).abs() < 1e-12);
        assert!((g.eval(0.0) - 0.0).abs() < 1e-12);
        assert!((g.eval(1.0) - 0.7).abs() < 1e-12);
        // Per-segment bound: |g - h| <= value gap.
        for i in 0..=100 {
            let x = 0.01 * i as f64;
            assert!((g.eval(x) - h.eval(x)).abs() <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn fold_exact_powers_add_no_breakpoints() {
        let h = PlFunc::new(vec![0.0], vec![1.0, 0.5], vec![0.0]).unwrap();
        let g = fold_to_alpha(&h, 0.5, 1.0).unwrap();
        assert_eq!(g.base().piece_count(), 2, "already alpha-power: g = h");
        for i in -20..=20 {
            let x = 0.1 * i as f64;
            assert!((g.eval(x) - h.eval(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_three_segments_matches_at_nodes() {
        let xs = vec![-1.0, -0.2, 0.4, 1.0];
        let vs = vec![0.0, 0.3, 0.7, 1.6];
        let h = pl_from_nodes(&xs, &vs).unwrap();
        let g = fold_to_alpha(&h, 0.5, 1.0).unwrap();
        for (x, v) in xs.iter().zip(&vs) {
            assert!((g.eval(*x) - v).abs() < 1e-12, "mismatch at node {x}");
        }
        assert!(g.base().is_strictly_monotone());
        // Piece budget: at most 2n - 1 pieces for n nodes.
        assert!(g.base().piece_count() <= 2 * xs.len() - 1);
        // Sup deviation bounded by the largest value gap.
        let max_gap = vs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        for i in 0..=1000 {
            let x = -1.0 + 2.0 * i as f64 / 1000.0;
            assert!((g.eval(x) - h.eval(x)).abs() <= max_gap + 1e-12);
        }
    }

    #[test]
    fn compile_identity_is_exact() {
        let t = MonotoneTarget::new(|x| x, (-1.0, 1.0), Direction::Increasing).unwrap();
        let net = compile_monotone(&t, 0.05, 0.5).unwrap();
        let mut sup = 0.0_f64;
        for i in 0..=1000 {
            let x = -1.0 + 0.002 * i as f64;
            sup = sup.max((net.eval(x) - x).abs());
        }
        assert!(sup <= 1e-10, "identity compile error {sup}");
    }

    #[test]
    fn compile_tanh_within_budget() {
        let t = MonotoneTarget::new(|x: f64| x.tanh(), (-1.0, 1.0), Direction::Increasing).unwrap();
        let net = compile_monotone(&t, 1e-2, 0.5).unwrap();
        let mut sup = 0.0_f64;
        for i in 0..=10_000 {
            let x = -1.0 + 2.0 * i as f64 / 10_000.0;
            sup = sup.max((net.eval(x) - x.tanh()).abs());
        }
        assert!(sup <= 1e-2, "sup {sup}");
    }

    #[test]
    fn compile_arctanh_on_shrunk_interval() {
        let t = MonotoneTarget::new(|x: f64| x.atanh(), (-0.96, 0.96), Direction::Increasing)
            .unwrap();
        let net = compile_monotone(&t, 1e-2, 0.5).unwrap();
        let mut sup = 0.0_f64;
        for i in 0..=10_000 {
            let x = -0.96 + 1.92 * i as f64 / 10_000.0;
            sup = sup.max((net.eval(x) - x.atanh()).abs());
        }
        assert!(sup <= 1e-2, "sup {sup}");
    }

    #[test]
    fn compile_decreasing_target() {
        let t = MonotoneTarget::new(|x: f64| -x * x * x, (-1.0, 1.0), Direction::Decreasing)
            .unwrap();
        let net = compile_monotone(&t, 0.02, 0.5).unwrap();
        for i in 0..=2000 {
            let x = -1.0 + 0.001 * i as f64;
            assert!((net.eval(x) + x * x * x).abs() <= 0.02);
        }
    }

    #[test]
    fn compile_rejects_non_monotone_claims() {
        let t = MonotoneTarget::new(|x: f64| x.sin() * 4.0, (-3.0, 3.0), Direction::Increasing)
            .unwrap();
        assert!(matches!(
            compile_monotone(&t, 0.1, 0.5),
            Err(Error::ContractViolation(_) | Error::InvalidTarget(_))
        ));
        assert!(compile_monotone(
            &MonotoneTarget::new(|x| x, (-1.0, 1.0), Direction::Increasing).unwrap(),
            0.0,
            0.5
        )
        .is_err());
    }

    #[test]
    fn adaptive_compile_near_identity_is_shallow() {
        // x + 0.01*tanh(x) over a wide interval: the value-grid path would
        // need ~width/delta nodes; the adaptive path should stay tiny.
        let f = |x: f64| x + 0.01 * x.tanh();
        let net = compile_increasing_adaptive(f, (-6.0, 6.0), 1e-4, 0.5).unwrap();
        assert!(
            net.activations() < 2_000,
            "adaptive compile too deep: {} activations",
            net.activations()
        );
        let mut sup = 0.0_f64;
        for i in 0..=20_000 {
            let x = -6.0 + 12.0 * i as f64 / 20_000.0;
            sup = sup.max((net.eval(x) - f(x)).abs());
        }
        assert!(sup <= 1e-4, "sup {sup}");
    }

    #[test]
    fn adaptive_compile_tanh() {
        let f = |x: f64| x.tanh();
        let net = compile_increasing_adaptive(f, (-3.0, 3.0), 1e-3, 0.5).unwrap();
        let mut sup = 0.0_f64;
        for i in 0..=20_000 {
            let x = -3.0 + 6.0 * i as f64 / 20_000.0;
            sup = sup.max((net.eval(x) - f(x)).abs());
        }
        assert!(sup <= 1e-3, "sup {sup}");
    }

    #[test]
    fn budget_identity() {
        let eps = 0.37;
        assert_eq!(eps / 2.0 + 2.0 * (eps / 4.0), eps);
    }
}
