//! ODE fields, the high-accuracy reference flow (the ground-truth oracle for
//! everything downstream), domain enlargement and perturbation bounds, and
//! ridge-regression fitting of tanh-network fields.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidParameter("empty domain".into()));
        }
        for &(lo, hi) in intervals {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "degenerate interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lo: intervals.iter().map(|i| i.0).collect(),
            hi: intervals.iter().map(|i| i.1).collect(),
        })
    }

    /// The symmetric cube `[-r, r]^d`.
    pub fn centered_cube(dim: usize, r: f64) -> Result<Self> {
        Self::new(&vec![(-r, r); dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn inflate(&self, r: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v - r).collect(),
            hi: self.hi.iter().map(|v| v + r).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Largest coordinate magnitude over the box, per coordinate.
    pub fn coord_radii(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).max(1e-12))
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.gen_range(l..=h))
            .collect()
    }
}

/// Parameters of one piecewise-constant segment of a tanh-network field:
/// `v(x) = outer * tanh(inner * x + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhParams {
    /// `d x N`, row-major.
    pub outer: Vec<f64>,
    /// `N x d`, row-major.
    pub inner: Vec<f64>,
    /// `N`.
    pub bias: Vec<f64>,
}

/// A tanh-network vector field, piecewise constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhField {
    dim: usize,
    neurons: usize,
    /// `0 = t_0 < ... < t_m = tau`.
    knots: Vec<f64>,
    segments: Vec<TanhParams>,
}

impl TanhField {
    pub fn new(
        dim: usize,
        neurons: usize,
        knots: Vec<f64>,
        segments: Vec<TanhParams>,
    ) -> Result<Self> {
        if dim == 0 || neurons == 0 {
            return Err(Error::InvalidParameter("dim and neurons must be positive".into()));
        }
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "time grid must start at 0 and contain at least [0, tau]".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("time grid must strictly increase".into()));
        }
        if segments.len() != knots.len() - 1 {
            return Err(Error::InvalidParameter(
                "one parameter block per time interval required".into(),
            ));
        }
        for seg in &segments {
            if seg.outer.len() != dim * neurons
                || seg.inner.len() != neurons * dim
                || seg.bias.len() != neurons
            {
                return Err(Error::InvalidParameter("parameter shape mismatch".into()));
            }
            if seg
                .outer
                .iter()
                .chain(&seg.inner)
                .chain(&seg.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidParameter("non-finite field parameter".into()));
            }
        }
        Ok(Self {
            dim,
            neurons,
            knots,
            segments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn tau(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn segments(&self) -> &[TanhParams] {
        &self.segments
    }

    pub fn segment_index(&self, t: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(self.segments.len() - 1)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let seg = &self.segments[self.segment_index(t)];
        let (d, n) = (self.dim, self.neurons);
        let mut phi = vec![0.0; n];
        for i in 0..n {
            let mut u = seg.bias[i];
            for j in 0..d {
                u += seg.inner[i * d + j] * x[j];
            }
            phi[i] = u.tanh();
        }
        let mut v = vec![0.0; d];
        for j in 0..d {
            let row = &seg.outer[j * n..(j + 1) * n];
            v[j] = row.iter().zip(&phi).map(|(a, p)| a * p).sum();
        }
        v
    }
}

/// How a field is defined.
#[derive(Clone)]
pub enum FieldKind {
    Analytic(Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>),
    TanhNet(TanhField),
}

impl std::fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldKind::Analytic(_) => f.write_str("Analytic(..)"),
            FieldKind::TanhNet(t) => write!(f, "TanhNet(N={})", t.neurons()),
        }
    }
}

/// A vector field with optional a-priori bound and Lipschitz hints.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub dim: usize,
    pub kind: FieldKind,
    pub lipschitz_hint: Option<f64>,
    pub bound_hint: Option<f64>,
}

impl FieldSpec {
    pub fn analytic<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            kind: FieldKind::Analytic(Arc::new(f)),
            lipschitz_hint: None,
            bound_hint: None,
        }
    }

    pub fn from_tanh(field: TanhField) -> Self {
        Self {
            dim: field.dim(),
            kind: FieldKind::TanhNet(field),
            lipschitz_hint: None,
            bound_hint: None,
        }
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = Some(l);
        self
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        match &self.kind {
            FieldKind::Analytic(f) => f(x, t),
            FieldKind::TanhNet(net) => net.eval(x, t),
        }
    }

    /// Interior time knots where the field may jump; the reference solver
    /// restarts at these.
    pub fn knots(&self) -> Vec<f64> {
        match &self.kind {
            FieldKind::Analytic(_) => Vec::new(),
            FieldKind::TanhNet(net) => {
                let k = net.knots();
                k[1..k.len() - 1].to_vec()
            }
        }
    }

    /// Named preset fields used by the CLI and the studies.
    ///
    /// `tau` only matters for `tanh_demo`, whose single parameter segment
    /// spans `[0, tau]`.
    pub fn preset(name: &str, tau: f64) -> Option<FieldSpec> {
        match name {
            "decay1d" => Some(
                FieldSpec::analytic(1, |x, _t| vec![-x[0]]).with_lipschitz_hint(1.0),
            ),
            "rotation2d" => Some(
                FieldSpec::analytic(2, |x, _t| vec![-x[1], x[0]]).with_lipschitz_hint(1.0),
            ),
            "vanderpol" => Some(FieldSpec::analytic(2, |x, _t| {
                vec![x[1], (1.0 - x[0] * x[0]) * x[1] - x[0]]
            })),
            "pendulum" => Some(
                FieldSpec::analytic(2, |x, _t| vec![x[1], -x[0].sin()]).with_lipschitz_hint(1.0),
            ),
            "tanh_demo" => Some(FieldSpec::from_tanh(tanh_demo_field(tau))),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["decay1d", "rotation2d", "vanderpol", "pendulum", "tanh_demo"]
    }
}

/// The fixed seeded demo field: d = 2, N = 4, one time segment.
pub fn tanh_demo_field(tau: f64) -> TanhField {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d, n) = (2, 4);
    let inner: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let outer: Vec<f64> = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TanhField::new(d, n, vec![0.0, tau], vec![TanhParams { outer, inner, bias }])
        .expect("demo field parameters are valid")
}

pub fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// High-accuracy reference solution `x(t1)` from `x0` at `t = 0`, computed by
/// adaptive Dormand-Prince 5(4) with local error control at `tol`.
///
/// For piecewise-constant-in-time fields integration restarts at the
/// parameter knots so a discontinuity never sits inside a step.
pub fn reference_flow(field: &FieldSpec, x0: &[f64], t1: f64, tol: f64) -> Result<Vec<f64>> {
    if x0.len() != field.dim {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if t1 == 0.0 {
        return Ok(x0.to_vec());
    }
    if t1 < 0.0 {
        return Err(Error::InvalidParameter("backward integration not supported".into()));
    }
    // Split at knots.
    let mut spans = vec![0.0];
    for k in field.knots() {
        if k > 0.0 && k < t1 {
            spans.push(k);
        }
    }
    spans.push(t1);

    let mut x = x0.to_vec();
    for w in spans.windows(2) {
        x = dp54_span(field, &x, w[0], w[1], tol)?;
    }
    Ok(x)
}

fn dp54_span(field: &FieldSpec, x0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>> {
    let d = x0.len();
    let span = t1 - t0;
    let mut t = t0;
    let mut y = x0.to_vec();
    let mut h = (span / 16.0).min(0.1 * (1.0 + tol.sqrt()));
    let mut k = vec![vec![0.0; d]; 7];
    let mut steps = 0usize;

    while t < t1 {
        h = h.min(t1 - t);
        if h < 1e-14 * span.max(1.0) {
            return Err(Error::StiffnessFailure { t });
        }
        for stage in 0..7 {
            let mut arg = y.clone();
            for (prev, kp) in k.iter().take(stage).enumerate() {
                let a = DP_A[stage][prev];
                if a != 0.0 {
                    for (av, kv) in arg.iter_mut().zip(kp) {
                        *av += h * a * kv;
                    }
                }
            }
            let f = field.eval(&arg, t + DP_C[stage] * h);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidField(format!("non-finite field value at t = {t}")));
            }
            k[stage] = f;
        }
        let mut y5 = y.clone();
        let mut err = 0.0_f64;
        for i in 0..d {
            let mut hi5 = 0.0;
            let mut hi4 = 0.0;
            for s in 0..7 {
                hi5 += DP_B5[s] * k[s][i];
                hi4 += DP_B4[s] * k[s][i];
            }
            y5[i] += h * hi5;
            err = err.max((h * (hi5 - hi4)).abs() / (1.0 + y5[i].abs()));
        }
        if err <= tol {
            t += h;
            y = y5;
        }
        let scale = if err > 0.0 {
            0.9 * (tol / err).powf(0.2)
        } else {
            5.0
        };
        h *= scale.clamp(0.2, 5.0);
        steps += 1;
        if steps > 20_000_000 {
            return Err(Error::StiffnessFailure { t });
        }
    }
    Ok(y)
}

/// Sampled bound `M` and Lipschitz estimate `L` for a field over a box,
/// inflated by a 1.5x safety factor. Explicit hints override sampling and are
/// taken verbatim.
pub fn estimate_bounds(field: &FieldSpec, domain: &BoxDomain, tau: f64) -> Result<(f64, f64)> {
    const SAFETY: f64 = 1.5;
    let need_m = field.bound_hint.is_none();
    let need_l = field.lipschitz_hint.is_none();
    let (mut m, mut l) = (0.0_f64, 0.0_f64);
    if need_m || need_l {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9E37_79B9);
        let d = field.dim;
        let times: Vec<f64> = (0..9).map(|i| tau * i as f64 / 8.0).collect();
        for _ in 0..256 {
            let x = domain.sample(&mut rng);
            for &t in &times {
                let v = field.eval(&x, t);
                if v.iter().any(|u| !u.is_finite()) {
                    return Err(Error::InvalidField("non-finite sample".into()));
                }
                m = m.max(euclid_norm(&v));
                // Finite-difference Jacobian, spectral norm.
                let h = 1e-5;
                let mut jac = DMatrix::zeros(d, d);
                for j in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let vp = field.eval(&xp, t);
                    let vm = field.eval(&xm, t);
                    for i in 0..d {
                        jac[(i, j)] = (vp[i] - vm[i]) / (2.0 * h);
                    }
                }
                let spec = jac.svd(false, false).singular_values[0];
                l = l.max(spec);
            }
        }
        // Random difference quotients catch non-smooth spots.
        for _ in 0..256 {
            let x = domain.sample(&mut rng);
            let y = domain.sample(&mut rng);
            let dist = euclid_dist(&x, &y);
            if dist < 1e-9 {
                continue;
            }
            for &t in &times {
                let q = euclid_dist(&field.eval(&x, t), &field.eval(&y, t)) / dist;
                l = l.max(q);
            }
        }
        m *= SAFETY;
        l *= SAFETY;
    }
    let m = field.bound_hint.unwrap_or(m);
    let l = field.lipschitz_hint.unwrap_or(l);
    Ok((m, l))
}

/// The enlarged compact domain: the box inflated in every coordinate by
/// `(M + 1) * tau * exp(L * tau)`, a sup-norm enclosure of the Euclidean
/// ball in the definition.
pub fn omega_tau(domain: &BoxDomain, m: f64, l: f64, tau: f64) -> BoxDomain {
    debug_assert!(m >= 0.0 && l >= 0.0 && tau >= 0.0);
    domain.inflate((m + 1.0) * tau * (l * tau).exp())
}

/// The field-perturbation tolerance `min(1, eps / (tau * exp(L * tau)))`
/// sufficient for a flow-map deviation of at most `eps`.
pub fn gronwall_delta(eps: f64, tau: f64, l: f64) -> f64 {
    debug_assert!(eps > 0.0 && tau > 0.0);
    (eps / (tau * (l * tau).exp())).min(1.0)
}

/// Fits a piecewise-constant-in-time tanh field with `neurons` hidden units
/// on `domain x [0, tau]`, split into `time_intervals` uniform segments.
///
/// Inner weights come from a seeded random-feature distribution (a constant
/// unit, one near-linear unit per axis, and log-uniform random scales) and
/// the outer weights solve a ridge regression on a sample cloud. The returned
/// delta is the sup residual on a held-out cloud. A field that is already a
/// tanh net with at most `neurons` units is copied verbatim.
pub fn fit_tanh_field(
    field: &FieldSpec,
    domain: &BoxDomain,
    tau: f64,
    neurons: usize,
    target_delta: f64,
    seed: u64,
    time_intervals: usize,
) -> Result<(TanhField, f64)> {
    if neurons == 0 {
        return Err(Error::InvalidParameter("need at least one neuron".into()));
    }
    if time_intervals == 0 {
        return Err(Error::InvalidParameter("need at least one time interval".into()));
    }
    if !(tau > 0.0) || !(target_delta > 0.0) {
        return Err(Error::InvalidParameter("tau and target_delta must be positive".into()));
    }
    if let FieldKind::TanhNet(net) = &field.kind {
        if net.neurons() <= neurons && (net.tau() - tau).abs() <= 1e-9 * tau {
            return Ok((net.clone(), 0.0));
        }
    }

    let d = field.dim;
    let n = neurons;
    let radii = domain.coord_radii();
    let mean_radius = radii.iter().sum::<f64>() / d as f64;

    let knots: Vec<f64> = (0..=time_intervals)
        .map(|i| tau * i as f64 / time_intervals as f64)
        .collect();
    let mut segments = Vec::with_capacity(time_intervals);
    let mut achieved = 0.0_f64;

    for seg_idx in 0..time_intervals {
        let (t0, t1) = (knots[seg_idx], knots[seg_idx + 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (seg_idx as u64).wrapping_mul(0x9E37));

        // Feature design.
        let mut inner = vec![0.0; n * d];
        let mut bias = vec![0.0; n];
        bias[0] = 1.0; // constant unit
        let linear_units = d.min(n.saturating_sub(1));
        for j in 0..linear_units {
            // Near-linear unit along axis j: relative cubic error ~1e-7.
            inner[(1 + j) * d + j] = 5.5e-4 / radii[j];
        }
        for i in (1 + linear_units)..n {
            let scale = (2.0 / mean_radius) * 2.0_f64.powf(rng.gen_range(-3.0..1.0));
            let mut w = vec![0.0; d];
            let mut norm = 0.0;
            for wj in w.iter_mut() {
                // Box-Muller-free gaussian-ish direction from sums.
                let g: f64 =
                    (0..6).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() / 6.0_f64.sqrt();
                *wj = g;
                norm += g * g;
            }
            let norm = norm.sqrt().max(1e-9);
            let center = domain.sample(&mut rng);
            let mut b = 0.0;
            for j in 0..d {
                let wj = scale * w[j] / norm;
                inner[i * d + j] = wj;
                b -= wj * center[j];
            }
            bias[i] = b;
        }

        // Training cloud and ridge solve for the outer weights.
        let s = 1024.max(24 * n);
        let mut phi = DMatrix::zeros(n, s);
        let mut targets = DMatrix::zeros(s, d);
        for col in 0..s {
            let x = domain.sample(&mut rng);
            let t = rng.gen_range(t0..=t1);
            let v = field.eval(&x, t);
            if v.iter().any(|u| !u.is_finite()) {
                return Err(Error::InvalidField("non-finite sample during fit".into()));
            }
            for i in 0..n {
                let mut u = bias[i];
                for j in 0..d {
                    u += inner[i * d + j] * x[j];
                }
                phi[(i, col)] = u.tanh();
            }
            for j in 0..d {
                targets[(col, j)] = v[j];
            }
        }
        // Normalize feature rows to unit RMS so the ridge penalty treats the
        // near-linear units (tiny raw amplitude, huge outer weight) fairly.
        let mut rms = vec![0.0_f64; n];
        for i in 0..n {
            let mut acc = 0.0;
            for col in 0..s {
                acc += phi[(i, col)] * phi[(i, col)];
            }
            rms[i] = (acc / s as f64).sqrt().max(1e-12);
            for col in 0..s {
                phi[(i, col)] /= rms[i];
            }
        }
        let lambda = 1e-9 * s as f64;
        let mut gram = &phi * phi.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let rhs = &phi * &targets; // n x d
        let sol = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidField("singular feature gram matrix".into()))?;
        let mut outer = vec![0.0; d * n];
        for j in 0..d {
            for i in 0..n {
                outer[j * n + i] = sol[(i, j)] / rms[i];
            }
        }
        segments.push(TanhParams {
            outer,
            inner,
            bias,
        });
    }

    let fitted = TanhField::new(d, n, knots, segments)?;

    // Held-out residual.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xDEAD_BEEF));
    for _ in 0..2048 {
        let x = domain.sample(&mut rng);
        let t = rng.gen_range(0.0..=tau);
        let r = euclid_dist(&fitted.eval(&x, t), &field.eval(&x, t));
        achieved = achieved.max(r);
    }

    if achieved > target_delta {
        return Err(Error::FitShortfall {
            achieved,
            target: target_delta,
        });
    }
    Ok((fitted, achieved))
}
