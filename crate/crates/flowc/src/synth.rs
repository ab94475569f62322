//! Synthesis of splitting substeps as width-d leaky-ReLU networks and the
//! end-to-end flow-map compiler.
//!
//! A substep `y_j = x_j + dt * a * tanh(w . x + beta)` factorizes into a
//! chain of exact affine maps and three monotone scalar stages (tanh, its
//! inverse, and a near-identity shear), each compiled to a width-one net and
//! lifted onto one coordinate. Tolerances are allocated backwards through
//! the chain's Lipschitz factors, and every synthesized net is audited
//! against the substep map before it is accepted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deep::DeepNet;
use crate::error::{Error, Result};
use crate::monotone::compile_increasing_adaptive;
use crate::ode::{
    estimate_bounds, euclid_dist, fit_tanh_field, gronwall_delta, omega_tau, reference_flow,
    BoxDomain, FieldSpec, TanhField,
};
use crate::pl::check_alpha;
use crate::split::{apply_substep, estimate_c, make_schedule, required_steps, run_splitting, SubStep};

/// Tolerance split across field fitting, splitting, and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub eps_total: f64,
    pub eps_field: f64,
    pub eps_split: f64,
    pub eps_synth: f64,
}

impl Budget {
    /// The default equal three-way split.
    pub fn thirds(eps: f64) -> Result<Self> {
        Self::new(eps, eps / 3.0, eps / 3.0, eps / 3.0)
    }

    pub fn new(eps_total: f64, eps_field: f64, eps_split: f64, eps_synth: f64) -> Result<Self> {
        if !(eps_total > 0.0 && eps_field > 0.0 && eps_split > 0.0 && eps_synth > 0.0) {
            return Err(Error::InvalidParameter("all budget shares must be positive".into()));
        }
        if eps_field + eps_split + eps_synth > eps_total * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "budget shares sum to {} > total {eps_total}",
                eps_field + eps_split + eps_synth
            )));
        }
        Ok(Self {
            eps_total,
            eps_field,
            eps_split,
            eps_synth,
        })
    }
}

/// One stage of a composition chain, for tolerance allocation.
#[derive(Debug, Clone, Copy)]
pub struct Stage {
    /// Exact affine stages contribute no error of their own.
    pub exact: bool,
    /// Lipschitz bound over the stage's working domain.
    pub lipschitz: f64,
    /// How much inflation of its nominal input the stage tolerates before
    /// leaving its compiled domain. Infinite for globally defined stages.
    pub input_slack: f64,
}

impl Stage {
    pub fn exact_affine(lipschitz: f64) -> Self {
        Self {
            exact: true,
            lipschitz,
            input_slack: f64::INFINITY,
        }
    }

    pub fn approx(lipschitz: f64) -> Self {
        Self {
            exact: false,
            lipschitz,
            input_slack: f64::INFINITY,
        }
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.input_slack = slack;
        self
    }
}

/// An ordered stage chain `F_n . ... . F_0`.
#[derive(Debug, Clone)]
pub struct StageChain {
    pub stages: Vec<Stage>,
}

/// Allocates per-stage tolerances backwards: the last approximate stage gets
/// `eps/2`, each earlier one half of the previous, and the first is doubled
/// so the contributions `delta_i * prod(downstream Lipschitz)` telescope to
/// exactly `eps`. Exact stages get zero and enter only through their
/// Lipschitz factors. Allocations are clipped so accumulated inflation never
/// leaves a downstream stage's compiled domain.
pub fn budget_composition(chain: &StageChain, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let n = chain.stages.len();
    for (i, s) in chain.stages.iter().enumerate() {
        if !(s.lipschitz >= 0.0) || !s.lipschitz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "stage {i} has invalid Lipschitz bound {}",
                s.lipschitz
            )));
        }
        if s.input_slack <= 0.0 {
            return Err(Error::BudgetInfeasible(format!(
                "stage {i} has no domain margin left"
            )));
        }
    }
    let approx: Vec<usize> = (0..n).filter(|&i| !chain.stages[i].exact).collect();
    let mut deltas = vec![0.0; n];
    if approx.is_empty() {
        return Ok(deltas);
    }
    let m = approx.len();
    let mut contrib = vec![0.0; m];
    if m == 1 {
        contrib[0] = eps;
    } else {
        contrib[m - 1] = eps / 2.0;
        for i in (1..m - 1).rev() {
            contrib[i] = contrib[i + 1] / 2.0;
        }
        contrib[0] = contrib[1];
    }
    for (slot, &p) in approx.iter().enumerate() {
        let downstream: f64 = chain.stages[p + 1..].iter().map(|s| s.lipschitz).product();
        deltas[p] = contrib[slot] / downstream.max(1e-300);
    }
    // Domain-margin clipping: inflation accumulated at a stage's input must
    // stay below its slack.
    for _ in 0..4 {
        let mut ok = true;
        for q in 0..n {
            let slack = chain.stages[q].input_slack;
            if !slack.is_finite() {
                continue;
            }
            let mut inflation = 0.0;
            for &p in approx.iter().filter(|&&p| p < q) {
                let between: f64 = chain.stages[p + 1..q].iter().map(|s| s.lipschitz).product();
                inflation += deltas[p] * between;
            }
            if inflation > slack {
                ok = false;
                let factor = 0.5 * slack / inflation;
                for &p in approx.iter().filter(|&&p| p < q) {
                    deltas[p] *= factor;
                }
            }
        }
        if ok {
            return Ok(deltas);
        }
    }
    Err(Error::BudgetInfeasible(
        "tolerance allocation cannot satisfy the stage domain margins".into(),
    ))
}

/// Interval image of a box under an affine row `w . x + beta`.
fn dot_interval(w: &[f64], beta: f64, domain: &BoxDomain) -> (f64, f64) {
    let (mut lo, mut hi) = (beta, beta);
    for ((&wj, &l), &h) in w.iter().zip(domain.lo()).zip(domain.hi()) {
        if wj >= 0.0 {
            lo += wj * l;
            hi += wj * h;
        } else {
            lo += wj * h;
            hi += wj * l;
        }
    }
    (lo, hi)
}

/// Synthesizes one splitting substep as a width-d leaky-ReLU network with
/// `sup_domain |net - T| <= eps`, audited on a seeded sample before return.
pub fn synth_substep(s: &SubStep, domain: &BoxDomain, eps: f64, alpha: f64) -> Result<DeepNet> {
    check_alpha(alpha)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let d = domain.dim();
    if s.weights.len() != d || s.coord >= d {
        return Err(Error::InvalidInput("substep does not match the domain dimension".into()));
    }
    let w_max = s.weights.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let gate = s.dt * s.amplitude.abs() * w_max;
    if gate >= 1.0 {
        return Err(Error::StepTooLarge(gate));
    }

    let mut budget = eps;
    for attempt in 0..3 {
        let net = build_substep_net(s, domain, budget, alpha)?;
        let measured = audit_substep(&net, s, domain, 2048)?;
        if measured <= eps {
            return Ok(net);
        }
        if attempt == 2 {
            return Err(Error::SynthesisFailure(format!(
                "substep audit error {measured} > eps {eps} after retries (k={}, i={}, j={})",
                s.k, s.neuron, s.coord
            )));
        }
        budget /= 2.0;
    }
    unreachable!()
}

fn audit_substep(net: &DeepNet, s: &SubStep, domain: &BoxDomain, points: usize) -> Result<f64> {
    let tag = ((s.k as u64) << 20) ^ ((s.neuron as u64) << 8) ^ s.coord as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0D17 ^ tag);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let x = domain.sample(&mut rng);
        let want = apply_substep(&x, s);
        let got = net.eval(&x)?;
        worst = worst.max(euclid_dist(&want, &got));
    }
    Ok(worst)
}

fn build_substep_net(s: &SubStep, domain: &BoxDomain, eps: f64, alpha: f64) -> Result<DeepNet> {
    let d = domain.dim();
    let j = s.coord;
    let shift = s.dt * s.amplitude;

    // Exact cases: no activation needed at all.
    if shift == 0.0 {
        return identity_affine(alpha, d);
    }
    if s.weights.iter().all(|&w| w == 0.0) {
        // Pure constant shift of coordinate j.
        let mut b = vec![0.0; d];
        b[j] = shift * s.bias.tanh();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        return DeepNet::affine(alpha, d, m, b);
    }

    let cross = s
        .weights
        .iter()
        .enumerate()
        .filter(|&(l, &w)| l != j && w != 0.0)
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));

    match cross {
        None => build_monotone_branch(s, domain, eps, alpha),
        Some((m, _)) => build_general_branch(s, domain, eps, alpha, m),
    }
}

fn identity_affine(alpha: f64, d: usize) -> Result<DeepNet> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    DeepNet::affine(alpha, d, m, vec![0.0; d])
}

/// `w` has no cross terms: `x_j + dt a tanh(w_j x_j + beta)` is monotone in
/// `x_j` and compiles directly.
fn build_monotone_branch(
    s: &SubStep,
    domain: &BoxDomain,
    eps: f64,
    alpha: f64,
) -> Result<DeepNet> {
    let j = s.coord;
    let (dt, a, wj, beta) = (s.dt, s.amplitude, s.weights[j], s.bias);
    let width = domain.hi()[j] - domain.lo()[j];
    let margin = 0.05 * width + 2.0 * eps;
    let interval = (domain.lo()[j] - margin, domain.hi()[j] + margin);
    let target = move |xi: f64| xi + dt * a * (wj * xi + beta).tanh();
    let scalar = compile_increasing_adaptive(target, interval, eps, alpha * alpha)?;
    DeepNet::lift_scalar(&scalar, j, domain.dim())
}

/// The factorization through `nu = w . x + beta`: affine gather, tanh,
/// shear of coordinate j, inverse tanh, near-identity correction, affine
/// recovery.
fn build_general_branch(
    s: &SubStep,
    domain: &BoxDomain,
    eps: f64,
    alpha: f64,
    m: usize,
) -> Result<DeepNet> {
    let d = domain.dim();
    let j = s.coord;
    let (dt, a, beta) = (s.dt, s.amplitude, s.bias);
    let w = &s.weights;
    let wj = w[j];
    let shear = a * dt;

    // Stage domains via interval arithmetic.
    let (nu_lo, nu_hi) = dot_interval(w, beta, domain);
    let nu_pad = 0.05 * (nu_hi - nu_lo).max(1e-6) + 2.0 * eps * w.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let (nu_lo, nu_hi) = (nu_lo - nu_pad, nu_hi + nu_pad);
    let r = nu_lo.abs().max(nu_hi.abs());
    // arctanh works on [-1 + mu, 1 - mu] with mu half the distance from
    // tanh(R) to saturation.
    let mu = (1.0 - r.tanh()) / 2.0;
    if !(mu > 0.0) {
        return Err(Error::BudgetInfeasible(format!(
            "tanh range saturates at |nu| <= {r}; domain too wide for f64"
        )));
    }
    let c3 = 1.0 - mu;
    let arctanh_lip = 1.0 / (1.0 - c3 * c3);
    let f4_lip = 1.0 + (wj * shear).abs();

    // Operator sup-norms of the affine stages (max abs row sum).
    let f0_lip = {
        let row_m: f64 = w.iter().map(|v| v.abs()).sum();
        row_m.max(1.0)
    };
    let f2_lip = 1.0 + shear.abs();
    let f5_lip = {
        let row: f64 = (1.0 + w.iter().enumerate().filter(|&(l, _)| l != m).map(|(_, v)| v.abs()).sum::<f64>()) / w[m].abs();
        row.max(1.0)
    };

    let has_f4 = wj != 0.0;
    let mut stages = vec![
        Stage::exact_affine(f0_lip),
        Stage::approx(1.0),
        Stage::exact_affine(f2_lip),
        Stage::approx(arctanh_lip).with_slack(mu / 2.0),
    ];
    if has_f4 {
        stages.push(Stage::approx(f4_lip));
    }
    stages.push(Stage::exact_affine(f5_lip));
    let deltas = budget_composition(&StageChain { stages }, eps)?;

    // F0: nu into coordinate m.
    let mut m0 = vec![0.0; d * d];
    for i in 0..d {
        if i == m {
            for l in 0..d {
                m0[i * d + l] = w[l];
            }
        } else {
            m0[i * d + i] = 1.0;
        }
    }
    let mut b0 = vec![0.0; d];
    b0[m] = beta;
    let f0 = DeepNet::affine(alpha, d, m0, b0)?;

    // F1: tanh on coordinate m.
    let s1 = compile_increasing_adaptive(|v: f64| v.tanh(), (nu_lo, nu_hi), deltas[1], alpha * alpha)?;
    let f1 = DeepNet::lift_scalar(&s1, m, d)?;

    // F2: x_j += a dt * tanh(nu).
    let mut m2 = vec![0.0; d * d];
    for i in 0..d {
        m2[i * d + i] = 1.0;
    }
    m2[j * d + m] = shear;
    let f2 = DeepNet::affine(alpha, d, m2, vec![0.0; d])?;

    // F3: arctanh on coordinate m, compiled on [-c3, c3].
    let s3 = compile_increasing_adaptive(|v: f64| v.atanh(), (-c3, c3), deltas[3], alpha * alpha)?;
    let f3 = DeepNet::lift_scalar(&s3, m, d)?;

    // F4: nu + w_j a dt tanh(nu); its derivative is at least 1 - |w_j a dt|.
    let f4 = if has_f4 {
        let pad = 2.0 * eps * arctanh_lip + 1e-9;
        let s4 = compile_increasing_adaptive(
            move |v: f64| v + wj * shear * v.tanh(),
            (nu_lo - pad, nu_hi + pad),
            deltas[4],
            alpha * alpha,
        )?;
        Some(DeepNet::lift_scalar(&s4, m, d)?)
    } else {
        None
    };

    // F5/F6: recover y_m from nu' = w . y + beta and the other coordinates.
    let mut m5 = vec![0.0; d * d];
    for i in 0..d {
        if i == m {
            for l in 0..d {
                m5[i * d + l] = if l == m { 1.0 / w[m] } else { -w[l] / w[m] };
            }
        } else {
            m5[i * d + i] = 1.0;
        }
    }
    let mut b5 = vec![0.0; d];
    b5[m] = -beta / w[m];
    let f5 = DeepNet::affine(alpha, d, m5, b5)?;

    let mut net = f0.compose(&f1)?.compose(&f2)?.compose(&f3)?;
    if let Some(f4) = f4 {
        net = net.compose(&f4)?;
    }
    net.compose(&f5)
}

/// Library-level knobs for [`compile_flow`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompileConfig {
    pub seed: u64,
    /// Hidden units for the field fit; `None` walks a doubling ladder.
    pub neurons: Option<usize>,
    /// Fixed macro-step count; `None` doubles until the measured splitting
    /// error fits its share.
    pub n_override: Option<usize>,
    pub max_macro_steps: usize,
    pub audit_points: usize,
    /// Uniform time segments for fitting time-dependent fields.
    pub time_intervals: usize,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            neurons: None,
            n_override: None,
            max_macro_steps: 4096,
            audit_points: 2048,
            time_intervals: 1,
        }
    }
}

/// Audit statistics over a point sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub points: usize,
    pub max_err: f64,
    pub mean_err: f64,
    pub argmax_point: Vec<f64>,
}

/// The certificate produced alongside every compiled flow map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertReport {
    pub eps: f64,
    pub eps_parts: [f64; 3],
    pub achieved_delta: f64,
    pub bound_m: f64,
    pub bound_l: f64,
    pub c_bound: f64,
    pub required_steps_bound: Option<usize>,
    pub n: usize,
    pub neurons: usize,
    pub split_measured_err: f64,
    pub depth: usize,
    pub layers: usize,
    pub skipped_substeps: usize,
    pub audit: AuditReport,
    pub runtime_s: f64,
    pub seed: u64,
}

/// Compiles the time-`tau` flow map of `field` over `domain` into a width-d
/// leaky-ReLU network with a measured sup error of at most `eps` on an audit
/// grid, enforced before returning.
pub fn compile_flow(
    field: &FieldSpec,
    domain: &BoxDomain,
    tau: f64,
    eps: f64,
    alpha: f64,
    config: &CompileConfig,
) -> Result<(DeepNet, CertReport)> {
    let start = std::time::Instant::now();
    check_alpha(alpha)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if domain.dim() != field.dim {
        return Err(Error::InvalidInput("domain and field dimensions differ".into()));
    }
    let budget = Budget::thirds(eps)?;

    // Step 1: neural-ODE approximation of the field.
    let (bound_m, bound_l) = estimate_bounds(field, domain, tau)?;
    let omega = omega_tau(domain, bound_m, bound_l, tau);
    let delta_target = gronwall_delta(budget.eps_field, tau, bound_l);
    let (tanh_field, achieved_delta) =
        fit_with_ladder(field, &omega, tau, delta_target, config)?;
    let tanh_spec = FieldSpec::from_tanh(tanh_field.clone());

    // Step 2: splitting discretization, step count from measurement.
    let c_bound = estimate_c(&tanh_field, &omega);
    let required = required_steps(c_bound, bound_l.max(1e-6), tau, budget.eps_split).ok();
    let (n, split_measured_err) = choose_macro_steps(
        &tanh_field,
        &tanh_spec,
        domain,
        tau,
        budget.eps_split,
        config,
    )?;
    let schedule = make_schedule(&tanh_field, n)?;

    // Step 3: per-substep synthesis and composition.
    let synth_domain = omega.inflate(2.0 * eps);
    let total_steps = schedule.steps().len();
    let mut eps_sub = budget.eps_synth / total_steps as f64;

    for attempt in 0..2 {
        let (net, skipped) = synthesize_and_compose(&schedule, &synth_domain, eps_sub, alpha)?;
        let audit = audit_flow(&net, field, domain, tau, eps, config)?;
        if audit.max_err <= eps {
            let report = CertReport {
                eps,
                eps_parts: [budget.eps_field, budget.eps_split, budget.eps_synth],
                achieved_delta,
                bound_m,
                bound_l,
                c_bound,
                required_steps_bound: required,
                n,
                neurons: tanh_field.neurons(),
                split_measured_err,
                depth: net.depth(),
                layers: net.layers().len(),
                skipped_substeps: skipped,
                audit,
                runtime_s: start.elapsed().as_secs_f64(),
                seed: config.seed,
            };
            return Ok((net, report));
        }
        if attempt == 1 {
            return Err(Error::SynthesisFailure(format!(
                "flow audit error {} > eps {eps} after budget tightening",
                audit.max_err
            )));
        }
        eps_sub /= 4.0;
    }
    unreachable!()
}

fn fit_with_ladder(
    field: &FieldSpec,
    omega: &BoxDomain,
    tau: f64,
    delta_target: f64,
    config: &CompileConfig,
) -> Result<(TanhField, f64)> {
    let ladder: Vec<usize> = match config.neurons {
        Some(n) => vec![n],
        None => vec![8, 16, 32, 64, 128],
    };
    let mut last_err = None;
    for &n in &ladder {
        match fit_tanh_field(field, omega, tau, n, delta_target, config.seed, config.time_intervals)
        {
            Ok(done) => return Ok(done),
            Err(e @ Error::FitShortfall { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("ladder is nonempty"))
}

fn choose_macro_steps(
    tanh_field: &TanhField,
    tanh_spec: &FieldSpec,
    domain: &BoxDomain,
    tau: f64,
    eps_split: f64,
    config: &CompileConfig,
) -> Result<(usize, f64)> {
    let round_up = |n: usize| -> usize {
        let m = config.time_intervals.max(1);
        n.div_ceil(m) * m
    };
    let measure = |n: usize| -> Result<f64> {
        let schedule = make_schedule(tanh_field, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5011);
        let tol = (eps_split * 1e-3).min(1e-8);
        let mut worst = 0.0_f64;
        for _ in 0..48 {
            let x0 = domain.sample(&mut rng);
            let split_end = run_splitting(&x0, &schedule)?;
            let exact = reference_flow(tanh_spec, &x0, tau, tol)?;
            worst = worst.max(euclid_dist(split_end.last().unwrap(), &exact));
        }
        Ok(worst)
    };

    if let Some(n) = config.n_override {
        let n = round_up(n.max(1));
        let err = measure(n)?;
        return Ok((n, err));
    }
    let mut n = round_up(8.max((tau * 4.0).ceil() as usize));
    loop {
        let err = measure(n)?;
        if err <= eps_split {
            return Ok((n, err));
        }
        if n >= config.max_macro_steps {
            return Err(Error::ScheduleError(format!(
                "splitting error {err} still exceeds {eps_split} at n = {n}"
            )));
        }
        n = round_up((n * 2).min(config.max_macro_steps));
    }
}

fn synthesize_and_compose(
    schedule: &crate::split::SplitSchedule,
    synth_domain: &BoxDomain,
    eps_sub: f64,
    alpha: f64,
) -> Result<(DeepNet, usize)> {
    let d = synth_domain.dim();
    // Substeps so close to the identity that skipping them costs less than
    // their error budget are dropped outright.
    let steps = schedule.steps();
    let nets: Vec<Option<DeepNet>> = steps
        .par_iter()
        .map(|s| -> Result<Option<DeepNet>> {
            if (s.dt * s.amplitude).abs() <= eps_sub {
                return Ok(None);
            }
            synth_substep(s, synth_domain, eps_sub, alpha).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = nets.iter().filter(|n| n.is_none()).count();

    let per_macro = schedule.neurons() * schedule.dim();
    let dt = schedule.dt();
    let mut acc: Option<DeepNet> = None;
    for k in 0..schedule.macro_steps() {
        let mut macro_net: Option<DeepNet> = None;
        for piece in nets[k * per_macro..(k + 1) * per_macro].iter().flatten() {
            macro_net = Some(match macro_net {
                None => piece.clone(),
                Some(m) => m.compose(piece)?,
            });
        }
        let macro_net = match macro_net {
            Some(m) => m,
            None => identity_affine(alpha, d)?,
        };
        acc = Some(match acc {
            None => macro_net,
            Some(a) => {
                // The gadget's leading identity layer protects the previous
                // checkpoint from the junction merge.
                a.compose(&DeepNet::identity_gadget(alpha, d)?)?
                    .compose(&macro_net)?
            }
        });
        let acc_net = acc.as_mut().unwrap();
        let t = (k + 1) as f64 * dt;
        match acc_net.checkpoints().last() {
            Some(c) if c.layer == acc_net.layers().len() - 1 => {}
            _ => acc_net.push_checkpoint(t),
        }
    }
    Ok((acc.expect("at least one macro step"), skipped))
}

fn audit_flow(
    net: &DeepNet,
    field: &FieldSpec,
    domain: &BoxDomain,
    tau: f64,
    eps: f64,
    config: &CompileConfig,
) -> Result<AuditReport> {
    let points = config.audit_points.max(16);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA0D17);
    let samples: Vec<Vec<f64>> = (0..points).map(|_| domain.sample(&mut rng)).collect();
    let tol = (eps * 1e-4).min(1e-9);
    let errs: Vec<(f64, usize)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<(f64, usize)> {
            let reference = reference_flow(field, x, tau, tol)?;
            let got = net.eval(x)?;
            Ok((euclid_dist(&reference, &got), i))
        })
        .collect::<Result<_>>()?;
    let mut max_err = 0.0_f64;
    let mut argmax = 0usize;
    let mut sum = 0.0_f64;
    for &(e, i) in &errs {
        sum += e;
        if e > max_err {
            max_err = e;
            argmax = i;
        }
    }
    Ok(AuditReport {
        points,
        max_err,
        mean_err: sum / points as f64,
        argmax_point: samples[argmax].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_two_unit_stages_split_evenly() {
        let chain = StageChain {
            stages: vec![Stage::approx(1.0), Stage::approx(1.0)],
        };
        let d = budget_composition(&chain, 0.1).unwrap();
        assert!((d[0] - 0.05).abs() < 1e-15);
        assert!((d[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn budget_single_stage_gets_everything() {
        let chain = StageChain {
            stages: vec![Stage::approx(1.0)],
        };
        assert_eq!(budget_composition(&chain, 0.2).unwrap(), vec![0.2]);
    }

    #[test]
    fn budget_downstream_affine_shrinks_upstream() {
        let chain = StageChain {
            stages: vec![Stage::approx(1.0), Stage::exact_affine(3.0)],
        };
        let d = budget_composition(&chain, 0.3).unwrap();
        assert!((d[0] - 0.1).abs() < 1e-15, "delta {d:?}");
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn budget_contributions_telescope_to_eps() {
        for m in 1..6 {
            let chain = StageChain {
                stages: (0..m).map(|_| Stage::approx(1.0)).collect(),
            };
            let d = budget_composition(&chain, 1.0).unwrap();
            let total: f64 = d.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "m={m} total {total}");
        }
    }

    #[test]
    fn budget_respects_domain_slack() {
        let chain = StageChain {
            stages: vec![
                Stage::approx(1.0),
                Stage::approx(1.0).with_slack(1e-4),
            ],
        };
        let d = budget_composition(&chain, 1.0).unwrap();
        assert!(d[0] <= 1e-4, "upstream delta {d:?} must respect slack");
    }

    fn unit_box(d: usize) -> BoxDomain {
        BoxDomain::centered_cube(d, 1.0).unwrap()
    }

    fn sample_substep(weights: Vec<f64>, coord: usize, a: f64, dt: f64, bias: f64) -> SubStep {
        SubStep {
            k: 0,
            neuron: 0,
            coord,
            dt,
            amplitude: a,
            weights,
            bias,
        }
    }

    #[test]
    fn synth_trivial_branch_certifies() {
        let s = sample_substep(vec![0.0, 0.8], 1, 1.0, 0.05, 0.1);
        let net = synth_substep(&s, &unit_box(2), 0.01, 0.5).unwrap();
        let err = audit_substep(&net, &s, &unit_box(2), 1000).unwrap();
        assert!(err <= 0.01, "audit {err}");
    }

    #[test]
    fn synth_general_branch_certifies() {
        let s = sample_substep(vec![1.0, 1.0], 1, 1.0, 0.05, 0.0);
        let dom = unit_box(2);
        let net = synth_substep(&s, &dom, 0.01, 0.5).unwrap();
        let err = audit_substep(&net, &s, &dom, 1000).unwrap();
        assert!(err <= 0.01, "audit {err}");
        // Homeomorphism: all layers invertible.
        for det in net.layer_determinants() {
            assert!(det.abs() > 1e-12);
        }
        let y = net.eval(&[0.3, -0.4]).unwrap();
        let back = net.invert(&y).unwrap();
        assert!(euclid_dist(&back, &[0.3, -0.4]) <= 1e-9);
    }

    #[test]
    fn synth_rejects_large_steps() {
        let s = sample_substep(vec![1.0, 3.0], 0, 1.0, 0.5, 0.0);
        assert!(matches!(
            synth_substep(&s, &unit_box(2), 0.01, 0.5),
            Err(Error::StepTooLarge(_))
        ));
    }

    #[test]
    fn synth_exact_cases_have_no_depth() {
        // Zero amplitude: identity.
        let s = sample_substep(vec![1.0, 1.0], 0, 0.0, 0.1, 0.3);
        let net = synth_substep(&s, &unit_box(2), 1e-9, 0.5).unwrap();
        assert_eq!(net.depth(), 0);
        // Zero weights: exact constant shift.
        let s = sample_substep(vec![0.0, 0.0], 0, 2.0, 0.1, 0.3);
        let net = synth_substep(&s, &unit_box(2), 1e-12, 0.5).unwrap();
        assert_eq!(net.depth(), 0);
        let y = net.eval(&[0.0, 0.0]).unwrap();
        assert!((y[0] - 0.2 * 0.3_f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn synth_protected_coordinates_exact() {
        let s = sample_substep(vec![0.7, -0.5, 0.2], 1, 0.8, 0.05, 0.1);
        let dom = unit_box(3);
        let net = synth_substep(&s, &dom, 0.01, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x = dom.sample(&mut rng);
            let y = net.eval(&x).unwrap();
            for l in [0usize, 2] {
                assert!(
                    (y[l] - x[l]).abs() <= 1e-10 * x[l].abs().max(1.0),
                    "protected coordinate {l} moved"
                );
            }
        }
    }

    #[test]
    fn compile_flow_decay_small_scale() {
        let field = FieldSpec::preset("decay1d", 1.0).unwrap();
        let dom = BoxDomain::new(&[(-1.0, 1.0)]).unwrap();
        let config = CompileConfig {
            audit_points: 256,
            ..CompileConfig::default()
        };
        let (net, report) = compile_flow(&field, &dom, 1.0, 0.2, 0.5, &config).unwrap();
        assert!(report.audit.max_err <= 0.2);
        let decay = (-1.0_f64).exp();
        for x in [-0.9, 0.0, 0.7] {
            let y = net.eval(&[x]).unwrap();
            assert!((y[0] - decay * x).abs() <= 0.2, "net({x}) = {}", y[0]);
        }
        assert!(!net.checkpoints().is_empty());
        assert_eq!(
            net.checkpoints().last().unwrap().layer,
            net.layers().len() - 1
        );
    }

    #[test]
    fn compile_flow_rejects_bad_eps() {
        let field = FieldSpec::preset("decay1d", 1.0).unwrap();
        let dom = BoxDomain::new(&[(-1.0, 1.0)]).unwrap();
        assert!(matches!(
            compile_flow(&field, &dom, 1.0, 0.0, 0.5, &CompileConfig::default()),
            Err(Error::InvalidParameter(_))
        ));
    }
}
