//! Coordinate-wise Lie splitting of a tanh-network field.
//!
//! Each macro step applies `N * d` substeps in lexicographic (neuron,
//! coordinate) order; a substep updates exactly one coordinate by
//! `dt * a_ij * tanh(w_i . x + beta_i)`. The scheme is first-order accurate
//! and is the mid-level oracle the network synthesizer targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ode::{euclid_norm, BoxDomain, TanhField};

/// One split substep with parameters frozen at its macro-step time.
#[derive(Debug, Clone, PartialEq)]
pub struct SubStep {
    /// Macro step index, 0-based.
    pub k: usize,
    /// Neuron index, 0-based.
    pub neuron: usize,
    /// Updated coordinate, 0-based.
    pub coord: usize,
    pub dt: f64,
    /// `a_ij`: the (coord, neuron) entry of the outer matrix.
    pub amplitude: f64,
    /// `w_i`: the neuron's inner weight row.
    pub weights: Vec<f64>,
    /// `beta_i`.
    pub bias: f64,
}

impl SubStep {
    /// The scalar summand `v_ij(x) = a_ij * tanh(w_i . x + beta_i)`.
    pub fn field_component(&self, x: &[f64]) -> f64 {
        let u: f64 = self
            .weights
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias;
        self.amplitude * u.tanh()
    }
}

/// The full ordered substep sequence covering `n` macro steps of size
/// `dt = tau / n`.
#[derive(Debug, Clone)]
pub struct SplitSchedule {
    dim: usize,
    neurons: usize,
    macro_steps: usize,
    dt: f64,
    steps: Vec<SubStep>,
}

impl SplitSchedule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn macro_steps(&self) -> usize {
        self.macro_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> &[SubStep] {
        &self.steps
    }

    /// Substeps belonging to macro step `k`.
    pub fn macro_step(&self, k: usize) -> &[SubStep] {
        let per = self.neurons * self.dim;
        &self.steps[k * per..(k + 1) * per]
    }
}

/// Freezes the field's parameters at every macro-step time into a substep
/// schedule. The field's time knots must align with multiples of `tau / n`.
pub fn make_schedule(field: &TanhField, n: usize) -> Result<SplitSchedule> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one macro step".into()));
    }
    let tau = field.tau();
    let dt = tau / n as f64;
    for &knot in field.knots() {
        let ratio = knot / dt;
        if (ratio - ratio.round()).abs() > 1e-9 * n as f64 {
            return Err(Error::ScheduleError(format!(
                "field knot {knot} is not a multiple of dt = {dt}"
            )));
        }
    }
    let (d, nn) = (field.dim(), field.neurons());
    let mut steps = Vec::with_capacity(n * nn * d);
    for k in 0..n {
        let t_k = k as f64 * dt;
        let seg = &field.segments()[field.segment_index(t_k)];
        for i in 0..nn {
            let weights: Vec<f64> = seg.inner[i * d..(i + 1) * d].to_vec();
            for j in 0..d {
                steps.push(SubStep {
                    k,
                    neuron: i,
                    coord: j,
                    dt,
                    amplitude: seg.outer[j * nn + i],
                    weights: weights.clone(),
                    bias: seg.bias[i],
                });
            }
        }
    }
    Ok(SplitSchedule {
        dim: d,
        neurons: nn,
        macro_steps: n,
        dt,
        steps,
    })
}

/// Applies one substep: coordinate `j` moves by `dt * v_ij(x)`, all other
/// coordinates are returned bitwise unchanged.
pub fn apply_substep(x: &[f64], s: &SubStep) -> Vec<f64> {
    let mut y = x.to_vec();
    y[s.coord] += s.dt * s.field_component(x);
    y
}

/// Runs the whole schedule from `x0`, returning all `n + 1` macro-step
/// states.
pub fn run_splitting(x0: &[f64], schedule: &SplitSchedule) -> Result<Vec<Vec<f64>>> {
    const LIMIT: f64 = 1e12;
    let mut states = Vec::with_capacity(schedule.macro_steps + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    for k in 0..schedule.macro_steps {
        for s in schedule.macro_step(k) {
            x = apply_substep(&x, s);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > LIMIT) {
            return Err(Error::DivergenceError {
                step: k,
                limit: LIMIT,
            });
        }
        states.push(x.clone());
    }
    Ok(states)
}

/// The sufficient macro-step count `ceil(2 c^2 tau e^{L tau} / (L eps))` from
/// the first-order convergence bound. Very conservative in practice; step
/// selection should trust measured errors and report this alongside.
pub fn required_steps(c: f64, l: f64, tau: f64, eps: f64) -> Result<usize> {
    if !(c > 0.0 && l > 0.0 && tau > 0.0 && eps > 0.0) {
        return Err(Error::InvalidParameter(
            "required_steps needs positive c, L, tau, eps".into(),
        ));
    }
    let raw = 2.0 * c * c * tau * (l * tau).exp() / (l * eps);
    if raw > 1e15 {
        return Err(Error::InvalidParameter(format!(
            "required step bound overflows: {raw:e}"
        )));
    }
    Ok(raw.ceil() as usize)
}

/// Sampled bound `c >= max(1, |v_ij|, |grad v_ij|, |v|, |grad v|)` over the
/// domain, used to evaluate the convergence-lemma constant.
pub fn estimate_c(field: &TanhField, domain: &BoxDomain) -> f64 {
    let (d, n) = (field.dim(), field.neurons());
    let mut c = 1.0_f64;
    for seg in field.segments() {
        for i in 0..n {
            let w_norm = euclid_norm(&seg.inner[i * d..(i + 1) * d]);
            for j in 0..d {
                let a = seg.outer[j * n + i].abs();
                c = c.max(a).max(a * w_norm);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let times = field.knots().to_vec();
    for _ in 0..256 {
        let x = domain.sample(&mut rng);
        for &t in &times {
            c = c.max(euclid_norm(&field.eval(&x, t)));
            // Gradient of the full field: A diag(sech^2) W; column-sum bound
            // via finite differences is enough at sampling accuracy.
            let h = 1e-5;
            let mut frob = 0.0;
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let vp = field.eval(&xp, t);
                let vm = field.eval(&xm, t);
                for i in 0..d {
                    let g = (vp[i] - vm[i]) / (2.0 * h);
                    frob += g * g;
                }
            }
            c = c.max(frob.sqrt());
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{reference_flow, tanh_demo_field, FieldSpec, TanhParams};

    fn one_neuron_field(a: f64, w: f64, b: f64, tau: f64) -> TanhField {
        TanhField::new(
            1,
            1,
            vec![0.0, tau],
            vec![TanhParams {
                outer: vec![a],
                inner: vec![w],
                bias: vec![b],
            }],
        )
        .unwrap()
    }

    #[test]
    fn schedule_counts_and_order() {
        let f = one_neuron_field(1.0, 1.0, 0.0, 1.0);
        let s = make_schedule(&f, 3).unwrap();
        assert_eq!(s.steps().len(), 3);

        let demo = tanh_demo_field(1.0); // d = 2, N = 4
        let s = make_schedule(&demo, 5).unwrap();
        assert_eq!(s.steps().len(), 5 * 4 * 2);
        // Lexicographic (neuron, coord) sweep within each macro step.
        let order: Vec<(usize, usize)> = s.steps()[..4]
            .iter()
            .map(|st| (st.neuron, st.coord))
            .collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn schedule_uses_interval_parameters() {
        // Two time segments with different amplitudes.
        let seg = |a: f64| TanhParams {
            outer: vec![a],
            inner: vec![1.0],
            bias: vec![0.0],
        };
        let f = TanhField::new(1, 1, vec![0.0, 0.5, 1.0], vec![seg(1.0), seg(2.0)]).unwrap();
        let s = make_schedule(&f, 4).unwrap();
        let amps: Vec<f64> = s.steps().iter().map(|st| st.amplitude).collect();
        assert_eq!(amps, vec![1.0, 1.0, 2.0, 2.0]);
        // Misaligned knots are rejected.
        assert!(matches!(
            make_schedule(&f, 3),
            Err(Error::ScheduleError(_))
        ));
    }

    #[test]
    fn substep_examples() {
        let s = SubStep {
            k: 0,
            neuron: 0,
            coord: 0,
            dt: 0.1,
            amplitude: 1.0,
            weights: vec![1.0, 0.0],
            bias: 0.0,
        };
        // tanh(0) = 0 leaves the origin fixed.
        assert_eq!(apply_substep(&[0.0, 0.0], &s), vec![0.0, 0.0]);
        // Frozen: 1 + 0.1 * tanh(1).
        let y = apply_substep(&[1.0, 0.0], &s);
        assert!((y[0] - 1.0761594155955764).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn substep_locality_is_bitwise() {
        let s = SubStep {
            k: 0,
            neuron: 0,
            coord: 1,
            dt: 0.25,
            amplitude: -0.7,
            weights: vec![0.3, 0.9],
            bias: 0.1,
        };
        let x = [1.234567890123456, -0.9876543210987654];
        let y = apply_substep(&x, &s);
        assert_eq!(y[0].to_bits(), x[0].to_bits(), "untouched coordinate must be bitwise equal");
        assert_ne!(y[1], x[1]);
    }

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let f = one_neuron_field(0.0, 1.0, 0.3, 1.0);
        let s = make_schedule(&f, 8).unwrap();
        let traj = run_splitting(&[0.5], &s).unwrap();
        assert_eq!(traj.len(), 9);
        assert!(traj.iter().all(|x| x[0] == 0.5));
    }

    #[test]
    fn one_neuron_splitting_is_forward_euler() {
        let f = one_neuron_field(-1.2, 0.8, 0.1, 1.0);
        let s = make_schedule(&f, 32).unwrap();
        let traj = run_splitting(&[0.7], &s).unwrap();
        // Independent Euler loop.
        let mut x: f64 = 0.7;
        let dt = 1.0 / 32.0;
        for _ in 0..32 {
            x += dt * (-1.2) * (0.8 * x + 0.1).tanh();
        }
        assert_eq!(traj.last().unwrap()[0], x, "d = N = 1 splitting is plain Euler");
    }

    #[test]
    fn richardson_halving_shows_first_order() {
        let field = one_neuron_field(-1.0, 1.0, 0.0, 1.0);
        let spec = FieldSpec::from_tanh(field.clone());
        let exact = reference_flow(&spec, &[0.9], 1.0, 1e-12).unwrap();
        let err_at = |n: usize| {
            let s = make_schedule(&field, n).unwrap();
            let t = run_splitting(&[0.9], &s).unwrap();
            (t.last().unwrap()[0] - exact[0]).abs()
        };
        let (e1, e2) = (err_at(64), err_at(128));
        let ratio = e1 / e2;
        assert!(
            (1.5..=2.5).contains(&ratio),
            "halving dt should roughly halve the error; ratio {ratio}"
        );
    }

    #[test]
    fn substep_sum_reassembles_field() {
        let demo = tanh_demo_field(1.0);
        let s = make_schedule(&demo, 4).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        use rand::Rng;
        for k in 0..4 {
            let t_k = k as f64 * s.dt();
            for _ in 0..20 {
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut total = vec![0.0; 2];
                for st in s.macro_step(k) {
                    total[st.coord] += st.field_component(&x);
                }
                let v = demo.eval(&x, t_k);
                for (a, b) in total.iter().zip(&v) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn required_steps_examples() {
        // ceil(2 e / 0.1) = 55.
        assert_eq!(required_steps(1.0, 1.0, 1.0, 0.1).unwrap(), 55);
        // Doubling eps halves the count up to ceiling.
        let n1 = required_steps(1.0, 1.0, 1.0, 0.1).unwrap() as f64;
        let n2 = required_steps(1.0, 1.0, 1.0, 0.2).unwrap() as f64;
        assert!((n1 / n2 - 2.0).abs() < 0.1, "ratio {}", n1 / n2);
        // tau -> 2 tau with L = 1 grows by 2e.
        let a = required_steps(1.0, 1.0, 1.0, 0.01).unwrap() as f64;
        let b = required_steps(1.0, 1.0, 2.0, 0.01).unwrap() as f64;
        let growth = b / a;
        let expected = 2.0 * std::f64::consts::E;
        assert!((growth - expected).abs() / expected < 0.01, "growth {growth}");
        assert!(required_steps(0.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn divergence_is_detected() {
        // Huge amplitude with dt = tau/1 blows past the limit.
        let f = one_neuron_field(1e13, 1.0, 5.0, 1.0);
        let s = make_schedule(&f, 1).unwrap();
        assert!(matches!(
            run_splitting(&[1.0], &s),
            Err(Error::DivergenceError { .. })
        ));
    }

    #[test]
    fn estimate_c_dominates_samples() {
        let demo = tanh_demo_field(1.0);
        let dom = BoxDomain::centered_cube(2, 1.0).unwrap();
        let c = estimate_c(&demo, &dom);
        assert!(c >= 1.0);
        // c dominates the sampled field norm.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = dom.sample(&mut rng);
            assert!(euclid_norm(&demo.eval(&x, 0.5)) <= c + 1e-9);
        }
    }
}
