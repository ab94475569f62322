//! Width-one leaky-ReLU networks.
//!
//! A [`ScalarNet`] is the layer sequence `f_0(x) = w_0 x + b_0`,
//! `f_k(x) = w_k sigma_alpha(f_{k-1}(x)) + b_k`, evaluated at the final
//! pre-activation. These networks realize exactly the alpha-power PL
//! functions of [`crate::pl`], and both directions of that equivalence are
//! implemented here: [`ScalarNet::extract_pl`] and [`from_alpha_pl`].

use crate::error::{Error, Result};
use crate::pl::{check_alpha, classify_alpha_power, lrelu, AlphaPl, PlFunc, PL_TOL};

/// Width-one leaky-ReLU network.
///
/// All weights are nonzero unless the net carries the explicit constant flag;
/// a nonzero-weight net is strictly monotone.
#[derive(Debug, Clone)]
pub struct ScalarNet {
    alpha: f64,
    layers: Vec<(f64, f64)>,
    constant: Option<f64>,
}

impl ScalarNet {
    pub fn new(alpha: f64, layers: Vec<(f64, f64)>) -> Result<Self> {
        check_alpha(alpha)?;
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a net needs at least one layer".into()));
        }
        for &(w, b) in &layers {
            if !w.is_finite() || !b.is_finite() {
                return Err(Error::InvalidParameter("non-finite layer parameter".into()));
            }
            if w == 0.0 {
                return Err(Error::InvalidParameter(
                    "zero weight collapses the net; use ScalarNet::constant".into(),
                ));
            }
        }
        Ok(Self {
            alpha,
            layers,
            constant: None,
        })
    }

    /// Net evaluating to `value` everywhere.
    pub fn constant(alpha: f64, value: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            layers: vec![(0.0, value)],
            constant: Some(value),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn layers(&self) -> &[(f64, f64)] {
        &self.layers
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// Number of activation layers (depth `L`).
    pub fn activations(&self) -> usize {
        self.layers.len() - 1
    }

    /// Final pre-activation value `f_L(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        if let Some(v) = self.constant {
            return v;
        }
        let (w0, b0) = self.layers[0];
        let mut f = w0 * x + b0;
        for &(w, b) in &self.layers[1..] {
            f = w * lrelu(f, self.alpha) + b;
        }
        f
    }

    /// Exact piecewise-linear representation, built by iterating
    /// `compose_leaky` and `affine_post`. Has at most `L + 1` pieces.
    pub fn extract_pl(&self) -> PlFunc {
        if let Some(v) = self.constant {
            return PlFunc::constant(v);
        }
        let (w0, b0) = self.layers[0];
        let mut f = PlFunc::affine(w0, b0);
        for &(w, b) in &self.layers[1..] {
            f = f
                .compose_leaky(self.alpha)
                .expect("nonzero weights keep the function strictly monotone")
                .affine_post(w, b);
        }
        f
    }

    /// The alpha-power classification of [`ScalarNet::extract_pl`];
    /// `None` for constant nets.
    pub fn extract_alpha_pl(&self) -> Option<AlphaPl> {
        if self.is_constant() {
            return None;
        }
        classify_alpha_power(&self.extract_pl(), self.alpha, 1e-9)
    }

    /// Composition `next . self`, merging `next`'s leading affine layer into
    /// this net's trailing one.
    pub fn then(&self, next: &ScalarNet) -> Result<ScalarNet> {
        if (self.alpha - next.alpha).abs() > PL_TOL {
            return Err(Error::IncompatibleNets(format!(
                "alpha mismatch: {} vs {}",
                self.alpha, next.alpha
            )));
        }
        if let Some(v) = next.constant {
            return ScalarNet::constant(self.alpha, v);
        }
        if let Some(v) = self.constant {
            return ScalarNet::constant(self.alpha, next.eval(v));
        }
        let mut layers = self.layers.clone();
        let (w_last, b_last) = layers.pop().expect("nets are nonempty");
        let (nw0, nb0) = next.layers[0];
        layers.push((nw0 * w_last, nw0 * b_last + nb0));
        layers.extend_from_slice(&next.layers[1..]);
        ScalarNet::new(self.alpha, layers)
    }

    /// Post-composition with the affine map `w*y + b`.
    fn post_affine(&self, w: f64, b: f64) -> Result<ScalarNet> {
        let affine = ScalarNet::new(self.alpha, vec![(w, b)])?;
        self.then(&affine)
    }
}

/// Builds the `|p|`-activation net for the leaky ReLU with negative-side
/// slope `alpha^p`.
///
/// For `p > 0` this is `sigma_{alpha^p} = sigma_alpha . ... . sigma_alpha`;
/// for `p < 0` it is the functional inverse `min(alpha^p x, x)`, realized as
/// `-alpha^p sigma_alpha(...sigma_alpha(-x))`. `p = 0` is rejected: the
/// identity needs no activation.
pub fn expand_power(p: i32, alpha: f64) -> Result<ScalarNet> {
    check_alpha(alpha)?;
    if p == 0 {
        return Err(Error::InvalidParameter(
            "p = 0 is the identity; no power gadget needed".into(),
        ));
    }
    let q = p.unsigned_abs() as usize;
    let mut layers = Vec::with_capacity(q + 1);
    if p > 0 {
        layers.resize(q + 1, (1.0, 0.0));
    } else {
        layers.push((-1.0, 0.0));
        layers.resize(q, (1.0, 0.0));
        layers.push((-alpha.powi(p), 0.0));
    }
    ScalarNet::new(alpha, layers)
}

/// Represents a strictly monotone alpha-power PL function exactly as a
/// width-one net.
///
/// Pieces are fixed right to left: each breakpoint costs one power gadget of
/// depth `|e_left - e_right|`, so the total depth is the sum of consecutive
/// exponent differences.
pub fn from_alpha_pl(g: &AlphaPl) -> Result<ScalarNet> {
    let base = g.base();
    if !base.is_strictly_monotone() {
        return Err(Error::UnsupportedShape(
            "from_alpha_pl requires a strictly monotone function".into(),
        ));
    }
    let alpha = g.alpha();
    if g.c() < 0.0 {
        // Compile the increasing mirror and negate the output.
        let neg = AlphaPl::new(
            base.affine_post(-1.0, 0.0),
            alpha,
            -g.c(),
            g.exponents().to_vec(),
        )?;
        return from_alpha_pl(&neg)?.post_affine(-1.0, 0.0);
    }

    let bps = base.breakpoints();
    let slopes = base.slopes();
    let exps = g.exponents();
    if bps.is_empty() {
        return ScalarNet::new(alpha, vec![(slopes[0], base.eval(0.0))]);
    }

    let n = bps.len();
    // Affine start matching g on the rightmost piece.
    let x_last = bps[n - 1];
    let v_last = base.node_values()[n - 1];
    let s_last = slopes[n];
    let mut net = ScalarNet::new(alpha, vec![(s_last, v_last - s_last * x_last)])?;

    for k in (0..n).rev() {
        let q = exps[k] - exps[k + 1];
        if q == 0 {
            continue;
        }
        let v = base.node_values()[k];
        // f <- rho_q(f - g(x_k)) + g(x_k): right of x_k unchanged, left
        // slope multiplied by alpha^q.
        net = net.post_affine(1.0, -v)?;
        net = net.then(&expand_power(q, alpha)?)?;
        net = net.post_affine(1.0, v)?;
    }
    Ok(net)
}

/// Exact number of linear pieces realized by a width-one ReLU network given
/// as its layer list. Always at most three.
///
/// # Panics
///
/// Panics when `layers` is empty.
pub fn relu_piece_count(layers: &[(f64, f64)]) -> usize {
    assert!(!layers.is_empty(), "a net needs at least one layer");
    let (w0, b0) = layers[0];
    let mut f = PlFunc::affine(w0, b0);
    for &(w, b) in &layers[1..] {
        f = f
            .compose_relu()
            .expect("width-one ReLU nets stay weakly monotone")
            .affine_post(w, b);
    }
    f.canonicalized().piece_count()
}
