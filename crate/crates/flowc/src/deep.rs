//! Width-d leaky-ReLU networks.
//!
//! A [`DeepNet`] stores layers `(W_k, b_k)` realizing `f_0 = W_0 x + b_0`,
//! `f_k = W_k sigma_alpha(f_{k-1}) + b_k`, with the final pre-activation as
//! output. With every `W_k` nonsingular the realized map is a homeomorphism
//! of R^d, which is the property that makes these networks candidates for
//! flow maps in the first place: [`DeepNet::invert`] walks the layers
//! backwards through exact linear solves and the leaky-ReLU inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pl::{check_alpha, lrelu, PL_TOL};
use crate::scalar::ScalarNet;

/// One affine layer: a `d x d` row-major matrix and a shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim], &vec![0.0; dim])
    }

    pub fn diagonal(diag: &[f64], shift: &[f64]) -> Self {
        let d = diag.len();
        let mut w = vec![0.0; d * d];
        for (i, &v) in diag.iter().enumerate() {
            w[i * d + i] = v;
        }
        Self {
            w,
            b: shift.to_vec(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.w.len() != dim * dim || self.b.len() != dim {
            return Err(Error::InvalidInput(format!(
                "layer shape mismatch for dim {dim}: {} weights, {} biases",
                self.w.len(),
                self.b.len()
            )));
        }
        if self.w.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(())
    }

    pub fn determinant(&self, dim: usize) -> f64 {
        DMatrix::from_row_slice(dim, dim, &self.w).determinant()
    }
}

/// A hidden state marked as approximating the trajectory sample at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer: usize,
    pub t: f64,
}

/// Width-d leaky-ReLU network with pre-activation output.
#[derive(Debug, Clone)]
pub struct DeepNet {
    alpha: f64,
    dim: usize,
    layers: Vec<Layer>,
    checkpoints: Vec<Checkpoint>,
}

impl DeepNet {
    pub fn new(alpha: f64, dim: usize, layers: Vec<Layer>) -> Result<Self> {
        check_alpha(alpha)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a net needs at least one layer".into()));
        }
        for layer in &layers {
            layer.check(dim)?;
        }
        Ok(Self {
            alpha,
            dim,
            layers,
            checkpoints: Vec::new(),
        })
    }

    /// Single-affine-layer net computing `Mx + b` exactly. `matrix` is
    /// row-major `d x d`.
    pub fn affine(alpha: f64, dim: usize, matrix: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        Self::new(alpha, dim, vec![Layer { w: matrix, b: shift }])
    }

    /// The exact identity passed through two activation layers:
    /// `x = -(1/alpha) sigma(-sigma(x))` applied coordinatewise.
    pub fn identity_gadget(alpha: f64, dim: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let neg = Layer::diagonal(&vec![-1.0; dim], &vec![0.0; dim]);
        let unneg = Layer::diagonal(&vec![-1.0 / alpha; dim], &vec![0.0; dim]);
        Self::new(alpha, dim, vec![Layer::identity(dim), neg, unneg])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of activation layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    /// Marks the current final layer as approximating the state at time `t`.
    pub fn push_checkpoint(&mut self, t: f64) {
        self.checkpoints.push(Checkpoint {
            layer: self.layers.len() - 1,
            t,
        });
    }

    /// Final pre-activation output.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "input has dimension {}, net expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.forward(x, self.layers.len() - 1))
    }

    /// Pre-activation state at layer `layer` (0-based).
    pub fn eval_to_layer(&self, x: &[f64], layer: usize) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        if layer >= self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "layer {layer} out of range (net has {})",
                self.layers.len()
            )));
        }
        Ok(self.forward(x, layer))
    }

    fn forward(&self, x: &[f64], upto: usize) -> Vec<f64> {
        let d = self.dim;
        let mut state = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        affine_apply(d, &self.layers[0], x, &mut state);
        for layer in &self.layers[1..=upto] {
            for (s, v) in scratch.iter_mut().zip(&state) {
                *s = lrelu(*v, self.alpha);
            }
            affine_apply(d, layer, &scratch, &mut state);
        }
        state
    }

    /// Composition `second . self`. The junction merges `second`'s leading
    /// affine layer into `self`'s trailing one, so activation counts add.
    /// Checkpoints are concatenated with `second`'s layer indices offset.
    pub fn compose(&self, second: &DeepNet) -> Result<DeepNet> {
        if (self.alpha - second.alpha).abs() > PL_TOL {
            return Err(Error::IncompatibleNets(format!(
                "alpha mismatch: {} vs {}",
                self.alpha, second.alpha
            )));
        }
        if self.dim != second.dim {
            return Err(Error::IncompatibleNets(format!(
                "dimension mismatch: {} vs {}",
                self.dim, second.dim
            )));
        }
        let d = self.dim;
        let last = self.layers.last().unwrap();
        let lead = &second.layers[0];
        let merged = Layer {
            w: mat_mul(d, &lead.w, &last.w),
            b: {
                let mut b = vec![0.0; d];
                affine_apply(d, lead, &last.b, &mut b);
                b
            },
        };
        let mut layers = Vec::with_capacity(self.layers.len() + second.layers.len() - 1);
        layers.extend_from_slice(&self.layers[..self.layers.len() - 1]);
        layers.push(merged);
        layers.extend_from_slice(&second.layers[1..]);

        let offset = self.layers.len() - 1;
        let mut checkpoints = self.checkpoints.clone();
        checkpoints.extend(
            second
                .checkpoints
                .iter()
                .map(|c| Checkpoint { layer: c.layer + offset, t: c.t }),
        );
        let mut net = DeepNet::new(self.alpha, d, layers)?;
        net.checkpoints = checkpoints;
        Ok(net)
    }

    /// Lifts a width-one net onto coordinate `coord`, with the exact identity
    /// on every other coordinate.
    ///
    /// Each scalar activation becomes two layers of the lifted net: the
    /// active coordinate realizes `sigma_{s.alpha}` as two activations of the
    /// composite's leak slope `sqrt(s.alpha)`, while protected coordinates run
    /// the two-layer identity gadget in the same slots. All matrices are
    /// diagonal up to sign, hence nonsingular.
    pub fn lift_scalar(s: &ScalarNet, coord: usize, dim: usize) -> Result<DeepNet> {
        if coord >= dim {
            return Err(Error::InvalidInput(format!(
                "coordinate {coord} out of range for dimension {dim}"
            )));
        }
        if s.is_constant() {
            return Err(Error::UnsupportedShape(
                "cannot lift a constant net; the lifted map would not be injective".into(),
            ));
        }
        let alpha = s.alpha().sqrt();
        let sl = s.layers();
        let mut layers = Vec::with_capacity(1 + 2 * (sl.len() - 1));
        let (w0, b0) = sl[0];
        let mut diag0 = vec![1.0; dim];
        let mut shift0 = vec![0.0; dim];
        diag0[coord] = w0;
        shift0[coord] = b0;
        layers.push(Layer::diagonal(&diag0, &shift0));
        for &(w, b) in &sl[1..] {
            // First slot: genuine half-activation on `coord`, gadget first
            // half (negation) elsewhere.
            let mut diag_a = vec![-1.0; dim];
            diag_a[coord] = 1.0;
            layers.push(Layer::diagonal(&diag_a, &vec![0.0; dim]));
            // Second slot: completes sigma_{alpha^2} on `coord` with the
            // scalar layer's affine, and the gadget on the rest.
            let mut diag_b = vec![-1.0 / alpha; dim];
            let mut shift_b = vec![0.0; dim];
            diag_b[coord] = w;
            shift_b[coord] = b;
            layers.push(Layer::diagonal(&diag_b, &shift_b));
        }
        DeepNet::new(alpha, dim, layers)
    }

    /// Inverse image of `y`, walking layers backwards with linear solves and
    /// the elementwise leaky-ReLU inverse.
    pub fn invert(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        let d = self.dim;
        let mut state = DVector::from_row_slice(y);
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let m = DMatrix::from_row_slice(d, d, &layer.w);
            let rhs = &state - DVector::from_row_slice(&layer.b);
            state = m.lu().solve(&rhs).ok_or_else(|| {
                Error::NotInvertible(format!("layer {idx} has a singular weight matrix"))
            })?;
            if idx > 0 {
                // state currently holds sigma(f_{k-1}); invert the activation.
                for v in state.iter_mut() {
                    if *v < 0.0 {
                        *v /= self.alpha;
                    }
                }
            }
        }
        Ok(state.iter().copied().collect())
    }

    /// Determinant of every layer matrix.
    pub fn layer_determinants(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.determinant(self.dim))
            .collect()
    }

    /// Serializes to the versioned network JSON document.
    pub fn to_json(&self, meta: &NetMeta) -> String {
        let doc = wire::NetFile {
            format_version: 1,
            alpha: self.alpha,
            dim: self.dim,
            layers: self
                .layers
                .iter()
                .map(|l| wire::Layer {
                    w: l.w.clone(),
                    b: l.b.clone(),
                })
                .collect(),
            checkpoints: self.checkpoints.clone(),
            meta: wire::Meta {
                depth: self.depth(),
                created_by: meta.created_by.clone(),
                task_hash: meta.task_hash.clone(),
            },
        };
        serde_json::to_string(&doc).expect("net serialization cannot fail")
    }

    /// Parses and validates the versioned network JSON document.
    pub fn from_json(text: &str) -> Result<(DeepNet, NetMeta)> {
        let doc: wire::NetFile =
            serde_json::from_str(text).map_err(|e| Error::ParseError(e.to_string()))?;
        if doc.format_version != 1 {
            return Err(Error::ParseError(format!(
                "unknown format version {}",
                doc.format_version
            )));
        }
        let layers: Vec<Layer> = doc
            .layers
            .into_iter()
            .map(|l| Layer { w: l.w, b: l.b })
            .collect();
        let mut net = DeepNet::new(doc.alpha, doc.dim, layers)
            .map_err(|e| Error::ParseError(e.to_string()))?;
        let mut prev: Option<usize> = None;
        for c in &doc.checkpoints {
            if c.layer >= net.layers.len() || prev.is_some_and(|p| c.layer <= p) {
                return Err(Error::ParseError(format!(
                    "checkpoint layers must strictly increase and stay in range; got {}",
                    c.layer
                )));
            }
            prev = Some(c.layer);
        }
        net.checkpoints = doc.checkpoints;
        Ok((
            net,
            NetMeta {
                created_by: doc.meta.created_by,
                task_hash: doc.meta.task_hash,
            },
        ))
    }
}

/// Provenance fields stored in the net file.
#[derive(Debug, Clone, Default)]
pub struct NetMeta {
    pub created_by: String,
    pub task_hash: String,
}

mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    pub struct NetFile {
        pub format_version: u32,
        pub alpha: f64,
        pub dim: usize,
        pub layers: Vec<Layer>,
        pub checkpoints: Vec<super::Checkpoint>,
        pub meta: Meta,
    }

    #[derive(Serialize, Deserialize)]
    pub struct Layer {
        #[serde(rename = "W")]
        pub w: Vec<f64>,
        pub b: Vec<f64>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct Meta {
        pub depth: usize,
        pub created_by: String,
        pub task_hash: String,
    }
}

/// `out = W x + b`, row-major.
fn affine_apply(d: usize, layer: &Layer, x: &[f64], out: &mut [f64]) {
    for i in 0..d {
        let row = &layer.w[i * d..(i + 1) * d];
        let mut acc = layer.b[i];
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        out[i] = acc;
    }
}

/// Row-major product `a * b`.
fn mat_mul(d: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}
