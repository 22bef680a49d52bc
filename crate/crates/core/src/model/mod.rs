//! A minimal trainable transducer with hand-written backpropagation.
//!
//! * encoder, per frame: `e_t = W2·act(W1·x_t + b1) + b2`
//! * predictor, one token of context: `p_0 = embed[0]`, `p_u = embed[y_u]`
//! * joint: `z(t, u) = Wj·act(e_t + p_u) + bj`

mod activation;
mod optim;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use activation::{squared_relu, squared_relu_derivative, swish, swish_derivative, Activation};
pub use optim::{optimizer_step, OptimizerState};

use crate::augment::FeatureMatrix;
use crate::error::{Error, Result};
use crate::lattice::{LabelSequence, LogitLattice, BLANK};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransducerParams {
    /// `H × Fin`
    pub enc_w1: Matrix,
    pub enc_b1: Vec<f64>,
    /// `H × H`
    pub enc_w2: Matrix,
    pub enc_b2: Vec<f64>,
    /// `K × H`; row 0 is the start-of-sequence context.
    pub embed: Matrix,
    /// `K × H`
    pub joint_w: Matrix,
    pub joint_b: Vec<f64>,
    pub activation: Activation,
}

/// Gradients with the exact tensor shapes of [`ToyTransducerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub enc_w1: Matrix,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Matrix,
    pub enc_b2: Vec<f64>,
    pub embed: Matrix,
    pub joint_w: Matrix,
    pub joint_b: Vec<f64>,
}

/// Number of parameter tensors, in the order of [`ToyTransducerParams::tensors`].
pub const NUM_TENSORS: usize = 7;

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "embed", "joint_w", "joint_b",
];

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let s = libm::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
}

impl ToyTransducerParams {
    /// Uniform `[-s, s]` weights with `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        vocab: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || vocab < 2 {
            return Err(Error::InvalidParameter(format!(
                "model dims Fin={input_dim}, H={hidden}, K={vocab} are degenerate"
            )));
        }
        Ok(Self {
            enc_w1: xavier(hidden, input_dim, rng),
            enc_b1: vec![0.0; hidden],
            enc_w2: xavier(hidden, hidden, rng),
            enc_b2: vec![0.0; hidden],
            embed: xavier(vocab, hidden, rng),
            joint_w: xavier(vocab, hidden, rng),
            joint_b: vec![0.0; vocab],
            activation,
        })
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden: usize, vocab: usize, activation: Activation) -> Self {
        Self {
            enc_w1: Matrix::zeros(hidden, input_dim),
            enc_b1: vec![0.0; hidden],
            enc_w2: Matrix::zeros(hidden, hidden),
            enc_b2: vec![0.0; hidden],
            embed: Matrix::zeros(vocab, hidden),
            joint_w: Matrix::zeros(vocab, hidden),
            joint_b: vec![0.0; vocab],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.enc_w1.rows()
    }

    pub fn vocab(&self) -> usize {
        self.joint_w.rows()
    }

    /// Shapes `(rows, cols)` of every tensor; vectors are `(len, 1)`.
    pub fn tensor_shapes(&self) -> [(usize, usize); NUM_TENSORS] {
        let (f, h, k) = (self.input_dim(), self.hidden(), self.vocab());
        [(h, f), (h, 1), (h, h), (h, 1), (k, h), (k, h), (k, 1)]
    }

    /// Checks that every tensor agrees with `(Fin, H, K)` and is finite.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.tensor_shapes();
        let actual = [
            self.enc_w1.shape(),
            (self.enc_b1.len(), 1),
            self.enc_w2.shape(),
            (self.enc_b2.len(), 1),
            self.embed.shape(),
            self.joint_w.shape(),
            (self.joint_b.len(), 1),
        ];
        for ((name, want), got) in TENSOR_NAMES.iter().zip(shapes).zip(actual) {
            if want != got {
                return Err(Error::Incompatible(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&[f64]; NUM_TENSORS] {
        [
            self.enc_w1.as_slice(),
            &self.enc_b1,
            self.enc_w2.as_slice(),
            &self.enc_b2,
            self.embed.as_slice(),
            self.joint_w.as_slice(),
            &self.joint_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; NUM_TENSORS] {
        [
            self.enc_w1.as_mut_slice(),
            &mut self.enc_b1,
            self.enc_w2.as_mut_slice(),
            &mut self.enc_b2,
            self.embed.as_mut_slice(),
            self.joint_w.as_mut_slice(),
            &mut self.joint_b,
        ]
    }

    fn check_features(&self, features: &FeatureMatrix) -> Result<()> {
        if features.bins() != self.input_dim() {
            return Err(Error::Incompatible(format!(
                "features have {} rows, encoder expects {}",
                features.bins(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations `W1·x_t + b1` and post-activations per frame.
    fn encoder_hidden(&self, features: &FeatureMatrix) -> (Matrix, Matrix) {
        let frames = features.frames();
        let h = self.hidden();
        let mut pre = Matrix::zeros(frames, h);
        let mut post = Matrix::zeros(frames, h);
        for t in 0..frames {
            let x = features.frame(t);
            let row = pre.row_mut(t);
            self.enc_w1.mat_vec(&x, row);
            for (v, b) in row.iter_mut().zip(&self.enc_b1) {
                *v += b;
            }
            for (o, &v) in post.row_mut(t).iter_mut().zip(pre.row(t)) {
                *o = self.activation.apply(v);
            }
        }
        (pre, post)
    }

    /// Encoder states, `T × H`.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<Matrix> {
        self.check_features(features)?;
        let (_, hidden) = self.encoder_hidden(features);
        Ok(self.encoder_output(&hidden))
    }

    fn encoder_output(&self, hidden: &Matrix) -> Matrix {
        let mut enc = Matrix::zeros(hidden.rows(), self.hidden());
        for t in 0..hidden.rows() {
            let row = enc.row_mut(t);
            self.enc_w2.mat_vec(hidden.row(t), row);
            for (v, b) in row.iter_mut().zip(&self.enc_b2) {
                *v += b;
            }
        }
        enc
    }

    /// Predictor states, `(U + 1) × H`.
    pub fn predict(&self, labels: &LabelSequence) -> Result<Matrix> {
        labels.validate(self.vocab())?;
        let h = self.hidden();
        let mut pred = Matrix::zeros(labels.len() + 1, h);
        pred.row_mut(0).copy_from_slice(self.embed.row(0));
        for (u, &y) in labels.tokens().iter().enumerate() {
            pred.row_mut(u + 1).copy_from_slice(self.embed.row(y));
        }
        Ok(pred)
    }

    fn joint_node(&self, enc: &[f64], pred: &[f64], act: &mut [f64], out: &mut [f64]) {
        for ((a, &e), &p) in act.iter_mut().zip(enc).zip(pred) {
            *a = self.activation.apply(e + p);
        }
        self.joint_w.mat_vec(act, out);
        for (z, b) in out.iter_mut().zip(&self.joint_b) {
            *z += b;
        }
    }

    /// Joint-network logits for every `(t, u)` pair.
    pub fn joint_logits(&self, enc: &Matrix, pred: &Matrix) -> Result<LogitLattice> {
        let h = self.hidden();
        if enc.cols() != h || pred.cols() != h {
            return Err(Error::Incompatible(format!(
                "joint expects width {h}, got encoder {} and predictor {}",
                enc.cols(),
                pred.cols()
            )));
        }
        if pred.rows() == 0 {
            return Err(Error::Incompatible("predictor states are empty".into()));
        }
        let mut lattice = LogitLattice::zeros(enc.rows(), pred.rows() - 1, self.vocab())?;
        let mut act = vec![0.0; h];
        for t in 0..enc.rows() {
            for u in 0..pred.rows() {
                self.joint_node(enc.row(t), pred.row(u), &mut act, lattice.node_mut(t, u));
            }
        }
        Ok(lattice)
    }

    /// Encoder states and the full logit lattice for one utterance.
    pub fn forward(
        &self,
        features: &FeatureMatrix,
        labels: &LabelSequence,
    ) -> Result<(Matrix, LogitLattice)> {
        let enc = self.encode(features)?;
        let pred = self.predict(labels)?;
        let lattice = self.joint_logits(&enc, &pred)?;
        Ok((enc, lattice))
    }

    /// Gradients of a scalar loss given its gradient over the logit lattice.
    pub fn backprop(
        &self,
        features: &FeatureMatrix,
        labels: &LabelSequence,
        lattice_grad: &LogitLattice,
    ) -> Result<ParamGradients> {
        self.backprop_with_encoder_grad(features, labels, lattice_grad, None)
    }

    /// [`Self::backprop`] with an extra gradient arriving directly at the
    /// encoder states (`T × H`), as produced by an encoder-level loss.
    pub fn backprop_with_encoder_grad(
        &self,
        features: &FeatureMatrix,
        labels: &LabelSequence,
        lattice_grad: &LogitLattice,
        encoder_grad: Option<&Matrix>,
    ) -> Result<ParamGradients> {
        self.check_features(features)?;
        let pred = self.predict(labels)?;
        let frames = features.frames();
        let positions = labels.len() + 1;
        let (k, h) = (self.vocab(), self.hidden());
        if lattice_grad.shape() != (frames, positions, k) {
            return Err(Error::Incompatible(format!(
                "lattice gradient {:?} does not match {:?}",
                lattice_grad.shape(),
                (frames, positions, k)
            )));
        }
        if let Some(g) = encoder_grad {
            if g.shape() != (frames, h) {
                return Err(Error::Incompatible(format!(
                    "encoder gradient {:?} does not match {:?}",
                    g.shape(),
                    (frames, h)
                )));
            }
        }

        let (pre, hidden) = self.encoder_hidden(features);
        let enc = self.encoder_output(&hidden);
        let mut grads = ParamGradients::zeros_like(self);
        let mut d_enc = match encoder_grad {
            Some(g) => g.clone(),
            None => Matrix::zeros(frames, h),
        };
        let mut d_pred = Matrix::zeros(positions, h);
        let mut s = vec![0.0; h];
        let mut act = vec![0.0; h];
        let mut d_act = vec![0.0; h];

        for t in 0..frames {
            for u in 0..positions {
                let dz = lattice_grad.node(t, u);
                if dz.iter().all(|&g| g == 0.0) {
                    continue;
                }
                for ((si, a), (&e, &p)) in s
                    .iter_mut()
                    .zip(act.iter_mut())
                    .zip(enc.row(t).iter().zip(pred.row(u)))
                {
                    *si = e + p;
                    *a = self.activation.apply(*si);
                }
                grads.joint_w.add_outer(dz, &act);
                for (b, &g) in grads.joint_b.iter_mut().zip(dz) {
                    *b += g;
                }
                d_act.fill(0.0);
                self.joint_w.add_mat_t_vec(dz, &mut d_act);
                for (i, &si) in s.iter().enumerate() {
                    let ds = d_act[i] * self.activation.derivative(si);
                    d_enc[(t, i)] += ds;
                    d_pred[(u, i)] += ds;
                }
            }
        }

        let context = core::iter::once(0).chain(labels.tokens().iter().copied());
        for (u, row) in context.enumerate() {
            for (g, &d) in grads.embed.row_mut(row).iter_mut().zip(d_pred.row(u)) {
                *g += d;
            }
        }

        let mut d_hidden = vec![0.0; h];
        for t in 0..frames {
            let de = d_enc.row(t);
            grads.enc_w2.add_outer(de, hidden.row(t));
            for (b, &g) in grads.enc_b2.iter_mut().zip(de) {
                *b += g;
            }
            d_hidden.fill(0.0);
            self.enc_w2.add_mat_t_vec(de, &mut d_hidden);
            for (dh, &p) in d_hidden.iter_mut().zip(pre.row(t)) {
                *dh *= self.activation.derivative(p);
            }
            grads.enc_w1.add_outer(&d_hidden, &features.frame(t));
            for (b, &g) in grads.enc_b1.iter_mut().zip(&d_hidden) {
                *b += g;
            }
        }
        Ok(grads)
    }

    /// Greedy transducer decoding.
    ///
    /// From `(t, u) = (0, 0)`: take the argmax class (ties go to the lower
    /// id); blank advances `t`, a label is appended and becomes the context.
    /// Once `u_max` labels are out, the remaining frames are consumed as
    /// blanks.
    pub fn greedy_decode(&self, features: &FeatureMatrix, u_max: usize) -> Result<LabelSequence> {
        let enc = self.encode(features)?;
        let h = self.hidden();
        let mut act = vec![0.0; h];
        let mut logits = vec![0.0; self.vocab()];
        let mut out = Vec::new();
        let mut context = 0usize;
        let mut t = 0;
        while t < enc.rows() && out.len() < u_max {
            self.joint_node(enc.row(t), self.embed.row(context), &mut act, &mut logits);
            let best = argmax(&logits);
            if best == BLANK {
                t += 1;
            } else {
                out.push(best);
                context = best;
            }
        }
        Ok(LabelSequence::new(out).expect("argmax never yields blank here"))
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ParamGradients {
    pub fn zeros_like(params: &ToyTransducerParams) -> Self {
        Self {
            enc_w1: Matrix::zeros(params.enc_w1.rows(), params.enc_w1.cols()),
            enc_b1: vec![0.0; params.enc_b1.len()],
            enc_w2: Matrix::zeros(params.enc_w2.rows(), params.enc_w2.cols()),
            enc_b2: vec![0.0; params.enc_b2.len()],
            embed: Matrix::zeros(params.embed.rows(), params.embed.cols()),
            joint_w: Matrix::zeros(params.joint_w.rows(), params.joint_w.cols()),
            joint_b: vec![0.0; params.joint_b.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; NUM_TENSORS] {
        [
            self.enc_w1.as_slice(),
            &self.enc_b1,
            self.enc_w2.as_slice(),
            &self.enc_b2,
            self.embed.as_slice(),
            self.joint_w.as_slice(),
            &self.joint_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; NUM_TENSORS] {
        [
            self.enc_w1.as_mut_slice(),
            &mut self.enc_b1,
            self.enc_w2.as_mut_slice(),
            &mut self.enc_b2,
            self.embed.as_mut_slice(),
            self.joint_w.as_mut_slice(),
            &mut self.joint_b,
        ]
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}
