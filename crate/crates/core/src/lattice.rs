//! The transducer lattice: loss, forward-backward posteriors and gradients.
//!
//! A lattice holds the unnormalized joint-network output `z(t, u, k)` for
//! frame `t ∈ [0, T)`, emitted-label count `u ∈ [0, U]` and class
//! `k ∈ [0, K)`. Every node carries a single K-way softmax. A blank moves
//! `(t, u) → (t + 1, u)`, label `y[u]` moves `(t, u) → (t, u + 1)`, and every
//! path leaves the lattice by emitting blank at `(T - 1, U)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{log_add_exp, log_softmax_into};
use crate::tensor::Matrix;

/// Class id reserved for blank.
pub const BLANK: usize = 0;

/// `T × (U + 1) × K` tensor of joint-network logits, row-major in `(t, u, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLattice {
    frames: usize,
    label_len: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl LogitLattice {
    /// All-zero lattice (uniform node distributions).
    pub fn zeros(frames: usize, label_len: usize, vocab: usize) -> Result<Self> {
        check_dims(frames, vocab)?;
        Ok(Self {
            frames,
            label_len,
            vocab,
            data: vec![0.0; frames * (label_len + 1) * vocab],
        })
    }

    pub fn from_vec(frames: usize, label_len: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(frames, vocab)?;
        let expected = frames * (label_len + 1) * vocab;
        if data.len() != expected {
            return Err(Error::Incompatible(format!(
                "{} values for a {frames}x{}x{vocab} lattice",
                data.len(),
                label_len + 1
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("lattice entry {i}")));
        }
        Ok(Self {
            frames,
            label_len,
            vocab,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        label_len: usize,
        vocab: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * (label_len + 1) * vocab);
        for t in 0..frames {
            for u in 0..=label_len {
                for k in 0..vocab {
                    data.push(f(t, u, k));
                }
            }
        }
        Self::from_vec(frames, label_len, vocab, data)
    }

    /// `T`.
    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `U`; the lattice has `U + 1` label positions.
    #[inline]
    pub fn label_len(&self) -> usize {
        self.label_len
    }

    /// `K`, including blank.
    #[inline]
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// `(T, U + 1, K)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.label_len + 1, self.vocab)
    }

    #[inline]
    fn offset(&self, t: usize, u: usize) -> usize {
        (t * (self.label_len + 1) + u) * self.vocab
    }

    #[inline]
    pub fn node(&self, t: usize, u: usize) -> &[f64] {
        let o = self.offset(t, u);
        &self.data[o..o + self.vocab]
    }

    #[inline]
    pub fn node_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        let o = self.offset(t, u);
        &mut self.data[o..o + self.vocab]
    }

    /// The `frames × (U + 1) × K` block starting at frame `start`.
    pub fn frame_range(&self, start: usize, frames: usize) -> &[f64] {
        let o = self.offset(start, 0);
        &self.data[o..o + frames * (self.label_len + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "lattice shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("lattice entry {i}"))),
            None => Ok(()),
        }
    }

    /// Elementwise `scale * self + other_scale * other`; shapes must match.
    pub(crate) fn weighted_sum(&self, scale: f64, other: &Self, other_scale: f64) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| scale * a + other_scale * b)
            .collect();
        Self {
            frames: self.frames,
            label_len: self.label_len,
            vocab: self.vocab,
            data,
        }
    }
}

fn check_dims(frames: usize, vocab: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidInput(
            "a lattice needs at least one frame".into(),
        ));
    }
    if vocab < 2 {
        return Err(Error::InvalidInput(format!(
            "vocabulary size {vocab} leaves no room for blank plus a label"
        )));
    }
    Ok(())
}

/// Ordered target token ids; blank (`0`) never appears.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if let Some(position) = tokens.iter().position(|&id| id == BLANK) {
            return Err(Error::InvalidLabel {
                position,
                id: BLANK,
                vocab: 0,
            });
        }
        Ok(Self(tokens))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Every id must lie in `[1, vocab)`.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.0.iter().position(|&id| id == BLANK || id >= vocab) {
            Some(position) => Err(Error::InvalidLabel {
                position,
                id: self.0[position],
                vocab,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn validate_for(&self, lattice: &LogitLattice) -> Result<()> {
        if self.len() != lattice.label_len() {
            return Err(Error::Incompatible(format!(
                "{} labels for a lattice with U = {}",
                self.len(),
                lattice.label_len()
            )));
        }
        self.validate(lattice.vocab())
    }
}

/// Log-domain forward and backward variables over the `T × (U + 1)` grid.
///
/// `alpha(t, u)` is the log mass of all partial paths from `(0, 0)` reaching
/// `(t, u)`; `beta(t, u)` is the log mass of all completions from `(t, u)`
/// including the terminal blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePosteriors {
    pub alpha: Matrix,
    pub beta: Matrix,
    pub log_likelihood: f64,
}

impl LatticePosteriors {
    /// `logaddexp` of `alpha + beta` over nodes with `t + u = diagonal`.
    ///
    /// Every path crosses every anti-diagonal once, so this equals
    /// `log_likelihood` for all `diagonal ∈ [0, T - 1 + U]`.
    pub fn anti_diagonal_log_mass(&self, diagonal: usize) -> f64 {
        let (frames, positions) = self.alpha.shape();
        let mut acc = f64::NEG_INFINITY;
        for t in 0..frames {
            if diagonal < t || diagonal - t >= positions {
                continue;
            }
            let u = diagonal - t;
            acc = log_add_exp(acc, self.alpha[(t, u)] + self.beta[(t, u)]);
        }
        acc
    }

    pub fn num_anti_diagonals(&self) -> usize {
        self.alpha.rows() + self.alpha.cols() - 1
    }
}

/// A scalar loss and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<G = LogitLattice> {
    pub loss: f64,
    pub grad: G,
}

/// Per-node softmax. The result has the lattice's shape with probabilities in
/// place of logits.
pub fn softmax_lattice(lattice: &LogitLattice) -> Result<LogitLattice> {
    lattice.ensure_finite()?;
    let mut out = lattice.clone();
    let k = lattice.vocab();
    for (dst, src) in out
        .data
        .chunks_exact_mut(k)
        .zip(lattice.data.chunks_exact(k))
    {
        log_softmax_into(src, 1.0, dst);
        for p in dst.iter_mut() {
            *p = libm::exp(*p);
        }
    }
    Ok(out)
}

fn log_softmax_lattice(lattice: &LogitLattice) -> Vec<f64> {
    let k = lattice.vocab();
    let mut out = vec![0.0; lattice.data.len()];
    for (dst, src) in out.chunks_exact_mut(k).zip(lattice.data.chunks_exact(k)) {
        log_softmax_into(src, 1.0, dst);
    }
    out
}

/// Log-probabilities of the two transitions out of each node.
struct Transitions {
    /// `log P(blank | t, u)`, `T × (U + 1)`.
    blank: Matrix,
    /// `log P(y[u] | t, u)`, `T × U`.
    label: Matrix,
}

impl Transitions {
    fn gather(log_probs: &[f64], lattice: &LogitLattice, labels: &LabelSequence) -> Self {
        let (frames, positions, k) = lattice.shape();
        let u_len = positions - 1;
        let mut blank = Matrix::zeros(frames, positions);
        let mut label = Matrix::zeros(frames, u_len);
        for t in 0..frames {
            for u in 0..positions {
                let base = (t * positions + u) * k;
                blank[(t, u)] = log_probs[base + BLANK];
                if u < u_len {
                    label[(t, u)] = log_probs[base + labels.tokens()[u]];
                }
            }
        }
        Self { blank, label }
    }
}

fn run_recursions(tr: &Transitions) -> LatticePosteriors {
    let (frames, positions) = tr.blank.shape();
    let last_t = frames - 1;
    let last_u = positions - 1;

    let mut alpha = Matrix::filled(frames, positions, f64::NEG_INFINITY);
    alpha[(0, 0)] = 0.0;
    for t in 0..frames {
        for u in 0..positions {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[(t - 1, u)] + tr.blank[(t - 1, u)]
            } else {
                f64::NEG_INFINITY
            };
            let from_label = if u > 0 {
                alpha[(t, u - 1)] + tr.label[(t, u - 1)]
            } else {
                f64::NEG_INFINITY
            };
            alpha[(t, u)] = log_add_exp(from_blank, from_label);
        }
    }

    let mut beta = Matrix::filled(frames, positions, f64::NEG_INFINITY);
    beta[(last_t, last_u)] = tr.blank[(last_t, last_u)];
    for t in (0..frames).rev() {
        for u in (0..positions).rev() {
            if t == last_t && u == last_u {
                continue;
            }
            let via_blank = if t < last_t {
                beta[(t + 1, u)] + tr.blank[(t, u)]
            } else {
                f64::NEG_INFINITY
            };
            let via_label = if u < last_u {
                beta[(t, u + 1)] + tr.label[(t, u)]
            } else {
                f64::NEG_INFINITY
            };
            beta[(t, u)] = log_add_exp(via_blank, via_label);
        }
    }

    let log_likelihood = alpha[(last_t, last_u)] + tr.blank[(last_t, last_u)];
    LatticePosteriors {
        alpha,
        beta,
        log_likelihood,
    }
}

/// Forward and backward variables and `log P(y | x)`.
pub fn forward_backward(
    lattice: &LogitLattice,
    labels: &LabelSequence,
) -> Result<LatticePosteriors> {
    lattice.ensure_finite()?;
    labels.validate_for(lattice)?;
    let log_probs = log_softmax_lattice(lattice);
    let tr = Transitions::gather(&log_probs, lattice, labels);
    Ok(run_recursions(&tr))
}

/// Negative log-likelihood of `labels` summed over all alignments, with its
/// gradient with respect to the logits.
///
/// At each node the gradient is `γ·P(k) − q_blank·[k = 0] − q_label·[k = y]`
/// where `q_*` are the posterior occupancies of the outgoing transitions and
/// `γ = q_blank + q_label`.
pub fn rnnt_loss(lattice: &LogitLattice, labels: &LabelSequence) -> Result<LossResult> {
    rnnt_loss_with_posteriors(lattice, labels).map(|(loss, _)| loss)
}

/// [`rnnt_loss`] that also returns the forward-backward variables.
pub fn rnnt_loss_with_posteriors(
    lattice: &LogitLattice,
    labels: &LabelSequence,
) -> Result<(LossResult, LatticePosteriors)> {
    lattice.ensure_finite()?;
    labels.validate_for(lattice)?;
    let log_probs = log_softmax_lattice(lattice);
    let tr = Transitions::gather(&log_probs, lattice, labels);
    let post = run_recursions(&tr);

    let (frames, positions, k) = lattice.shape();
    let last_t = frames - 1;
    let last_u = positions - 1;
    let log_p = post.log_likelihood;
    let mut grad = lattice.clone();
    for t in 0..frames {
        for u in 0..positions {
            let a = post.alpha[(t, u)];
            let q_blank = if t == last_t && u == last_u {
                libm::exp(a + tr.blank[(t, u)] - log_p)
            } else if t < last_t {
                libm::exp(a + tr.blank[(t, u)] + post.beta[(t + 1, u)] - log_p)
            } else {
                0.0
            };
            let q_label = if u < last_u {
                libm::exp(a + tr.label[(t, u)] + post.beta[(t, u + 1)] - log_p)
            } else {
                0.0
            };
            let occupancy = q_blank + q_label;
            let base = (t * positions + u) * k;
            let node = grad.node_mut(t, u);
            for (c, g) in node.iter_mut().enumerate() {
                *g = occupancy * libm::exp(log_probs[base + c]);
            }
            node[BLANK] -= q_blank;
            if u < last_u {
                node[labels.tokens()[u]] -= q_label;
            }
        }
    }
    Ok((LossResult { loss: -log_p, grad }, post))
}
