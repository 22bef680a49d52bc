//! Soft-target distillation losses over the transducer lattice.
//!
//! Teacher probabilities are constants: every gradient here is with respect
//! to the student's logits (or encoder states) only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::{LabelSequence, LogitLattice, LossResult, BLANK};
use crate::math::{log_softmax_into, log_sum_exp};
use crate::tensor::Matrix;

/// Default number of time frames evaluated per inner pass of the KL loss.
pub const DEFAULT_CHUNK_FRAMES: usize = 8;

/// Which target the student is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistillMode {
    /// Transducer loss on teacher pseudo labels.
    Hard,
    /// Full K-way KL over the lattice.
    #[default]
    Soft,
    /// `alpha`-weighted mix of the two.
    Mixed,
    /// KL over the {next label, blank, remainder} coarsening.
    Efficient,
}

impl DistillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMode::Hard => "hard",
            DistillMode::Soft => "soft",
            DistillMode::Mixed => "mixed",
            DistillMode::Efficient => "efficient",
        }
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            "mixed" => Ok(Self::Mixed),
            "efficient" => Ok(Self::Efficient),
            other => Err(Error::InvalidParameter(format!(
                "unknown distillation mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// Weight of the transducer loss in the mixed objective.
    pub alpha: f64,
    pub tau_teacher: f64,
    pub tau_student: f64,
    pub chunk_frames: usize,
    pub mode: DistillMode,
    /// Weight of the auxiliary encoder-state loss; `0` disables it.
    pub consistency_weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            tau_teacher: 1.0,
            tau_student: 1.0,
            chunk_frames: DEFAULT_CHUNK_FRAMES,
            mode: DistillMode::Soft,
            consistency_weight: 0.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.tau_teacher > 0.0 && self.tau_teacher.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "teacher temperature {} must be positive",
                self.tau_teacher
            )));
        }
        if !(self.tau_student > 0.0 && self.tau_student.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "student temperature {} must be positive",
                self.tau_student
            )));
        }
        if self.chunk_frames == 0 {
            return Err(Error::InvalidParameter(
                "chunk_frames must be at least 1".into(),
            ));
        }
        if !(self.consistency_weight >= 0.0 && self.consistency_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "consistency weight {} must be non-negative",
                self.consistency_weight
            )));
        }
        Ok(())
    }

    /// The transducer-loss weight actually used: `1` for hard, `0` for the
    /// KL-only modes, `alpha` when mixed.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            DistillMode::Hard => 1.0,
            DistillMode::Soft | DistillMode::Efficient => 0.0,
            DistillMode::Mixed => self.alpha,
        }
    }
}

/// A normalized distribution over K classes at one lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistribution {
    probs: Vec<f64>,
}

impl NodeDistribution {
    pub fn from_logits(logits: &[f64], tau: f64) -> Self {
        let mut probs = vec![0.0; logits.len()];
        log_softmax_into(logits, tau, &mut probs);
        for p in &mut probs {
            *p = libm::exp(*p);
        }
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `KL(self ‖ other)` in nats.
    pub fn kl_divergence(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * libm::log(p / q))
            .sum()
    }

    /// Class masses merged into {`label`, blank, remainder}; with
    /// `label = None` only {blank, remainder}. Empty groups are dropped.
    pub fn coarsen(&self, label: Option<usize>) -> Self {
        let mut groups = [0.0f64; 3];
        for (k, &p) in self.probs.iter().enumerate() {
            groups[group_of(k, label)] += p;
        }
        let sizes = group_sizes(self.probs.len(), label);
        Self {
            probs: groups
                .iter()
                .zip(sizes)
                .filter(|(_, n)| *n > 0)
                .map(|(&g, _)| g)
                .collect(),
        }
    }

    pub fn entropy(&self) -> f64 {
        crate::math::entropy(&self.probs)
    }
}

#[inline]
fn group_of(k: usize, label: Option<usize>) -> usize {
    if k == BLANK {
        0
    } else if Some(k) == label {
        1
    } else {
        2
    }
}

fn group_sizes(vocab: usize, label: Option<usize>) -> [usize; 3] {
    let with_label = usize::from(label.is_some());
    [1, with_label, vocab - 1 - with_label]
}

/// Every logit divided by `tau`.
pub fn temperature_scale(lattice: &LogitLattice, tau: f64) -> Result<LogitLattice> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature {tau} must be positive"
        )));
    }
    let mut out = lattice.clone();
    for z in out.as_mut_slice() {
        *z /= tau;
    }
    Ok(out)
}

/// `Σ_{t,u} KL(P_T(·|t,u) ‖ P_S(·|t,u))` with the configured temperatures.
///
/// Nodes are independent, so frames are evaluated `cfg.chunk_frames` at a
/// time; only one chunk of normalized teacher and student values is alive at
/// once. The gradient is `(P_S − P_T) / τ_S` per node.
pub fn kl_lattice_loss(
    teacher: &LogitLattice,
    student: &LogitLattice,
    cfg: &DistillConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    teacher.ensure_same_shape(student)?;
    let (frames, positions, k) = student.shape();
    let chunk = cfg.chunk_frames.min(frames);
    let mut grad = LogitLattice::zeros(frames, positions - 1, k)?;
    let mut teacher_lp = vec![0.0; chunk * positions * k];
    let mut student_lp = vec![0.0; chunk * positions * k];
    let inv_tau = 1.0 / cfg.tau_student;

    let mut loss = 0.0;
    let mut start = 0;
    while start < frames {
        let len = chunk.min(frames - start);
        let n = len * positions * k;
        let t_block = teacher.frame_range(start, len);
        let s_block = student.frame_range(start, len);
        for ((tz, sz), (tl, sl)) in t_block.chunks_exact(k).zip(s_block.chunks_exact(k)).zip(
            teacher_lp[..n]
                .chunks_exact_mut(k)
                .zip(student_lp[..n].chunks_exact_mut(k)),
        ) {
            log_softmax_into(tz, cfg.tau_teacher, tl);
            log_softmax_into(sz, cfg.tau_student, sl);
        }

        let mut chunk_loss = 0.0;
        let g_block = &mut grad.as_mut_slice()[start * positions * k..start * positions * k + n];
        for ((g, &tl), &sl) in g_block
            .iter_mut()
            .zip(&teacher_lp[..n])
            .zip(&student_lp[..n])
        {
            let pt = libm::exp(tl);
            let ps = libm::exp(sl);
            if pt > 0.0 {
                chunk_loss += pt * (tl - sl);
            }
            *g = inv_tau * (ps - pt);
        }
        loss += chunk_loss;
        start += len;
    }
    Ok(LossResult { loss, grad })
}

/// KL between the teacher and student after merging classes into
/// {next label, blank, remainder} at every node below the top row and
/// {blank, remainder} on the top row `u = U`.
pub fn coarsened_kl_loss(
    teacher: &LogitLattice,
    student: &LogitLattice,
    labels: &LabelSequence,
    cfg: &DistillConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    teacher.ensure_same_shape(student)?;
    labels.validate_for(student)?;
    let (frames, positions, k) = student.shape();
    let u_len = positions - 1;
    let inv_tau = 1.0 / cfg.tau_student;
    let mut grad = LogitLattice::zeros(frames, u_len, k)?;
    let mut tl = vec![0.0; k];
    let mut sl = vec![0.0; k];
    let mut loss = 0.0;

    for t in 0..frames {
        for u in 0..positions {
            let label = (u < u_len).then(|| labels.tokens()[u]);
            log_softmax_into(teacher.node(t, u), cfg.tau_teacher, &mut tl);
            log_softmax_into(student.node(t, u), cfg.tau_student, &mut sl);
            let t_groups = group_log_mass(&tl, label);
            let s_groups = group_log_mass(&sl, label);
            for (&gt, &gs) in t_groups.iter().zip(&s_groups) {
                if gt > f64::NEG_INFINITY {
                    loss += libm::exp(gt) * (gt - gs);
                }
            }
            // dL/dz_k = (1/τ_S) · P_S(k) · (1 − P_T(g_k) / P_S(g_k))
            for (kk, g) in grad.node_mut(t, u).iter_mut().enumerate() {
                let grp = group_of(kk, label);
                let ratio = libm::exp(t_groups[grp] - s_groups[grp]);
                *g = inv_tau * libm::exp(sl[kk]) * (1.0 - ratio);
            }
        }
    }
    Ok(LossResult { loss, grad })
}

/// Log mass of the three groups; an empty group is `-inf`.
fn group_log_mass(log_probs: &[f64], label: Option<usize>) -> [f64; 3] {
    let mut members: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (k, &lp) in log_probs.iter().enumerate() {
        members[group_of(k, label)].push(lp);
    }
    [
        log_sum_exp(&members[0]),
        log_sum_exp(&members[1]),
        log_sum_exp(&members[2]),
    ]
}

/// `α·L_rnnt + (1 − α)·L_kl` on both values and gradients, with `α` taken
/// from [`DistillConfig::effective_alpha`].
pub fn combined_loss(
    rnnt: &LossResult,
    kl: &LossResult,
    cfg: &DistillConfig,
) -> Result<LossResult> {
    rnnt.grad.ensure_same_shape(&kl.grad)?;
    let alpha = cfg.effective_alpha();
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let beta = 1.0 - alpha;
    Ok(LossResult {
        loss: alpha * rnnt.loss + beta * kl.loss,
        grad: rnnt.grad.weighted_sum(alpha, &kl.grad, beta),
    })
}

/// Mean squared difference between teacher and student encoder states, with
/// the gradient with respect to the student states.
pub fn consistency_loss(
    teacher_states: &Matrix,
    student_states: &Matrix,
) -> Result<LossResult<Matrix>> {
    if teacher_states.shape() != student_states.shape() {
        return Err(Error::Incompatible(format!(
            "encoder states {:?} and {:?} differ",
            teacher_states.shape(),
            student_states.shape()
        )));
    }
    let n = student_states.as_slice().len();
    if n == 0 {
        return Ok(LossResult {
            loss: 0.0,
            grad: student_states.clone(),
        });
    }
    let scale = 1.0 / n as f64;
    let mut grad = student_states.clone();
    let mut loss = 0.0;
    for (g, &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(teacher_states.as_slice())
    {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d * scale;
    }
    Ok(LossResult {
        loss: loss * scale,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_lattice(rng: &mut SeededRng, t: usize, u: usize, k: usize) -> LogitLattice {
        LogitLattice::from_fn(t, u, k, |_, _, _| rng.random_range(-3.0..3.0)).unwrap()
    }

    fn random_labels(rng: &mut SeededRng, u: usize, k: usize) -> LabelSequence {
        LabelSequence::new((0..u).map(|_| rng.random_range(1..k)).collect()).unwrap()
    }

    #[test]
    fn config_rules() {
        assert!(DistillConfig::default().validate().is_ok());
        assert_eq!(DistillConfig::default().chunk_frames, 8);
        let bad = DistillConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DistillConfig {
            tau_teacher: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DistillConfig {
            chunk_frames: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let hard = DistillConfig {
            mode: DistillMode::Hard,
            alpha: 0.2,
            ..Default::default()
        };
        assert_eq!(hard.effective_alpha(), 1.0);
        let soft = DistillConfig {
            mode: DistillMode::Soft,
            alpha: 0.7,
            ..Default::default()
        };
        assert_eq!(soft.effective_alpha(), 0.0);
        assert_eq!(
            "efficient".parse::<DistillMode>().unwrap(),
            DistillMode::Efficient
        );
        assert!("bogus".parse::<DistillMode>().is_err());
    }

    #[test]
    fn temperature_examples() {
        let mut rng = SeededRng::seed_from_u64(1);
        let l = random_lattice(&mut rng, 3, 2, 5);
        assert_eq!(temperature_scale(&l, 1.0).unwrap(), l);
        let node = LogitLattice::from_vec(1, 0, 2, vec![2.0, 0.0]).unwrap();
        let scaled = temperature_scale(&node, 2.0).unwrap();
        assert_eq!(scaled.as_slice(), &[1.0, 0.0]);
        let p = NodeDistribution::from_logits(scaled.as_slice(), 1.0);
        assert!((p.probs()[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(matches!(
            temperature_scale(&l, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(temperature_scale(&l, -1.0).is_err());
    }

    #[test]
    fn kl_of_identical_lattices_is_zero() {
        let mut rng = SeededRng::seed_from_u64(2);
        let l = random_lattice(&mut rng, 5, 3, 6);
        let res = kl_lattice_loss(&l, &l, &DistillConfig::default()).unwrap();
        assert!(res.loss.abs() < 1e-12);
        assert!(res.grad.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn single_node_kl() {
        let teacher = LogitLattice::from_vec(1, 0, 2, vec![3f64.ln(), 0.0]).unwrap();
        let student = LogitLattice::zeros(1, 0, 2).unwrap();
        let res = kl_lattice_loss(&teacher, &student, &DistillConfig::default()).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((res.loss - expected).abs() < 1e-12);
        assert!((res.loss - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let a = LogitLattice::zeros(2, 1, 3).unwrap();
        let b = LogitLattice::zeros(2, 2, 3).unwrap();
        let cfg = DistillConfig::default();
        assert!(matches!(
            kl_lattice_loss(&a, &b, &cfg),
            Err(Error::Incompatible(_))
        ));
        let y = LabelSequence::new(vec![1]).unwrap();
        assert!(coarsened_kl_loss(&a, &b, &y, &cfg).is_err());
        let ra = LossResult { loss: 0.0, grad: a };
        let rb = LossResult { loss: 0.0, grad: b };
        assert!(combined_loss(&ra, &rb, &cfg).is_err());
    }

    #[test]
    fn chunking_is_exact() {
        let mut rng = SeededRng::seed_from_u64(11);
        let t = random_lattice(&mut rng, 32, 4, 6);
        let s = random_lattice(&mut rng, 32, 4, 6);
        let reference = kl_lattice_loss(
            &t,
            &s,
            &DistillConfig {
                chunk_frames: 32,
                ..Default::default()
            },
        )
        .unwrap();
        for chunk in [1, 3, 8, 100] {
            let cfg = DistillConfig {
                chunk_frames: chunk,
                ..Default::default()
            };
            let r = kl_lattice_loss(&t, &s, &cfg).unwrap();
            assert!((r.loss - reference.loss).abs() <= 1e-9 * reference.loss);
            assert_eq!(r.grad, reference.grad);
        }
    }

    #[test]
    fn coarsening_with_three_classes_is_lossless_below_top_row() {
        let mut rng = SeededRng::seed_from_u64(5);
        let t = random_lattice(&mut rng, 4, 3, 3);
        let mut s = random_lattice(&mut rng, 4, 3, 3);
        let y = random_labels(&mut rng, 3, 3);
        // The top row merges both labels, which is not a bijection for
        // K = 3; pin it so only the 3-group nodes differ.
        for frame in 0..4 {
            s.node_mut(frame, 3).copy_from_slice(t.node(frame, 3));
        }
        let cfg = DistillConfig::default();
        let full = kl_lattice_loss(&t, &s, &cfg).unwrap();
        let coarse = coarsened_kl_loss(&t, &s, &y, &cfg).unwrap();
        assert!(full.loss > 0.1);
        assert!((full.loss - coarse.loss).abs() <= 1e-12);
        for (a, b) in full.grad.as_slice().iter().zip(coarse.grad.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_row_groups_blank_against_remainder() {
        let t = LogitLattice::from_vec(1, 0, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let s = LogitLattice::from_vec(1, 0, 3, vec![0.0, -1.0, 1.0]).unwrap();
        let cfg = DistillConfig::default();
        // Same blank mass and the same remainder mass: nothing to distil.
        let coarse = coarsened_kl_loss(&t, &s, &LabelSequence::empty(), &cfg).unwrap();
        assert!(coarse.loss.abs() < 1e-15);
        assert!(kl_lattice_loss(&t, &s, &cfg).unwrap().loss > 0.1);
    }

    #[test]
    fn coarsening_two_classes_with_label() {
        // K = 2 below the top row: the remainder group is empty.
        let t = LogitLattice::from_vec(1, 1, 2, vec![0.3, -0.2, 1.0, 0.0]).unwrap();
        let s = LogitLattice::zeros(1, 1, 2).unwrap();
        let y = LabelSequence::new(vec![1]).unwrap();
        let cfg = DistillConfig::default();
        let coarse = coarsened_kl_loss(&t, &s, &y, &cfg).unwrap();
        let full = kl_lattice_loss(&t, &s, &cfg).unwrap();
        assert!((coarse.loss - full.loss).abs() < 1e-12);
        assert!(coarse.grad.as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn combined_endpoints() {
        let mut rng = SeededRng::seed_from_u64(9);
        let r = LossResult {
            loss: 2.5,
            grad: random_lattice(&mut rng, 2, 1, 3),
        };
        let k = LossResult {
            loss: 0.75,
            grad: random_lattice(&mut rng, 2, 1, 3),
        };
        let hard = combined_loss(
            &r,
            &k,
            &DistillConfig {
                mode: DistillMode::Hard,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(hard, r);
        let soft = combined_loss(
            &r,
            &k,
            &DistillConfig {
                mode: DistillMode::Soft,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(soft, k);
        let mixed = combined_loss(
            &r,
            &k,
            &DistillConfig {
                mode: DistillMode::Mixed,
                alpha: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(mixed.loss, (2.5 + 0.75) / 2.0);
    }

    #[test]
    fn consistency_examples() {
        let zeros = Matrix::zeros(2, 3);
        let ones = Matrix::filled(2, 3, 1.0);
        assert_eq!(consistency_loss(&ones, &ones).unwrap().loss, 0.0);
        let r = consistency_loss(&zeros, &ones).unwrap();
        assert_eq!(r.loss, 1.0);
        assert!(r
            .grad
            .as_slice()
            .iter()
            .all(|&g| (g - 1.0 / 3.0).abs() < 1e-15));
        assert!(consistency_loss(&Matrix::zeros(2, 2), &ones).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(seed in any::<u64>(), tau_t in 0.2f64..3.0, tau_s in 0.2f64..3.0) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let t = random_lattice(&mut rng, 3, 2, 5);
            let s = random_lattice(&mut rng, 3, 2, 5);
            let cfg = DistillConfig { tau_teacher: tau_t, tau_student: tau_s, ..Default::default() };
            prop_assert!(kl_lattice_loss(&t, &s, &cfg).unwrap().loss >= 0.0);
            let y = random_labels(&mut rng, 2, 5);
            prop_assert!(coarsened_kl_loss(&t, &s, &y, &cfg).unwrap().loss >= -1e-15);
        }

        #[test]
        fn coarsened_node_kl_never_exceeds_full(seed in any::<u64>(), label in 1usize..8, top in any::<bool>()) {
            let mut rng = SeededRng::seed_from_u64(seed);
            let zt: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
            let zs: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
            let pt = NodeDistribution::from_logits(&zt, 1.0);
            let ps = NodeDistribution::from_logits(&zs, 1.0);
            let label = (!top).then_some(label);
            let coarse = pt.coarsen(label).kl_divergence(&ps.coarsen(label));
            prop_assert!(coarse <= pt.kl_divergence(&ps) + 1e-12);
        }
    }
}
