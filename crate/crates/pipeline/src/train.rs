//! Supervised training, teacher→student distillation and the iterative
//! noisy-student loop.
//!
//! Training is sequential over mini-batches. Inside a batch the per-utterance
//! gradients are computed in parallel and summed in batch order, so results
//! do not depend on the thread schedule.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use transducer_distill_core::augment::{freq_aug, spec_augment};
use transducer_distill_core::distill::{
    coarsened_kl_loss, combined_loss, consistency_loss, kl_lattice_loss,
};
use transducer_distill_core::lattice::rnnt_loss;
use transducer_distill_core::model::optimizer_step;
use transducer_distill_core::{
    derived_rng, DistillMode, Error as CoreError, FeatureMatrix, LabelSequence, LogitLattice,
    LossResult, Matrix, OptimizerState, ParamGradients, ToyTransducerParams,
};

use crate::config::{AugmentKind, ExperimentConfig};
use crate::dataset::{Dataset, Utterance};
use crate::error::{PipelineError, Result};
use crate::metrics::{token_error_rate, Ledger, MetricsRecord, Role};

const INIT_STREAM: u64 = 10 << 32;
const SHUFFLE_STREAM: u64 = 11 << 32;
const STUDENT_AUGMENT_STREAM: u64 = 12 << 32;
const TEACHER_AUGMENT_STREAM: u64 = 13 << 32;

/// Which model is being trained: decides the initialization stream and the
/// run id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub role: Role,
    pub generation: usize,
    pub hidden: usize,
}

impl RunSpec {
    pub fn teacher(cfg: &ExperimentConfig) -> Self {
        Self {
            role: Role::Teacher,
            generation: 0,
            hidden: cfg.teacher_hidden,
        }
    }

    pub fn student(cfg: &ExperimentConfig, generation: usize) -> Self {
        Self {
            role: Role::Student,
            generation,
            hidden: cfg.student_hidden,
        }
    }

    fn run_id(&self, label: &str, seed: u64) -> String {
        format!(
            "{}-g{}-h{}-{label}-s{seed}",
            self.role.as_str(),
            self.generation,
            self.hidden
        )
    }

    /// Fresh parameters for this run.
    pub fn init_params(&self, cfg: &ExperimentConfig) -> Result<ToyTransducerParams> {
        let role = match self.role {
            Role::Teacher => 0,
            Role::Student => 1,
        };
        let mut rng = derived_rng(cfg.seed(), INIT_STREAM + 2 * self.generation as u64 + role);
        Ok(ToyTransducerParams::init(
            cfg.task.feature_dim,
            self.hidden,
            cfg.task.vocab,
            cfg.activation,
            &mut rng,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: ToyTransducerParams,
    pub record: MetricsRecord,
}

/// Label cap used when decoding: one label per frame.
fn label_cap(features: &FeatureMatrix) -> usize {
    features.frames()
}

/// Token error rate of greedy decodes against the split's transcripts.
pub fn evaluate_ter(params: &ToyTransducerParams, utts: &[Utterance]) -> Result<f64> {
    let hyps = utts
        .par_iter()
        .map(|u| params.greedy_decode(&u.features, label_cap(&u.features)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs = utts
        .iter()
        .map(|u| {
            u.labels
                .as_ref()
                .ok_or_else(|| PipelineError::Invalid("evaluation needs transcripts".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(token_error_rate(refs.into_iter().zip(&hyps)))
}

/// Mini-batch Adam over `n` examples. `example` returns the loss and the
/// parameter gradient of example `index` in epoch `epoch`.
fn fit<F>(
    params: &mut ToyTransducerParams,
    n: usize,
    cfg: &ExperimentConfig,
    shuffle_stream: u64,
    example: F,
) -> Result<(Vec<(usize, f64)>, f64)>
where
    F: Fn(&ToyTransducerParams, usize, usize) -> Result<(f64, ParamGradients)> + Sync,
{
    let mut state = OptimizerState::new(params, cfg.learning_rate);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = f64::NAN;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = derived_rng(cfg.seed(), shuffle_stream + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let current: &ToyTransducerParams = params;
            let results = match batch
                .par_iter()
                .map(|&i| example(current, i, epoch))
                .collect::<Result<Vec<_>>>()
            {
                // Overflowing weights surface as non-finite activations.
                Err(PipelineError::Core(CoreError::NonFinite(_))) if step > 0 => {
                    return Err(PipelineError::Diverged {
                        step: step + 1,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            let mut grads = ParamGradients::zeros_like(params);
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                grads.add_scaled(g, 1.0);
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            grads.scale(scale);
            step += 1;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(PipelineError::Diverged { step, loss });
            }
            optimizer_step(params, &grads, &mut state);
            curve.push((step, loss));
            epoch_loss += loss * batch.len() as f64;
        }
        final_loss = epoch_loss / n.max(1) as f64;
    }

    if cfg.epochs == 0 {
        let current: &ToyTransducerParams = params;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|i| example(current, i, 0).map(|(l, _)| l))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        final_loss = total / n.max(1) as f64;
    }
    Ok((curve, final_loss))
}

/// Conventional transducer training on the labeled split.
pub fn train_supervised(
    cfg: &ExperimentConfig,
    data: &Dataset,
    spec: RunSpec,
    ledger: &mut Ledger,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if data.labeled.is_empty() {
        return Err(PipelineError::Invalid("the labeled split is empty".into()));
    }
    let mut params = spec.init_params(cfg)?;
    let utts = &data.labeled;
    let (loss_curve, final_loss) = fit(&mut params, utts.len(), cfg, SHUFFLE_STREAM, |p, i, _| {
        let u = &utts[i];
        let y = u
            .labels
            .as_ref()
            .expect("labeled split carries transcripts");
        let (_, lattice) = p.forward(&u.features, y)?;
        let res = rnnt_loss(&lattice, y)?;
        Ok((res.loss, p.backprop(&u.features, y, &res.grad)?))
    })?;
    let ter = evaluate_ter(&params, &data.eval)?;
    let record = MetricsRecord {
        run_id: spec.run_id("supervised", cfg.seed()),
        role: spec.role,
        generation: spec.generation,
        ter,
        final_loss,
        loss_curve,
    };
    ledger.append(record.clone())?;
    Ok(TrainingOutcome { params, record })
}

/// Applies the configured student-side augmentation.
pub fn augment_features(
    x: &FeatureMatrix,
    cfg: &ExperimentConfig,
    kind: AugmentKind,
    rng: &mut transducer_distill_core::SeededRng,
) -> Result<FeatureMatrix> {
    let aug = cfg.augment.clamped_to(x.bins(), x.frames());
    Ok(match kind {
        AugmentKind::None => x.clone(),
        AugmentKind::Freq => freq_aug(x, &aug, rng)?,
        AugmentKind::Spec => spec_augment(x, &aug, rng)?,
        AugmentKind::Both => spec_augment(&freq_aug(x, &aug, rng)?, &aug, rng)?,
    })
}

/// Everything the teacher contributes for one unlabeled utterance.
struct TeacherTarget {
    pseudo_label: LabelSequence,
    lattice: Option<LogitLattice>,
    encoder: Option<Matrix>,
}

fn teacher_targets(
    teacher: &ToyTransducerParams,
    utts: &[Utterance],
    cfg: &ExperimentConfig,
) -> Result<Vec<TeacherTarget>> {
    let need_lattice = cfg.distill.mode != DistillMode::Hard;
    let need_encoder = cfg.distill.consistency_weight > 0.0;
    utts.par_iter()
        .enumerate()
        .map(|(i, u)| {
            let view = if cfg.noisy_teacher {
                let mut rng = derived_rng(cfg.augment.seed, TEACHER_AUGMENT_STREAM + i as u64);
                augment_features(&u.features, cfg, cfg.augment_kind, &mut rng)?
            } else {
                u.features.clone()
            };
            let pseudo_label = teacher.greedy_decode(&view, label_cap(&view))?;
            let (encoder, lattice) = if need_lattice || need_encoder {
                let (enc, lat) = teacher.forward(&view, &pseudo_label)?;
                (need_encoder.then_some(enc), need_lattice.then_some(lat))
            } else {
                (None, None)
            };
            Ok(TeacherTarget {
                pseudo_label,
                lattice,
                encoder,
            })
        })
        .collect()
}

fn distill_objective(
    student_lattice: &LogitLattice,
    target: &TeacherTarget,
    cfg: &ExperimentConfig,
) -> Result<LossResult> {
    let y = &target.pseudo_label;
    let teacher = || {
        target
            .lattice
            .as_ref()
            .expect("soft modes keep the teacher lattice")
    };
    Ok(match cfg.distill.mode {
        DistillMode::Hard => rnnt_loss(student_lattice, y)?,
        DistillMode::Soft => kl_lattice_loss(teacher(), student_lattice, &cfg.distill)?,
        DistillMode::Efficient => coarsened_kl_loss(teacher(), student_lattice, y, &cfg.distill)?,
        DistillMode::Mixed => {
            let hard = rnnt_loss(student_lattice, y)?;
            let soft = kl_lattice_loss(teacher(), student_lattice, &cfg.distill)?;
            combined_loss(&hard, &soft, &cfg.distill)?
        }
    })
}

/// Distils `teacher` into a fresh student on the unlabeled split.
///
/// The teacher greedy-decodes each utterance; the pseudo label fixes the
/// lattice height for both models. The teacher sees clean features unless
/// `noisy_teacher` is set, the student always sees augmented ones.
pub fn distill_run(
    teacher: &ToyTransducerParams,
    cfg: &ExperimentConfig,
    data: &Dataset,
    spec: RunSpec,
    ledger: &mut Ledger,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if teacher.vocab() != cfg.task.vocab || teacher.input_dim() != cfg.task.feature_dim {
        return Err(PipelineError::IncompatibleModel(format!(
            "teacher has K={} Fin={}, the task has K={} Fin={}",
            teacher.vocab(),
            teacher.input_dim(),
            cfg.task.vocab,
            cfg.task.feature_dim
        )));
    }
    if cfg.distill.consistency_weight > 0.0 && teacher.hidden() != spec.hidden {
        return Err(PipelineError::IncompatibleModel(format!(
            "consistency loss needs equal encoder widths, teacher H={} student H={}",
            teacher.hidden(),
            spec.hidden
        )));
    }
    let utts = &data.unlabeled;
    if utts.is_empty() {
        return Err(PipelineError::Invalid(
            "the unlabeled split is empty".into(),
        ));
    }
    let targets = teacher_targets(teacher, utts, cfg)?;
    let n = utts.len();
    let mut params = spec.init_params(cfg)?;
    let stream = SHUFFLE_STREAM + ((spec.generation as u64 + 1) << 20);
    let (loss_curve, final_loss) = fit(&mut params, n, cfg, stream, |p, i, epoch| {
        let mut rng = derived_rng(
            cfg.augment.seed,
            STUDENT_AUGMENT_STREAM + (epoch * n + i) as u64 + ((spec.generation as u64) << 40),
        );
        let x = augment_features(&utts[i].features, cfg, cfg.augment_kind, &mut rng)?;
        let target = &targets[i];
        let (enc, lattice) = p.forward(&x, &target.pseudo_label)?;
        let mut res = distill_objective(&lattice, target, cfg)?;
        let enc_grad = match &target.encoder {
            Some(teacher_enc) => {
                let mut c = consistency_loss(teacher_enc, &enc)?;
                let w = cfg.distill.consistency_weight;
                res.loss += w * c.loss;
                for g in c.grad.as_mut_slice() {
                    *g *= w;
                }
                Some(c.grad)
            }
            None => None,
        };
        let grads =
            p.backprop_with_encoder_grad(&x, &target.pseudo_label, &res.grad, enc_grad.as_ref())?;
        Ok((res.loss, grads))
    })?;
    let ter = evaluate_ter(&params, &data.eval)?;
    let record = MetricsRecord {
        run_id: spec.run_id(cfg.distill.mode.as_str(), cfg.seed()),
        role: spec.role,
        generation: spec.generation,
        ter,
        final_loss,
        loss_curve,
    };
    ledger.append(record.clone())?;
    Ok(TrainingOutcome { params, record })
}

/// Generation 0 trains a supervised teacher; each later generation distils
/// the previous model into a fresh model of the teacher's width, which then
/// becomes the teacher.
pub fn nst_loop(
    cfg: &ExperimentConfig,
    data: &Dataset,
    ledger: &mut Ledger,
) -> Result<Vec<TrainingOutcome>> {
    cfg.validate()?;
    let mut outcomes = vec![train_supervised(cfg, data, RunSpec::teacher(cfg), ledger)?];
    for generation in 1..cfg.generations {
        let spec = RunSpec {
            role: Role::Student,
            generation,
            hidden: cfg.teacher_hidden,
        };
        let previous = &outcomes.last().expect("generation 0 exists").params;
        let next = distill_run(previous, cfg, data, spec, ledger)?;
        outcomes.push(next);
    }
    Ok(outcomes)
}
