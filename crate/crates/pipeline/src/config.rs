//! Experiment configuration and its `key=value` file format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! unknown keys are errors. [`ExperimentConfig::render`] writes every key,
//! so a rendered config parses back to the same value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use transducer_distill_core::{Activation, AugmentConfig, DistillConfig, DistillMode};

use crate::error::{PipelineError, Result};

/// Shape of the synthetic token-to-frames task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskConfig {
    /// Vocabulary size including blank.
    pub vocab: usize,
    pub feature_dim: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub noise_std: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub eval: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            vocab: 6,
            feature_dim: 8,
            min_frames_per_token: 1,
            max_frames_per_token: 3,
            noise_std: 1.0,
            min_tokens: 2,
            max_tokens: 6,
            labeled: 2000,
            unlabeled: 8000,
            eval: 500,
            seed: 1,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(PipelineError::Invalid(format!(
                "vocab {} must be at least 3",
                self.vocab
            )));
        }
        if self.feature_dim < 2 {
            return Err(PipelineError::Invalid(
                "feature_dim must be at least 2".into(),
            ));
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return Err(PipelineError::Invalid(format!(
                "frames-per-token range [{}, {}] is empty",
                self.min_frames_per_token, self.max_frames_per_token
            )));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(PipelineError::Invalid(format!(
                "utterance-length range [{}, {}] is empty",
                self.min_tokens, self.max_tokens
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(PipelineError::Invalid(
                "noise_std must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Which augmentation the student input receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AugmentKind {
    None,
    /// Frequency warping followed by frequency noise.
    Freq,
    /// Masking only.
    #[default]
    Spec,
    /// Frequency augmentation, then masking.
    Both,
}

impl AugmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Freq => "freq",
            AugmentKind::Spec => "spec",
            AugmentKind::Both => "both",
        }
    }
}

impl FromStr for AugmentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "freq" => Ok(Self::Freq),
            "spec" => Ok(Self::Spec),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown augmentation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: SyntheticTaskConfig,
    pub distill: DistillConfig,
    pub augment: AugmentConfig,
    pub augment_kind: AugmentKind,
    pub teacher_hidden: usize,
    pub student_hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub generations: usize,
    pub noisy_teacher: bool,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTaskConfig::default(),
            distill: DistillConfig::default(),
            augment: AugmentConfig {
                // Time masks only: zeroing whole bins out of eight erases
                // token identity.
                freq_masks: 0,
                freq_mask_max: 2,
                time_masks: 2,
                time_mask_max: 2,
                seed: SyntheticTaskConfig::default().seed,
                ..AugmentConfig::default()
            },
            augment_kind: AugmentKind::Spec,
            teacher_hidden: 16,
            student_hidden: 16,
            activation: Activation::SquaredRelu,
            learning_rate: 0.01,
            epochs: 8,
            batch_size: 32,
            generations: 1,
            noisy_teacher: false,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "vocab",
        "feature_dim",
        "min_frames_per_token",
        "max_frames_per_token",
        "noise_std",
        "min_tokens",
        "max_tokens",
        "labeled",
        "unlabeled",
        "eval",
        "teacher_hidden",
        "student_hidden",
        "activation",
        "learning_rate",
        "epochs",
        "batch_size",
        "generations",
        "mode",
        "alpha",
        "tau_teacher",
        "tau_student",
        "chunk_frames",
        "consistency_weight",
        "augment",
        "gamma_f",
        "sigma_noise",
        "freq_masks",
        "freq_mask_max",
        "time_masks",
        "time_mask_max",
        "noisy_teacher",
        "data",
        "out",
    ];

    /// The single run seed; also seeds the dataset and augmentation.
    pub fn seed(&self) -> u64 {
        self.task.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.task.seed = seed;
        self.augment.seed = seed;
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "vocab" => self.task.vocab = parse(key, value)?,
            "feature_dim" => self.task.feature_dim = parse(key, value)?,
            "min_frames_per_token" => self.task.min_frames_per_token = parse(key, value)?,
            "max_frames_per_token" => self.task.max_frames_per_token = parse(key, value)?,
            "noise_std" => self.task.noise_std = parse(key, value)?,
            "min_tokens" => self.task.min_tokens = parse(key, value)?,
            "max_tokens" => self.task.max_tokens = parse(key, value)?,
            "labeled" => self.task.labeled = parse(key, value)?,
            "unlabeled" => self.task.unlabeled = parse(key, value)?,
            "eval" => self.task.eval = parse(key, value)?,
            "teacher_hidden" => self.teacher_hidden = parse(key, value)?,
            "student_hidden" => self.student_hidden = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "generations" => self.generations = parse(key, value)?,
            "mode" => self.distill.mode = parse(key, value)?,
            "alpha" => self.distill.alpha = parse(key, value)?,
            "tau_teacher" => self.distill.tau_teacher = parse(key, value)?,
            "tau_student" => self.distill.tau_student = parse(key, value)?,
            "chunk_frames" => self.distill.chunk_frames = parse(key, value)?,
            "consistency_weight" => self.distill.consistency_weight = parse(key, value)?,
            "augment" => self.augment_kind = parse(key, value)?,
            "gamma_f" => self.augment.gamma_f = parse(key, value)?,
            "sigma_noise" => self.augment.sigma_noise = parse(key, value)?,
            "freq_masks" => self.augment.freq_masks = parse(key, value)?,
            "freq_mask_max" => self.augment.freq_mask_max = parse(key, value)?,
            "time_masks" => self.augment.time_masks = parse(key, value)?,
            "time_mask_max" => self.augment.time_mask_max = parse(key, value)?,
            "noisy_teacher" => self.noisy_teacher = parse(key, value)?,
            "data" => self.data_dir = PathBuf::from(value),
            "out" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PipelineError::Config {
                line: i + 1,
                reason: format!("expected key=value, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|reason| PipelineError::Config {
                    line: i + 1,
                    reason,
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.distill.validate()?;
        if !(0.0..=1.0).contains(&self.augment.gamma_f) {
            return Err(PipelineError::Invalid("gamma_f must lie in [0, 1]".into()));
        }
        if self.augment.sigma_noise.is_nan() || self.augment.sigma_noise < 0.0 {
            return Err(PipelineError::Invalid(
                "sigma_noise must be non-negative".into(),
            ));
        }
        if self.teacher_hidden == 0 || self.student_hidden == 0 {
            return Err(PipelineError::Invalid(
                "hidden sizes must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Invalid("batch_size must be positive".into()));
        }
        if self.generations == 0 {
            return Err(PipelineError::Invalid(
                "generations must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PipelineError::Invalid(
                "learning_rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its current value, one per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let t = &self.task;
        let d = &self.distill;
        let a = &self.augment;
        let lines: [(&str, String); 34] = [
            ("seed", t.seed.to_string()),
            ("vocab", t.vocab.to_string()),
            ("feature_dim", t.feature_dim.to_string()),
            ("min_frames_per_token", t.min_frames_per_token.to_string()),
            ("max_frames_per_token", t.max_frames_per_token.to_string()),
            ("noise_std", t.noise_std.to_string()),
            ("min_tokens", t.min_tokens.to_string()),
            ("max_tokens", t.max_tokens.to_string()),
            ("labeled", t.labeled.to_string()),
            ("unlabeled", t.unlabeled.to_string()),
            ("eval", t.eval.to_string()),
            ("teacher_hidden", self.teacher_hidden.to_string()),
            ("student_hidden", self.student_hidden.to_string()),
            ("activation", self.activation.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("generations", self.generations.to_string()),
            ("mode", d.mode.to_string()),
            ("alpha", d.alpha.to_string()),
            ("tau_teacher", d.tau_teacher.to_string()),
            ("tau_student", d.tau_student.to_string()),
            ("chunk_frames", d.chunk_frames.to_string()),
            ("consistency_weight", d.consistency_weight.to_string()),
            ("augment", self.augment_kind.as_str().to_string()),
            ("gamma_f", a.gamma_f.to_string()),
            ("sigma_noise", a.sigma_noise.to_string()),
            ("freq_masks", a.freq_masks.to_string()),
            ("freq_mask_max", a.freq_mask_max.to_string()),
            ("time_masks", a.time_masks.to_string()),
            ("time_mask_max", a.time_mask_max.to_string()),
            ("noisy_teacher", self.noisy_teacher.to_string()),
            ("data", self.data_dir.display().to_string()),
            ("out", self.out_dir.display().to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Distillation settings with the mode forced, for comparisons that run
    /// several modes off one config.
    pub fn with_mode(&self, mode: DistillMode) -> Self {
        let mut cfg = self.clone();
        cfg.distill.mode = mode;
        cfg
    }
}
