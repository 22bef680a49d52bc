//! Synthetic token-to-frames corpus and its on-disk layout.
//!
//! ```text
//! DIR/manifest.txt
//! DIR/{labeled,unlabeled,eval}/features/NNNNNN.rntd
//! DIR/{labeled,eval}/labels.txt
//! ```
//!
//! Each token id owns a fixed prototype vector. An utterance is a token
//! sequence without immediate repeats; every token contributes 1–3 frames of
//! its prototype plus Gaussian noise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use transducer_distill_core::{derived_rng, FeatureMatrix, LabelSequence, Matrix};

use crate::config::SyntheticTaskConfig;
use crate::error::{PipelineError, Result};
use crate::tensor_file::{read_features, write_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Labeled, Split::Unlabeled, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Eval => "eval",
        }
    }

    fn has_labels(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }

    /// Generator stream base, kept apart from the prototype stream.
    fn stream_base(self) -> u64 {
        match self {
            Split::Labeled => 1 << 32,
            Split::Unlabeled => 2 << 32,
            Split::Eval => 3 << 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureMatrix,
    /// Present on the labeled and eval splits.
    pub labels: Option<LabelSequence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<Utterance>,
    pub unlabeled: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Labeled => &self.labeled,
            Split::Unlabeled => &self.unlabeled,
            Split::Eval => &self.eval,
        }
    }
}

const PROTOTYPE_STREAM: u64 = 0;

/// Prototype vectors, row `k` for token `k` (row 0, blank, is unused).
pub fn prototypes(cfg: &SyntheticTaskConfig) -> Matrix {
    let mut rng = derived_rng(cfg.seed, PROTOTYPE_STREAM);
    Matrix::from_fn(cfg.vocab, cfg.feature_dim, |k, _| {
        if k == 0 {
            0.0
        } else {
            rng.sample(StandardNormal)
        }
    })
}

fn generate_utterance(
    cfg: &SyntheticTaskConfig,
    protos: &Matrix,
    split: Split,
    index: usize,
) -> Utterance {
    let mut rng = derived_rng(cfg.seed, split.stream_base() + index as u64);
    let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let mut tokens = Vec::with_capacity(len);
    let mut prev = 0;
    for _ in 0..len {
        // Uniform over the ids other than the previous one.
        let mut id = rng.random_range(1..cfg.vocab - usize::from(prev != 0));
        if prev != 0 && id >= prev {
            id += 1;
        }
        tokens.push(id);
        prev = id;
    }
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for &id in &tokens {
        let repeat = rng.random_range(cfg.min_frames_per_token..=cfg.max_frames_per_token);
        for _ in 0..repeat {
            frames.push(
                protos
                    .row(id)
                    .iter()
                    .map(|&p| {
                        let z: f64 = rng.sample(StandardNormal);
                        p + cfg.noise_std * z
                    })
                    .collect(),
            );
        }
    }
    let m = Matrix::from_fn(cfg.feature_dim, frames.len(), |f, t| frames[t][f]);
    Utterance {
        features: FeatureMatrix::new(m).expect("generated features are finite and non-empty"),
        labels: split
            .has_labels()
            .then(|| LabelSequence::new(tokens).expect("generated ids are non-blank")),
    }
}

/// Builds the whole corpus in memory; identical for identical configs.
pub fn generate(cfg: &SyntheticTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let make = |split: Split, n: usize| -> Vec<Utterance> {
        (0..n)
            .into_par_iter()
            .map(|i| generate_utterance(cfg, &protos, split, i))
            .collect()
    };
    Ok(Dataset {
        labeled: make(Split::Labeled, cfg.labeled),
        unlabeled: make(Split::Unlabeled, cfg.unlabeled),
        eval: make(Split::Eval, cfg.eval),
    })
}

fn manifest(cfg: &SyntheticTaskConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "labeled={}", cfg.labeled);
    let _ = writeln!(s, "unlabeled={}", cfg.unlabeled);
    let _ = writeln!(s, "eval={}", cfg.eval);
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "vocab={}", cfg.vocab);
    let _ = writeln!(s, "feature_dim={}", cfg.feature_dim);
    let _ = writeln!(s, "min_frames_per_token={}", cfg.min_frames_per_token);
    let _ = writeln!(s, "max_frames_per_token={}", cfg.max_frames_per_token);
    let _ = writeln!(s, "noise_std={}", cfg.noise_std);
    let _ = writeln!(s, "min_tokens={}", cfg.min_tokens);
    let _ = writeln!(s, "max_tokens={}", cfg.max_tokens);
    s
}

fn feature_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("features").join(format!("{index:06}.rntd"))
}

pub fn format_labels(labels: &LabelSequence) -> String {
    labels
        .tokens()
        .iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates the corpus and writes it under `dir`.
pub fn gen_synthetic_dataset(cfg: &SyntheticTaskConfig, dir: &Path) -> Result<Dataset> {
    let data = generate(cfg)?;
    write_dataset(&data, cfg, dir)?;
    Ok(data)
}

pub fn write_dataset(data: &Dataset, cfg: &SyntheticTaskConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest(cfg)).map_err(PipelineError::io(&manifest_path))?;
    for split in Split::ALL {
        let split_dir = dir.join(split.name());
        let features_dir = split_dir.join("features");
        fs::create_dir_all(&features_dir).map_err(PipelineError::io(&features_dir))?;
        let utts = data.split(split);
        utts.par_iter().enumerate().try_for_each(|(i, u)| {
            write_tensor(
                &feature_path(&split_dir, i),
                &Tensor::from_matrix(u.features.matrix()),
            )
        })?;
        if split.has_labels() {
            let mut text = String::new();
            for u in utts {
                let labels = u
                    .labels
                    .as_ref()
                    .expect("labeled split carries transcripts");
                text.push_str(&format_labels(labels));
                text.push('\n');
            }
            let path = split_dir.join("labels.txt");
            fs::write(&path, text).map_err(PipelineError::io(&path))?;
        }
    }
    Ok(())
}

fn parse_manifest(dir: &Path) -> Result<[usize; 3]> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
    let mut sizes = [None; 3];
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let slot = match k {
                "labeled" => 0,
                "unlabeled" => 1,
                "eval" => 2,
                _ => continue,
            };
            sizes[slot] = Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| PipelineError::Dataset {
                        path: path.clone(),
                        reason: format!("bad split size `{v}`: {e}"),
                    })?,
            );
        }
    }
    match sizes {
        [Some(a), Some(b), Some(c)] => Ok([a, b, c]),
        _ => Err(PipelineError::Dataset {
            path,
            reason: "manifest misses a split size".into(),
        }),
    }
}

fn parse_label_line(line: &str) -> std::result::Result<LabelSequence, String> {
    let ids = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|e| format!("bad token `{tok}`: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    LabelSequence::new(ids).map_err(|e| e.to_string())
}

pub fn parse_labels(text: &str) -> std::result::Result<LabelSequence, String> {
    parse_label_line(text)
}

/// Reads a corpus written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let sizes = parse_manifest(dir)?;
    let mut splits = Vec::with_capacity(3);
    for (split, n) in Split::ALL.into_iter().zip(sizes) {
        let split_dir = dir.join(split.name());
        let labels = if split.has_labels() {
            let path = split_dir.join("labels.txt");
            let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
            let parsed = text
                .lines()
                .map(parse_label_line)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|reason| PipelineError::Dataset {
                    path: path.clone(),
                    reason,
                })?;
            if parsed.len() != n {
                return Err(PipelineError::Dataset {
                    path,
                    reason: format!("{} transcripts for {n} utterances", parsed.len()),
                });
            }
            parsed.into_iter().map(Some).collect()
        } else {
            vec![None; n]
        };
        let utts = (0..n)
            .into_par_iter()
            .zip(labels)
            .map(|(i, labels)| {
                Ok(Utterance {
                    features: read_features(&feature_path(&split_dir, i))?,
                    labels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push(utts);
    }
    let eval = splits.pop().expect("three splits");
    let unlabeled = splits.pop().expect("three splits");
    let labeled = splits.pop().expect("three splits");
    Ok(Dataset {
        labeled,
        unlabeled,
        eval,
    })
}
