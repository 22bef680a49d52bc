//! Command-line front end.
//!
//! Exit codes: `0` success, `1` usage error, `2` runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use transducer_distill_core::distill::{coarsened_kl_loss, combined_loss, kl_lattice_loss};
use transducer_distill_core::lattice::rnnt_loss;
use transducer_distill_core::{derived_rng, DistillMode, FeatureMatrix, LabelSequence};

use crate::config::{AugmentKind, ExperimentConfig};
use crate::dataset::{gen_synthetic_dataset, load_dataset, parse_labels};
use crate::error::{PipelineError, Result};
use crate::metrics::Ledger;
use crate::model_io::{load_params, save_params};
use crate::tensor_file::{read_lattice, read_matrix, write_tensor, Tensor};
use crate::train::{distill_run, evaluate_ter, nst_loop, train_supervised, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "transducer-distill",
    version,
    about = "Transducer teacher/student distillation on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic labeled/unlabeled/eval corpus.
    GenData(Common),
    /// Train a supervised teacher on the labeled split.
    Train(Common),
    /// Distil a saved teacher into a student on the unlabeled split.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Directory of the teacher model.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Run supervised training followed by noisy-student generations.
    Nst(Common),
    /// Report the token error rate of a saved model on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Apply the configured augmentation to an F x T tensor file.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the configured augmentation kind (none|freq|spec|both).
        #[arg(long)]
        kind: Option<AugmentKind>,
    },
    /// Compute the configured loss between two stored lattices.
    Loss {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher_lattice: PathBuf,
        #[arg(long)]
        student_lattice: PathBuf,
        /// Space-separated token ids; required by hard, mixed and efficient.
        #[arg(long)]
        labels: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// key=value experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// hard, soft, mixed or efficient.
    #[arg(long)]
    mode: Option<DistillMode>,
    /// Weight of the transducer loss in mixed mode.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau_teacher: Option<f64>,
    #[arg(long)]
    tau_student: Option<f64>,
    /// Frames per KL evaluation chunk.
    #[arg(long)]
    chunk_frames: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    /// Run directory for models and metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Let the teacher see augmented input too.
    #[arg(long)]
    noisy_teacher: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(mode) = self.mode {
            cfg.distill.mode = mode;
        }
        if let Some(alpha) = self.alpha {
            cfg.distill.alpha = alpha;
        }
        if let Some(tau) = self.tau_teacher {
            cfg.distill.tau_teacher = tau;
        }
        if let Some(tau) = self.tau_student {
            cfg.distill.tau_student = tau;
        }
        if let Some(chunk) = self.chunk_frames {
            cfg.distill.chunk_frames = chunk;
        }
        if let Some(g) = self.generations {
            cfg.generations = g;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(data) = &self.data {
            cfg.data_dir = data.clone();
        }
        cfg.noisy_teacher |= self.noisy_teacher;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    if argv.len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let _ = writeln!(stderr, "{}", cmd.render_help());
        return EXIT_USAGE;
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            if informational {
                let _ = write!(stdout, "{rendered}");
                return EXIT_OK;
            }
            let _ = write!(stderr, "{rendered}");
            return EXIT_USAGE;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                PipelineError::Config { .. } | PipelineError::Invalid(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn write_config_echo(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(PipelineError::io(&cfg.out_dir))?;
    let path = cfg.out_dir.join("config.txt");
    std::fs::write(&path, cfg.render()).map_err(PipelineError::io(&path))
}

fn load_data(cfg: &ExperimentConfig) -> Result<crate::dataset::Dataset> {
    load_dataset(&cfg.data_dir)
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    let mut say = |line: String| -> Result<()> {
        writeln!(out, "{line}").map_err(PipelineError::io("<stdout>"))
    };
    match command {
        Command::GenData(common) => {
            let cfg = common.resolve()?;
            let data = gen_synthetic_dataset(&cfg.task, &cfg.data_dir)?;
            say(format!(
                "wrote {} labeled, {} unlabeled, {} eval utterances to {}",
                data.labeled.len(),
                data.unlabeled.len(),
                data.eval.len(),
                cfg.data_dir.display()
            ))?;
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let data = load_data(&cfg)?;
            write_config_echo(&cfg)?;
            let mut ledger = Ledger::at_dir(&cfg.out_dir)?;
            let outcome = train_supervised(&cfg, &data, RunSpec::teacher(&cfg), &mut ledger)?;
            save_params(&cfg.out_dir.join("teacher"), &outcome.params)?;
            say(format!(
                "{} ter={}",
                outcome.record.run_id, outcome.record.ter
            ))?;
        }
        Command::Distill { common, teacher } => {
            let cfg = common.resolve()?;
            let data = load_data(&cfg)?;
            let teacher = load_params(&teacher)?;
            write_config_echo(&cfg)?;
            let mut ledger = Ledger::at_dir(&cfg.out_dir)?;
            let outcome = distill_run(
                &teacher,
                &cfg,
                &data,
                RunSpec::student(&cfg, 1),
                &mut ledger,
            )?;
            save_params(&cfg.out_dir.join("student"), &outcome.params)?;
            say(format!(
                "{} ter={}",
                outcome.record.run_id, outcome.record.ter
            ))?;
        }
        Command::Nst(common) => {
            let cfg = common.resolve()?;
            let data = load_data(&cfg)?;
            write_config_echo(&cfg)?;
            let mut ledger = Ledger::at_dir(&cfg.out_dir)?;
            let outcomes = nst_loop(&cfg, &data, &mut ledger)?;
            for (g, o) in outcomes.iter().enumerate() {
                save_params(&cfg.out_dir.join(format!("gen{g}")), &o.params)?;
                say(format!("{} ter={}", o.record.run_id, o.record.ter))?;
            }
        }
        Command::Eval { common, model } => {
            let cfg = common.resolve()?;
            let data = load_data(&cfg)?;
            let params = load_params(&model)?;
            say(format!("ter={}", evaluate_ter(&params, &data.eval)?))?;
        }
        Command::Augment {
            common,
            input,
            output,
            kind,
        } => {
            let cfg = common.resolve()?;
            let x = FeatureMatrix::new(read_matrix(&input)?)?;
            let mut rng = derived_rng(cfg.augment.seed, 0);
            let y = crate::train::augment_features(
                &x,
                &cfg,
                kind.unwrap_or(cfg.augment_kind),
                &mut rng,
            )?;
            write_tensor(&output, &Tensor::from_matrix(y.matrix()))?;
            say(format!("wrote {}", output.display()))?;
        }
        Command::Loss {
            common,
            teacher_lattice,
            student_lattice,
            labels,
        } => {
            let cfg = common.resolve()?;
            let loss = lattice_loss(&cfg, &teacher_lattice, &student_lattice, labels.as_deref())?;
            say(format!("{loss:?}"))?;
        }
    }
    Ok(())
}

fn lattice_loss(
    cfg: &ExperimentConfig,
    teacher: &Path,
    student: &Path,
    labels: Option<&str>,
) -> Result<f64> {
    let teacher = read_lattice(teacher)?;
    let student = read_lattice(student)?;
    let labels = || -> Result<LabelSequence> {
        let text = labels.ok_or_else(|| {
            PipelineError::Invalid(format!("--labels is required in {} mode", cfg.distill.mode))
        })?;
        parse_labels(text).map_err(PipelineError::Invalid)
    };
    let d = &cfg.distill;
    Ok(match d.mode {
        DistillMode::Soft => kl_lattice_loss(&teacher, &student, d)?.loss,
        DistillMode::Hard => rnnt_loss(&student, &labels()?)?.loss,
        DistillMode::Efficient => coarsened_kl_loss(&teacher, &student, &labels()?, d)?.loss,
        DistillMode::Mixed => {
            let y = labels()?;
            let hard = rnnt_loss(&student, &y)?;
            let soft = kl_lattice_loss(&teacher, &student, d)?;
            combined_loss(&hard, &soft, d)?.loss
        }
    })
}
