use transducer_distill::config::ExperimentConfig;
use transducer_distill::dataset::{generate, Dataset};
use transducer_distill::metrics::{Ledger, Role};
use transducer_distill::train::{distill_run, evaluate_ter, nst_loop, train_supervised, RunSpec};
use transducer_distill::PipelineError;
use transducer_distill_core::{DistillMode, ToyTransducerParams};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task.labeled = 200;
    cfg.task.unlabeled = 300;
    cfg.task.eval = 60;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg
}

fn data(cfg: &ExperimentConfig) -> Dataset {
    generate(&cfg.task).unwrap()
}

fn same_params(a: &ToyTransducerParams, b: &ToyTransducerParams) -> bool {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = ExperimentConfig {
        epochs: 0,
        ..small_config()
    };
    let d = data(&cfg);
    let spec = RunSpec::teacher(&cfg);
    let out = train_supervised(&cfg, &d, spec, &mut Ledger::in_memory()).unwrap();
    let init = spec.init_params(&cfg).unwrap();
    assert!(same_params(&out.params, &init));
    assert!(out.record.loss_curve.is_empty());
    assert!(out.record.final_loss.is_finite());
    assert_eq!(out.record.ter, evaluate_ter(&init, &d.eval).unwrap());
    assert!(out.record.ter > 0.5, "untrained TER {}", out.record.ter);
}

#[test]
fn training_beats_the_untrained_model_and_the_loss_falls() {
    let cfg = small_config();
    let d = data(&cfg);
    let spec = RunSpec::teacher(&cfg);
    let untrained = evaluate_ter(&spec.init_params(&cfg).unwrap(), &d.eval).unwrap();
    let out = train_supervised(&cfg, &d, spec, &mut Ledger::in_memory()).unwrap();
    assert!(
        out.record.ter < untrained,
        "{} vs {untrained}",
        out.record.ter
    );

    // One smoothing window per epoch.
    let per_epoch = d.labeled.len().div_ceil(cfg.batch_size);
    let means: Vec<f64> = out
        .record
        .loss_curve
        .chunks(per_epoch)
        .map(|w| w.iter().map(|(_, l)| l).sum::<f64>() / w.len() as f64)
        .collect();
    assert_eq!(means.len(), cfg.epochs);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn identical_runs_are_identical() {
    let cfg = small_config();
    let d = data(&cfg);
    let a = train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    let b = train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    assert!(same_params(&a.params, &b.params));
    assert_eq!(a.record.csv_row(), b.record.csv_row());
    assert_eq!(a.record.loss_curve, b.record.loss_curve);
    assert_eq!(
        evaluate_ter(&a.params, &d.labeled).unwrap(),
        evaluate_ter(&b.params, &d.labeled).unwrap()
    );
}

#[test]
fn zero_learning_rate_leaves_the_student_at_its_initialization() {
    let cfg = small_config();
    let d = data(&cfg);
    let teacher =
        train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    let frozen = ExperimentConfig {
        learning_rate: 0.0,
        ..cfg.with_mode(DistillMode::Soft)
    };
    let spec = RunSpec::student(&frozen, 1);
    let out = distill_run(&teacher.params, &frozen, &d, spec, &mut Ledger::in_memory()).unwrap();
    let init = spec.init_params(&frozen).unwrap();
    assert!(same_params(&out.params, &init));
    assert_eq!(out.record.ter, evaluate_ter(&init, &d.eval).unwrap());
}

#[test]
fn every_mode_trains_a_student() {
    let cfg = small_config();
    let d = data(&cfg);
    let mut ledger = Ledger::in_memory();
    let teacher = train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut ledger).unwrap();
    for mode in [
        DistillMode::Hard,
        DistillMode::Soft,
        DistillMode::Mixed,
        DistillMode::Efficient,
    ] {
        let mut c = cfg.with_mode(mode);
        c.distill.alpha = 0.5;
        let out = distill_run(
            &teacher.params,
            &c,
            &d,
            RunSpec::student(&c, 1),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(out.record.role, Role::Student);
        assert!(out.record.ter.is_finite() && out.record.ter >= 0.0);
        assert!(out.record.run_id.contains(mode.as_str()));
    }
    assert_eq!(ledger.records().len(), 5);
}

#[test]
fn consistency_term_needs_matching_encoder_widths() {
    let cfg = small_config();
    let d = data(&cfg);
    let teacher =
        train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    let mut c = cfg.clone();
    c.distill.consistency_weight = 0.3;
    let out = distill_run(
        &teacher.params,
        &c,
        &d,
        RunSpec::student(&c, 1),
        &mut Ledger::in_memory(),
    )
    .unwrap();
    assert!(out.record.final_loss.is_finite());

    c.student_hidden = 8;
    let err = distill_run(
        &teacher.params,
        &c,
        &d,
        RunSpec::student(&c, 1),
        &mut Ledger::in_memory(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::IncompatibleModel(_)), "{err}");
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let cfg = small_config();
    let d = data(&cfg);
    let mut rng = transducer_distill_core::derived_rng(0, 0);
    let wrong = ToyTransducerParams::init(8, 16, 7, cfg.activation, &mut rng).unwrap();
    let err = distill_run(
        &wrong,
        &cfg,
        &d,
        RunSpec::student(&cfg, 1),
        &mut Ledger::in_memory(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::IncompatibleModel(_)), "{err}");
}

#[test]
fn noisy_teacher_changes_the_targets() {
    let cfg = small_config();
    let d = data(&cfg);
    let teacher =
        train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    let clean = distill_run(
        &teacher.params,
        &cfg,
        &d,
        RunSpec::student(&cfg, 1),
        &mut Ledger::in_memory(),
    )
    .unwrap();
    let noisy_cfg = ExperimentConfig {
        noisy_teacher: true,
        ..cfg.clone()
    };
    let noisy = distill_run(
        &teacher.params,
        &noisy_cfg,
        &d,
        RunSpec::student(&cfg, 1),
        &mut Ledger::in_memory(),
    )
    .unwrap();
    assert_ne!(clean.record.loss_curve, noisy.record.loss_curve);
}

#[test]
fn divergence_names_the_step() {
    let cfg = ExperimentConfig {
        learning_rate: 1e300,
        ..small_config()
    };
    let d = data(&cfg);
    let err =
        train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap_err();
    match err {
        PipelineError::Diverged { step, .. } => assert!(step >= 2, "step {step}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn one_generation_is_supervised_training() {
    let cfg = small_config();
    let d = data(&cfg);
    let mut ledger = Ledger::in_memory();
    let loop_out = nst_loop(&cfg, &d, &mut ledger).unwrap();
    let direct =
        train_supervised(&cfg, &d, RunSpec::teacher(&cfg), &mut Ledger::in_memory()).unwrap();
    assert_eq!(loop_out.len(), 1);
    assert_eq!(ledger.records().len(), 1);
    assert!(same_params(&loop_out[0].params, &direct.params));
    assert_eq!(loop_out[0].record.csv_row(), direct.record.csv_row());
}

#[test]
fn nst_records_one_entry_per_generation() {
    let cfg = ExperimentConfig {
        generations: 3,
        ..small_config()
    };
    let d = data(&cfg);
    let mut ledger = Ledger::in_memory();
    let out = nst_loop(&cfg, &d, &mut ledger).unwrap();
    assert_eq!(out.len(), 3);
    let gens: Vec<usize> = ledger.records().iter().map(|r| r.generation).collect();
    assert_eq!(gens, vec![0, 1, 2]);
    assert_eq!(ledger.records()[0].role, Role::Teacher);
    assert!(ledger.records()[1..]
        .iter()
        .all(|r| r.role == Role::Student));
    assert!(out.iter().all(|o| o.params.hidden() == cfg.teacher_hidden));
}

#[test]
fn default_dataset_generates_quickly() {
    let cfg = ExperimentConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let d = transducer_distill::dataset::gen_synthetic_dataset(&cfg.task, dir.path()).unwrap();
    assert!(start.elapsed() < std::time::Duration::from_secs(10));
    assert_eq!(
        (d.labeled.len(), d.unlabeled.len(), d.eval.len()),
        (2000, 8000, 500)
    );
    let back = transducer_distill::dataset::load_dataset(dir.path()).unwrap();
    assert_eq!(back.unlabeled.len(), 8000);
    assert!(back.unlabeled.iter().all(|u| u.labels.is_none()));
    assert!(back.eval.iter().all(|u| u.labels.is_some()));
}
