use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssl_core::checkpoint::Checkpoint;
use ssl_core::config::{LabelsSetting, Mode, TrainConfig};
use ssl_core::experiments::{continue_to_dir, replay, run_to_dir};
use ssl_core::metrics::{read_metrics, validate_metrics, MetricsRow};
use ssl_core::report::{RunArtifact, CHECKPOINT_FILE, METRICS_FILE};
use ssl_core::trainer::Trainer;
use ssl_core::Error;

fn short(mode: Mode, iterations: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        mode,
        iterations,
        eval_interval: 25,
        ..TrainConfig::default()
    };
    cfg.data.n = 300;
    cfg.data.test_n = 200;
    cfg
}

fn run_all(trainer: &mut Trainer) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    while !trainer.finished() {
        rows.push(trainer.step().unwrap());
    }
    rows
}

#[test]
fn same_seed_gives_identical_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(Mode::Full, 120);
    run_to_dir(&cfg, &dir.path().join("a")).unwrap();
    run_to_dir(&cfg, &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a").join(METRICS_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(METRICS_FILE)).unwrap();
    assert_eq!(a, b);

    let mut other = cfg.clone();
    other.seed = 1;
    run_to_dir(&other, &dir.path().join("c")).unwrap();
    assert_ne!(a, std::fs::read(dir.path().join("c").join(METRICS_FILE)).unwrap());
}

#[test]
fn resumed_run_matches_unbroken_run() {
    for mode in Mode::ALL {
        let cfg = short(mode, 160);
        let (data, eval) = cfg.build_data().unwrap();
        let mut unbroken = Trainer::new(cfg.clone(), data.clone(), eval.clone()).unwrap();
        for _ in 0..40 {
            unbroken.step().unwrap();
        }
        let bytes = unbroken.checkpoint().unwrap().to_bytes();
        let tail = run_all(&mut unbroken);

        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.to_bytes(), bytes);
        let mut resumed = Trainer::resume(&ck, data, eval).unwrap();
        assert_eq!(run_all(&mut resumed), tail, "{mode}");
        assert!(tail.len() >= 100);
        assert_eq!(resumed.model(), unbroken.model());
        assert_eq!(resumed.shadow(), unbroken.shadow());
        assert_eq!(resumed.thresholds(), unbroken.thresholds());
    }
}

#[test]
fn continued_run_writes_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(Mode::SatplOnly, 100);
    let whole = run_to_dir(&cfg, &dir.path().join("whole")).unwrap();

    let (data, eval) = cfg.build_data().unwrap();
    let mut trainer = Trainer::new(cfg.clone(), data.clone(), eval.clone()).unwrap();
    for _ in 0..30 {
        trainer.step().unwrap();
    }
    let ck = trainer.checkpoint().unwrap();
    let resumed = Trainer::resume(&ck, data, eval).unwrap();
    let part = continue_to_dir(resumed, &dir.path().join("part")).unwrap();
    assert_eq!(part.summary.final_accuracy, whole.summary.final_accuracy);
    assert_eq!(part.summary.final_tau, whole.summary.final_tau);
    assert_eq!(part.confusion, whole.confusion);

    let (_, whole_rows) = read_metrics(&dir.path().join("whole").join(METRICS_FILE)).unwrap();
    let (_, part_rows) = read_metrics(&dir.path().join("part").join(METRICS_FILE)).unwrap();
    assert_eq!(part_rows.as_slice(), &whole_rows[30..]);
}

#[test]
fn replay_reproduces_final_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(Mode::Full, 75);
    let outcome = run_to_dir(&cfg, dir.path()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let (shadow, _) = replay(&ck).unwrap();
    assert_eq!(shadow.accuracy, outcome.summary.final_accuracy);
    assert_eq!(shadow.confusion, outcome.confusion);
}

#[test]
fn hidden_labels_never_reach_training() {
    let cfg = short(Mode::Full, 80);
    let (data, eval) = cfg.build_data().unwrap();
    let mut scrambled = data.hidden_labels().as_slice().to_vec();
    scrambled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let decoy = data.clone().with_hidden_labels(scrambled).unwrap();

    let mut honest = Trainer::new(cfg.clone(), data, eval.clone()).unwrap();
    let mut fooled = Trainer::new(cfg, decoy, eval).unwrap();
    let a = run_all(&mut honest);
    let b = run_all(&mut fooled);
    assert_eq!(honest.model(), fooled.model());
    assert_eq!(honest.shadow(), fooled.shadow());
    assert_eq!(honest.thresholds(), fooled.thresholds());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.loss_total, x.tau, &x.sigma, x.accepted), (y.loss_total, y.tau, &y.sigma, y.accepted));
    }
    // Quality is the only column that reads them.
    assert!(a.iter().zip(&b).any(|(x, y)| x.pl_quality != y.pl_quality));
}

#[test]
fn fully_labeled_run_is_supervised_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short(Mode::Full, 40);
    cfg.data.labels_per_class = LabelsSetting::Keyword("all".into());
    run_to_dir(&cfg, dir.path()).unwrap();
    let run = RunArtifact::load(dir.path()).unwrap();
    assert_eq!(run.unlabeled_batch().unwrap(), 0);
    assert!(run.validate().unwrap().is_empty());
    assert!(run.rows.iter().all(|r| r.loss_u == 0.0 && r.accepted == 0 && r.anchors == 0));
}

#[test]
fn unequal_blobs_give_unequal_class_status() {
    let cfg = TrainConfig::from_toml_str(
        r#"
        iterations = 300
        eval_interval = 300
        mode = "satpl-only"
        [data]
        kind = "blobs"
        classes = 10
        n = 2000
        test_n = 200
        spreads = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
        "#,
    )
    .unwrap();
    let (data, eval) = cfg.build_data().unwrap();
    let mut trainer = Trainer::new(cfg, data, eval).unwrap();
    run_all(&mut trainer);
    let phi = trainer.thresholds().phi();
    assert!(phi.iter().min() < phi.iter().max(), "{phi:?}");
    let sigma = trainer.thresholds().sigma();
    assert!(sigma.iter().any(|&s| s < trainer.thresholds().tau()));
}

#[test]
fn diverging_run_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short(Mode::Full, 200);
    cfg.optim.lr = 1e6;
    cfg.optim.momentum = 0.0;
    match run_to_dir(&cfg, dir.path()) {
        Err(err @ Error::NonFinite { .. }) => {
            assert_eq!(err.exit_code(), 2);
            let ck = Checkpoint::load(&dir.path().join("last-good.ckpt")).unwrap();
            assert!(ck.params.iter().all(|p| p.is_finite()));
        }
        other => panic!("expected a numerical failure, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_logged_row_partitions_the_batch(
        mode_index in 0usize..4,
        labeled in 2usize..6,
        mu in 1usize..5,
        seed in 0u64..1000,
        eps_weak in 0.0f64..0.9,
        eps_strong in 0.0f64..0.9,
    ) {
        let mut cfg = short(Mode::ALL[mode_index], 30);
        cfg.seed = seed;
        cfg.batch.labeled = labeled;
        cfg.batch.mu = mu;
        cfg.uscl.eps_weak = eps_weak;
        cfg.uscl.eps_strong = eps_strong;
        cfg.uscl.negatives = 4;
        let (data, eval) = cfg.build_data().unwrap();
        let mut trainer = Trainer::new(cfg, data, eval).unwrap();
        let rows = run_all(&mut trainer);
        let violations = validate_metrics(&rows, labeled * mu);
        prop_assert!(violations.is_empty(), "{:?}", violations);
        for r in &rows {
            prop_assert!(r.sigma.iter().all(|&s| s <= r.tau));
            prop_assert_eq!(r.candidates, labeled * mu - 1);
        }
    }
}

#[test]
fn shipped_configs_parse() {
    let moons = TrainConfig::from_toml_str(include_str!("../../../configs/two-moons.toml")).unwrap();
    assert_eq!(moons, TrainConfig::default());
    let glyphs = TrainConfig::from_toml_str(include_str!("../../../configs/glyphs.toml")).unwrap();
    let (data, eval) = glyphs.build_data().unwrap();
    assert_eq!((data.classes, data.input_dim, eval.len()), (10, 64, 500));
}
