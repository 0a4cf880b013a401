use approx::assert_relative_eq;
use hazelight::fixtures::{paired_set, scene};
use hazelight::image::{save_image, ImagePlane};
use hazelight::iqa::{fit_niqe_model, NiqeModel};
use hazelight::network::Network;
use hazelight::training::{
    curriculum_round, load_dataset, run_semi_supervised, run_supervised, train_supervised, CurriculumState,
    OptimState, Provenance, Sample, TrainConfig,
};

fn config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        batch_size: 4,
        niqe_patch: 16,
        ..TrainConfig::default()
    }
}

fn fixture(count: usize, seed: u64) -> Vec<Sample> {
    paired_set(count, 32, (2.0, 3.0), 0.01, seed).unwrap()
}

#[test]
fn loads_paired_and_low_only() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        save_image(&scene(16, 16, i), dir.path().join(format!("low/p{i}.png"))).unwrap();
        save_image(&scene(16, 16, 10 + i), dir.path().join(format!("high/p{i}.png"))).unwrap();
    }
    for i in 0..2 {
        save_image(&scene(16, 16, 20 + i), dir.path().join(format!("low/u{i}.png"))).unwrap();
    }
    let loaded = load_dataset(dir.path()).unwrap();
    let labeled = loaded.samples.iter().filter(|s| s.provenance() == Provenance::TrueLabel).count();
    let unlabeled = loaded.samples.iter().filter(|s| s.provenance() == Provenance::Unlabeled).count();
    assert_eq!((labeled, unlabeled), (3, 2));
    assert!(loaded.diagnostics.is_empty());

    let again = load_dataset(dir.path()).unwrap();
    let ids: Vec<&str> = loaded.samples.iter().map(Sample::id).collect();
    assert_eq!(ids, again.samples.iter().map(Sample::id).collect::<Vec<_>>());
    assert_eq!(ids, ["p0", "p1", "p2", "u0", "u1"]);
}

#[test]
fn rejects_mismatched_pair() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&scene(16, 16, 1), dir.path().join("low/a.png")).unwrap();
    save_image(&scene(16, 24, 2), dir.path().join("high/a.png")).unwrap();
    save_image(&scene(16, 16, 3), dir.path().join("low/b.png")).unwrap();
    save_image(&scene(16, 16, 4), dir.path().join("high/b.png")).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.samples.len(), 1);
    assert_eq!(loaded.samples[0].id(), "b");
    assert_eq!(loaded.diagnostics.len(), 1);
    assert!(loaded.diagnostics[0].contains("a.png"));
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(dir.path()).is_err());
    std::fs::create_dir(dir.path().join("low")).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn smoothed_training_loss_does_not_rise() {
    let samples = fixture(16, 5);
    let cfg = TrainConfig {
        lr: 1e-3,
        stop_after_decays: None,
        ..config(10, 1)
    };
    let mut net = Network::new(cfg.net_config()).unwrap();
    let mut opt = OptimState::new(net.params(), &cfg);
    let report = train_supervised(&samples, &[], &cfg, &mut net, &mut opt, 0).unwrap();
    let curve = report.train_loss_curve();
    assert_eq!(curve.len(), 10);
    let smooth: Vec<f64> = curve.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{curve:?}");
    }
}

#[test]
fn zero_epochs_leave_parameters_alone() {
    let samples = fixture(4, 6);
    let cfg = config(0, 2);
    let mut net = Network::new(cfg.net_config()).unwrap();
    let before = net.params().flat_values();
    let mut opt = OptimState::new(net.params(), &cfg);
    let report = train_supervised(&samples, &samples[..1], &cfg, &mut net, &mut opt, 0).unwrap();
    assert_eq!(net.params().flat_values(), before);
    assert_eq!(report.epochs_run, 0);
    assert_eq!(report.records.len(), 1);
    assert_eq!(opt.step_count(), 0);
}

#[test]
fn batch_larger_than_dataset() {
    let samples = fixture(3, 7);
    let cfg = TrainConfig {
        batch_size: 64,
        ..config(2, 3)
    };
    let mut net = Network::new(cfg.net_config()).unwrap();
    let before = net.params().flat_values();
    let mut opt = OptimState::new(net.params(), &cfg);
    let report = train_supervised(&samples, &[], &cfg, &mut net, &mut opt, 0).unwrap();
    assert_eq!(report.epochs_run, 2);
    assert_eq!(opt.step_count(), 2);
    assert_ne!(net.params().flat_values(), before);
}

#[test]
fn unlabeled_only_is_insufficient() {
    let samples: Vec<Sample> = fixture(2, 8).iter().map(Sample::without_target).collect();
    let cfg = config(1, 0);
    let mut net = Network::new(cfg.net_config()).unwrap();
    let mut opt = OptimState::new(net.params(), &cfg);
    assert!(train_supervised(&samples, &[], &cfg, &mut net, &mut opt, 0).is_err());
}

struct Setup {
    labeled: Vec<Sample>,
    pool: Vec<Sample>,
    net: Network<f32>,
    model: NiqeModel,
}

fn setup() -> Setup {
    let all = fixture(16, 9);
    let labeled = all[..10].to_vec();
    let pool: Vec<Sample> = all[10..].iter().map(Sample::without_target).collect();
    let targets: Vec<ImagePlane> = labeled.iter().filter_map(|s| s.target().cloned()).collect();
    let model = fit_niqe_model(&targets, 16).unwrap();
    let net = Network::new(config(0, 4).net_config()).unwrap();
    Setup {
        labeled,
        pool,
        net,
        model,
    }
}

#[test]
fn infinite_tau_admits_everything() {
    let s = setup();
    let state = CurriculumState::new(s.labeled.clone(), s.pool.clone(), 4.0, f64::INFINITY).unwrap();
    let (next, record) = curriculum_round(&state, &s.net, &s.model).unwrap();
    assert_eq!(record.admitted, s.pool.len());
    assert!(next.pool().is_empty());
    assert_eq!(next.round(), 1);
    assert!(next.admitted().iter().all(|a| a.provenance() == Provenance::ActingLabel));
    for a in next.admitted() {
        assert_eq!(a.target().unwrap(), &s.net.enhance(a.low()).unwrap());
    }
    assert_eq!(next.training_set().len(), s.labeled.len() + s.pool.len());
}

#[test]
fn closed_gate_only_advances_the_round() {
    let s = setup();
    let state = CurriculumState::new(s.labeled.clone(), s.pool.clone(), -1e6, 1e-9).unwrap();
    let (next, record) = curriculum_round(&state, &s.net, &s.model).unwrap();
    assert_eq!(record.admitted, 0);
    assert_eq!(next.labeled(), state.labeled());
    assert_eq!(next.pool(), state.pool());
    assert!(next.admitted().is_empty());
    assert_eq!(next.round(), state.round() + 1);
}

#[test]
fn admitted_scores_respect_threshold() {
    let s = setup();
    let probe = CurriculumState::new(s.labeled.clone(), s.pool.clone(), 0.0, f64::INFINITY).unwrap();
    let (_, all) = curriculum_round(&probe, &s.net, &s.model).unwrap();
    let mut scores: Vec<f64> = all.scores.iter().map(|(_, v)| *v).collect();
    scores.sort_by(f64::total_cmp);
    // Place the threshold between two scores so the gate splits the pool.
    let n_a = 0.5 * (scores[2] + scores[3]) - 0.5;
    let state = CurriculumState::new(s.labeled.clone(), s.pool.clone(), n_a, 0.5).unwrap();
    let (next, record) = curriculum_round(&state, &s.net, &s.model).unwrap();
    assert_eq!(record.admitted, 3);
    assert_eq!(next.pool().len(), s.pool.len() - 3);
    let admitted_ids: Vec<&str> = next.admitted().iter().map(Sample::id).collect();
    for (id, score) in &record.scores {
        assert_eq!(admitted_ids.contains(&id.as_str()), *score <= n_a + 0.5);
    }
}

#[test]
fn empty_pool_is_flagged() {
    let s = setup();
    let state = CurriculumState::new(s.labeled.clone(), Vec::new(), 4.0, 0.5).unwrap();
    let (next, record) = curriculum_round(&state, &s.net, &s.model).unwrap();
    assert!(record.empty_pool);
    assert_eq!(next, state);
}

#[test]
fn state_rejects_bad_inputs() {
    let s = setup();
    assert!(CurriculumState::new(s.labeled.clone(), s.pool.clone(), 4.0, 0.0).is_err());
    assert!(CurriculumState::new(s.labeled.clone(), s.labeled[..1].to_vec(), 4.0, 0.5).is_err());
    let acting = Sample::acting("x", s.pool[0].low().clone(), s.pool[0].low().clone()).unwrap();
    assert!(CurriculumState::new(vec![acting], Vec::new(), 4.0, 0.5).is_err());
}

#[test]
fn empty_pool_matches_plain_supervised() {
    let labeled = fixture(8, 10);
    let cfg = config(3, 5);
    let semi = run_semi_supervised(&labeled, &[], &cfg, None).unwrap();
    let plain = run_supervised(&labeled, &cfg, None).unwrap();
    assert!(semi.rounds.is_empty() && semi.niqe_model.is_none());
    assert_eq!(semi.all_metrics(), plain.all_metrics());

    let (train, val) = hazelight::training::split_validation(&labeled, cfg.val_fraction, cfg.seed);
    let mut net = Network::new(cfg.net_config()).unwrap();
    let mut opt = OptimState::new(net.params(), &cfg);
    let direct = train_supervised(&train, &val, &cfg, &mut net, &mut opt, 0).unwrap();
    assert_eq!(direct, semi.pretrain);
    assert_eq!(net.params().flat_values(), semi.net.params().flat_values());
}

#[test]
fn open_gate_retrains_on_acting_labels() {
    let all = fixture(16, 11);
    let labeled = all[..10].to_vec();
    let pool: Vec<Sample> = all[10..].iter().map(Sample::without_target).collect();
    let cfg = TrainConfig {
        tau: f64::INFINITY,
        ..config(2, 6)
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_semi_supervised(&labeled, &pool, &cfg, Some(dir.path())).unwrap();
    assert_eq!(report.rounds.len(), 1);
    assert_eq!(report.phases.len(), 1);
    assert_eq!(report.rounds[0].admitted, pool.len());
    let state = report.final_state.as_ref().unwrap();
    assert!(state.pool().is_empty());
    assert_eq!(state.admitted().len(), pool.len());
    assert_eq!(report.checkpoints.len(), 2);
    for p in &report.checkpoints {
        assert!(p.exists());
    }
    assert!(dir.path().join("logs/metrics.csv").exists());
    assert!(dir.path().join("niqe-model.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("curriculum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    // Retraining starts from the pretrained parameters.
    let phase = &report.phases[0];
    let pre = report.pretrain.final_validation().unwrap();
    let start = phase.first_validation().unwrap();
    assert_relative_eq!(pre.ssim, start.ssim, max_relative = 1e-12);
    assert_relative_eq!(pre.psnr, start.psnr, max_relative = 1e-12);
}

#[test]
fn sizes_never_shrink_across_rounds() {
    let all = fixture(16, 12);
    let labeled = all[..10].to_vec();
    let pool: Vec<Sample> = all[10..].iter().map(Sample::without_target).collect();
    let cfg = TrainConfig {
        tau: 2.0,
        max_rounds: 3,
        ..config(1, 8)
    };
    let report = run_semi_supervised(&labeled, &pool, &cfg, None).unwrap();
    assert!(report.rounds.len() <= 3);
    let mut training = report.rounds.first().map_or(0, |r| r.labeled);
    for r in &report.rounds {
        assert_eq!(r.labeled + r.acting + r.pool, r.labeled + pool.len());
        assert!(r.labeled + r.acting >= training);
        training = r.labeled + r.acting;
    }
}
