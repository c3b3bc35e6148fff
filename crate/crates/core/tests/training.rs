//! ADAM against a hand-rolled reference, and the training loop's
//! bookkeeping: history, determinism, checkpoint/resume, divergence.

use projsynth_core::generators::{ArchConfig, Model, ParamStore, UNetConfig};
use projsynth_core::objectives::{LossConfig, Objective};
use projsynth_core::projector::{io, ProjectionImage};
use projsynth_core::training::{
    train, write_history_csv, AdamConfig, AdamState, DatasetManifest, DatasetPair, PairRecord, SplitRecord, TrainConfig, Trainer,
    TrainingState,
};
use projsynth_core::Error;
use projsynth_tensor::{ops, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar ADAM written out longhand.
fn reference_adam(theta0: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

fn scalar_store(value: f64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    store.insert("theta", Tensor::parameter(&[1], vec![value]).unwrap()).unwrap();
    store
}

#[test]
fn five_steps_on_a_parabola_match_the_reference() {
    let mut params = scalar_store(1.0);
    let mut adam = AdamState::new(AdamConfig::default(), &params).unwrap();
    let mut trace = Vec::new();
    for _ in 0..5 {
        let theta = params.get("theta").unwrap().clone();
        ops::sum(&ops::mul(&theta, &theta).unwrap()).backward().unwrap();
        adam.step(&mut params).unwrap();
        trace.push(params.get("theta").unwrap().data()[0]);
    }
    let want = reference_adam(1.0, |t| 2.0 * t, 5, 0.004);
    for (got, want) in trace.iter().zip(&want) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    assert!((1.0 - trace[0] - 0.004).abs() < 1e-9);
    assert_eq!(adam.step_count(), 5);
}

#[test]
fn step_sizes_stay_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::<f64>::new();
    params.insert("w", Tensor::parameter(&[32], vec![0.0; 32]).unwrap()).unwrap();
    let cfg = AdamConfig::default();
    let mut adam = AdamState::new(cfg, &params).unwrap();
    for _ in 0..50 {
        let before = params.get("w").unwrap().data().to_vec();
        let r: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = Tensor::from_vec(&[32], r).unwrap();
        ops::sum(&ops::mul(params.get("w").unwrap(), &r).unwrap()).backward().unwrap();
        adam.step(&mut params).unwrap();
        for (a, b) in before.iter().zip(params.get("w").unwrap().data()) {
            assert!((a - b).abs() <= 2.0 * cfg.learning_rate);
        }
        assert!(adam.second_moment("w").unwrap().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn non_finite_gradient_aborts_without_touching_parameters() {
    let mut params = scalar_store(1.0);
    let mut adam = AdamState::new(AdamConfig::default(), &params).unwrap();
    let theta = params.get("theta").unwrap().clone();
    let nan = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
    ops::sum(&ops::mul(&theta, &nan).unwrap()).backward().unwrap();
    let err = adam.step(&mut params).unwrap_err();
    assert!(matches!(err, Error::Numerical(ref m) if m.contains("theta")), "{err}");
    assert_eq!(params.get("theta").unwrap().data(), &[1.0]);
    assert_eq!(adam.step_count(), 0);
}

fn image(seed: u64, n: usize) -> ProjectionImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProjectionImage::from_rows(n, n, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Labels are a fixed pixelwise function of the inputs.
fn toy_pairs(count: usize) -> Vec<DatasetPair> {
    (0..count)
        .map(|i| {
            let mr = image(i as u64, 16);
            let xray = mr.with_data(mr.data().iter().map(|v| 1.0 - v * v).collect()).unwrap();
            DatasetPair::new(i, &mr, &xray).unwrap()
        })
        .collect()
}

fn toy_arch() -> ArchConfig {
    ArchConfig::Unet(UNetConfig { depth: 2, base_channels: 4, dropout_levels: 1, ..Default::default() })
}

fn toy_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, seed: 5, learning_rate: 0.002, ..Default::default() }
}

#[test]
fn zero_epochs_leave_the_model_alone() {
    let model = Model::<f32>::build(toy_arch(), 1).unwrap();
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let (trained, history) = train(model.clone(), &toy_pairs(3), &toy_config(0), &objective).unwrap();
    assert!(history.is_empty());
    assert_eq!(trained.to_weights(), model.to_weights());
}

#[test]
fn history_has_one_entry_per_epoch_and_loss_falls() {
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let model = Model::<f32>::build(toy_arch(), 1).unwrap();
    let (_, history) = train(model, &toy_pairs(6), &toy_config(8), &objective).unwrap();
    assert_eq!(history.len(), 8);
    assert_eq!(history.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    assert!(history[7].mean_loss < history[0].mean_loss, "{history:?}");
}

#[test]
fn identical_seeds_give_identical_runs() {
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let run = |seed| {
        let model = Model::<f32>::build(toy_arch(), 1).unwrap();
        train(model, &toy_pairs(4), &TrainConfig { seed, ..toy_config(3) }, &objective).unwrap()
    };
    let (a_model, a) = run(5);
    let (b_model, b) = run(5);
    let (_, c) = run(6);
    let bits = |h: &[projsynth_core::training::EpochRecord]| h.iter().map(|r| r.mean_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a_model.to_weights(), b_model.to_weights());
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn resuming_a_checkpoint_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(5);
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let config = TrainConfig { batch_size: 2, ..toy_config(4) };

    let mut straight = Trainer::new(Model::<f32>::build(toy_arch(), 1).unwrap(), config.clone()).unwrap();
    straight.run(&pairs, &objective, None, |_| {}).unwrap();

    let mut first = Trainer::new(Model::<f32>::build(toy_arch(), 1).unwrap(), TrainConfig { epochs: 2, ..config }).unwrap();
    first.run(&pairs, &objective, Some(dir.path()), |_| {}).unwrap();
    let mut resumed = Trainer::<f32>::resume(dir.path(), Some(4)).unwrap();
    assert_eq!(resumed.epochs_completed(), 2);
    resumed.run(&pairs, &objective, None, |_| {}).unwrap();

    assert_eq!(resumed.history(), straight.history());
    assert_eq!(resumed.model().to_weights(), straight.model().to_weights());
    assert_eq!(resumed.adam().step_count(), straight.adam().step_count());
}

#[test]
fn divergence_aborts_and_keeps_the_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let mut trainer = Trainer::new(Model::<f32>::build(toy_arch(), 1).unwrap(), TrainConfig { checkpoint_every: 1, ..toy_config(1) }).unwrap();
    trainer.run(&toy_pairs(2), &objective, Some(dir.path()), |_| {}).unwrap();
    let before = std::fs::read(dir.path().join("state.json")).unwrap();

    let mut poisoned = toy_pairs(2);
    let bad = poisoned[1].xray.with_data(vec![f32::NAN; 256]).unwrap();
    poisoned[1].xray = bad;
    let mut resumed = Trainer::<f32>::resume(dir.path(), Some(3)).unwrap();
    let err = resumed.run(&poisoned, &objective, Some(dir.path()), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(std::fs::read(dir.path().join("state.json")).unwrap(), before);
    let state: TrainingState = serde_json::from_slice(&before).unwrap();
    assert_eq!(state.epochs_completed, 1);
}

#[test]
fn incompatible_resolution_is_rejected_before_training() {
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let arch = ArchConfig::Unet(UNetConfig { depth: 4, base_channels: 2, ..Default::default() });
    let mr = image(0, 12);
    let pairs = vec![DatasetPair::new(0, &mr, &mr).unwrap()];
    let err = train(Model::<f32>::build(arch, 0).unwrap(), &pairs, &toy_config(1), &objective).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn history_csv_and_manifest_files() {
    let dir = tempfile::tempdir().unwrap();
    let objective = Objective::new(&LossConfig::l1(), None).unwrap();
    let (_, history) = train(Model::<f32>::build(toy_arch(), 1).unwrap(), &toy_pairs(2), &toy_config(2), &objective).unwrap();
    let csv_path = dir.path().join("history.csv");
    write_history_csv(&csv_path, &history).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("epoch,mean_loss\n1,"));

    let mut records = Vec::new();
    for id in 0..3 {
        let mr = image(id as u64, 16);
        let xray = image(id as u64 + 10, 16);
        io::write_projection(&dir.path().join(format!("mr_{id}")), &mr, false).unwrap();
        io::write_projection(&dir.path().join(format!("xray_{id}")), &xray, false).unwrap();
        records.push(PairRecord { view_id: id, angle_deg: id as f64, mr: format!("mr_{id}"), xray: format!("xray_{id}") });
    }
    let manifest = DatasetManifest { pairs: records, split: Some(SplitRecord { seed: 0, train: vec![2, 0], test: vec![1] }) };
    let path = dir.path().join("dataset.json");
    manifest.write(&path).unwrap();
    let back = DatasetManifest::read(&path).unwrap();
    assert_eq!(back, manifest);
    let train_pairs = back.load_pairs(&path, Some(&back.split.as_ref().unwrap().train)).unwrap();
    assert_eq!(train_pairs.iter().map(|p| p.view_id).collect::<Vec<_>>(), vec![2, 0]);
    let (lo, hi) = train_pairs[0].xray.min_max();
    assert_eq!((lo, hi), (-1.0, 1.0));
}
