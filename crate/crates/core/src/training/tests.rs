use super::*;
use crate::codec::NetworkConfig;
use crate::entropy::FactorizedPrior;
use crate::params::ParamStore;
use crate::tensor::Shape;
use crate::transforms::NonlinearityKind;

fn mini(kind: NonlinearityKind) -> CodecModel {
    CodecModel::new(
        NetworkConfig {
            stages: 2,
            hidden_channels: 8,
            latent_channels: 8,
            nonlinearity: kind,
            ..NetworkConfig::default()
        },
        11,
    )
    .unwrap()
}

fn toy_train(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 1000,
        max_steps: Some(steps),
        crop: 16,
        seed: 5,
        checkpoint_every: 3,
        ..TrainConfig::desk()
    }
}

fn loss_terms(x: Tensor, x_hat: Tensor, y: Tensor, prior_scale: f64, cfg: RdLossConfig) -> (f64, f64, f64) {
    let mut store = ParamStore::new();
    let prior = FactorizedPrior::new(&mut store, "p", y.shape().channels());
    let c = y.shape().channels();
    prior.set(&mut store, &vec![0.0; c], &vec![prior_scale; c]).unwrap();
    let mut g = Graph::new();
    let params = store.bind(&mut g, true).unwrap();
    let (xv, hv, yv) = (g.constant(x).unwrap(), g.constant(x_hat).unwrap(), g.constant(y).unwrap());
    let t = rd_loss(&mut g, &params, &prior, xv, hv, yv, &cfg).unwrap();
    (g.value(t.loss).item(), g.value(t.bpp).item(), g.value(t.distortion).item())
}

/// Scale at which the zero bin has probability exactly one half.
fn half_bin_scale() -> f64 {
    0.25 / 0.5f64.atanh()
}

#[test]
fn perfect_reconstruction_costs_only_rate() {
    let x = Tensor::from_fn(Shape::new(2, 3, 16, 16), |[b, c, h, w]| ((b + c + h * w) % 7) as f64 / 7.0);
    let y = Tensor::from_fn(Shape::new(2, 4, 4, 4), |[_, c, h, _]| c as f64 - h as f64);
    for lambda in [0.0018, 0.18, 5.0] {
        for distortion in [Distortion::Mse, Distortion::Msssim] {
            let cfg = RdLossConfig { lambda, distortion };
            let (loss, bpp, d) = loss_terms(x.clone(), x.clone(), y.clone(), 1.3, cfg);
            assert_eq!(d, 0.0);
            assert_eq!(loss, bpp);
        }
    }
}

#[test]
fn one_bit_per_pixel() {
    let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
    let y = Tensor::zeros(Shape::new(1, 1, 4, 4));
    let (_, bpp, _) = loss_terms(x.clone(), x, y, half_bin_scale(), RdLossConfig::default());
    assert!((bpp - 1.0).abs() < 1e-12);
}

#[test]
fn worked_loss_value() {
    // 16 pixels, 8 latent elements at p = 1/2 -> 0.5 bpp; MSE 0.001
    let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
    let x_hat = Tensor::full(Shape::new(1, 3, 4, 4), 0.001f64.sqrt());
    let y = Tensor::zeros(Shape::new(1, 2, 2, 2));
    let cfg = RdLossConfig { lambda: 0.01, distortion: Distortion::Mse };
    let (loss, bpp, mse) = loss_terms(x, x_hat, y, half_bin_scale(), cfg);
    assert!((bpp - 0.5).abs() < 1e-12);
    assert!((mse - 0.001).abs() < 1e-15);
    assert!((loss - 1.15025).abs() < 1e-12, "{loss}");
}

#[test]
fn loss_checks_inputs() {
    let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
    let mut store = ParamStore::new();
    let prior = FactorizedPrior::new(&mut store, "p", 1);
    let mut g = Graph::new();
    let params = store.bind(&mut g, false).unwrap();
    let xv = g.constant(x).unwrap();
    let bad = g.constant(Tensor::zeros(Shape::new(1, 3, 4, 5))).unwrap();
    let y = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 1))).unwrap();
    assert!(rd_loss(&mut g, &params, &prior, xv, bad, y, &RdLossConfig::default()).is_err());
    let zero = RdLossConfig { lambda: 0.0, distortion: Distortion::Mse };
    assert!(rd_loss(&mut g, &params, &prior, xv, xv, y, &zero).is_err());
}

#[test]
fn schedule_halves_at_drop_epoch() {
    let cfg = TrainConfig::full_scale();
    assert_eq!(lr_schedule(0, &cfg), 1e-4);
    assert_eq!(lr_schedule(63, &cfg), 1e-4);
    assert_eq!(lr_schedule(64, &cfg), 5e-5);
    assert_eq!(lr_schedule(99, &cfg), 5e-5);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut model = mini(NonlinearityKind::Tpm);
    let before = model.store().values().to_vec();
    let batch = batch_tensor(&synthetic_corpus(2, 16, 0)).unwrap();
    let mut state = AdamState::new(model.store().shapes());
    train_step(&mut model, &batch, &mut state, &RdLossConfig::default(), 1.0, 0.0, 1).unwrap();
    assert_eq!(model.store().values(), &before[..]);
}

#[test]
fn repeated_batch_smoke_training() {
    let mut model = mini(NonlinearityKind::Gdn);
    let batch = batch_tensor(&synthetic_corpus(2, 16, 1)).unwrap();
    let mut state = AdamState::new(model.store().shapes());
    let cfg = RdLossConfig::default();
    let first = train_step(&mut model, &batch, &mut state, &cfg, 1.0, 1e-3, 0).unwrap();
    let mut last = first;
    for step in 1..200 {
        last = train_step(&mut model, &batch, &mut state, &cfg, 1.0, 1e-3, step).unwrap();
    }
    assert!(last.loss < first.loss, "{} -> {}", first.loss, last.loss);
}

#[test]
fn one_epoch_step_count() {
    let ds = Dataset::from_images(synthetic_corpus(4, 16, 0), 16, 0).unwrap();
    let mut model = mini(NonlinearityKind::Relu);
    let cfg = TrainConfig { epochs: 1, max_steps: None, ..toy_train(0) };
    let report = train_loop(&mut model, &ds, &cfg, &RdLossConfig::default(), None, None).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.state.step, 2);
}

#[test]
fn runs_are_seed_deterministic() {
    let ds = Dataset::from_images(synthetic_corpus(4, 16, 0), 16, 0).unwrap();
    let run = || {
        let mut model = mini(NonlinearityKind::Tjm);
        train_loop(&mut model, &ds, &toy_train(4), &RdLossConfig::default(), None, None)
            .unwrap()
            .rows
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ds = Dataset::from_images(synthetic_corpus(4, 16, 2), 16, 9).unwrap();
    let loss = RdLossConfig::default();
    let full_dir = tempfile::tempdir().unwrap();
    let mut model = mini(NonlinearityKind::Tpm);
    train_loop(&mut model, &ds, &toy_train(5), &loss, Some(full_dir.path()), None).unwrap();
    let full_csv = std::fs::read_to_string(full_dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(full_csv.lines().count(), 6);
    assert_eq!(full_csv.lines().next(), Some(METRICS_HEADER));

    // interrupted after the step-3 checkpoint, then resumed from disk
    let dir = tempfile::tempdir().unwrap();
    let mut model = mini(NonlinearityKind::Tpm);
    train_loop(&mut model, &ds, &toy_train(3), &loss, Some(dir.path()), None).unwrap();
    let (mut resumed, state) = load_training_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(state.as_ref().unwrap().step, 3);
    train_loop(&mut resumed, &ds, &toy_train(5), &loss, Some(dir.path()), state).unwrap();
    let resumed_csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(resumed_csv, full_csv);
    assert_eq!(resumed.store().values(), model_after(&ds, &loss).store().values());
}

fn model_after(ds: &Dataset, loss: &RdLossConfig) -> CodecModel {
    let mut model = mini(NonlinearityKind::Tpm);
    train_loop(&mut model, ds, &toy_train(5), loss, None, None).unwrap();
    model
}

#[test]
fn crop_mismatch_and_small_dataset() {
    let ds = Dataset::from_images(synthetic_corpus(1, 16, 0), 16, 0).unwrap();
    let mut model = mini(NonlinearityKind::Relu);
    assert!(train_loop(&mut model, &ds, &toy_train(1), &RdLossConfig::default(), None, None).is_err());
    let ds = Dataset::from_images(synthetic_corpus(2, 32, 0), 32, 0).unwrap();
    assert!(train_loop(&mut model, &ds, &toy_train(1), &RdLossConfig::default(), None, None).is_err());
}
