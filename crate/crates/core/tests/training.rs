use proptest::prelude::*;
use specpred::ingest::{synth_dataset, IngestConfig, Scenario, StftConfig, SynthConfig};
use specpred::models::{load_checkpoint, ModelConfig, SwinLinearModel, SwinStbModel};
use specpred::sor::SorLabelConfig;
use specpred::training::{should_stop, train_loop, train_sor, train_stb, transfer_finetune, TrainConfig, TrainLog};
use specpred::{Error, ParamStore, Tensor};

fn micro_ingest() -> IngestConfig {
    IngestConfig {
        stft: StftConfig { window_length: 64, hop_length: 32, fft_length: 64, downsample: 4 },
        input_length: 4,
        height: 8,
        width: 8,
        channels: 3,
        patch_hw: [2, 2],
        ..Default::default()
    }
}

fn micro_data(dir: &std::path::Path, scenario: Scenario, seed: u64, clips: usize) -> specpred::ingest::Manifest {
    let synth = SynthConfig { scenario, seed, clips, ..Default::default() };
    synth_dataset(&synth, &micro_ingest(), dir).unwrap()
}

fn without_seconds(log: &TrainLog) -> Vec<(usize, u64, u64)> {
    log.epochs.iter().map(|e| (e.epoch, e.loss.to_bits(), e.val_loss.to_bits())).collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..Default::default() }
}

/// Fits `w·x = y` with a single scalar weight.
fn scalar_fit(samples: &[(f32, f32)], cfg: &TrainConfig) -> (f32, TrainLog) {
    let mut store = ParamStore::new();
    let id = store.insert("w", Tensor::scalar(0.0)).unwrap();
    let loss = move |s: &mut specpred::Session, &(x, y): &(f32, f32)| {
        let w = s.p(id);
        let p = s.scale(w, x);
        s.mse(p, &Tensor::scalar(y))
    };
    let log = train_loop(&mut store, samples, samples, cfg, &loss).unwrap();
    (store.get(id).data()[0], log)
}

#[test]
fn loop_fits_a_scalar_and_keeps_the_best_epoch() {
    let samples: Vec<(f32, f32)> = (1..=6).map(|i| (i as f32 / 6.0, 0.5 * i as f32 / 6.0)).collect();
    let cfg = TrainConfig {
        optimizer: specpred::training::AdamWConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() },
        epochs: 60,
        batch_size: 2,
        ..Default::default()
    };
    let (w, log) = scalar_fit(&samples, &cfg);
    assert!((w - 0.5).abs() < 0.02, "w = {w}");
    assert!(log.final_loss() < 1e-3 * log.initial_loss);
    assert_eq!(log.best_val_loss, log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min));
}

#[test]
fn non_finite_loss_aborts_with_a_numeric_error() {
    let mut store = ParamStore::new();
    let id = store.insert("w", Tensor::scalar(1.0)).unwrap();
    let loss = move |s: &mut specpred::Session, y: &f32| {
        let w = s.p(id);
        s.mse(w, &Tensor::scalar(*y))
    };
    let bad = [f32::NAN];
    let good = [0.0f32];
    let err = train_loop(&mut store, &bad, &good, &quick(3), &loss).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(train_loop(&mut store, &[] as &[f32], &good, &quick(3), &loss).is_err());
}

#[test]
fn same_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = micro_data(dir.path(), Scenario::LteLike, 2, 6);
    let run = || {
        let mut model = SwinStbModel::new(&ModelConfig::micro(), 3).unwrap();
        let log = train_stb(&mut model, &m, &TrainConfig { batch_size: 2, ..quick(3) }).unwrap();
        (model, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(without_seconds(&la), without_seconds(&lb));
    for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn frozen_encoder_stays_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let m = micro_data(dir.path(), Scenario::FmLike, 4, 6);
    let mut model = SwinStbModel::new(&ModelConfig::micro(), 0).unwrap();
    let before = model.store.clone();
    train_stb(&mut model, &m, &TrainConfig { freeze_encoder: true, ..quick(2) }).unwrap();
    let mut moved = 0;
    for ((name, a), (_, b)) in before.iter().zip(model.store.iter()) {
        if name.starts_with("enc.") {
            assert_eq!(a.data(), b.data(), "{name} changed");
        } else if a.data() != b.data() {
            moved += 1;
        }
    }
    assert!(moved > 0);
}

#[test]
fn models_must_match_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = micro_data(dir.path(), Scenario::FmLike, 0, 6);
    let mut cfg = ModelConfig::micro();
    cfg.input = [4, 16, 16, 3];
    let mut big = SwinStbModel::new(&cfg, 0).unwrap();
    assert!(matches!(train_stb(&mut big, &m, &quick(1)), Err(Error::Config(_))));

    let ck_dir = dir.path().join("ck");
    big.save(&ck_dir).unwrap();
    let ck = load_checkpoint(&ck_dir).unwrap();
    assert!(matches!(transfer_finetune(&ck, &m, &quick(1)), Err(Error::Checkpoint(_))));

    let mut head = SwinLinearModel::new(&ModelConfig::micro(), 0).unwrap();
    head.save(&ck_dir).unwrap();
    let ck = load_checkpoint(&ck_dir).unwrap();
    assert!(matches!(transfer_finetune(&ck, &m, &quick(1)), Err(Error::Checkpoint(_))));
    assert!(train_sor(&mut head, &m, &SorLabelConfig::default(), &quick(1)).is_err());
}

#[test]
fn fine_tuning_resumes_from_the_pretrained_weights() {
    let dir = tempfile::tempdir().unwrap();
    let m = micro_data(dir.path(), Scenario::FmLike, 5, 8);
    let mut model = SwinStbModel::new(&ModelConfig::micro(), 1).unwrap();
    let first = train_stb(&mut model, &m, &quick(8)).unwrap();
    let ck_dir = dir.path().join("ck");
    model.save(&ck_dir).unwrap();
    let ck = load_checkpoint(&ck_dir).unwrap();
    let (_, second) = transfer_finetune(&ck, &m, &quick(2)).unwrap();
    assert_eq!(second.initial_val_loss.to_bits(), first.best_val_loss.to_bits());
    assert!(second.best_val_loss <= first.best_val_loss);
}

proptest! {
    #[test]
    fn never_stops_before_patience_epochs(
        losses in prop::collection::vec(0.1f64..10.0, 1..12),
        patience in 1usize..6,
    ) {
        if losses.len() <= patience {
            prop_assert!(!should_stop(&losses, 0.01, patience));
        }
        let flat = vec![1.0; patience + 1];
        prop_assert!(should_stop(&flat, 0.01, patience));
    }
}
