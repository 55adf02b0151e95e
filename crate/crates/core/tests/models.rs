use specpred::models::{load_checkpoint, ModelConfig, SwinLinearModel, SwinStbModel};
use specpred::params::{ParamStore, Session};
use specpred::tensor::gradcheck::{check_store, GradCheckConfig};
use specpred::tensor::init::{rng, uniform};
use specpred::Tensor;

fn randomize(store: &mut ParamStore, seed: u64, scale: f32) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = uniform(shape, -scale, scale, &mut r);
    }
}

fn clip_for(cfg: &ModelConfig, seed: u64) -> Tensor {
    uniform(cfg.input.to_vec(), 0.0, 1.0, &mut rng(seed))
}

#[test]
fn micro_stb_gradients() {
    let cfg = ModelConfig::micro();
    let mut model = SwinStbModel::new(&cfg, 0).unwrap();
    randomize(&mut model.store, 1, 0.2);
    let clip = clip_for(&cfg, 2);
    let gc = GradCheckConfig {
        max_coords: 30,
        ..Default::default()
    };
    for seed in 0..2 {
        let r = check_store(
            &model.store,
            |s| {
                let x = s.constant(clip.clone());
                let f = model.encode(s, x)?;
                model.decode_raw(s, f)
            },
            seed,
            &gc,
        )
        .unwrap();
        assert!(r.passed(), "seed {seed}: {:?}", r.failures);
    }
}

#[test]
fn micro_swinlinear_gradients() {
    let cfg = ModelConfig::micro();
    let mut model = SwinLinearModel::new(&cfg, 0).unwrap();
    randomize(&mut model.store, 1, 0.2);
    let clip = clip_for(&cfg, 2);
    let r = check_store(
        &model.store,
        |s| {
            let x = s.constant(clip.clone());
            model.forward(s, x)
        },
        0,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(r.passed(), "{:?}", r.failures);
}

#[test]
fn encoder_stage_shapes_for_default_width() {
    let cfg = ModelConfig {
        enc_blocks: [1, 1, 1],
        bottleneck_blocks: 1,
        dec_blocks: [1, 1, 1],
        ..ModelConfig::default()
    };
    let model = SwinStbModel::new(&cfg, 0).unwrap();
    let mut s = Session::eval(&model.store);
    let x = s.constant(clip_for(&cfg, 0));
    let [s1, s2, s3] = model.encode(&mut s, x).unwrap();
    assert_eq!(s.shape(s1), &[4, 16, 16, 96]);
    assert_eq!(s.shape(s2), &[4, 8, 8, 192]);
    assert_eq!(s.shape(s3), &[4, 4, 4, 384]);
}

#[test]
fn projection_head_channel_schedule() {
    let model = SwinStbModel::new(&ModelConfig::default(), 0).unwrap();
    let widths: Vec<usize> = model
        .head
        .iter()
        .map(|h| *model.store.get(h.kernel).shape().last().unwrap())
        .collect();
    assert_eq!(widths, vec![96, 48, 24, 12, 6, 3]);
    assert_eq!(model.store.get(model.head[0].kernel).shape(), &[2, 4, 4, 96, 96]);
}

#[test]
fn zero_residual_branches_leave_embedding_untouched() {
    let cfg = ModelConfig::micro();
    let mut model = SwinStbModel::new(&cfg, 0).unwrap();
    for b in &model.encoder.stages[0].blocks {
        for lin in [b.proj, b.fc2] {
            let w = model.store.get(lin.weight).shape().to_vec();
            *model.store.get_mut(lin.weight) = Tensor::zeros(w);
        }
    }
    let clip = clip_for(&cfg, 3);
    let mut s = Session::eval(&model.store);
    let x = s.constant(clip);
    let emb = model.encoder.embed.forward(&mut s, x).unwrap();
    let [s1, _, _] = model.encode(&mut s, x).unwrap();
    assert_eq!(s.value(s1), s.value(emb));
}

#[test]
fn gradient_reaches_the_embedding() {
    let cfg = ModelConfig::micro();
    let model = SwinStbModel::new(&cfg, 0).unwrap();
    let mut s = Session::train(&model.store);
    let x = s.constant(clip_for(&cfg, 4));
    let [_, _, s3] = model.encode(&mut s, x).unwrap();
    let loss = s.sum(s3);
    s.backward(loss).unwrap();
    let grads = s.take_grads();
    let g = grads[model.encoder.embed.proj.weight.index()].as_ref().unwrap();
    assert!(g.data().iter().any(|v| v.abs() > 0.0));
}

#[test]
fn zeroed_skip_halves_decouple_the_decoder() {
    let cfg = ModelConfig::micro();
    let mut model = SwinStbModel::new(&cfg, 0).unwrap();
    for r in &model.reduce {
        let w = model.store.get_mut(r.weight);
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        for i in rows / 2..rows {
            for j in 0..cols {
                w.set(&[i, j], 0.0);
            }
        }
    }
    let clip = clip_for(&cfg, 5);
    let run = |bump: f32| {
        let mut s = Session::eval(&model.store);
        let x = s.constant(clip.clone());
        let [s1, s2, s3] = model.encode(&mut s, x).unwrap();
        let (sh1, sh2) = (s.shape(s1).to_vec(), s.shape(s2).to_vec());
        let noise1 = s.constant(Tensor::full(sh1, bump));
        let noise2 = s.constant(Tensor::full(sh2, bump));
        let s1 = s.add(s1, noise1).unwrap();
        let s2 = s.add(s2, noise2).unwrap();
        let y = model.decode_raw(&mut s, [s1, s2, s3]).unwrap();
        s.value(y).clone()
    };
    assert_eq!(run(0.0), run(0.7));
}

fn shape_configs() -> Vec<ModelConfig> {
    let micro = ModelConfig::micro();
    vec![
        ModelConfig::default(),
        micro.clone(),
        ModelConfig {
            input: [4, 16, 16, 1],
            window: [2, 3, 3],
            ..micro.clone()
        },
        ModelConfig {
            channels: 12,
            enc_heads: [3, 3, 3],
            dec_heads: [3, 3, 3],
            patch: [1, 2, 2],
            input: [3, 24, 16, 3],
            window: [1, 4, 4],
            ..micro.clone()
        },
        ModelConfig {
            channels: 16,
            enc_blocks: [1, 2, 1],
            dec_blocks: [1, 2, 1],
            enc_heads: [2, 4, 8],
            dec_heads: [8, 4, 2],
            patch: [2, 4, 4],
            window: [2, 7, 7],
            input: [8, 32, 32, 3],
            ..micro
        },
    ]
}

#[test]
fn decode_of_encode_keeps_clip_shape() {
    for (i, cfg) in shape_configs().into_iter().enumerate() {
        let model = SwinStbModel::new(&cfg, i as u64).unwrap();
        let clip = clip_for(&cfg, i as u64);
        let y = model.predict(&clip).unwrap();
        assert_eq!(y.shape(), clip.shape(), "config {i}");
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn swinlinear_emits_one_rate_per_input_frame() {
    let cfg = ModelConfig {
        input: [8, 16, 16, 3],
        ..ModelConfig::micro()
    };
    let model = SwinLinearModel::new(&cfg, 0).unwrap();
    let y = model.predict(&clip_for(&cfg, 1)).unwrap();
    assert_eq!(y.len(), 8);
    assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::micro();
    let mut model = SwinStbModel::new(&cfg, 9).unwrap();
    randomize(&mut model.store, 3, 0.1);
    let clip = clip_for(&cfg, 1);
    let before = model.predict(&clip).unwrap();
    let a = dir.path().join("a");
    model.save(&a).unwrap();
    let ck = load_checkpoint(&a).unwrap();
    let loaded = SwinStbModel::from_checkpoint(&ck).unwrap();
    assert_eq!(loaded.predict(&clip).unwrap(), before);
    let b = dir.path().join("b");
    loaded.save(&b).unwrap();
    for entry in std::fs::read_dir(&a).unwrap() {
        let entry = entry.unwrap();
        let other = b.join(entry.file_name());
        assert_eq!(std::fs::read(entry.path()).unwrap(), std::fs::read(other).unwrap());
    }
    assert!(!dir.path().join("a.partial").exists());
    assert!(SwinLinearModel::from_checkpoint(&ck).is_err());
}

#[test]
fn parameter_count_is_stable() {
    let a = SwinStbModel::new(&ModelConfig::default(), 1).unwrap();
    let b = SwinStbModel::new(&ModelConfig::default(), 2).unwrap();
    assert_eq!(a.store.num_scalars(), b.store.num_scalars());
    assert_eq!(a.store.len(), b.store.len());
}
