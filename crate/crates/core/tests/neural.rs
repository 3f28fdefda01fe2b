use doalab::dsp::GeometryId;
use doalab::neural::{
    checkpoint_bytes, checkpoint_from_bytes, pair_losses, pit_loss, train, train_step, Adam, Graph,
    LossKind, Model, ModelConfig, ModelKind, ParamId, Tensor, TrainConfig, TrainExample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{gradient_suite, random_input, toy_config};

#[test]
fn gradients_match_finite_differences_for_every_model_and_loss() {
    for (kind, loss, pit, err) in gradient_suite() {
        assert!(
            err < 1e-4,
            "{kind} {loss} pit={pit}: relative error {err:e}"
        );
    }
}

#[test]
fn channel_axis_collapses_for_both_arrays() {
    for (geo, extents) in [
        (GeometryId::Uca10, [8, 5, 3, 1]),
        (GeometryId::Qa10, [3, 2, 1, 1]),
    ] {
        let cfg = ModelConfig::new(ModelKind::Mlc, 10, geo);
        let mut h = cfg.num_mics();
        let mut seen = vec![h];
        for (kh, _) in cfg.cnn_kernels().unwrap() {
            h = h - kh + 1;
            seen.push(h);
        }
        assert_eq!(seen, extents);
    }
    let mut cfg = ModelConfig::new(ModelKind::Mlc, 10, GeometryId::Uca10);
    cfg.bins.count = Some(12);
    let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
    let x = random_input::<f32>(&cfg, 5, 0);
    let mut g = Graph::new(model.params());
    let fwd = model.forward(&mut g, &x).unwrap();
    assert_eq!(g.shape(fwd.z.unwrap()), [5, 72]);
}

#[test]
fn zero_input_with_zero_biases_gives_zero_features() {
    let cfg = toy_config(ModelKind::MapSplitC);
    let model = Model::<f64>::new(cfg.clone(), 5).unwrap();
    let x = Tensor::zeros(vec![4, 3, 9]);
    let mut g = Graph::new(model.params());
    let fwd = model.forward(&mut g, &x).unwrap();
    assert!(g.value(fwd.z.unwrap()).iter().all(|&v| v == 0.0));
}

fn duplicate_frames(x: &Tensor<f64>) -> Tensor<f64> {
    let mut data = Vec::new();
    for t in 0..x.rows() {
        data.extend_from_slice(x.row(t));
        data.extend_from_slice(x.row(t));
    }
    let mut shape = x.shape.clone();
    shape[0] *= 2;
    Tensor::new(shape, data).unwrap()
}

#[test]
fn time_averaging_models_are_frame_duplication_invariant() {
    for kind in [ModelKind::Mlc, ModelKind::MapSplitC] {
        let cfg = toy_config(kind);
        let model = Model::<f64>::new(cfg.clone(), 8).unwrap();
        let x = random_input(&cfg, 4, 1);
        let a = model.posteriors(&x).unwrap();
        let b = model.posteriors(&duplicate_frames(&x)).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            for (u, v) in pa.iter().zip(pb) {
                assert!((u - v).abs() < 1e-12, "{kind}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn constant_frames_give_constant_phase_features() {
    let cfg = toy_config(ModelKind::MaskSplit);
    let model = Model::<f64>::new(cfg.clone(), 2).unwrap();
    let frame = random_input::<f64>(&cfg, 1, 4);
    let x = Tensor::new(vec![6, 3, 9], frame.data.repeat(6)).unwrap();
    let mut g = Graph::new(model.params());
    let fwd = model.forward(&mut g, &x).unwrap();
    let z = g.value(fwd.z.unwrap());
    for t in 1..6 {
        assert_eq!(&z[t * 8..(t + 1) * 8], &z[..8]);
    }
}

#[test]
fn mlc_single_frame_and_range() {
    let cfg = toy_config(ModelKind::Mlc);
    let model = Model::<f64>::new(cfg.clone(), 9).unwrap();
    let x = random_input::<f64>(&cfg, 1, 2);
    let mut g = Graph::new(model.params());
    let fwd = model.forward(&mut g, &x).unwrap();
    // With one frame the time average returns that frame.
    let w = g.value(fwd.maps[0]).to_vec();
    let kappa = g.value(fwd.posteriors[0]).to_vec();
    assert_eq!(kappa.len(), 8);
    assert!(kappa.iter().all(|&k| k > 0.0 && k < 1.0));
    let mut g2 = Graph::new(model.params());
    let wv = g2.input(Tensor::new(vec![1, 8], w.clone()).unwrap());
    let m = g2.time_mean(wv);
    assert_eq!(g2.value(m), &w[..]);
}

#[test]
fn splitting_posteriors_are_normalized() {
    for kind in [
        ModelKind::MaskSplit,
        ModelKind::MapSplitC,
        ModelKind::MapSplitR,
    ] {
        let cfg = toy_config(kind);
        let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
        let post = model.posteriors(&random_input(&cfg, 5, 3)).unwrap();
        assert_eq!(post.len(), 2);
        for p in post {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let model32 = Model::<f32>::new(cfg.clone(), 1).unwrap();
        for p in model32.posteriors(&random_input(&cfg, 50, 3)).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn recurrent_maps_are_sigmoid_bounded() {
    let cfg = toy_config(ModelKind::MapSplitR);
    let model = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let mut g = Graph::new(model.params());
    let fwd = model.forward(&mut g, &random_input(&cfg, 7, 5)).unwrap();
    for &m in &fwd.maps {
        assert!(g.value(m).iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn identical_branches_give_identical_posteriors() {
    let cfg = toy_config(ModelKind::MapSplitC);
    let mut model = Model::<f64>::new(cfg.clone(), 6).unwrap();
    for suffix in ["w", "b"] {
        let src = model.params().find(&format!("branch0.{suffix}")).unwrap();
        let dst = model.params().find(&format!("branch1.{suffix}")).unwrap();
        let t = model.params().get(src).clone();
        *model.params_mut().get_mut(dst) = t;
    }
    let post = model.posteriors(&random_input(&cfg, 4, 6)).unwrap();
    assert_eq!(post[0], post[1]);
}

#[test]
fn weighted_mean_limits() {
    let store = doalab::neural::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let zdata: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let z = g.input(Tensor::new(vec![4, 3], zdata.clone()).unwrap());
    let ones = g.input(Tensor::new(vec![4, 3], vec![1.0; 12]).unwrap());
    let a = g.weighted_time_mean(ones, z);
    let b = g.time_mean(z);
    for (u, v) in g.value(a).iter().zip(g.value(b)) {
        assert!((u - v).abs() < 1e-8);
    }
    let mut w = vec![0.0; 12];
    w[6..9].fill(1.0);
    let w = g.input(Tensor::new(vec![4, 3], w).unwrap());
    let c = g.weighted_time_mean(w, z);
    for (u, v) in g.value(c).iter().zip(&zdata[6..9]) {
        assert!((u - v).abs() < 1e-8);
    }
    let zero = g.input(Tensor::zeros(vec![4, 3]));
    let d = g.weighted_time_mean(zero, z);
    assert!(g.value(d).iter().all(|v| *v == 0.0));
}

#[test]
fn pit_never_exceeds_fixed_order() {
    let cfg = toy_config(ModelKind::MaskSplit);
    let model = Model::<f64>::new(cfg.clone(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..50 {
        let doas = [rng.random_range(0.0..360.0), rng.random_range(0.0..360.0)];
        let m = pair_losses(&model, &random_input(&cfg, 4, i), &doas, LossKind::Semd).unwrap();
        let (pit, _) = pit_loss(&m).unwrap();
        assert!(pit <= m[0][0] + m[1][1]);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    for kind in ModelKind::ALL {
        let cfg = toy_config(kind);
        let model = Model::<f32>::new(cfg.clone(), 21).unwrap();
        let bytes = checkpoint_bytes(&model).unwrap();
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.params(), model.params());
        let x = random_input::<f32>(&cfg, 6, 8);
        let a = model.posteriors(&x).unwrap();
        let b = loaded.posteriors(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(checkpoint_bytes(&loaded).unwrap(), bytes);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = Model::<f32>::new(toy_config(ModelKind::Mlc), 0).unwrap();
    let bytes = checkpoint_bytes(&model).unwrap();
    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint_from_bytes(&bad).is_err());
    let mut longer = bytes;
    longer.push(0);
    assert!(checkpoint_from_bytes(&longer).is_err());
}

#[test]
fn one_step_is_byte_deterministic() {
    let cfg = toy_config(ModelKind::MaskSplit);
    let run = || {
        let mut model = Model::<f32>::new(cfg.clone(), 77).unwrap();
        let mut adam = Adam::new(model.params(), 1e-3);
        let doas = [30.0, 250.0];
        let batch = vec![
            (random_input::<f32>(&cfg, 4, 1), &doas[..]),
            (random_input::<f32>(&cfg, 4, 2), &doas[..]),
        ];
        train_step(&mut model, &mut adam, &batch, &TrainConfig::default()).unwrap();
        checkpoint_bytes(&model).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn wrong_input_shape_is_an_error() {
    let cfg = toy_config(ModelKind::Mlc);
    let model = Model::<f64>::new(cfg, 0).unwrap();
    assert!(model.posteriors(&Tensor::zeros(vec![4, 8, 9])).is_err());
    assert!(model.posteriors(&Tensor::zeros(vec![0, 3, 9])).is_err());
}

#[test]
fn training_reduces_loss_on_a_toy_problem() {
    // Each example's input pattern is a deterministic function of its
    // labels, so a network can fit it.
    let cfg = toy_config(ModelKind::MapSplitC);
    let make = |i: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let a = rng.random_range(0..8usize);
        let b = (a + rng.random_range(2..6usize)) % 8;
        let doas = vec![a as f64 * 45.0 + 22.0, b as f64 * 45.0 + 22.0];
        let data: Vec<f64> = (0..4 * 27)
            .map(|j| {
                (((j % 9) as f64 + 1.0) * (a as f64 + 1.0) * 0.3).sin()
                    + (((j % 9) as f64 + 1.0) * (b as f64 + 1.0) * 0.2).cos()
            })
            .collect();
        TrainExample {
            id: format!("ex{i}"),
            features: Tensor::<f32>::from_f64(vec![4, 3, 9], &data).unwrap(),
            doas_deg: doas,
        }
    };
    let train_set: Vec<_> = (0..32).map(make).collect();
    let dev_set: Vec<_> = (100..108).map(make).collect();
    let mut model = Model::<f32>::new(cfg, 1).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 8,
        learning_rate: 1e-2,
        loss: LossKind::Ce,
        pit: true,
        crop_frames: None,
        clip_norm: None,
        seed: 3,
    };
    let mut seen = 0;
    let logs = train(&mut model, &train_set, &dev_set, &tc, |_| seen += 1).unwrap();
    assert_eq!(seen, 30);
    assert!(logs.iter().all(|l| l.dev_mae_deg.is_finite()));
    assert!(logs[29].train_loss < 0.5 * logs[0].train_loss);
}

#[test]
fn divergence_is_reported() {
    let cfg = toy_config(ModelKind::MapSplitC);
    let mut model = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let id: ParamId = model.params().find("predictor.b").unwrap();
    model.params_mut().get_mut(id).data[0] = f32::NAN;
    let ex = TrainExample {
        id: "bad".into(),
        features: random_input::<f32>(&cfg, 4, 0),
        doas_deg: vec![10.0, 100.0],
    };
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train(&mut model, &[ex], &[], &tc, |_| {}).unwrap_err();
    assert!(
        matches!(
            err,
            doalab::Error::Diverged {
                epoch: 1,
                step: 0,
                ..
            }
        ),
        "{err}"
    );
}
