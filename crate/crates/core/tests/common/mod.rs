#![allow(dead_code)]

use doalab::dsp::GeometryId;
use doalab::neural::{
    example_loss, BinSelection, Graph, LossKind, Model, ModelConfig, ModelKind, Real, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn toy_config(kind: ModelKind) -> ModelConfig {
    let mut c = ModelConfig::new(kind, 45, GeometryId::Qa10);
    c.hidden = Some(8);
    c.lstm_cells = Some(3);
    c.projection = Some(2);
    c.bins = BinSelection {
        first: 1,
        count: Some(9),
        stride: 1,
    };
    c
}

pub fn random_input<T: Real>(cfg: &ModelConfig, frames: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![frames];
    shape.extend(cfg.frame_shape().unwrap());
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    Tensor::from_f64(shape, &data).unwrap()
}

pub fn loss_of(
    model: &Model<f64>,
    x: &Tensor<f64>,
    doas: &[f64],
    kind: LossKind,
    pit: bool,
) -> f64 {
    let mut g = Graph::new(model.params());
    let l = example_loss(model, &mut g, x, doas, kind, pit).unwrap();
    g.scalar(l)
}

/// Largest |analytic − numeric| / max(|analytic|, |numeric|, 1e-6) over all
/// parameters.
pub fn max_relative_error(
    model: &Model<f64>,
    x: &Tensor<f64>,
    doas: &[f64],
    kind: LossKind,
    pit: bool,
) -> f64 {
    let mut g = Graph::new(model.params());
    let l = example_loss(model, &mut g, x, doas, kind, pit).unwrap();
    let grads = g.backward(l);
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for p in 0..model.params().len() {
        let id = model.params().iter().nth(p).unwrap().0;
        for i in 0..model.params().get(id).len() {
            let orig = m.params().get(id).data[i];
            m.params_mut().get_mut(id).data[i] = orig + STEP;
            let up = loss_of(&m, x, doas, kind, pit);
            m.params_mut().get_mut(id).data[i] = orig - STEP;
            let down = loss_of(&m, x, doas, kind, pit);
            m.params_mut().get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.get(id)[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Worst relative gradient error over every model kind, loss and PIT
/// setting at toy size.
pub fn gradient_suite() -> Vec<(ModelKind, LossKind, bool, f64)> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let cfg = toy_config(kind);
        let model = Model::<f64>::new(cfg.clone(), 3).unwrap();
        let x = random_input(&cfg, 4, 11);
        for loss in LossKind::ALL {
            for pit in [false, true] {
                out.push((
                    kind,
                    loss,
                    pit,
                    max_relative_error(&model, &x, &[60.0, 200.0], loss, pit),
                ));
            }
        }
    }
    out
}
