use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::infer::estimate_features;
use super::loss::{fixed_order_targets, multi_hot, pit_loss, LossKind};
use super::model::Model;
use super::real::Real;
use super::tensor::{ParamGrads, ParamStore, Tensor};
use crate::error::{invalid, Error, Result};
use crate::eval::cyclic_mae;
use crate::grid::AngularGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub pit: bool,
    /// Random crop length in frames; `None` trains on whole utterances.
    pub crop_frames: Option<usize>,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            loss: LossKind::Semd,
            pit: false,
            crop_frames: Some(100),
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.crop_frames == Some(0) {
            return Err(Error::Config("crop_frames must be positive".into()));
        }
        Ok(())
    }
}

/// Network input with its reference DOAs in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<T> {
    pub id: String,
    pub features: Tensor<T>,
    pub doas_deg: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_mae_deg: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,dev_loss,dev_mae_deg";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.epoch, self.train_loss, self.dev_loss, self.dev_mae_deg
        )
    }
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for l in logs {
        s.push_str(&l.csv_row());
        s.push('\n');
    }
    s
}

/// Target vectors for each prediction row.
///
/// Splitting models get one target per source in ascending DOA order. MLC
/// gets a single vector: multi-hot for BCE, otherwise the mean of the
/// per-source targets so it stays a distribution.
pub fn targets(
    kind: LossKind,
    grid: &AngularGrid,
    splitting: bool,
    doas_deg: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let sorted = fixed_order_targets(doas_deg);
    let classes: Vec<usize> = sorted
        .iter()
        .map(|d| grid.nearest_class(d.to_radians()))
        .collect();
    if splitting {
        return classes
            .iter()
            .map(|&c| kind.source_target(c, grid))
            .collect();
    }
    if kind == LossKind::Bce {
        return Ok(vec![multi_hot(&classes, grid.size())?]);
    }
    let mut acc = vec![0.0; grid.size()];
    for &c in &classes {
        for (a, v) in acc.iter_mut().zip(kind.source_target(c, grid)?) {
            *a += v / classes.len() as f64;
        }
    }
    Ok(vec![acc])
}

fn check_sources<T: Real>(model: &Model<T>, doas_deg: &[f64]) -> Result<()> {
    if doas_deg.len() != model.config().n_sources {
        return Err(invalid(format!(
            "example has {} sources, model expects {}",
            doas_deg.len(),
            model.config().n_sources
        )));
    }
    Ok(())
}

/// Summed per-source loss of one example as a scalar node. With `pit`
/// the prediction-to-target assignment minimizing the loss is used,
/// otherwise targets follow ascending DOA order.
pub fn example_loss<T: Real>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    x: &Tensor<T>,
    doas_deg: &[f64],
    kind: LossKind,
    pit: bool,
) -> Result<Var> {
    check_sources(model, doas_deg)?;
    let cfg = model.config();
    let grid = cfg.grid()?;
    let fwd = model.forward(g, x)?;
    let tgt = targets(kind, &grid, cfg.kind.is_splitting(), doas_deg)?;
    let chosen: Vec<Var> = if pit && fwd.posteriors.len() > 1 {
        let n = fwd.posteriors.len();
        let mut nodes = Vec::with_capacity(n);
        let mut matrix = vec![vec![0.0; n]; n];
        for (i, &p) in fwd.posteriors.iter().enumerate() {
            let mut row = Vec::with_capacity(n);
            for (j, t) in tgt.iter().enumerate() {
                let v = g.loss(p, t, kind);
                matrix[i][j] = g.scalar(v).as_f64();
                row.push(v);
            }
            nodes.push(row);
        }
        let (_, perm) = pit_loss(&matrix)?;
        perm.iter().enumerate().map(|(i, &j)| nodes[i][j]).collect()
    } else {
        fwd.posteriors
            .iter()
            .zip(&tgt)
            .map(|(&p, t)| g.loss(p, t, kind))
            .collect()
    };
    let mut total = chosen[0];
    for &v in &chosen[1..] {
        total = g.add(total, v);
    }
    Ok(total)
}

/// Loss of every prediction against every target (ascending DOA order);
/// rows are predictions. The fixed-order loss is the trace.
pub fn pair_losses<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    doas_deg: &[f64],
    kind: LossKind,
) -> Result<Vec<Vec<f64>>> {
    check_sources(model, doas_deg)?;
    let cfg = model.config();
    if !cfg.kind.is_splitting() {
        return Err(invalid("pair losses need a splitting model"));
    }
    let tgt = targets(kind, &cfg.grid()?, true, doas_deg)?;
    let post = model.posteriors(x)?;
    Ok(post
        .iter()
        .map(|p| {
            tgt.iter()
                .map(|t| super::loss::loss_value(kind, p, t))
                .collect()
        })
        .collect())
}

/// Adam with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = ParamGrads::zeros_like(params).grads;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let lr_t = T::of(self.lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p.data[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Random crop of at most `crop` frames.
fn crop<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, crop: Option<usize>, rng: &mut R) -> Tensor<T> {
    match crop {
        Some(c) if x.rows() > c => {
            let start = rng.random_range(0..=x.rows() - c);
            x.slice_rows(start, c)
        }
        _ => x.clone(),
    }
}

/// Accumulates the mean gradient of a batch and applies one Adam update.
/// Returns the mean example loss.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    batch: &[(Tensor<T>, &[f64])],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut grads = ParamGrads::zeros_like(model.params());
    let mut total = 0.0;
    for (x, doas) in batch {
        let mut g = Graph::new(model.params());
        let l = example_loss(model, &mut g, x, doas, cfg.loss, cfg.pit)?;
        let v = g.scalar(l).as_f64();
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {v}")));
        }
        total += v;
        grads.add_assign(&g.backward(l));
    }
    grads.scale(T::of(1.0 / batch.len() as f64));
    if let Some(max) = cfg.clip_norm {
        let n = grads.norm();
        if n > max {
            grads.scale(T::of(max / n));
        }
    }
    adam.step(model.params_mut(), &grads);
    Ok(total / batch.len() as f64)
}

/// Mean loss and corpus MAE (degrees) over whole utterances.
pub fn evaluate_examples<T: Real>(
    model: &Model<T>,
    examples: &[TrainExample<T>],
    kind: LossKind,
    pit: bool,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut mae = 0.0;
    for ex in examples {
        let mut g = Graph::new(model.params());
        let l = example_loss(model, &mut g, &ex.features, &ex.doas_deg, kind, pit)?;
        loss += g.scalar(l).as_f64();
        let est: Vec<f64> = estimate_features(model, &ex.features)?
            .into_iter()
            .map(f64::to_degrees)
            .collect();
        mae += cyclic_mae(&est, &ex.doas_deg)?;
    }
    let n = examples.len() as f64;
    Ok((loss / n, mae / n))
}

/// Trains in place. Example order and crops come from one generator
/// seeded with `cfg.seed`; `on_epoch` sees every log line as it is made.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[TrainExample<T>],
    dev_set: &[TrainExample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Tensor<T>, &[f64])> = idx
                .iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    (
                        crop(&ex.features, cfg.crop_frames, &mut rng),
                        ex.doas_deg.as_slice(),
                    )
                })
                .collect();
            let l = train_step(model, &mut adam, &batch, cfg).map_err(|e| match e {
                Error::Numerical(detail) => Error::Diverged {
                    epoch,
                    step,
                    detail: format!("{detail} in batch starting with '{}'", train_set[idx[0]].id),
                },
                other => other,
            })?;
            sum += l * idx.len() as f64;
        }
        let (dev_loss, dev_mae_deg) = evaluate_examples(model, dev_set, cfg.loss, cfg.pit)?;
        let log = EpochLog {
            epoch,
            train_loss: sum / train_set.len() as f64,
            dev_loss,
            dev_mae_deg,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
