use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::real::Real;
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::dsp::{ipd_features_for_bins, phase_spectrum, stft, GeometryId, StftConfig, Waveform};
use crate::error::{invalid, Error, Result};
use crate::grid::AngularGrid;

/// Initial bias of every LSTM forget gate.
pub const FORGET_BIAS: f64 = 1.0;
/// Feature maps of the three convolution blocks.
pub const CNN_MAPS: [usize; 3] = [4, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlc,
    MaskSplit,
    MapSplitC,
    MapSplitR,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Mlc, Self::MaskSplit, Self::MapSplitC, Self::MapSplitR];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mlc => "mlc",
            Self::MaskSplit => "mask_split",
            Self::MapSplitC => "map_split_c",
            Self::MapSplitR => "map_split_r",
        }
    }

    /// Splitting models emit one posterior per source.
    pub fn is_splitting(self) -> bool {
        self != Self::Mlc
    }

    pub fn uses_cnn(self) -> bool {
        self != Self::MapSplitR
    }

    pub fn default_predictor_sharing(self) -> bool {
        self == Self::MapSplitC
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| invalid(format!("unknown model '{s}'")))
    }
}

/// Frequency bins fed to the network: `first, first+stride, …`
/// (`count` of them, or every bin up to Nyquist when `count` is absent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinSelection {
    pub first: usize,
    pub count: Option<usize>,
    pub stride: usize,
}

impl Default for BinSelection {
    fn default() -> Self {
        Self {
            first: 0,
            count: None,
            stride: 1,
        }
    }
}

impl BinSelection {
    pub fn indices(&self, num_bins: usize) -> Result<Vec<usize>> {
        if self.stride == 0 {
            return Err(invalid("bin stride must be positive"));
        }
        let all: Vec<usize> = (self.first..num_bins).step_by(self.stride).collect();
        let out = match self.count {
            Some(c) if c > all.len() => {
                return Err(invalid(format!(
                    "{c} bins requested, only {} available from bin {} with stride {}",
                    all.len(),
                    self.first,
                    self.stride
                )))
            }
            Some(c) => all[..c].to_vec(),
            None => all,
        };
        if out.is_empty() {
            return Err(invalid("bin selection is empty"));
        }
        Ok(out)
    }
}

/// Architecture and input description stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n_sources: usize,
    pub gamma: u32,
    pub geometry: GeometryId,
    /// Hidden width Q; defaults to `2·⌊360/γ⌋`.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub predictor_sharing: Option<bool>,
    /// BLSTM cells per direction; defaults to Q.
    #[serde(default)]
    pub lstm_cells: Option<usize>,
    /// Output projection per direction; defaults to Q.
    #[serde(default)]
    pub projection: Option<usize>,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub bins: BinSelection,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, gamma: u32, geometry: GeometryId) -> Self {
        Self {
            kind,
            n_sources: 2,
            gamma,
            geometry,
            hidden: None,
            predictor_sharing: None,
            lstm_cells: None,
            projection: None,
            stft: StftConfig::default(),
            bins: BinSelection::default(),
        }
    }

    pub fn grid(&self) -> Result<AngularGrid> {
        AngularGrid::new(self.gamma)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
            .unwrap_or(2 * (360 / self.gamma.max(1)) as usize)
    }

    pub fn predictor_sharing(&self) -> bool {
        self.predictor_sharing
            .unwrap_or_else(|| self.kind.default_predictor_sharing())
    }

    pub fn lstm_cells(&self) -> usize {
        self.lstm_cells.unwrap_or_else(|| self.hidden())
    }

    pub fn projection(&self) -> usize {
        self.projection.unwrap_or_else(|| self.hidden())
    }

    pub fn num_mics(&self) -> usize {
        self.geometry.geometry().num_mics()
    }

    pub fn bin_indices(&self) -> Result<Vec<usize>> {
        self.bins.indices(self.stft.num_bins())
    }

    /// Per-frame input shape (everything after the time axis).
    pub fn frame_shape(&self) -> Result<Vec<usize>> {
        let f = self.bin_indices()?.len();
        Ok(if self.kind.uses_cnn() {
            vec![self.num_mics(), f]
        } else {
            let pairs = self.geometry.geometry().pairs.len();
            vec![2 * pairs * f + f]
        })
    }

    /// `(kh, kw)` of the three convolution blocks.
    pub fn cnn_kernels(&self) -> Result<[(usize, usize); 3]> {
        match self.num_mics() {
            8 => Ok([(4, 1), (3, 3), (3, 3)]),
            3 => Ok([(2, 1), (2, 3), (1, 3)]),
            m => Err(invalid(format!(
                "no convolution layout for {m} microphones"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.n_sources == 0 {
            return Err(invalid("n_sources must be at least 1"));
        }
        if self.kind.is_splitting() && self.n_sources > grid.size() {
            return Err(invalid("more sources than classes"));
        }
        if self.hidden() == 0 || self.lstm_cells() == 0 || self.projection() == 0 {
            return Err(invalid("layer widths must be positive"));
        }
        self.stft.validate()?;
        let frame = self.frame_shape()?;
        if self.kind.uses_cnn() {
            let k = self.cnn_kernels()?;
            let f = frame[1];
            let shrink: usize = k.iter().map(|&(_, kw)| kw - 1).sum();
            if f <= shrink {
                return Err(invalid(format!(
                    "{f} bins are too few for the convolution stack"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct Direction {
    wx: ParamId,
    b: ParamId,
    wh: ParamId,
    proj: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Blstmp {
    fwd: Direction,
    bwd: Direction,
}

#[derive(Debug, Clone)]
struct Cnn {
    convs: [Dense; 3],
    ff: Dense,
}

#[derive(Debug, Clone)]
enum Layout {
    Mlc {
        cnn: Cnn,
        affine1: Dense,
        affine2: Dense,
    },
    MapSplitC {
        cnn: Cnn,
        branches: Vec<Dense>,
        predictors: Vec<Dense>,
    },
    MaskSplit {
        cnn: Cnn,
        blstm: Blstmp,
        masks: Vec<Dense>,
        predictors: Vec<Dense>,
    },
    MapSplitR {
        blstm: Blstmp,
        maps: Vec<Dense>,
        predictors: Vec<Dense>,
    },
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Phase feature `Z: [T, Q]` (CNN models).
    pub z: Option<Var>,
    /// Source-specific maps or masks `[T, Q]` (splitting models).
    pub maps: Vec<Var>,
    /// One `[1, K]` row per source, or the single MLC vector.
    pub posteriors: Vec<Var>,
}

/// A localization network with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

struct Builder<'a, T: Real> {
    params: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn dense(&mut self, name: &str, fan_in: usize, out: usize, bias: bool) -> Dense {
        let w = self.params.add_uniform(
            format!("{name}.w"),
            vec![fan_in, out],
            fan_in,
            &mut self.rng,
        );
        let b = bias.then(|| {
            self.params
                .add_constant(format!("{name}.b"), vec![out], 0.0)
        });
        Dense { w, b }
    }

    fn conv(&mut self, name: &str, kh: usize, kw: usize, c: usize, o: usize) -> Dense {
        let fan_in = kh * kw * c;
        let w = self.params.add_uniform(
            format!("{name}.w"),
            vec![kh, kw, c, o],
            fan_in,
            &mut self.rng,
        );
        let b = Some(self.params.add_constant(format!("{name}.b"), vec![o], 0.0));
        Dense { w, b }
    }

    fn direction(&mut self, name: &str, input: usize, h: usize, p: usize) -> Direction {
        let wx = self.params.add_uniform(
            format!("{name}.wx"),
            vec![input, 4 * h],
            input,
            &mut self.rng,
        );
        let mut bias = vec![T::zero(); 4 * h];
        bias[h..2 * h].fill(T::of(FORGET_BIAS));
        let b = self.params.add(
            format!("{name}.b"),
            Tensor {
                shape: vec![4 * h],
                data: bias,
            },
        );
        let wh = self
            .params
            .add_uniform(format!("{name}.wh"), vec![h, 4 * h], h, &mut self.rng);
        let proj = self
            .params
            .add_uniform(format!("{name}.proj"), vec![h, p], h, &mut self.rng);
        Direction { wx, b, wh, proj }
    }

    fn blstmp(&mut self, name: &str, input: usize, h: usize, p: usize) -> Blstmp {
        Blstmp {
            fwd: self.direction(&format!("{name}.fwd"), input, h, p),
            bwd: self.direction(&format!("{name}.bwd"), input, h, p),
        }
    }

    fn cnn(&mut self, cfg: &ModelConfig, f: usize, q: usize) -> Result<Cnn> {
        let kernels = cfg.cnn_kernels()?;
        let mut c = 1;
        let mut convs = Vec::new();
        let mut w = f;
        for (i, (&(kh, kw), &o)) in kernels.iter().zip(&CNN_MAPS).enumerate() {
            convs.push(self.conv(&format!("cnn.conv{}", i + 1), kh, kw, c, o));
            c = o;
            w -= kw - 1;
        }
        let ff = self.dense("cnn.ff", c * w, q, true);
        Ok(Cnn {
            convs: [convs[0], convs[1], convs[2]],
            ff,
        })
    }

    fn per_source(&mut self, name: &str, n: usize, fan_in: usize, out: usize) -> Vec<Dense> {
        (0..n)
            .map(|s| self.dense(&format!("{name}{s}"), fan_in, out, true))
            .collect()
    }

    fn predictors(&mut self, cfg: &ModelConfig, q: usize, k: usize) -> Vec<Dense> {
        if cfg.predictor_sharing() {
            vec![self.dense("predictor", q, k, true)]
        } else {
            self.per_source("predictor", cfg.n_sources, q, k)
        }
    }
}

impl<T: Real> Model<T> {
    /// Fresh network with seeded uniform fan-in initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let q = config.hidden();
        let k = config.grid()?.size();
        let n = config.n_sources;
        let frame = config.frame_shape()?;
        let mut b = Builder {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let layout = match config.kind {
            ModelKind::Mlc => Layout::Mlc {
                cnn: b.cnn(&config, frame[1], q)?,
                affine1: b.dense("affine1", q, q, true),
                affine2: b.dense("affine2", q, k, true),
            },
            ModelKind::MapSplitC => Layout::MapSplitC {
                cnn: b.cnn(&config, frame[1], q)?,
                branches: b.per_source("branch", n, q, q),
                predictors: b.predictors(&config, q, k),
            },
            ModelKind::MaskSplit => {
                let (h, p) = (config.lstm_cells(), config.projection());
                Layout::MaskSplit {
                    cnn: b.cnn(&config, frame[1], q)?,
                    blstm: b.blstmp("blstm", q, h, p),
                    masks: b.per_source("mask", n, 2 * p, q),
                    predictors: b.predictors(&config, q, k),
                }
            }
            ModelKind::MapSplitR => {
                let (h, p) = (config.lstm_cells(), config.projection());
                Layout::MapSplitR {
                    blstm: b.blstmp("blstm", frame[0], h, p),
                    maps: b.per_source("map", n, 2 * p, q),
                    predictors: b.predictors(&config, q, k),
                }
            }
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let frame = self.config.frame_shape()?;
        if x.shape.len() != frame.len() + 1 || x.shape[1..] != frame[..] {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match [T, {}]",
                x.shape,
                frame
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        if x.rows() == 0 {
            return Err(invalid("input has no frames"));
        }
        Ok(())
    }

    /// Builds the forward pass of `x` on `g`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: &Tensor<T>) -> Result<Forward> {
        self.check_input(x)?;
        let input = g.input(x.clone());
        Ok(match &self.layout {
            Layout::Mlc {
                cnn,
                affine1,
                affine2,
            } => {
                let z = self.locnet_cnn(g, input, cnn);
                let w = dense(g, z, affine1);
                let w = g.relu(w);
                let xi = g.time_mean(w);
                let k = dense(g, xi, affine2);
                let kappa = g.sigmoid(k);
                Forward {
                    z: Some(z),
                    maps: vec![w],
                    posteriors: vec![kappa],
                }
            }
            Layout::MapSplitC {
                cnn,
                branches,
                predictors,
            } => {
                let z = self.locnet_cnn(g, input, cnn);
                let mut maps = Vec::new();
                let mut posteriors = Vec::new();
                for (n, br) in branches.iter().enumerate() {
                    let w = dense(g, z, br);
                    let w = g.relu(w);
                    let xi = g.time_mean(w);
                    maps.push(w);
                    posteriors.push(predict(g, xi, &predictors[n % predictors.len()]));
                }
                Forward {
                    z: Some(z),
                    maps,
                    posteriors,
                }
            }
            Layout::MaskSplit {
                cnn,
                blstm,
                masks,
                predictors,
            } => {
                let z = self.locnet_cnn(g, input, cnn);
                let hidden = blstmp(g, z, blstm);
                let mut maps = Vec::new();
                let mut posteriors = Vec::new();
                for (n, m) in masks.iter().enumerate() {
                    let w = dense(g, hidden, m);
                    let w = g.sigmoid(w);
                    let xi = g.weighted_time_mean(w, z);
                    maps.push(w);
                    posteriors.push(predict(g, xi, &predictors[n % predictors.len()]));
                }
                Forward {
                    z: Some(z),
                    maps,
                    posteriors,
                }
            }
            Layout::MapSplitR {
                blstm,
                maps: heads,
                predictors,
            } => {
                let hidden = blstmp(g, input, blstm);
                let mut maps = Vec::new();
                let mut posteriors = Vec::new();
                for (n, m) in heads.iter().enumerate() {
                    let w = dense(g, hidden, m);
                    let w = g.sigmoid(w);
                    let xi = g.time_mean(w);
                    maps.push(w);
                    posteriors.push(predict(g, xi, &predictors[n % predictors.len()]));
                }
                Forward {
                    z: None,
                    maps,
                    posteriors,
                }
            }
        })
    }

    fn locnet_cnn(&self, g: &mut Graph<'_, T>, input: Var, cnn: &Cnn) -> Var {
        let s = g.shape(input).to_vec();
        let mut h = g.reshape(input, vec![s[0], s[1], s[2], 1]);
        for conv in &cnn.convs {
            let w = g.param(conv.w);
            let b = g.param(conv.b.expect("conv bias"));
            let c = g.conv2d(h, w, b);
            h = g.relu(c);
        }
        let s = g.shape(h).to_vec();
        debug_assert_eq!(s[1], 1, "channel axis must collapse");
        let flat = g.reshape(h, vec![s[0], s[1] * s[2] * s[3]]);
        dense(g, flat, &cnn.ff)
    }

    /// Posterior rows for one input (no gradients kept).
    pub fn posteriors(&self, x: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, x)?;
        Ok(fwd
            .posteriors
            .iter()
            .map(|&v| g.value(v).iter().map(|x| x.as_f64()).collect())
            .collect())
    }

    /// Network input for a multichannel waveform.
    pub fn features(&self, w: &Waveform) -> Result<Tensor<T>> {
        features(&self.config, w)
    }
}

fn dense<T: Real>(g: &mut Graph<'_, T>, x: Var, d: &Dense) -> Var {
    let w = g.param(d.w);
    let b = d.b.map(|b| g.param(b));
    g.linear(x, w, b)
}

fn predict<T: Real>(g: &mut Graph<'_, T>, xi: Var, d: &Dense) -> Var {
    let logits = dense(g, xi, d);
    g.softmax(logits)
}

fn direction<T: Real>(g: &mut Graph<'_, T>, x: Var, d: &Direction, reverse: bool) -> Var {
    let wx = g.param(d.wx);
    let b = g.param(d.b);
    let xg = g.linear(x, wx, Some(b));
    let wh = g.param(d.wh);
    let h = g.lstm(xg, wh, reverse);
    let proj = g.param(d.proj);
    g.linear(h, proj, None)
}

fn blstmp<T: Real>(g: &mut Graph<'_, T>, x: Var, b: &Blstmp) -> Var {
    let f = direction(g, x, &b.fwd, false);
    let r = direction(g, x, &b.bwd, true);
    let both = g.concat_cols(f, r);
    g.tanh(both)
}

/// Phase map `[T, M, F]` (CNN models) or IPD features `[T, 2IF+F]`
/// (Map-Split-R) over the configured bins.
pub fn features<T: Real>(cfg: &ModelConfig, w: &Waveform) -> Result<Tensor<T>> {
    let geometry = cfg.geometry.geometry();
    if w.num_channels() != geometry.num_mics() {
        return Err(Error::Shape(format!(
            "{} expects {} channels, got {}",
            cfg.geometry,
            geometry.num_mics(),
            w.num_channels()
        )));
    }
    let spec = stft(w, &cfg.stft)?;
    let bins = cfg.bin_indices()?;
    let t = spec.num_frames();
    if cfg.kind.uses_cnn() {
        let phase = phase_spectrum(&spec);
        let m = geometry.num_mics();
        let mut data = Vec::with_capacity(t * m * bins.len());
        for ti in 0..t {
            for mi in 0..m {
                data.extend(bins.iter().map(|&f| T::of(phase[[ti, mi, f]])));
            }
        }
        Tensor::new(vec![t, m, bins.len()], data)
    } else {
        let ipd = ipd_features_for_bins(&spec, &geometry, &bins)?;
        let d = ipd.ncols();
        Tensor::new(vec![t, d], ipd.iter().map(|&x| T::of(x)).collect())
    }
}
