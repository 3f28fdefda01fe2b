//! Command-line front end: `simulate`, `train`, `estimate`, `beamform`,
//! `evaluate` and `spectrum`.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    EstimateSection, Estimator, ExperimentFile, ExperimentSpec, FeatureSection, CONFIG_VERSION,
};

use crate::dsp::wav::{read_wav, write_wav, WavEncoding};
use crate::dsp::{stft, ArrayGeometry, GeometryId, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::eval::{
    binned_mae, corpus_mae, permutations, si_sdr, Report, ReportRow, SeparationBin, UtteranceResult,
};
use crate::frontend::{separate, MaskSource, DEFAULT_REF_MIC};
use crate::grid::AngularGrid;
use crate::io::write_atomic;
use crate::neural::{
    chunked_estimate, estimate, features, load_checkpoint, log_csv, save_checkpoint, train,
    ChunkConfig, LossKind, Model, ModelConfig, ModelKind, TrainExample,
};
use crate::sim::{
    dataset_generate, ideal_binary_mask, load_example, DatasetManifest, ManifestRecord, Split,
};
use crate::subspace::{pick_peaks, spatial_spectrum, Method};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "DOALAB_DATA_DIR";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const MISSING_FILE: i32 = 4;
    pub const BAD_DATA: i32 = 5;
    pub const NUMERICAL: i32 = 6;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::MissingFile(_) => exit::MISSING_FILE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => exit::MISSING_FILE,
        Error::InvalidInput(_)
        | Error::Shape(_)
        | Error::SampleRate { .. }
        | Error::WavFormat(_)
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::Wav(_) => exit::BAD_DATA,
        Error::Numerical(_) | Error::Diverged { .. } => exit::NUMERICAL,
        Error::Io(_) => exit::FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "doalab",
    version,
    about = "Multi-source DOA estimation toolkit"
)]
struct Cli {
    /// Experiment file (TOML, versioned).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled dataset (manifest + WAVs).
    Simulate(SimulateArgs),
    /// Train one or more networks.
    Train(TrainArgs),
    /// Write per-utterance DOA predictions as JSON lines.
    Estimate(EstimateArgs),
    /// Mask-based MVDR separation.
    Beamform(BeamformArgs),
    /// Score predictions or run a whole experiment table.
    Evaluate(EvaluateArgs),
    /// Dump a subspace spatial spectrum as CSV.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Output directory (defaults to $DOALAB_DATA_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<GeometryId>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory (defaults to $DOALAB_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory; each experiment writes `<out>/<name>/`.
    #[arg(long)]
    out: PathBuf,
    /// Train only this experiment (or name an ad-hoc run).
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    gamma: Option<u32>,
    #[arg(long, value_enum)]
    pit: Option<OnOff>,
    #[arg(long, value_enum)]
    predictor_sharing: Option<OnOff>,
    #[arg(long)]
    geometry: Option<GeometryId>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("estimator").required(true).args(["checkpoint", "method"])))]
struct EstimateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Trained network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Subspace baseline instead of a network.
    #[arg(long)]
    method: Option<Method>,
    /// Grid resolution for subspace methods.
    #[arg(long, default_value_t = 1)]
    gamma: u32,
    /// Median over 100 ms chunks with 50% overlap.
    #[arg(long)]
    chunked: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskKind {
    /// Oracle ideal binary masks from the clean images.
    Ibm,
    /// Angle-feature masks at the reference (or estimated) DOAs.
    Angle,
}

#[derive(Debug, Args)]
struct BeamformArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Utterance ids (default: the whole split).
    #[arg(long)]
    id: Vec<String>,
    /// Process at most this many utterances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum, default_value = "ibm")]
    mask: MaskKind,
    /// Estimate DOAs for angle masks with this network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Prediction files written by `estimate`.
    #[arg(long)]
    predictions: Vec<PathBuf>,
    /// Run directory of a config's experiments (needs --config).
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    chunked: bool,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Utterance id inside the dataset.
    #[arg(long)]
    id: Option<String>,
    /// Multichannel WAV instead of a dataset utterance.
    #[arg(long, conflicts_with = "id")]
    wav: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<GeometryId>,
    #[arg(long, default_value = "music_nam")]
    method: Method,
    #[arg(long, default_value_t = 1)]
    gamma: u32,
    #[arg(long)]
    sources: Option<usize>,
    /// CSV path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Failures print one diagnostic line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return exit::OK;
            }
            let msg = e.to_string();
            eprintln!("doalab: {}", msg.lines().next().unwrap_or("usage error"));
            return exit::USAGE;
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("doalab: error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ExperimentFile::load(p)?,
        None => ExperimentFile::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match &cli.cmd {
        Command::Simulate(a) => cmd_simulate(&file, seed, a),
        Command::Train(a) => cmd_train(&file, seed, a),
        Command::Estimate(a) => cmd_estimate(&file, a),
        Command::Beamform(a) => cmd_beamform(&file, a),
        Command::Evaluate(a) => cmd_evaluate(cli, &file, a),
        Command::Spectrum(a) => cmd_spectrum(&file, a),
    }
}

fn data_dir(arg: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = arg {
        return Ok(p.clone());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| {
            Error::Config(format!(
                "no dataset directory: pass --data or set {DATA_DIR_ENV}"
            ))
        })
}

fn load_manifest(arg: &Option<PathBuf>) -> Result<DatasetManifest> {
    DatasetManifest::load(&data_dir(arg)?)
}

fn cmd_simulate(file: &ExperimentFile, seed: u64, a: &SimulateArgs) -> Result<()> {
    let mut cfg = file.simulate.clone();
    if let Some(g) = a.geometry {
        cfg.geometry = g;
    }
    let out = data_dir(&a.out)?;
    let m = dataset_generate(&cfg, seed, &out, a.jobs.max(1))?;
    eprintln!("wrote {} utterances to {}", m.records.len(), out.display());
    Ok(())
}

/// `(init_seed, data_seed)` of the experiment at `index`, drawn from one
/// master generator.
pub fn experiment_seeds(seed: u64, index: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (rng.next_u64(), rng.next_u64())
}

fn adhoc_requested(a: &TrainArgs) -> bool {
    a.model.is_some()
        || a.loss.is_some()
        || a.gamma.is_some()
        || a.pit.is_some()
        || a.predictor_sharing.is_some()
}

/// Experiments to train with their index in the file (ad-hoc runs come
/// after the listed ones).
fn select_experiments(
    file: &ExperimentFile,
    a: &TrainArgs,
) -> Result<Vec<(usize, ExperimentSpec)>> {
    let by_name = |n: &str| file.experiments.iter().position(|e| e.name == n);
    if adhoc_requested(a) {
        let (index, mut spec) = match a
            .experiment
            .as_deref()
            .and_then(|n| by_name(n).map(|i| (i, n)))
        {
            Some((i, _)) => (i, file.experiments[i].clone()),
            None => (
                file.experiments.len(),
                ExperimentSpec {
                    name: String::new(),
                    model: ModelKind::MaskSplit.to_string(),
                    gamma: 10,
                    loss: None,
                    pit: false,
                    predictor_sharing: None,
                    hidden: None,
                    lstm_cells: None,
                    projection: None,
                    epochs: None,
                    chunked: false,
                },
            ),
        };
        if let Some(m) = a.model {
            spec.model = m.to_string();
        }
        if let Some(l) = a.loss {
            spec.loss = Some(l);
        }
        if let Some(g) = a.gamma {
            spec.gamma = g;
        }
        if let Some(p) = a.pit {
            spec.pit = p.into();
        }
        if let Some(p) = a.predictor_sharing {
            spec.predictor_sharing = Some(p.into());
        }
        if spec.name.is_empty() {
            let Estimator::Network(kind) = spec.estimator()? else {
                return Err(Error::Config("train needs a network model".into()));
            };
            spec.name = a.experiment.clone().unwrap_or_else(|| {
                format!(
                    "{}_g{}_{}{}",
                    kind,
                    spec.gamma,
                    spec.loss(kind),
                    if spec.pit { "_pit" } else { "" }
                )
            });
        }
        return Ok(vec![(index, spec)]);
    }
    let chosen: Vec<(usize, ExperimentSpec)> = file
        .experiments
        .iter()
        .enumerate()
        .filter(|(_, e)| a.experiment.as_ref().is_none_or(|n| &e.name == n))
        .filter(|(_, e)| matches!(e.estimator(), Ok(Estimator::Network(_))))
        .map(|(i, e)| (i, e.clone()))
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config(match &a.experiment {
            Some(n) => format!("no network experiment named '{n}'"),
            None => "nothing to train: give --model or list [[experiment]] entries".into(),
        }));
    }
    Ok(chosen)
}

fn split_examples(
    m: &DatasetManifest,
    split: Split,
    cfg: &ModelConfig,
) -> Result<Vec<TrainExample<f32>>> {
    m.split(split)
        .map(|r| {
            if r.geometry != cfg.geometry {
                return Err(Error::Config(format!(
                    "{} was recorded with {}, the model expects {}",
                    r.id, r.geometry, cfg.geometry
                )));
            }
            let w = read_wav(&m.root.join(&r.mixture), cfg.stft.sample_rate)?;
            Ok(TrainExample {
                id: r.id.clone(),
                features: features(cfg, &w)?,
                doas_deg: r.doas_deg.clone(),
            })
        })
        .collect()
}

type FeatureCache = BTreeMap<bool, (Vec<TrainExample<f32>>, Vec<TrainExample<f32>>)>;

fn cmd_train(file: &ExperimentFile, seed: u64, a: &TrainArgs) -> Result<()> {
    let runs = select_experiments(file, a)?;
    let manifest = load_manifest(&a.data)?;
    let geometry = a.geometry.unwrap_or(file.simulate.geometry);
    let mut cache = FeatureCache::new();
    for (index, spec) in runs {
        let mc = spec.model_config(file, geometry)?;
        let (init_seed, data_seed) = experiment_seeds(seed, index);
        let mut tc = spec.train_config(file, mc.kind, data_seed);
        if let Some(e) = a.epochs {
            tc.epochs = e;
        }
        tc.validate()?;
        let key = mc.kind.uses_cnn();
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(key) {
            let tr = split_examples(&manifest, Split::Train, &mc)?;
            let dv = split_examples(&manifest, Split::Dev, &mc)?;
            slot.insert((tr, dv));
        }
        let (tr, dv) = &cache[&key];
        if tr.is_empty() {
            return Err(Error::InvalidInput(
                "the dataset has no training utterances".into(),
            ));
        }
        let mut model = Model::<f32>::new(mc, init_seed)?;
        eprintln!(
            "[{}] {} parameters, {} train / {} dev utterances",
            spec.name,
            model.params().num_values(),
            tr.len(),
            dv.len()
        );
        let logs = train(&mut model, tr, dv, &tc, |l| {
            eprintln!(
                "[{}] epoch {:>3}  train {:.5}  dev {:.5}  dev MAE {:.2}°",
                spec.name, l.epoch, l.train_loss, l.dev_loss, l.dev_mae_deg
            )
        })?;
        let dir = a.out.join(&spec.name);
        save_checkpoint(&model, &dir.join("model.ckpt"))?;
        write_atomic(&dir.join("train_log.csv"), log_csv(&logs).as_bytes())?;
    }
    Ok(())
}

/// A ready-to-run estimator.
enum Runner {
    Network {
        model: Box<Model<f32>>,
        chunks: Option<ChunkConfig>,
    },
    Subspace {
        method: Method,
        grid: AngularGrid,
        band: (f64, f64),
        stft: StftConfig,
    },
}

impl Runner {
    fn estimate(&self, w: &Waveform, n: usize, g: &ArrayGeometry) -> Result<Vec<f64>> {
        match self {
            Runner::Network { model, chunks } => match chunks {
                Some(c) => chunked_estimate(model, w, *c),
                None => estimate(model, w),
            },
            Runner::Subspace {
                method,
                grid,
                band,
                stft: cfg,
            } => {
                let s = stft(w, cfg)?;
                let sp = spatial_spectrum(*method, &s, g, grid, n, *band)?;
                Ok(pick_peaks(&sp, n))
            }
        }
    }

    fn stft_config(&self) -> StftConfig {
        match self {
            Runner::Network { model, .. } => model.config().stft,
            Runner::Subspace { stft, .. } => *stft,
        }
    }
}

fn chunk_config(file: &ExperimentFile, chunked: bool) -> Option<ChunkConfig> {
    chunked.then_some(ChunkConfig {
        chunk_ms: file.estimate.chunk_ms,
        overlap: file.estimate.overlap,
    })
}

fn subspace_runner(file: &ExperimentFile, method: Method, gamma: u32) -> Result<Runner> {
    Ok(Runner::Subspace {
        method,
        grid: AngularGrid::new(gamma)?,
        band: (file.estimate.band_hz[0], file.estimate.band_hz[1]),
        stft: file.features.stft,
    })
}

fn predict_split(
    runner: &Runner,
    m: &DatasetManifest,
    split: Split,
) -> Result<Vec<UtteranceResult>> {
    let sr = runner.stft_config().sample_rate;
    m.split(split)
        .map(|r| {
            let w = read_wav(&m.root.join(&r.mixture), sr)?;
            let g = r.geometry.geometry();
            let pred = runner.estimate(&w, r.doas_deg.len(), &g)?;
            Ok(UtteranceResult {
                id: r.id.clone(),
                pred_deg: pred.iter().map(|p| p.to_degrees()).collect(),
                ref_deg: r.doas_deg.clone(),
            })
        })
        .collect()
}

fn write_predictions(path: &Path, results: &[UtteranceResult]) -> Result<()> {
    let mut s = String::new();
    for r in results {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

fn read_predictions(path: &Path) -> Result<Vec<UtteranceResult>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn cmd_estimate(file: &ExperimentFile, a: &EstimateArgs) -> Result<()> {
    let runner = match (&a.checkpoint, a.method) {
        (Some(ck), _) => Runner::Network {
            model: Box::new(load_checkpoint(ck)?),
            chunks: chunk_config(file, a.chunked),
        },
        (None, Some(method)) => subspace_runner(file, method, a.gamma)?,
        (None, None) => unreachable!("clap enforces the estimator group"),
    };
    let manifest = load_manifest(&a.data)?;
    let results = predict_split(&runner, &manifest, a.split)?;
    write_predictions(&a.out, &results)?;
    if !results.is_empty() {
        eprintln!(
            "{} utterances, MAE {:.2}°",
            results.len(),
            corpus_mae(&results)?
        );
    }
    Ok(())
}

fn select_records<'a>(
    m: &'a DatasetManifest,
    split: Split,
    ids: &[String],
    limit: Option<usize>,
) -> Result<Vec<&'a ManifestRecord>> {
    let mut recs: Vec<&ManifestRecord> = if ids.is_empty() {
        m.split(split).collect()
    } else {
        ids.iter()
            .map(|id| {
                m.records.iter().find(|r| &r.id == id).ok_or_else(|| {
                    Error::InvalidInput(format!("no utterance '{id}' in the manifest"))
                })
            })
            .collect::<Result<_>>()?
    };
    if let Some(l) = limit {
        recs.truncate(l);
    }
    Ok(recs)
}

fn cmd_beamform(file: &ExperimentFile, a: &BeamformArgs) -> Result<()> {
    let manifest = load_manifest(&a.data)?;
    let model = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let cfg = file.features.stft;
    let mut csv = String::from("id,source,mixture_db,separated_db,gain_db\n");
    let mut gains = Vec::new();
    for r in select_records(&manifest, a.split, &a.id, a.limit)? {
        let ex = load_example(&manifest.root, r, cfg.sample_rate)?;
        let g = r.geometry.geometry();
        let masks = match a.mask {
            MaskKind::Ibm => {
                let images = ex
                    .clean_images
                    .iter()
                    .map(|w| stft(w, &cfg).map(|s| s.channel(DEFAULT_REF_MIC)))
                    .collect::<Result<Vec<_>>>()?;
                MaskSource::Given(ideal_binary_mask(&images)?)
            }
            MaskKind::Angle => MaskSource::AngleFeatures(match &model {
                Some(m) => estimate(m, &ex.mixture)?,
                None => ex.doas.clone(),
            }),
        };
        let est = separate(&ex.mixture, &masks, &g, DEFAULT_REF_MIC, None, &cfg)?;
        let dir = a.out_dir.join(&r.id);
        for (n, w) in est.iter().enumerate() {
            write_wav(&dir.join(format!("source{n}.wav")), w, WavEncoding::Float32)?;
        }
        // Estimated sources are matched to references by the best permutation.
        let refs: Vec<&[f64]> = ex
            .clean_images
            .iter()
            .map(|w| w.channel(DEFAULT_REF_MIC))
            .collect();
        let mix = ex.mixture.channel(DEFAULT_REF_MIC);
        let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
        for perm in permutations(refs.len()) {
            let mut rows = Vec::new();
            for (n, &k) in perm.iter().enumerate() {
                rows.push((si_sdr(mix, refs[k])?, si_sdr(est[n].channel(0), refs[k])?));
            }
            let score: f64 = rows.iter().map(|r| r.1).sum();
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, rows));
            }
        }
        for (n, (before, after)) in best
            .map(|b| b.1)
            .unwrap_or_default()
            .into_iter()
            .enumerate()
        {
            let _ = writeln!(
                csv,
                "{},{n},{before:.3},{after:.3},{:.3}",
                r.id,
                after - before
            );
            gains.push(after - before);
        }
    }
    write_atomic(&a.out_dir.join("si_sdr.csv"), csv.as_bytes())?;
    if !gains.is_empty() {
        eprintln!(
            "{} sources, mean SI-SDR gain {:.2} dB",
            gains.len(),
            gains.iter().sum::<f64>() / gains.len() as f64
        );
    }
    Ok(())
}

const BIN_COLUMNS: [SeparationBin; 5] = [
    SeparationBin::From10To20,
    SeparationBin::From21To45,
    SeparationBin::From46To90,
    SeparationBin::From91To180,
    SeparationBin::Other,
];

/// Per-file MAE with the angular-distance breakdown.
fn prediction_table(files: &[(String, Vec<UtteranceResult>)]) -> Result<(String, String)> {
    let mut header = vec![
        "predictions".to_string(),
        "utterances".into(),
        "mae_deg".into(),
    ];
    header.extend(BIN_COLUMNS.iter().map(|b| b.label().to_string()));
    let mut rows = vec![header];
    for (name, res) in files {
        let mut row = vec![name.clone(), res.len().to_string()];
        row.push(if res.is_empty() {
            "-".into()
        } else {
            format!("{:.2}", corpus_mae(res)?)
        });
        let two: Vec<UtteranceResult> = res
            .iter()
            .filter(|r| r.ref_deg.len() == 2)
            .cloned()
            .collect();
        let bins = binned_mae(&two)?;
        for b in BIN_COLUMNS {
            row.push(
                bins.get(&b)
                    .map_or("-".into(), |s| format!("{:.2}", s.mae_deg)),
            );
        }
        rows.push(row);
    }
    let csv = rows
        .iter()
        .map(|r| r.join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
    }
    Ok((text, csv))
}

fn cmd_evaluate(cli: &Cli, file: &ExperimentFile, a: &EvaluateArgs) -> Result<()> {
    let (text, csv) = match &a.runs {
        Some(runs) => {
            if cli.config.is_none() {
                return Err(Error::Config("evaluate --runs needs --config".into()));
            }
            let report = run_report(file, runs, a)?;
            (report.to_text(), report.to_csv())
        }
        None => {
            if a.predictions.is_empty() {
                return Err(Error::Config(
                    "evaluate needs --predictions or --runs".into(),
                ));
            }
            let files = a
                .predictions
                .iter()
                .map(|p| Ok((p.display().to_string(), read_predictions(p)?)))
                .collect::<Result<Vec<_>>>()?;
            prediction_table(&files)?
        }
    };
    print!("{text}");
    if let Some(out) = &a.out {
        write_atomic(out, csv.as_bytes())?;
    }
    Ok(())
}

/// One report row per experiment; missing prediction files are produced
/// from the run's checkpoint (networks) or computed directly (subspace).
fn run_report(file: &ExperimentFile, runs: &Path, a: &EvaluateArgs) -> Result<Report> {
    let mut manifest: Option<DatasetManifest> = None;
    let mut rows = Vec::new();
    for spec in &file.experiments {
        let est = spec.estimator()?;
        let dir = runs.join(&spec.name);
        let mut mae = [None, None];
        for (slot, split) in [Split::Dev, Split::Test].into_iter().enumerate() {
            let path = dir.join(format!("{split}.jsonl"));
            let results = if path.exists() {
                read_predictions(&path)?
            } else {
                if manifest.is_none() {
                    manifest = Some(load_manifest(&a.data)?);
                }
                let runner = match est {
                    Estimator::Network(_) => Runner::Network {
                        model: Box::new(load_checkpoint(&dir.join("model.ckpt"))?),
                        chunks: chunk_config(file, a.chunked || spec.chunked),
                    },
                    Estimator::Subspace(m) => subspace_runner(file, m, spec.gamma)?,
                };
                let r = predict_split(&runner, manifest.as_ref().expect("loaded"), split)?;
                write_predictions(&path, &r)?;
                r
            };
            if !results.is_empty() {
                mae[slot] = Some(corpus_mae(&results)?);
            }
        }
        let (loss, pit) = match est {
            Estimator::Network(kind) => (Some(spec.loss(kind).to_string()), Some(spec.pit)),
            Estimator::Subspace(_) => (None, None),
        };
        rows.push(ReportRow {
            method: spec.model.clone(),
            gamma: Some(spec.gamma),
            loss,
            pit,
            dev_mae: mae[0],
            test_mae: mae[1],
        });
    }
    Ok(Report { rows })
}

fn cmd_spectrum(file: &ExperimentFile, a: &SpectrumArgs) -> Result<()> {
    let cfg = file.features.stft;
    let (w, g, n) = match (&a.wav, &a.id) {
        (Some(path), _) => {
            let g = a.geometry.unwrap_or(file.simulate.geometry).geometry();
            (
                read_wav(path, cfg.sample_rate)?,
                g,
                a.sources.unwrap_or(file.simulate.n_sources),
            )
        }
        (None, Some(id)) => {
            let m = load_manifest(&a.data)?;
            let r = select_records(&m, a.split, std::slice::from_ref(id), None)?[0];
            let w = read_wav(&m.root.join(&r.mixture), cfg.sample_rate)?;
            (
                w,
                r.geometry.geometry(),
                a.sources.unwrap_or(r.doas_deg.len()),
            )
        }
        (None, None) => return Err(Error::Config("spectrum needs --wav or --id".into())),
    };
    let Runner::Subspace { grid, band, .. } = subspace_runner(file, a.method, a.gamma)? else {
        unreachable!()
    };
    let s = stft(&w, &cfg)?;
    let sp = spatial_spectrum(a.method, &s, &g, &grid, n, band)?;
    let peaks: Vec<String> = pick_peaks(&sp, n)
        .iter()
        .map(|p| format!("{:.1}", p.to_degrees()))
        .collect();
    eprintln!("peaks (deg): {}", peaks.join(", "));
    match &a.out {
        Some(p) => write_atomic(p, sp.to_csv().as_bytes()),
        None => {
            print!("{}", sp.to_csv());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Config("x".into())),
            exit_code(&Error::MissingFile("x".into())),
            exit_code(&Error::InvalidInput("x".into())),
            exit_code(&Error::Numerical("x".into())),
            exit_code(&Error::Io(std::io::Error::other("x"))),
            exit::USAGE,
        ];
        let set: std::collections::BTreeSet<_> = codes.iter().collect();
        assert_eq!(set.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["doalab", "simulate", "--bogus"]), exit::USAGE);
        assert_eq!(run(["doalab", "estimate", "--out", "x"]), exit::USAGE);
    }

    #[test]
    fn experiment_seeds_differ_by_index() {
        assert_ne!(experiment_seeds(7, 0), experiment_seeds(7, 1));
        assert_eq!(experiment_seeds(7, 3), experiment_seeds(7, 3));
    }
}
