use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{synthesize_mixture, MixtureExample, NoiseInput};
use super::rir::{RirOptions, RoomSpec, SourcePlacement};
use super::source::{diffuse_noise, speech_like_bursts};
use crate::dsp::wav::{read_wav, WavEncoding};
use crate::dsp::{GeometryId, Waveform};
use crate::error::{invalid, Error, Result};
use crate::grid::cyclic_distance_deg;
use crate::io::{sha256_hex, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" | "eval" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Where dry source signals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourcePool {
    /// Generated speech-like bursts.
    Synthetic,
    /// Mono WAV files in a directory (non-recursive).
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// Generated approximately isotropic speech-shaped noise.
    Diffuse,
    /// Multichannel WAV recordings matching the array.
    Directory(PathBuf),
}

/// Simulation settings. Defaults follow the desk-scale protocol: UCA-10,
/// two sources, rooms from 5×5×2.6 m to 11×11×3.4 m, T60 in 0.25–0.7 s,
/// sources 1–2 m from the array, SNR 10–20 dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub geometry: GeometryId,
    pub sample_rate: u32,
    pub n_sources: usize,
    pub counts: SplitCounts,
    pub duration_s: [f64; 2],
    pub t60_s: [f64; 2],
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub distance_m: [f64; 2],
    /// `None` disables noise.
    pub snr_db: Option<[f64; 2]>,
    pub min_separation_deg: f64,
    pub wall_margin_m: f64,
    pub source_margin_m: f64,
    pub sources: SourcePool,
    pub noise: NoiseKind,
    pub diffuse_directions: usize,
    pub rir_max_order: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryId::Uca10,
            sample_rate: 16_000,
            n_sources: 2,
            counts: SplitCounts {
                train: 2000,
                dev: 200,
                test: 200,
            },
            duration_s: [1.0, 2.0],
            t60_s: [0.25, 0.7],
            room_min: [5.0, 5.0, 2.6],
            room_max: [11.0, 11.0, 3.4],
            distance_m: [1.0, 2.0],
            snr_db: Some([10.0, 20.0]),
            min_separation_deg: 10.0,
            wall_margin_m: 1.2,
            source_margin_m: 0.3,
            sources: SourcePool::Synthetic,
            noise: NoiseKind::Diffuse,
            diffuse_directions: 32,
            rir_max_order: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2], what: &str| {
            if r[0] > r[1] || r[0] < 0.0 {
                Err(invalid(format!("{what} range is not ordered/positive")))
            } else {
                Ok(())
            }
        };
        ordered(self.duration_s, "duration")?;
        ordered(self.t60_s, "t60")?;
        ordered(self.distance_m, "distance")?;
        if self.t60_s[0] <= 0.0 {
            return Err(invalid("t60 must be positive"));
        }
        if self.n_sources == 0 {
            return Err(invalid("n_sources must be at least 1"));
        }
        if self.n_sources >= self.geometry.geometry().num_mics() {
            return Err(invalid("need more microphones than sources"));
        }
        if self
            .room_min
            .iter()
            .zip(&self.room_max)
            .any(|(a, b)| a > b || *a <= 0.0)
        {
            return Err(invalid("room_min must not exceed room_max"));
        }
        let needed = self.distance_m[1] + self.source_margin_m;
        if self.room_min[..2]
            .iter()
            .any(|d| *d <= 2.0 * self.source_margin_m)
            || self.room_max[..2].iter().all(|d| *d < needed)
        {
            return Err(invalid("rooms are too small for the source distances"));
        }
        if self.duration_s[0] * f64::from(self.sample_rate) < 1.0 {
            return Err(invalid("duration too short"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-example seed from the global seed, the split and the index.
pub fn derive_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix(mix(seed) ^ mix((split as u64 + 1) << 40 ^ index as u64))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws room dimensions, T60 and the array center.
pub fn sample_room<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> RoomSpec {
    let dims: Vec<f64> = (0..3)
        .map(|i| uniform(rng, [cfg.room_min[i], cfg.room_max[i]]))
        .collect();
    let t60 = uniform(rng, cfg.t60_s);
    let center: Vec<f64> = dims
        .iter()
        .map(|&d| {
            let lo = cfg.wall_margin_m.min(d / 2.0);
            uniform(rng, [lo, d - lo])
        })
        .collect();
    RoomSpec {
        length: dims[0],
        width: dims[1],
        height: dims[2],
        t60,
        array_center: [center[0], center[1], center[2]],
        geometry: cfg.geometry.geometry(),
    }
}

fn sample_placements<R: Rng + ?Sized>(
    cfg: &SimConfig,
    room: &RoomSpec,
    rng: &mut R,
) -> Option<Vec<SourcePlacement>> {
    let mut out: Vec<SourcePlacement> = Vec::with_capacity(cfg.n_sources);
    let mut tries = 0;
    while out.len() < cfg.n_sources {
        tries += 1;
        if tries > 2000 {
            return None;
        }
        let p = SourcePlacement {
            azimuth: rng.random_range(0.0..360.0f64).to_radians(),
            distance: uniform(rng, cfg.distance_m),
        };
        if !room.contains(p.position(room), cfg.source_margin_m) {
            continue;
        }
        let separated = out.iter().all(|q| {
            cyclic_distance_deg(p.azimuth.to_degrees(), q.azimuth.to_degrees())
                >= cfg.min_separation_deg
        });
        if separated {
            out.push(p);
        }
    }
    Some(out)
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Resolved signal pools, listed once per run.
#[derive(Debug, Clone, Default)]
struct Pools {
    sources: Vec<PathBuf>,
    noise: Vec<PathBuf>,
}

impl Pools {
    fn load(cfg: &SimConfig) -> Result<Self> {
        let sources = match &cfg.sources {
            SourcePool::Synthetic => Vec::new(),
            SourcePool::Directory(d) => {
                let files = list_wavs(d)?;
                if files.len() < cfg.n_sources {
                    return Err(invalid(format!(
                        "source pool has {} files, need at least {}",
                        files.len(),
                        cfg.n_sources
                    )));
                }
                files
            }
        };
        let noise = match &cfg.noise {
            NoiseKind::Directory(d) => {
                let files = list_wavs(d)?;
                if files.is_empty() {
                    return Err(invalid("noise pool is empty"));
                }
                files
            }
            _ => Vec::new(),
        };
        Ok(Self { sources, noise })
    }
}

/// Crops (or cyclically extends) `x` to `len` samples from a random offset.
fn fit_length<R: Rng + ?Sized>(x: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if x.len() >= len {
        let start = rng.random_range(0..=x.len() - len);
        x[start..start + len].to_vec()
    } else {
        (0..len).map(|i| x[i % x.len()]).collect()
    }
}

/// Builds example `index` of `split` deterministically from `seed`.
pub fn sample_example(
    cfg: &SimConfig,
    split: Split,
    index: usize,
    seed: u64,
) -> Result<MixtureExample> {
    let pools = Pools::load(cfg)?;
    sample_with_pools(cfg, &pools, split, index, seed)
}

fn sample_with_pools(
    cfg: &SimConfig,
    pools: &Pools,
    split: Split,
    index: usize,
    seed: u64,
) -> Result<MixtureExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, split, index));
    let fs = cfg.sample_rate;
    let (room, placements) = loop {
        let room = sample_room(cfg, &mut rng);
        if let Some(p) = sample_placements(cfg, &room, &mut rng) {
            break (room, p);
        }
    };
    let len = (uniform(&mut rng, cfg.duration_s) * f64::from(fs)).round() as usize;
    let sources = match &cfg.sources {
        SourcePool::Synthetic => (0..cfg.n_sources)
            .map(|_| Waveform::mono(speech_like_bursts(len, fs, &mut rng), fs))
            .collect::<Result<Vec<_>>>()?,
        SourcePool::Directory(_) => {
            let picks: Vec<&PathBuf> = pools
                .sources
                .choose_multiple(&mut rng, cfg.n_sources)
                .collect();
            picks
                .into_iter()
                .map(|p| {
                    let w = read_wav(p, fs)?;
                    if w.num_channels() != 1 {
                        return Err(invalid(format!("{} is not mono", p.display())));
                    }
                    Waveform::mono(fit_length(w.channel(0), len, &mut rng), fs)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let snr = cfg.snr_db.map(|r| uniform(&mut rng, r));
    let noise = match (&cfg.noise, snr) {
        (_, None) | (NoiseKind::None, _) => NoiseInput::None,
        (NoiseKind::Diffuse, Some(_)) => NoiseInput::Signal(diffuse_noise(
            &room.geometry,
            len,
            fs,
            cfg.diffuse_directions,
            &mut rng,
        )?),
        (NoiseKind::Directory(_), Some(_)) => {
            let p = pools.noise.choose(&mut rng).expect("non-empty pool");
            let w = read_wav(p, fs)?;
            let chans = w
                .channels()
                .iter()
                .map(|c| fit_length(c, len, &mut rng))
                .collect();
            NoiseInput::Signal(Waveform::new(chans, fs)?)
        }
    };
    let snr_db = match noise {
        NoiseInput::None => f64::INFINITY,
        NoiseInput::Signal(_) => snr.unwrap_or(f64::INFINITY),
    };
    let opts = RirOptions {
        max_order: cfg.rir_max_order,
        ..RirOptions::default()
    };
    synthesize_mixture(&sources, &room, &placements, &noise, snr_db, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomInfo {
    pub dims_m: [f64; 3],
    pub t60_s: f64,
    pub array_center: [f64; 3],
}

/// One line of `manifest.jsonl`. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub mixture: String,
    pub clean_images: Vec<String>,
    pub doas_deg: Vec<f64>,
    /// Absent when no noise was added.
    pub snr_db: Option<f64>,
    pub geometry: GeometryId,
    pub room: RoomInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Reads `manifest.jsonl` from a dataset directory or a manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_NAME))
        } else {
            (
                path.parent().unwrap_or(Path::new(".")).to_path_buf(),
                path.to_path_buf(),
            )
        };
        if !file.exists() {
            return Err(Error::MissingFile(file));
        }
        let text = fs::read_to_string(&file)?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<ManifestRecord>, _>>()?;
        Ok(Self { root, records })
    }

    pub fn save(&self) -> Result<()> {
        write_atomic(&self.root.join(MANIFEST_NAME), self.to_jsonl()?.as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Checks that every referenced file exists and labels are in range.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            for p in std::iter::once(&r.mixture).chain(&r.clean_images) {
                let full = self.root.join(p);
                if !full.exists() {
                    return Err(Error::MissingFile(full));
                }
            }
            if r.doas_deg.iter().any(|d| !(0.0..360.0).contains(d)) {
                return Err(invalid(format!("{}: label outside [0, 360)", r.id)));
            }
        }
        Ok(())
    }
}

/// Mixture, images and labels read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedExample {
    pub id: String,
    pub mixture: Waveform,
    pub clean_images: Vec<Waveform>,
    pub doas: Vec<f64>,
}

pub fn load_example(
    root: &Path,
    record: &ManifestRecord,
    sample_rate: u32,
) -> Result<LoadedExample> {
    Ok(LoadedExample {
        id: record.id.clone(),
        mixture: read_wav(&root.join(&record.mixture), sample_rate)?,
        clean_images: record
            .clean_images
            .iter()
            .map(|p| read_wav(&root.join(p), sample_rate))
            .collect::<Result<_>>()?,
        doas: record.doas_deg.iter().map(|d| d.to_radians()).collect(),
    })
}

fn store_wav(root: &Path, w: &Waveform) -> Result<String> {
    let bytes = crate::dsp::wav::wav_bytes(w, WavEncoding::Float32)?;
    let hash = sha256_hex(&bytes);
    let rel = format!("audio/{}/{}.wav", &hash[..2], hash);
    let full = root.join(&rel);
    if !full.exists() {
        write_atomic(&full, &bytes)?;
    }
    Ok(rel)
}

fn degrees(theta: f64) -> f64 {
    let d = theta.to_degrees().rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

fn make_record(
    root: &Path,
    cfg: &SimConfig,
    split: Split,
    index: usize,
    ex: &MixtureExample,
) -> Result<ManifestRecord> {
    Ok(ManifestRecord {
        id: format!("{split}-{index:06}"),
        split,
        mixture: store_wav(root, &ex.mixture)?,
        clean_images: ex
            .clean_images
            .iter()
            .map(|w| store_wav(root, w))
            .collect::<Result<_>>()?,
        doas_deg: ex.doas.iter().map(|&t| degrees(t)).collect(),
        snr_db: ex.snr_db.is_finite().then_some(ex.snr_db),
        geometry: cfg.geometry,
        room: RoomInfo {
            dims_m: ex.room.dims(),
            t60_s: ex.room.t60,
            array_center: ex.room.array_center,
        },
    })
}

/// Simulates every split into `out_dir` (content-addressed WAVs plus
/// `manifest.jsonl`). Output is byte-identical for a fixed seed regardless
/// of `jobs`.
pub fn dataset_generate(
    cfg: &SimConfig,
    seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let pools = Pools::load(cfg)?;
    fs::create_dir_all(out_dir)?;
    let tasks: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..cfg.counts.get(s)).map(move |i| (s, i)))
        .collect();
    let jobs = jobs.max(1).min(tasks.len().max(1));
    let mut slots: Vec<Option<Result<ManifestRecord>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = slots
            .chunks_mut(tasks.len().div_ceil(jobs).max(1))
            .enumerate()
            .map(|(c, chunk)| {
                let tasks = &tasks;
                let pools = &pools;
                let base = c * tasks.len().div_ceil(jobs).max(1);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let (split, index) = tasks[base + k];
                        *slot = Some(
                            sample_with_pools(cfg, pools, split, index, seed)
                                .and_then(|ex| make_record(out_dir, cfg, split, index, &ex)),
                        );
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("simulation worker panicked");
        }
    });
    let records = slots
        .into_iter()
        .map(|s| s.expect("every task ran"))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig {
            counts: SplitCounts {
                train: 3,
                dev: 1,
                test: 1,
            },
            duration_s: [0.2, 0.3],
            t60_s: [0.15, 0.2],
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_manifest_any_job_count() {
        let cfg = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = dataset_generate(&cfg, 7, a.path(), 1).unwrap();
        let mb = dataset_generate(&cfg, 7, b.path(), 3).unwrap();
        let ta = fs::read(a.path().join(MANIFEST_NAME)).unwrap();
        let tb = fs::read(b.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(ta, tb);
        ma.validate().unwrap();
        assert_eq!(ma.records.len(), 5);
        let reloaded = DatasetManifest::load(a.path()).unwrap();
        assert_eq!(reloaded.records, mb.records);
        let ex = load_example(a.path(), &reloaded.records[0], 16_000).unwrap();
        assert_eq!(ex.clean_images.len(), 2);
        assert_eq!(ex.mixture.num_channels(), 8);
    }

    #[test]
    fn sources_respect_minimum_separation() {
        let cfg = SimConfig {
            duration_s: [0.05, 0.05],
            t60_s: [0.1, 0.1],
            snr_db: None,
            min_separation_deg: 10.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let room = sample_room(&cfg, &mut rng);
            let p = sample_placements(&cfg, &room, &mut rng).unwrap();
            let d = cyclic_distance_deg(p[0].azimuth.to_degrees(), p[1].azimuth.to_degrees());
            assert!(d >= 10.0);
            for q in &p {
                assert!(room.contains(q.position(&room), cfg.source_margin_m));
                assert!((1.0..=2.0).contains(&q.distance));
            }
        }
    }

    /// Asymptotic Kolmogorov survival function with Stephens' correction.
    fn ks_p_value(d: f64, n: usize) -> f64 {
        let sn = (n as f64).sqrt();
        let x = (sn + 0.12 + 0.11 / sn) * d;
        let p: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp()
            })
            .sum();
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn sampled_t60_is_uniform() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut t: Vec<f64> = (0..1000).map(|_| sample_room(&cfg, &mut rng).t60).collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let d = t
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v - 0.25) / 0.45;
                (cdf - i as f64 / n)
                    .abs()
                    .max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks_p_value(d, t.len()) > 0.01, "D = {d}");
        assert!(t.iter().all(|v| (0.25..=0.7).contains(v)));
        // The same statistic rejects an obviously non-uniform sample.
        let skewed: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(2)).collect();
        let d2 = skewed
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max);
        assert!(ks_p_value(d2, 1000) < 0.01);
    }

    #[test]
    fn sampled_rooms_stay_in_range() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = sample_room(&cfg, &mut rng);
            for (i, d) in r.dims().iter().enumerate() {
                assert!(*d >= cfg.room_min[i] && *d <= cfg.room_max[i]);
            }
            assert!(r.mic_positions().iter().all(|m| r.contains(*m, 0.0)));
        }
    }

    #[test]
    fn small_pools_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig {
            sources: SourcePool::Directory(dir.path().to_path_buf()),
            ..tiny()
        };
        assert!(dataset_generate(&cfg, 1, dir.path(), 1).is_err());
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
            geometry = "qa10"
            n_sources = 2
            counts = { train = 10, dev = 2, test = 2 }
            snr_db = [0.0, 0.0]
            noise = "diffuse"
            sources = { directory = "/tmp/pool" }
        "#;
        let cfg: SimConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.geometry, GeometryId::Qa10);
        assert_eq!(cfg.sources, SourcePool::Directory("/tmp/pool".into()));
        assert_eq!(cfg.t60_s, [0.25, 0.7]);
    }
}
