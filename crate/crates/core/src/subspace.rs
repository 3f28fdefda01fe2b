//! Classical DOA baselines on a circular grid.
//!
//! All three estimators work from narrowband spatial covariance matrices
//! estimated over the whole utterance. MUSIC and MUSIC-NAM average
//! per-bin pseudo-spectra; TOPS tests, for each candidate angle, the
//! orthogonality between the signal subspace at a reference bin (moved to
//! every other bin by the candidate's delays) and the noise subspaces there.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::dsp::{ArrayGeometry, MultichannelSpectrogram};
use crate::error::{invalid, Error, Result};
use crate::grid::{peak_indices, AngularGrid};

/// Regularizer in `1 / (d^H E_n E_n^H d + ε)`.
pub const PSEUDO_EPS: f64 = 1e-10;
/// Diagonal loading applied to every SCM, relative to `trace / M`.
pub const SCM_LOADING: f64 = 1e-8;
/// Default analysis band in Hz.
pub const DEFAULT_BAND_HZ: (f64, f64) = (100.0, 8000.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Music,
    MusicNam,
    Tops,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Music => "music",
            Method::MusicNam => "music_nam",
            Method::Tops => "tops",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "music" => Ok(Method::Music),
            "music_nam" | "nam" => Ok(Method::MusicNam),
            "tops" => Ok(Method::Tops),
            other => Err(invalid(format!("unknown subspace method '{other}'"))),
        }
    }
}

/// Non-negative score per grid class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub grid: AngularGrid,
    pub values: Vec<f64>,
}

impl SpatialSpectrum {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// `angle_deg,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.grid.class_angle_deg(k), v);
        }
        out
    }
}

/// `(1/T) Σ_t y(t,f) y(t,f)^H` at bin `f`.
pub fn narrowband_scm(s: &MultichannelSpectrogram, f: usize) -> DMatrix<Complex64> {
    let m = s.num_channels();
    let t = s.num_frames();
    let mut phi = DMatrix::<Complex64>::zeros(m, m);
    for frame in 0..t {
        for i in 0..m {
            let yi = s.data[[frame, i, f]];
            for j in 0..m {
                phi[(i, j)] += yi * s.data[[frame, j, f]].conj();
            }
        }
    }
    if t > 0 {
        phi /= Complex64::new(t as f64, 0.0);
    }
    phi
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
fn hermitian_eigen(mut phi: DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let m = phi.nrows();
    // Symmetrize away round-off before the solver sees it.
    for i in 0..m {
        for j in i..m {
            let v = 0.5 * (phi[(i, j)] + phi[(j, i)].conj());
            phi[(i, j)] = v;
            phi[(j, i)] = v.conj();
        }
    }
    let eig = SymmetricEigen::try_new(phi, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Per-bin subspace split for bins inside `band` that carry energy.
struct BinSubspaces {
    bin: usize,
    freq: f64,
    energy: f64,
    /// Eigenvectors sorted by ascending eigenvalue.
    vectors: DMatrix<Complex64>,
}

fn analyse_bins(
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    n_sources: usize,
    band: (f64, f64),
) -> Result<Vec<BinSubspaces>> {
    let m = s.num_channels();
    if m != g.num_mics() {
        return Err(Error::Shape(format!(
            "spectrogram has {m} channels, geometry has {}",
            g.num_mics()
        )));
    }
    if n_sources == 0 || n_sources >= m {
        return Err(invalid(format!(
            "need 1 <= sources < microphones, got {n_sources} sources and {m} microphones"
        )));
    }
    let mut out = Vec::new();
    for f in 0..s.num_bins() {
        let freq = s.config.bin_frequency(f);
        if freq <= 0.0 || freq < band.0 || freq > band.1 {
            continue;
        }
        let mut phi = narrowband_scm(s, f);
        let trace: f64 = (0..m).map(|i| phi[(i, i)].re).sum();
        if !(trace > 0.0) {
            continue;
        }
        let load = SCM_LOADING * trace / m as f64;
        for i in 0..m {
            phi[(i, i)] += Complex64::new(load, 0.0);
        }
        let (_, vectors) = hermitian_eigen(phi)?;
        out.push(BinSubspaces {
            bin: f,
            freq,
            energy: trace,
            vectors,
        });
    }
    if out.is_empty() {
        return Err(invalid(
            "no bin with signal energy inside the analysis band",
        ));
    }
    Ok(out)
}

/// Narrowband MUSIC pseudo-spectrum for each usable bin, `[bin][class]`.
fn narrowband_music(
    bins: &[BinSubspaces],
    g: &ArrayGeometry,
    grid: &AngularGrid,
    n_sources: usize,
) -> Vec<Vec<f64>> {
    let m = g.num_mics();
    let noise_dim = m - n_sources;
    let angles = grid.angles();
    bins.iter()
        .map(|b| {
            angles
                .iter()
                .map(|&theta| {
                    let d = g.steering(theta, b.freq);
                    let mut proj = 0.0;
                    for k in 0..noise_dim {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (i, di) in d.iter().enumerate() {
                            acc += b.vectors[(i, k)].conj() * di;
                        }
                        proj += acc.norm_sqr();
                    }
                    1.0 / (proj + PSEUDO_EPS)
                })
                .collect()
        })
        .collect()
}

fn average(rows: &[Vec<f64>], size: usize) -> Vec<f64> {
    let mut acc = vec![0.0; size];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Incoherent wideband MUSIC: narrowband pseudo-spectra averaged over the
/// bins in `band`.
pub fn music_spectrum(
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    grid: &AngularGrid,
    n_sources: usize,
    band: (f64, f64),
) -> Result<SpatialSpectrum> {
    let bins = analyse_bins(s, g, n_sources, band)?;
    let rows = narrowband_music(&bins, g, grid, n_sources);
    Ok(SpatialSpectrum {
        grid: *grid,
        values: average(&rows, grid.size()),
    })
}

/// MUSIC with normalized arithmetic-mean fusion: each narrowband spectrum
/// is divided by its mean over the grid before averaging.
pub fn music_nam_spectrum(
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    grid: &AngularGrid,
    n_sources: usize,
    band: (f64, f64),
) -> Result<SpatialSpectrum> {
    let bins = analyse_bins(s, g, n_sources, band)?;
    let mut rows = narrowband_music(&bins, g, grid, n_sources);
    for row in &mut rows {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.iter_mut().for_each(|v| *v /= mean);
    }
    Ok(SpatialSpectrum {
        grid: *grid,
        values: average(&rows, grid.size()),
    })
}

/// Test of orthogonality of projected subspaces. The reference bin is the
/// one with the most energy; the spectrum is `1 / σ_min(D(θ))`.
pub fn tops_spectrum(
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    grid: &AngularGrid,
    n_sources: usize,
    band: (f64, f64),
) -> Result<SpatialSpectrum> {
    let bins = analyse_bins(s, g, n_sources, band)?;
    if bins.len() < 2 {
        return Err(invalid("TOPS needs at least two usable bins"));
    }
    let m = g.num_mics();
    let n = n_sources;
    let r = bins
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("non-empty");
    let reference = &bins[r];
    let signal = reference.vectors.columns(m - n, n).into_owned();
    // Noise projectors E_n E_n^H of the other bins.
    let others: Vec<(f64, DMatrix<Complex64>)> = bins
        .iter()
        .filter(|b| b.bin != reference.bin)
        .map(|b| {
            let en = b.vectors.columns(0, m - n);
            (b.freq, en * en.adjoint())
        })
        .collect();
    let values = grid
        .angles()
        .iter()
        .map(|&theta| {
            let delays: Vec<f64> = (0..m).map(|i| g.delay(theta, i)).collect();
            let mut acc = DMatrix::<Complex64>::zeros(n, n);
            for (freq, pn) in &others {
                let shift = std::f64::consts::TAU * (freq - reference.freq);
                let u = DMatrix::from_fn(m, n, |i, c| {
                    Complex64::from_polar(1.0, shift * delays[i]) * signal[(i, c)]
                });
                let a = DVector::from_vec(g.steering(theta, *freq));
                let au = a.adjoint() * &u;
                let u_proj = &u - &a * au / Complex64::new(m as f64, 0.0);
                acc += u_proj.adjoint() * (pn * &u_proj);
            }
            let lambda_min = hermitian_eigen(acc).map(|(v, _)| v[0].max(0.0))?;
            Ok(1.0 / (lambda_min.sqrt() + PSEUDO_EPS))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SpatialSpectrum {
        grid: *grid,
        values,
    })
}

pub fn spatial_spectrum(
    method: Method,
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    grid: &AngularGrid,
    n_sources: usize,
    band: (f64, f64),
) -> Result<SpatialSpectrum> {
    match method {
        Method::Music => music_spectrum(s, g, grid, n_sources, band),
        Method::MusicNam => music_nam_spectrum(s, g, grid, n_sources, band),
        Method::Tops => tops_spectrum(s, g, grid, n_sources, band),
    }
}

/// Azimuths (radians) of the `n` largest circular peaks, ascending.
pub fn pick_peaks(sp: &SpatialSpectrum, n: usize) -> Vec<f64> {
    peak_indices(&sp.values, n)
        .into_iter()
        .map(|k| sp.grid.class_angle(k))
        .collect()
}
