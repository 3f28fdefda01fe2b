use std::f64::consts::TAU;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use super::{ArrayGeometry, MultichannelSpectrogram};
use crate::error::{invalid, Error, Result};

/// Standard-deviation floor used by [`logmel_mvn`] on constant dimensions.
pub const MVN_STD_FLOOR: f64 = 1e-8;

const LOG_FLOOR: f64 = 1e-10;

/// Principal phase wrapped into `[0, 2π)`, shaped `(frame, channel, bin)`.
pub fn phase_spectrum(s: &MultichannelSpectrogram) -> Array3<f64> {
    s.data.mapv(wrapped_phase)
}

fn wrapped_phase(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let mut p = c.im.atan2(c.re);
    if p < 0.0 {
        p += TAU;
    }
    // -0.0 and tiny negative angles round up to exactly 2π.
    if p >= TAU {
        p = 0.0;
    }
    p
}

/// Angle of `a / b`; zero when either side vanishes.
fn ratio_angle(a: Complex64, b: Complex64) -> f64 {
    if a.norm_sqr() == 0.0 || b.norm_sqr() == 0.0 {
        0.0
    } else {
        (a * b.conj()).arg()
    }
}

/// Inter-microphone phase difference features over all bins.
///
/// Row layout per frame: for each pair `i`, `F` real parts then `F`
/// imaginary parts of `(1/M) exp(j∠(y_i1 / y_i2))`, followed by `|Y_1|`.
pub fn ipd_features(s: &MultichannelSpectrogram, g: &ArrayGeometry) -> Result<Array2<f64>> {
    let bins: Vec<usize> = (0..s.num_bins()).collect();
    ipd_features_for_bins(s, g, &bins)
}

/// [`ipd_features`] restricted to a subset of frequency bins.
pub fn ipd_features_for_bins(
    s: &MultichannelSpectrogram,
    g: &ArrayGeometry,
    bins: &[usize],
) -> Result<Array2<f64>> {
    if g.pairs.is_empty() {
        return Err(invalid("IPD features need a non-empty pair list"));
    }
    let m = s.num_channels();
    if g.num_mics() != m {
        return Err(Error::Shape(format!(
            "geometry has {} mics, spectrogram has {m} channels",
            g.num_mics()
        )));
    }
    if bins.iter().any(|&f| f >= s.num_bins()) {
        return Err(invalid("bin index out of range"));
    }
    let nf = bins.len();
    let width = 2 * g.pairs.len() * nf + nf;
    let inv_m = 1.0 / m as f64;
    let mut out = Array2::<f64>::zeros((s.num_frames(), width));
    for t in 0..s.num_frames() {
        let mut row = out.row_mut(t);
        for (i, &(a, b)) in g.pairs.iter().enumerate() {
            let base = 2 * i * nf;
            for (k, &f) in bins.iter().enumerate() {
                let angle = ratio_angle(s.data[[t, a, f]], s.data[[t, b, f]]);
                row[base + k] = inv_m * angle.cos();
                row[base + nf + k] = inv_m * angle.sin();
            }
        }
        let base = 2 * g.pairs.len() * nf;
        for (k, &f) in bins.iter().enumerate() {
            row[base + k] = s.data[[t, 0, f]].norm();
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular filters spanning 0 Hz to Nyquist, shaped
/// `(n_mels, n_bins)`.
pub fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32) -> Array2<f64> {
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * nyquist / (n_bins - 1) as f64;
    let mut fb = Array2::<f64>::zeros((n_mels, n_bins));
    for j in 0..n_mels {
        let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        for k in 0..n_bins {
            let f = bin_hz(k);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[j, k]] = w;
        }
    }
    fb
}

/// Log-Mel features of a `(frame, bin)` spectrogram with per-utterance
/// mean-variance normalization. Constant dimensions come out as zeros.
pub fn logmel_mvn(x: &Array2<Complex64>, sample_rate: u32, n_mels: usize) -> Result<Array2<f64>> {
    let (t, f) = x.dim();
    if t < 2 {
        return Err(invalid(
            "mean-variance normalization needs at least two frames",
        ));
    }
    let fb = mel_filterbank(n_mels, f, sample_rate);
    let power = x.mapv(|c| c.norm_sqr());
    let mut mel = power.dot(&fb.t()).mapv(|e| e.max(LOG_FLOOR).ln());
    for mut col in mel.columns_mut() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            col.fill(0.0);
            continue;
        }
        let mean = col.mean().expect("non-empty");
        let std = col.std(0.0).max(MVN_STD_FLOOR);
        col.mapv_inplace(|v| (v - mean) / std);
    }
    // Guard against NaN from pathological inputs.
    if mel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite log-Mel feature".into()));
    }
    Ok(mel)
}
