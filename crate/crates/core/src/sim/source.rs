//! Synthetic source and noise signals.
//!
//! Sources are speech-like bursts: alternating active and silent segments,
//! where active segments are mostly harmonic (voiced) with a gliding
//! fundamental and sometimes shaped noise (unvoiced). Both share a
//! long-term spectrum that peaks in the low hundreds of Hz and rolls off
//! above 500 Hz.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::dsp::{ArrayGeometry, Waveform};
use crate::error::Result;

/// Long-term speech spectrum magnitude at `f` Hz.
pub fn speech_shape(f: f64) -> f64 {
    let hp = f / (f + 100.0);
    hp / (1.0 + (f / 500.0).powi(2)).sqrt()
}

fn shaped_noise<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let n = len.next_power_of_two().max(2);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let planner = &mut FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let fs = f64::from(sample_rate);
    for (k, b) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        *b *= speech_shape(kk as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().take(len).map(|c| c.re / n as f64).collect()
}

fn voiced<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    const BLOCK: usize = 32;
    let fs = f64::from(sample_rate);
    let f_start: f64 = rng.random_range(90.0..250.0);
    let f_end = (f_start * rng.random_range(0.75..1.3)).clamp(70.0, 320.0);
    let n_harm = (0.5 * fs / f_start.max(f_end)).floor() as usize;
    let offsets: Vec<Complex64> = (0..n_harm)
        .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..TAU)))
        .collect();
    let mut amps = vec![0.0; n_harm];
    let mut out = vec![0.0; len];
    let mut phi = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let frac = i as f64 / len.max(1) as f64;
        let f0 = f_start + (f_end - f_start) * frac;
        if i % BLOCK == 0 {
            for (h, a) in amps.iter_mut().enumerate() {
                let fh = f0 * (h + 1) as f64;
                *a = if fh < 0.5 * fs { speech_shape(fh) } else { 0.0 };
            }
        }
        phi += TAU * f0 / fs;
        // Harmonic h is Im(offset_h · z^(h+1)) with z = e^{jφ}.
        let z = Complex64::from_polar(1.0, phi);
        let mut zh = z;
        let mut v = 0.0;
        for (a, off) in amps.iter().zip(&offsets) {
            v += a * (off * zh).im;
            zh *= z;
        }
        *o = v;
    }
    out
}

fn ramp(i: usize, len: usize, ramp_len: usize) -> f64 {
    let r = ramp_len.min(len / 2).max(1);
    if i < r {
        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / r as f64).cos()
    } else if i + r >= len {
        let j = len - 1 - i;
        0.5 - 0.5 * (std::f64::consts::PI * j as f64 / r as f64).cos()
    } else {
        1.0
    }
}

fn normalize(x: &mut [f64]) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Speech-like burst signal of `len` samples with unit mean power.
pub fn speech_like_bursts<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let mut out = vec![0.0; len];
    let ramp_len = (0.02 * fs) as usize;
    // Start inside the first burst so no signal is entirely silent.
    let mut pos = (rng.random_range(0.0..0.05) * fs) as usize;
    while pos < len {
        let seg = ((rng.random_range(0.12..0.45) * fs) as usize).min(len - pos);
        let mut burst = if rng.random_bool(0.75) {
            let mut v = voiced(seg, sample_rate, rng);
            normalize(&mut v);
            let mut breath = shaped_noise(seg, sample_rate, rng);
            normalize(&mut breath);
            v.iter_mut().zip(&breath).for_each(|(a, b)| *a += 0.1 * b);
            v
        } else {
            shaped_noise(seg, sample_rate, rng)
        };
        normalize(&mut burst);
        let gain = 10f64.powf(rng.random_range(-6.0..3.0) / 20.0);
        for (i, b) in burst.iter().enumerate() {
            out[pos + i] = gain * b * ramp(i, seg, ramp_len);
        }
        pos += seg + (rng.random_range(0.03..0.2) * fs) as usize;
    }
    normalize(&mut out);
    out
}

/// Approximately isotropic (cylindrically diffuse) noise at the array:
/// a sum of `n_dirs` far-field plane waves of independent speech-shaped
/// noise from random azimuths. Unit mean power per channel on average.
pub fn diffuse_noise<R: Rng + ?Sized>(
    geometry: &ArrayGeometry,
    len: usize,
    sample_rate: u32,
    n_dirs: usize,
    rng: &mut R,
) -> Result<Waveform> {
    let n = len.next_power_of_two().max(2);
    let half = n / 2;
    let fs = f64::from(sample_rate);
    let m = geometry.num_mics();
    let mut spectra = vec![vec![Complex64::default(); n]; m];
    for _ in 0..n_dirs.max(1) {
        let theta = rng.random_range(0.0..TAU);
        // Per-mic phase advance per bin, applied by repeated rotation.
        let steps: Vec<Complex64> = (0..m)
            .map(|i| Complex64::from_polar(1.0, TAU * fs / n as f64 * geometry.delay(theta, i)))
            .collect();
        let mut rot = steps.clone();
        for k in 1..half {
            let f = k as f64 * fs / n as f64;
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let base = Complex64::new(re, im) * speech_shape(f);
            for ((spec, r), step) in spectra.iter_mut().zip(rot.iter_mut()).zip(&steps) {
                spec[k] += base * *r;
                *r *= step;
            }
        }
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let channels = spectra
        .into_iter()
        .map(|mut spec| {
            for k in 1..half {
                spec[n - k] = spec[k].conj();
            }
            ifft.process(&mut spec);
            spec.iter().take(len).map(|c| c.re).collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let mut w = Waveform::new(channels, sample_rate)?;
    let p = w.power();
    if p > 0.0 {
        w.scale(1.0 / p.sqrt());
    }
    Ok(w)
}
