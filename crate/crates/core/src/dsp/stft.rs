use std::f64::consts::TAU;

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{invalid, Error, Result};

/// Frame layout for the short-time Fourier transform.
///
/// Signals are padded with `window - hop` zeros on both sides (and then up
/// to a whole number of hops), so every original sample is covered by the
/// full set of overlapping frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    /// 25 ms Hann window, 10 ms shift, 512-point FFT at 16 kHz.
    fn default() -> Self {
        Self::from_ms(25.0, 10.0, 16_000)
    }
}

impl StftConfig {
    pub fn from_ms(window_ms: f64, hop_ms: f64, sample_rate: u32) -> Self {
        let window = (window_ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        let hop = (hop_ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        Self {
            window,
            hop,
            fft_size: window.max(1).next_power_of_two(),
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.sample_rate == 0 {
            return Err(invalid("window, hop and sample rate must be positive"));
        }
        if self.hop > self.window {
            return Err(invalid("hop must not exceed the window length"));
        }
        if self.fft_size < self.window {
            return Err(invalid(format!(
                "fft size {} is shorter than the window {}",
                self.fft_size, self.window
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.sample_rate) / self.fft_size as f64
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.num_bins())
            .map(|f| self.bin_frequency(f))
            .collect()
    }

    fn pad_front(&self) -> usize {
        self.window - self.hop
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let min_len = len + 2 * self.pad_front();
        let span = min_len.saturating_sub(self.window);
        span.div_ceil(self.hop) + 1
    }

    /// Periodic Hann window.
    pub fn window_fn(&self) -> Vec<f64> {
        let n = self.window as f64;
        (0..self.window)
            .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n).cos())
            .collect()
    }
}

/// Complex STFT of every channel, indexed `(frame, channel, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    /// Length of the time signal the frames were computed from.
    pub num_samples: usize,
}

impl MultichannelSpectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig, num_samples: usize) -> Result<Self> {
        config.validate()?;
        if data.dim().2 != config.num_bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, config implies {}",
                data.dim().2,
                config.num_bins()
            )));
        }
        Ok(Self {
            data,
            config,
            num_samples,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().2
    }

    /// Multichannel snapshot `y(t, f)`.
    pub fn snapshot(&self, t: usize, f: usize) -> Vec<Complex64> {
        (0..self.num_channels())
            .map(|m| self.data[[t, m, f]])
            .collect()
    }

    /// Single-channel view as a `(frame, bin)` matrix.
    pub fn channel(&self, m: usize) -> ndarray::Array2<Complex64> {
        self.data.index_axis(ndarray::Axis(1), m).to_owned()
    }

    /// Builds a one-channel spectrogram from a `(frame, bin)` matrix.
    pub fn from_channel(
        x: ndarray::Array2<Complex64>,
        config: StftConfig,
        num_samples: usize,
    ) -> Result<Self> {
        let data = x.insert_axis(ndarray::Axis(1));
        Self::new(data, config, num_samples)
    }

    /// Frames `[start, start + len)` as a new spectrogram.
    pub fn frames(&self, start: usize, len: usize) -> Self {
        let end = (start + len).min(self.num_frames());
        let data = self
            .data
            .slice(ndarray::s![start.min(end)..end, .., ..])
            .to_owned();
        Self {
            num_samples: (end - start.min(end)) * self.config.hop,
            data,
            config: self.config,
        }
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(invalid("cannot transform an empty waveform"));
    }
    let n_frames = cfg.num_frames(w.len());
    let n_bins = cfg.num_bins();
    let pad = cfg.pad_front();
    let window = cfg.window_fn();
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); cfg.fft_size];
    let mut data = Array3::<Complex64>::zeros((n_frames, w.num_channels(), n_bins));

    for (m, samples) in w.channels().iter().enumerate() {
        for t in 0..n_frames {
            buf.iter_mut().for_each(|b| *b = Complex64::default());
            let start = (t * cfg.hop) as isize - pad as isize;
            for (i, (b, win)) in buf.iter_mut().zip(&window).enumerate() {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < samples.len() {
                    *b = Complex64::new(samples[idx as usize] * win, 0.0);
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..n_bins {
                data[[t, m, f]] = buf[f];
            }
        }
    }
    Ok(MultichannelSpectrogram {
        data,
        config: *cfg,
        num_samples: w.len(),
    })
}

/// Weighted overlap-add inverse of [`stft`].
///
/// Each frame is windowed again and the sum is divided by the accumulated
/// squared window, which inverts `stft` exactly wherever the envelope is
/// non-zero. Samples with a vanishing envelope are set to zero.
pub fn istft(s: &MultichannelSpectrogram) -> Result<Waveform> {
    let cfg = s.config;
    cfg.validate()?;
    if s.num_bins() != cfg.num_bins() {
        return Err(Error::Shape("bin count does not match the config".into()));
    }
    let n_frames = s.num_frames();
    let pad = cfg.pad_front();
    let total = (n_frames.saturating_sub(1)) * cfg.hop + cfg.window;
    let window = cfg.window_fn();
    let ifft = FftPlanner::new().plan_fft_inverse(cfg.fft_size);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); cfg.fft_size];
    let scale = 1.0 / cfg.fft_size as f64;

    let mut envelope = vec![0.0; total];
    for t in 0..n_frames {
        for (i, w) in window.iter().enumerate() {
            envelope[t * cfg.hop + i] += w * w;
        }
    }

    let mut channels = Vec::with_capacity(s.num_channels());
    for m in 0..s.num_channels() {
        let mut acc = vec![0.0; total];
        for t in 0..n_frames {
            let n_bins = cfg.num_bins();
            for (f, b) in buf.iter_mut().enumerate() {
                // Negative frequencies by Hermitian symmetry.
                *b = if f < n_bins {
                    s.data[[t, m, f]]
                } else {
                    s.data[[t, m, cfg.fft_size - f]].conj()
                };
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            for (i, w) in window.iter().enumerate() {
                acc[t * cfg.hop + i] += buf[i].re * scale * w;
            }
        }
        let out: Vec<f64> = (0..s.num_samples)
            .map(|i| {
                let p = i + pad;
                if p < total && envelope[p] > 1e-10 {
                    acc[p] / envelope[p]
                } else {
                    0.0
                }
            })
            .collect();
        channels.push(out);
    }
    Waveform::new(channels, cfg.sample_rate)
}
