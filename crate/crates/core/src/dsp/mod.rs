//! Deterministic signal-processing primitives shared by the simulator,
//! the subspace estimators, the networks and the beamformer.

mod features;
mod geometry;
mod stft;
pub mod wav;

pub use features::{
    ipd_features, ipd_features_for_bins, logmel_mvn, mel_filterbank, phase_spectrum, MVN_STD_FLOOR,
};
pub use geometry::{ArrayGeometry, GeometryId, SPEED_OF_SOUND};
pub use stft::{istft, stft, MultichannelSpectrogram, StftConfig};

use crate::error::{invalid, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Multichannel time-domain signal. All channels share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(invalid("waveform needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(invalid("all channels must have the same length"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels.max(1)], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean power over all channels and samples.
    pub fn power(&self) -> f64 {
        let n = (self.len() * self.num_channels()) as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum::<f64>()
            / n
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.num_channels()) {
            return Err(invalid("channel index out of range"));
        }
        Self::new(
            indices.iter().map(|&i| self.channels[i].clone()).collect(),
            self.sample_rate,
        )
    }

    /// Samples `[start, start + len)` of every channel; clipped at the end.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let end = (start + len).min(self.len());
        let start = start.min(end);
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c[start..end].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scale(&mut self, gain: f64) {
        for c in &mut self.channels {
            c.iter_mut().for_each(|x| *x *= gain);
        }
    }

    /// In-place `self += gain * other`.
    pub fn add_scaled(&mut self, other: &Waveform, gain: f64) -> Result<()> {
        if other.num_channels() != self.num_channels() || other.len() != self.len() {
            return Err(invalid("waveform shapes differ"));
        }
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += gain * y);
        }
        Ok(())
    }
}
