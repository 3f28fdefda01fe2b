use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Named array presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryId {
    /// 8-mic circle, 5 cm radius.
    Uca5,
    /// 8-mic circle, 10 cm radius.
    Uca10,
    /// First three mics (one quadrant) of `Uca10`.
    Qa10,
}

impl GeometryId {
    pub fn geometry(self) -> ArrayGeometry {
        match self {
            Self::Uca5 => ArrayGeometry::uca8(0.05),
            Self::Uca10 => ArrayGeometry::uca8(0.10),
            Self::Qa10 => ArrayGeometry::qa10(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uca5 => "uca5",
            Self::Uca10 => "uca10",
            Self::Qa10 => "qa10",
        }
    }
}

impl fmt::Display for GeometryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeometryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uca5" | "uca-5" => Ok(Self::Uca5),
            "uca10" | "uca-10" => Ok(Self::Uca10),
            "qa10" | "qa-10" => Ok(Self::Qa10),
            other => Err(invalid(format!("unknown geometry '{other}'"))),
        }
    }
}

/// Uniform circular array (or a subset of one) in the horizontal plane.
///
/// Microphone `m` sits at `radius * (cos ψ_m, sin ψ_m)` relative to the
/// array center. `pairs` lists the microphone pairs used for IPD features,
/// zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub radius: f64,
    pub mic_angles: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(radius: f64, mic_angles: Vec<f64>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self {
            radius,
            mic_angles,
            pairs,
            speed_of_sound: SPEED_OF_SOUND,
        };
        g.validate()?;
        Ok(g)
    }

    fn uca8(radius: f64) -> Self {
        let angles = (0..8).map(|m| TAU * m as f64 / 8.0).collect();
        // (1,5) (2,6) (3,7) (4,8) (1,3) (3,5) (5,7) (7,1), one-based
        let pairs = vec![
            (0, 4),
            (1, 5),
            (2, 6),
            (3, 7),
            (0, 2),
            (2, 4),
            (4, 6),
            (6, 0),
        ];
        Self {
            radius,
            mic_angles: angles,
            pairs,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    fn qa10() -> Self {
        let angles = (0..3).map(|m| TAU * m as f64 / 8.0).collect();
        Self {
            radius: 0.10,
            mic_angles: angles,
            pairs: vec![(0, 1), (1, 2), (0, 2)],
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_mics();
        if m < 2 {
            return Err(invalid("array needs at least two microphones"));
        }
        if !(self.radius > 0.0) || !(self.speed_of_sound > 0.0) {
            return Err(invalid("radius and speed of sound must be positive"));
        }
        if self.mic_angles.iter().any(|a| !(0.0..TAU).contains(a)) {
            return Err(invalid("microphone angles must lie in [0, 2π)"));
        }
        if self.pairs.iter().any(|&(a, b)| a >= m || b >= m) {
            return Err(invalid("pair list references a missing microphone"));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mic_angles.len()
    }

    /// Microphone offsets from the array center, `(x, y)` in meters.
    pub fn mic_offsets(&self) -> Vec<(f64, f64)> {
        self.mic_angles
            .iter()
            .map(|a| (self.radius * a.cos(), self.radius * a.sin()))
            .collect()
    }

    /// Signed arrival advance of mic `m` relative to the center for a far-field
    /// source at azimuth `theta`: `(r / c) cos(theta - ψ_m)`.
    pub fn delay(&self, theta: f64, m: usize) -> f64 {
        self.radius / self.speed_of_sound * (theta - self.mic_angles[m]).cos()
    }

    /// Far-field steering vector `d_m = exp(j 2π f τ_m)` at `freq` Hz.
    pub fn steering(&self, theta: f64, freq: f64) -> Vec<Complex64> {
        (0..self.num_mics())
            .map(|m| Complex64::from_polar(1.0, TAU * freq * self.delay(theta, m)))
            .collect()
    }
}
