use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Discretized azimuth classes at a resolution of `gamma` degrees.
///
/// Class `k` (zero-based) is centered at `γ(k+1) - (γ-1)/2` degrees, so
/// `γ = 10` yields 5.5°, 15.5°, …, 355.5° and `γ = 1` yields 1°, …, 360°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngularGrid {
    gamma: u32,
}

impl AngularGrid {
    pub fn new(gamma: u32) -> Result<Self> {
        if gamma == 0 || gamma > 180 {
            return Err(invalid(format!("angular resolution {gamma}° out of range")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> u32 {
        self.gamma
    }

    /// `⌊360/γ⌋`.
    pub fn size(&self) -> usize {
        (360 / self.gamma) as usize
    }

    pub fn class_angle_deg(&self, k: usize) -> f64 {
        let g = f64::from(self.gamma);
        g * (k + 1) as f64 - (g - 1.0) / 2.0
    }

    pub fn class_angle(&self, k: usize) -> f64 {
        self.class_angle_deg(k).to_radians()
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.size()).map(|k| self.class_angle(k)).collect()
    }

    /// Class whose center is cyclically closest to `theta` (radians);
    /// ties go to the lower index.
    pub fn nearest_class(&self, theta: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d = cyclic_distance(theta, self.class_angle(k));
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }
}

/// Indices of the `n` largest circular local maxima of `values`, sorted
/// ascending.
///
/// A local maximum is strictly greater than both cyclic neighbors; a flat
/// top counts once, at its leftmost index. Larger peaks win, ties to the
/// lower index. When fewer than `n` maxima exist the remaining slots are
/// filled with the largest other values, again ties to the lower index.
pub fn peak_indices(values: &[f64], n: usize) -> Vec<usize> {
    let len = values.len();
    let n = n.min(len);
    let mut peaks = Vec::new();
    for i in 0..len {
        let left = values[(i + len - 1) % len];
        if !(values[i] > left) {
            continue;
        }
        let mut j = i;
        let mut steps = 0;
        while values[(j + 1) % len] == values[i] && steps < len {
            j = (j + 1) % len;
            steps += 1;
        }
        if values[(j + 1) % len] < values[i] {
            peaks.push(i);
        }
    }
    let by_value = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    peaks.sort_by(by_value);
    peaks.truncate(n);
    if peaks.len() < n {
        let mut rest: Vec<usize> = (0..len).filter(|i| !peaks.contains(i)).collect();
        rest.sort_by(by_value);
        peaks.extend(rest.into_iter().take(n - peaks.len()));
    }
    peaks.sort_unstable();
    peaks
}

/// Wraps an angle in radians into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest angular distance in radians, in `[0, π]`.
pub fn cyclic_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Shortest angular distance in degrees, in `[0, 180]`.
pub fn cyclic_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
