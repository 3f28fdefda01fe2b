use serde::{Deserialize, Serialize};

use super::model::Model;
use super::real::Real;
use super::tensor::Tensor;
use crate::dsp::Waveform;
use crate::error::{invalid, Result};
use crate::grid::{cyclic_distance_deg, peak_indices, AngularGrid};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Angles (radians) of the `n` largest circular peaks of `kappa`.
pub fn mlc_decode(kappa: &[f64], n: usize, grid: &AngularGrid) -> Vec<f64> {
    peak_indices(kappa, n)
        .into_iter()
        .map(|k| grid.class_angle(k))
        .collect()
}

/// Turns network outputs into `N` angles in radians: per-source argmax for
/// splitting models, peak picking for MLC.
pub fn decode<T: Real>(model: &Model<T>, posteriors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cfg = model.config();
    let grid = cfg.grid()?;
    if cfg.kind.is_splitting() {
        Ok(posteriors
            .iter()
            .map(|p| grid.class_angle(argmax(p)))
            .collect())
    } else {
        Ok(mlc_decode(&posteriors[0], cfg.n_sources, &grid))
    }
}

/// DOA estimate from precomputed network input.
pub fn estimate_features<T: Real>(model: &Model<T>, x: &Tensor<T>) -> Result<Vec<f64>> {
    let post = model.posteriors(x)?;
    decode(model, &post)
}

/// Whole-utterance DOA estimate in radians.
pub fn estimate<T: Real>(model: &Model<T>, w: &Waveform) -> Result<Vec<f64>> {
    estimate_features(model, &model.features(w)?)
}

/// The estimate minimizing the summed cyclic absolute deviation to all
/// others (degrees); ties go to the smallest angle.
pub fn circular_median_deg(angles_deg: &[f64]) -> Result<f64> {
    if angles_deg.is_empty() {
        return Err(invalid("median of no angles"));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &c in angles_deg {
        let cost: f64 = angles_deg.iter().map(|&a| cyclic_distance_deg(a, c)).sum();
        let c = c.rem_euclid(360.0);
        if cost < best.0 || (cost == best.0 && c < best.1) {
            best = (cost, c);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_ms: f64,
    pub overlap: f64,
}

impl Default for ChunkConfig {
    /// 100 ms chunks, 50% overlap.
    fn default() -> Self {
        Self {
            chunk_ms: 100.0,
            overlap: 0.5,
        }
    }
}

impl ChunkConfig {
    /// `(chunk, hop)` in samples.
    pub fn samples(&self, sample_rate: u32) -> Result<(usize, usize)> {
        if !(self.chunk_ms > 0.0) || !(0.0..1.0).contains(&self.overlap) {
            return Err(invalid(
                "chunk length must be positive and overlap in [0, 1)",
            ));
        }
        let chunk = (self.chunk_ms * 1e-3 * f64::from(sample_rate)).round() as usize;
        let hop = ((chunk as f64) * (1.0 - self.overlap)).round().max(1.0) as usize;
        Ok((chunk.max(1), hop))
    }
}

/// Median of per-chunk estimates. Each chunk's angles are sorted ascending
/// before the per-position circular median. Utterances shorter than one
/// chunk fall back to [`estimate`].
pub fn chunked_estimate<T: Real>(
    model: &Model<T>,
    w: &Waveform,
    cc: ChunkConfig,
) -> Result<Vec<f64>> {
    let (chunk, hop) = cc.samples(w.sample_rate())?;
    if w.len() < chunk {
        return estimate(model, w);
    }
    let mut per_chunk = Vec::new();
    let mut start = 0;
    while start + chunk <= w.len() {
        let mut est: Vec<f64> = estimate(model, &w.slice(start, chunk))?
            .into_iter()
            .map(f64::to_degrees)
            .collect();
        est.sort_by(|a, b| a.total_cmp(b));
        per_chunk.push(est);
        start += hop;
    }
    combine_chunks(&per_chunk)
}

/// Per-position circular median over chunk estimates (degrees in,
/// radians out).
pub fn combine_chunks(per_chunk_deg: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = per_chunk_deg.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let col: Vec<f64> = per_chunk_deg.iter().map(|c| c[i]).collect();
            circular_median_deg(&col).map(f64::to_radians)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(circular_median_deg(&[10.0, 10.0, 350.0]).unwrap(), 10.0);
        assert_eq!(circular_median_deg(&[42.0; 5]).unwrap(), 42.0);
        let mut v = vec![100.0; 8];
        v.push(300.0);
        assert_eq!(circular_median_deg(&v).unwrap(), 100.0);
        assert_eq!(circular_median_deg(&[10.0, 20.0]).unwrap(), 10.0);
        assert!(circular_median_deg(&[]).is_err());
    }

    #[test]
    fn median_matches_scan_oracle() {
        // Dense scan over every integer degree agrees with the candidate set
        // whenever the optimum is attained at an estimate.
        let est = [350.0, 355.0, 5.0, 20.0, 180.0];
        let cost = |c: f64| est.iter().map(|&a| cyclic_distance_deg(a, c)).sum::<f64>();
        let best_scan = (0..360)
            .map(f64::from)
            .map(cost)
            .fold(f64::INFINITY, f64::min);
        let m = circular_median_deg(&est).unwrap();
        assert_eq!(m, 5.0);
        assert!((cost(m) - best_scan).abs() < 1e-9);
    }

    #[test]
    fn mlc_decode_examples() {
        let g = AngularGrid::new(10).unwrap();
        let mut k = vec![0.1; 36];
        k[4] = 0.9;
        k[19] = 0.8;
        let a: Vec<f64> = mlc_decode(&k, 2, &g)
            .iter()
            .map(|x| x.to_degrees())
            .collect();
        assert!((a[0] - 45.5).abs() < 1e-9 && (a[1] - 195.5).abs() < 1e-9);
        let mut k = vec![0.1; 36];
        k[5] = 0.9;
        k[6] = 0.8;
        assert_eq!(peak_indices(&k, 1), vec![5]);
        let flat = vec![0.5; 36];
        assert_eq!(peak_indices(&flat, 2), vec![0, 1]);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        let mut p = vec![0.0; 360];
        p[89] = 1.0;
        let g = AngularGrid::new(1).unwrap();
        assert!((g.class_angle(argmax(&p)) - 90f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn chunk_samples() {
        assert_eq!(ChunkConfig::default().samples(16_000).unwrap(), (1600, 800));
        assert!(ChunkConfig {
            chunk_ms: 0.0,
            overlap: 0.5
        }
        .samples(16_000)
        .is_err());
    }
}
