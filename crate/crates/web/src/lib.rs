//! Browser demo for `doalab`: three small interactive operations, each a
//! pure function returning JSON for the static page in `www/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use doalab::dsp::{ArrayGeometry, GeometryId, MultichannelSpectrogram, StftConfig};
use doalab::frontend::{mvdr_weights, steering_vector, SpatialCovariance};
use doalab::neural::{loss_value, LossKind};
use doalab::subspace::{pick_peaks, spatial_spectrum, Method};
use doalab::{AngularGrid, Error, Result};
use nalgebra::DMatrix;
use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const FRAMES: usize = 48;

fn angles_deg(grid: &AngularGrid) -> Vec<f64> {
    (0..grid.size()).map(|k| grid.class_angle_deg(k)).collect()
}

#[derive(Debug, Serialize)]
pub struct SpectrumView {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
    pub peaks_deg: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct LossCurves {
    pub angles_deg: Vec<f64>,
    pub curves: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Serialize)]
pub struct Beampattern {
    pub angles_deg: Vec<f64>,
    pub gain_db: Vec<f64>,
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("'{s}' is not a number")))
        })
        .collect()
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Far-field plane waves with random per-frame amplitudes plus white
/// sensor noise at `snr_db` per source.
pub fn plane_wave_mixture(
    g: &ArrayGeometry,
    doas_deg: &[f64],
    snr_db: f64,
    seed: u64,
) -> Result<MultichannelSpectrogram> {
    let cfg = StftConfig::default();
    let bins = cfg.num_bins();
    let m = g.num_mics();
    let noise = 10f64.powf(-snr_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steer: Vec<_> = doas_deg
        .iter()
        .map(|d| steering_vector(d.to_radians(), g, &cfg.bin_frequencies()))
        .collect();
    let mut data = Array3::zeros((FRAMES, m, bins));
    for t in 0..FRAMES {
        for f in 0..bins {
            for sv in &steer {
                let amp = complex_normal(&mut rng);
                for ch in 0..m {
                    data[[t, ch, f]] += amp * sv.vectors[[f, ch]];
                }
            }
            for ch in 0..m {
                data[[t, ch, f]] += noise * complex_normal(&mut rng);
            }
        }
    }
    MultichannelSpectrogram::new(data, cfg, FRAMES * cfg.hop)
}

pub fn spectrum_view(
    method: &str,
    gamma: u32,
    doas_deg: &str,
    snr_db: f64,
    seed: u64,
) -> Result<SpectrumView> {
    let method: Method = method.parse()?;
    let grid = AngularGrid::new(gamma)?;
    let doas = parse_list(doas_deg)?;
    if doas.is_empty() {
        return Err(Error::InvalidInput(
            "at least one source angle is required".into(),
        ));
    }
    let g = GeometryId::Uca10.geometry();
    let s = plane_wave_mixture(&g, &doas, snr_db, seed)?;
    let sp = spatial_spectrum(method, &s, &g, &grid, doas.len(), (100.0, 4000.0))?;
    let peaks_deg = pick_peaks(&sp, doas.len())
        .into_iter()
        .map(f64::to_degrees)
        .collect();
    Ok(SpectrumView {
        angles_deg: angles_deg(&grid),
        values: sp.values,
        peaks_deg,
    })
}

/// Loss of a smoothed posterior centred at each grid angle against the
/// target for `true_deg`, for every loss kind.
pub fn loss_curves(gamma: u32, true_deg: f64) -> Result<LossCurves> {
    let grid = AngularGrid::new(gamma)?;
    let k = grid.size();
    let psi = grid.nearest_class(true_deg.to_radians());
    let uniform = 1.0 / k as f64;
    let mut curves = Vec::new();
    for kind in LossKind::ALL {
        let target = kind.source_target(psi, &grid)?;
        let values = (0..k)
            .map(|c| {
                let peak = LossKind::Sce.source_target(c, &grid)?;
                let p: Vec<f64> = peak.iter().map(|v| 0.9 * v + 0.1 * uniform).collect();
                Ok(loss_value(kind, &p, &target))
            })
            .collect::<Result<Vec<f64>>>()?;
        curves.push((kind.to_string(), values));
    }
    Ok(LossCurves {
        angles_deg: angles_deg(&grid),
        curves,
    })
}

/// MVDR response `|b(f)ᴴ d(θ, f)|` at one frequency for a point target and
/// a point interferer in white noise, with the first mic as reference.
pub fn beampattern(
    target_deg: f64,
    interferer_deg: f64,
    freq_hz: f64,
    noise: f64,
) -> Result<Beampattern> {
    if !(freq_hz > 0.0 && freq_hz < 8000.0) {
        return Err(Error::InvalidInput(
            "frequency must lie in (0, 8000) Hz".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidInput(
            "noise level must be non-negative".into(),
        ));
    }
    let g = GeometryId::Uca10.geometry();
    let m = g.num_mics();
    let outer = |deg: f64| {
        let d = nalgebra::DVector::from_vec(g.steering(deg.to_radians(), freq_hz));
        &d * d.adjoint()
    };
    let cov = |mat: DMatrix<Complex64>| SpatialCovariance {
        matrices: vec![mat],
    };
    let target = cov(outer(target_deg));
    let interference = cov(outer(interferer_deg));
    let white = cov(DMatrix::identity(m, m) * Complex64::new(noise, 0.0));
    let b = mvdr_weights(&target, &interference, Some(&white), 0)?;
    let angles_deg: Vec<f64> = (0..360).map(f64::from).collect();
    let gain_db = angles_deg
        .iter()
        .map(|deg| {
            let d = g.steering(deg.to_radians(), freq_hz);
            let r: Complex64 = (0..m).map(|i| b.weights[[0, i]].conj() * d[i]).sum();
            20.0 * r.norm().max(1e-6).log10()
        })
        .collect();
    Ok(Beampattern {
        angles_deg,
        gain_db,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| Error::InvalidInput(e.to_string())))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = spatialSpectrum)]
pub fn spatial_spectrum_js(
    method: &str,
    gamma: u32,
    doas_deg: &str,
    snr_db: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(spectrum_view(
        method,
        gamma,
        doas_deg,
        snr_db,
        u64::from(seed),
    ))
}

#[wasm_bindgen(js_name = lossCurves)]
pub fn loss_curves_js(gamma: u32, true_deg: f64) -> std::result::Result<String, JsValue> {
    to_js(loss_curves(gamma, true_deg))
}

#[wasm_bindgen(js_name = beampattern)]
pub fn beampattern_js(
    target_deg: f64,
    interferer_deg: f64,
    freq_hz: f64,
    noise: f64,
) -> std::result::Result<String, JsValue> {
    to_js(beampattern(target_deg, interferer_deg, freq_hz, noise))
}
