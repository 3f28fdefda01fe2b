//! DOA-informed separation: steering vectors, angle features, mask-weighted
//! spatial covariances and MVDR beamforming.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::dsp::{istft, stft, ArrayGeometry, MultichannelSpectrogram, StftConfig, Waveform};
use crate::error::{invalid, Error, Result};

/// Denominator guard for mask-weighted averages.
pub const MASK_EPS: f64 = 1e-8;
/// Diagonal loading for a near-singular MVDR denominator, relative to
/// `trace / M`.
pub const MVDR_LOADING: f64 = 1e-6;
/// Condition number above which the MVDR denominator is loaded.
pub const MAX_CONDITION: f64 = 1e12;
/// Reference microphone used by [`separate`] by default (the second channel).
pub const DEFAULT_REF_MIC: usize = 1;

/// `d(f)` for every frequency, indexed `(f, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub theta: f64,
    pub vectors: Array2<Complex64>,
}

pub fn steering_vector(theta: f64, g: &ArrayGeometry, freqs: &[f64]) -> SteeringVector {
    let m = g.num_mics();
    let mut vectors = Array2::zeros((freqs.len(), m));
    for (f, &freq) in freqs.iter().enumerate() {
        for (i, d) in g.steering(theta, freq).into_iter().enumerate() {
            vectors[[f, i]] = d;
        }
    }
    SteeringVector { theta, vectors }
}

fn check_channels(s: &MultichannelSpectrogram, g: &ArrayGeometry) -> Result<()> {
    if s.num_channels() != g.num_mics() {
        return Err(Error::Shape(format!(
            "spectrogram has {} channels, geometry has {}",
            s.num_channels(),
            g.num_mics()
        )));
    }
    Ok(())
}

/// `ã^n(t, f) = |d^n(f)^H y(t, f)|²` for each DOA.
pub fn raw_angle_features(
    s: &MultichannelSpectrogram,
    doas: &[f64],
    g: &ArrayGeometry,
) -> Result<Vec<Array2<f64>>> {
    check_channels(s, g)?;
    let freqs = s.config.bin_frequencies();
    let (t, m, f) = s.data.dim();
    Ok(doas
        .iter()
        .map(|&theta| {
            let d = steering_vector(theta, g, &freqs);
            Array2::from_shape_fn((t, f), |(ti, fi)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for mi in 0..m {
                    acc += d.vectors[[fi, mi]].conj() * s.data[[ti, mi, fi]];
                }
                acc.norm_sqr()
            })
        })
        .collect())
}

/// Angle features with cross-source suppression: `a^n = ã^n` where it is at
/// least every other source's `ã^s`, else 0. Exact ties keep all tied
/// sources.
pub fn angle_features(
    s: &MultichannelSpectrogram,
    doas: &[f64],
    g: &ArrayGeometry,
) -> Result<Vec<Array2<f64>>> {
    if doas.is_empty() {
        return Err(invalid("at least one DOA is required"));
    }
    let raw = raw_angle_features(s, doas, g)?;
    let mut out = raw.clone();
    for (n, a) in out.iter_mut().enumerate() {
        for ((ti, fi), v) in a.indexed_iter_mut() {
            if raw
                .iter()
                .enumerate()
                .any(|(k, r)| k != n && r[[ti, fi]] > *v)
            {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Angle features normalized to sum to one per bin (zero where all vanish).
pub fn angle_feature_masks(
    s: &MultichannelSpectrogram,
    doas: &[f64],
    g: &ArrayGeometry,
) -> Result<Vec<Array2<f64>>> {
    let mut a = angle_features(s, doas, g)?;
    let dim = a[0].dim();
    let mut total = Array2::<f64>::zeros(dim);
    for x in &a {
        total += x;
    }
    for x in &mut a {
        x.zip_mut_with(&total, |v, &t| *v = if t > 0.0 { *v / t } else { 0.0 });
    }
    Ok(a)
}

/// Per-frequency `M × M` Hermitian matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    pub matrices: Vec<DMatrix<Complex64>>,
}

impl SpatialCovariance {
    pub fn zeros(num_bins: usize, m: usize) -> Self {
        Self {
            matrices: vec![DMatrix::zeros(m, m); num_bins],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_mics(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// Element-wise sum; shapes must agree.
    pub fn sum<'a>(
        items: impl IntoIterator<Item = &'a SpatialCovariance>,
        num_bins: usize,
        m: usize,
    ) -> Self {
        let mut acc = Self::zeros(num_bins, m);
        for c in items {
            for (a, b) in acc.matrices.iter_mut().zip(&c.matrices) {
                *a += b;
            }
        }
        acc
    }
}

/// `Φ(f) = Σ_t l(t,f) y yᴴ / max(Σ_t l(t,f), ε)`; bins whose mask sums to
/// zero give the zero matrix.
pub fn scm_from_mask(s: &MultichannelSpectrogram, mask: &Array2<f64>) -> Result<SpatialCovariance> {
    let (t, m, f) = s.data.dim();
    if mask.dim() != (t, f) {
        return Err(Error::Shape(format!(
            "mask is {:?}, spectrogram is {t}x{f}",
            mask.dim()
        )));
    }
    let matrices = (0..f)
        .map(|fi| {
            let mut phi = DMatrix::<Complex64>::zeros(m, m);
            let mut weight = 0.0;
            for ti in 0..t {
                let l = mask[[ti, fi]];
                if l == 0.0 {
                    continue;
                }
                weight += l;
                for i in 0..m {
                    let yi = s.data[[ti, i, fi]] * l;
                    for j in 0..m {
                        phi[(i, j)] += yi * s.data[[ti, j, fi]].conj();
                    }
                }
            }
            phi / Complex64::new(weight.max(MASK_EPS), 0.0)
        })
        .collect();
    Ok(SpatialCovariance { matrices })
}

/// Beamformer coefficients `b(f)` indexed `(f, m)`, with the condition
/// number of each inverted matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    pub weights: Array2<Complex64>,
    pub ref_mic: usize,
    pub condition_numbers: Vec<f64>,
    /// Bins where diagonal loading was applied.
    pub loaded: Vec<bool>,
}

impl BeamformerWeights {
    /// `bin,condition_number,loaded` diagnostics.
    pub fn condition_csv(&self) -> String {
        let mut out = String::from("bin,condition_number,loaded\n");
        for (f, (c, l)) in self.condition_numbers.iter().zip(&self.loaded).enumerate() {
            let _ = writeln!(out, "{f},{c},{}", u8::from(*l));
        }
        out
    }
}

fn hermitian_condition(a: &DMatrix<Complex64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `A X = B` for Hermitian positive definite `A`.
fn hpd_solve(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let x = a.clone().cholesky()?.solve(b);
    x.iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
        .then_some(x)
}

fn mvdr_bin(
    target: &DMatrix<Complex64>,
    denom: &DMatrix<Complex64>,
    ref_mic: usize,
) -> Result<(DVector<Complex64>, f64, bool)> {
    let m = target.nrows();
    let mut a = denom.clone();
    let mut cond = hermitian_condition(&a);
    let mut loaded = false;
    let mut solved = if cond <= MAX_CONDITION {
        hpd_solve(&a, target)
    } else {
        None
    };
    if solved.is_none() {
        let trace = |x: &DMatrix<Complex64>| (0..m).map(|i| x[(i, i)].re).sum::<f64>();
        let mut tr = trace(&a);
        if !(tr > 0.0) {
            tr = trace(target);
        }
        if !(tr > 0.0) {
            tr = m as f64;
        }
        let delta = MVDR_LOADING * tr / m as f64;
        for i in 0..m {
            a[(i, i)] += Complex64::new(delta, 0.0);
        }
        loaded = true;
        cond = hermitian_condition(&a);
        solved = hpd_solve(&a, target);
    }
    let x = solved.ok_or_else(|| Error::Numerical("MVDR denominator is singular".into()))?;
    let tr = x.trace();
    if tr.norm() == 0.0 {
        // No target energy in this bin.
        return Ok((DVector::zeros(m), cond, loaded));
    }
    Ok((x.column(ref_mic) / tr, cond, loaded))
}

/// Souden MVDR: `b = (Φ_in⁻¹ Φ_tgt / tr(Φ_in⁻¹ Φ_tgt)) u` with
/// `Φ_in = Φ_intf + Φ_noise`; a missing noise SCM is the zero matrix.
pub fn mvdr_weights(
    target: &SpatialCovariance,
    interference: &SpatialCovariance,
    noise: Option<&SpatialCovariance>,
    ref_mic: usize,
) -> Result<BeamformerWeights> {
    let f = target.num_bins();
    let m = target.num_mics();
    if interference.num_bins() != f || noise.is_some_and(|n| n.num_bins() != f) {
        return Err(Error::Shape("covariances differ in bin count".into()));
    }
    if ref_mic >= m {
        return Err(invalid(format!(
            "reference mic {ref_mic} out of range for {m} mics"
        )));
    }
    let mut weights = Array2::zeros((f, m));
    let mut condition_numbers = Vec::with_capacity(f);
    let mut loaded = Vec::with_capacity(f);
    for fi in 0..f {
        let mut denom = interference.matrices[fi].clone();
        if let Some(n) = noise {
            denom += &n.matrices[fi];
        }
        let (b, c, l) = mvdr_bin(&target.matrices[fi], &denom, ref_mic)?;
        for (mi, v) in b.iter().enumerate() {
            weights[[fi, mi]] = *v;
        }
        condition_numbers.push(c);
        loaded.push(l);
    }
    Ok(BeamformerWeights {
        weights,
        ref_mic,
        condition_numbers,
        loaded,
    })
}

/// `x(t, f) = b(f)ᴴ y(t, f)`.
pub fn apply_beamformer(
    s: &MultichannelSpectrogram,
    b: &BeamformerWeights,
) -> Result<Array2<Complex64>> {
    let (t, m, f) = s.data.dim();
    if b.weights.dim() != (f, m) {
        return Err(Error::Shape(format!(
            "weights are {:?}, spectrogram has {f} bins and {m} channels",
            b.weights.dim()
        )));
    }
    Ok(Array2::from_shape_fn((t, f), |(ti, fi)| {
        (0..m)
            .map(|mi| b.weights[[fi, mi]].conj() * s.data[[ti, mi, fi]])
            .sum()
    }))
}

/// Where the per-source time-frequency masks come from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// Precomputed masks, e.g. oracle IBMs, one `T × F` array per source.
    Given(Vec<Array2<f64>>),
    /// Normalized angle features for these DOAs (radians).
    AngleFeatures(Vec<f64>),
}

/// Mask → SCM → MVDR → ISTFT for every source.
pub fn separate(
    mixture: &Waveform,
    masks: &MaskSource,
    g: &ArrayGeometry,
    ref_mic: usize,
    noise: Option<&SpatialCovariance>,
    cfg: &StftConfig,
) -> Result<Vec<Waveform>> {
    let y = stft(mixture, cfg)?;
    check_channels(&y, g)?;
    let masks = match masks {
        MaskSource::Given(m) => m.clone(),
        MaskSource::AngleFeatures(doas) => angle_feature_masks(&y, doas, g)?,
    };
    if masks.is_empty() {
        return Err(invalid("no masks given"));
    }
    let scms = masks
        .iter()
        .map(|m| scm_from_mask(&y, m))
        .collect::<Result<Vec<_>>>()?;
    let (f, m) = (y.num_bins(), y.num_channels());
    let mut out = Vec::with_capacity(scms.len());
    for n in 0..scms.len() {
        let intf = SpatialCovariance::sum(
            scms.iter()
                .enumerate()
                .filter(|(k, _)| *k != n)
                .map(|(_, c)| c),
            f,
            m,
        );
        let b = mvdr_weights(&scms[n], &intf, noise, ref_mic)?;
        let x = apply_beamformer(&y, &b)?;
        let (t, fb) = x.dim();
        let data = Array3::from_shape_fn((t, 1, fb), |(ti, _, fi)| x[[ti, fi]]);
        let single = MultichannelSpectrogram::new(data, *cfg, y.num_samples)?;
        out.push(istft(&single)?);
    }
    Ok(out)
}
