use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::rir::{image_method_rir, RirOptions, RoomSpec, SourcePlacement};
use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};

/// Labeled multichannel mixture.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub mixture: Waveform,
    /// Reverberant image of each source at every microphone.
    pub clean_images: Vec<Waveform>,
    /// Scaled noise actually added, if any.
    pub noise: Option<Waveform>,
    /// Source azimuths in radians, one per image.
    pub doas: Vec<f64>,
    pub snr_db: f64,
    pub room: RoomSpec,
}

/// Additive noise for [`synthesize_mixture`].
#[derive(Debug, Clone)]
pub enum NoiseInput {
    None,
    /// Multichannel noise recording; cropped to the mixture length.
    Signal(Waveform),
}

/// Linear convolution of `a` and `b`, truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::default());
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::default());
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { fa[i].re * scale } else { 0.0 })
        .collect()
}

/// Reverberant mixture of mono `sources` placed in `room`, plus noise scaled
/// so that the speech-to-noise power ratio over all channels equals
/// `snr_db`. An infinite SNR adds no noise.
pub fn synthesize_mixture(
    sources: &[Waveform],
    room: &RoomSpec,
    placements: &[SourcePlacement],
    noise: &NoiseInput,
    snr_db: f64,
    rir_opts: RirOptions,
) -> Result<MixtureExample> {
    if sources.is_empty() {
        return Err(invalid("at least one source is required"));
    }
    if sources.len() != placements.len() {
        return Err(invalid("one placement per source is required"));
    }
    let sample_rate = sources[0].sample_rate();
    let len = sources.iter().map(Waveform::len).max().unwrap_or(0);
    let m = room.geometry.num_mics();
    let mut images = Vec::with_capacity(sources.len());
    for (src, place) in sources.iter().zip(placements) {
        if src.num_channels() != 1 {
            return Err(invalid("sources must be mono"));
        }
        if src.sample_rate() != sample_rate {
            return Err(invalid("sources must share one sample rate"));
        }
        if src.power() == 0.0 {
            return Err(invalid("source signal is silent"));
        }
        let rir = image_method_rir(room, place, sample_rate, rir_opts)?;
        let chans = rir
            .responses
            .iter()
            .map(|h| fft_convolve(src.channel(0), h, len))
            .collect();
        images.push(Waveform::new(chans, sample_rate)?);
    }
    let mut mixture = Waveform::zeros(m, len, sample_rate)?;
    for img in &images {
        mixture.add_scaled(img, 1.0)?;
    }
    let noise = match noise {
        _ if snr_db == f64::INFINITY => None,
        NoiseInput::None => None,
        NoiseInput::Signal(n) => {
            if n.num_channels() != m {
                return Err(Error::Shape(format!(
                    "noise has {} channels, array has {m}",
                    n.num_channels()
                )));
            }
            if n.len() < len {
                return Err(invalid("noise recording is shorter than the mixture"));
            }
            let mut n = n.slice(0, len);
            let pn = n.power();
            if pn == 0.0 {
                return Err(invalid("noise signal is silent"));
            }
            let ps = mixture.power();
            n.scale((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt());
            mixture.add_scaled(&n, 1.0)?;
            Some(n)
        }
    };
    Ok(MixtureExample {
        mixture,
        clean_images: images,
        noise,
        doas: placements
            .iter()
            .map(|p| crate::grid::wrap_angle(p.azimuth))
            .collect(),
        snr_db,
        room: room.clone(),
    })
}

/// Oracle ideal binary masks: `mask_n(t, f) = 1` where source `n` has the
/// largest magnitude; ties go to the lowest source index.
pub fn ideal_binary_mask(clean: &[Array2<Complex64>]) -> Result<Vec<Array2<f64>>> {
    let first = clean.first().ok_or_else(|| invalid("no sources given"))?;
    let dim = first.dim();
    if clean.iter().any(|c| c.dim() != dim) {
        return Err(Error::Shape("source spectrograms differ in shape".into()));
    }
    let mut masks = vec![Array2::<f64>::zeros(dim); clean.len()];
    for t in 0..dim.0 {
        for f in 0..dim.1 {
            let mut best = 0;
            let mut best_mag = clean[0][[t, f]].norm();
            for (n, c) in clean.iter().enumerate().skip(1) {
                let mag = c[[t, f]].norm();
                if mag > best_mag {
                    best = n;
                    best_mag = mag;
                }
            }
            masks[best][[t, f]] = 1.0;
        }
    }
    Ok(masks)
}
