use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dsp::ArrayGeometry;
use crate::error::{invalid, Result};

/// Shoebox room with a horizontal microphone array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub t60: f64,
    pub array_center: [f64; 3],
    pub geometry: ArrayGeometry,
}

/// Source position relative to the array center, at the array height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePlacement {
    pub azimuth: f64,
    pub distance: f64,
}

impl SourcePlacement {
    pub fn position(&self, room: &RoomSpec) -> [f64; 3] {
        let c = room.array_center;
        [
            c[0] + self.distance * self.azimuth.cos(),
            c[1] + self.distance * self.azimuth.sin(),
            c[2],
        ]
    }
}

impl RoomSpec {
    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        let c = self.array_center;
        self.geometry
            .mic_offsets()
            .into_iter()
            .map(|(dx, dy)| [c[0] + dx, c[1] + dy, c[2]])
            .collect()
    }

    /// True when `p` lies strictly inside the room, at least `margin` from
    /// every wall.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        p.iter()
            .zip(self.dims())
            .all(|(&x, d)| x > margin && x < d - margin)
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.length * self.width + self.length * self.height + self.width * self.height)
    }

    /// Uniform wall reflection coefficient from Eyring's reverberation
    /// formula, `T60 = 24 ln(10) V / (-c S ln(1 - α))` with `β = sqrt(1 - α)`.
    pub fn eyring_reflection_coefficient(&self) -> f64 {
        let c = self.geometry.speed_of_sound;
        let k = 24.0 * 10f64.ln() * self.volume() / (c * self.surface() * self.t60);
        (-0.5 * k).exp()
    }

    /// Uniform wall reflection coefficient used by the image method.
    ///
    /// Image sources travelling close to the long axes of a box meet walls
    /// less often than the diffuse average, so the Eyring value leaves a
    /// slow tail. The coefficient is instead chosen so that the Schroeder
    /// integral of the direction-averaged specular energy
    /// `E(t) = <β^(2ct(|u|/L + |v|/W + |w|/H))>` falls from -5 dB to -35 dB
    /// in `t60 / 2`.
    pub fn reflection_coefficient(&self) -> f64 {
        let c = self.geometry.speed_of_sound;
        let inv = [1.0 / self.length, 1.0 / self.width, 1.0 / self.height];
        // Midpoint quadrature over one octant of the unit sphere.
        const N: usize = 16;
        let mut rates = Vec::with_capacity(N * N);
        for i in 0..N {
            let w = (i as f64 + 0.5) / N as f64;
            let rho = (1.0 - w * w).sqrt();
            for j in 0..N {
                let phi = (j as f64 + 0.5) / N as f64 * PI / 2.0;
                rates.push(
                    2.0 * c * (rho * phi.cos() * inv[0] + rho * phi.sin() * inv[1] + w * inv[2]),
                );
            }
        }
        // Schroeder integral in dB relative to t = 0, for decay exponents a_i < 0.
        let edc_db = |ln_beta: f64, t: f64| {
            let (mut num, mut den) = (0.0, 0.0);
            for r in &rates {
                let a = r * ln_beta;
                num += (a * t).exp() / -a;
                den += 1.0 / -a;
            }
            10.0 * (num / den).log10()
        };
        let crossing = |ln_beta: f64, level: f64| {
            let (mut lo, mut hi) = (0.0, 1.0);
            while edc_db(ln_beta, hi) > level {
                hi *= 2.0;
            }
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if edc_db(ln_beta, mid) > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let target = 0.5 * self.t60;
        let (mut lo, mut hi) = (self.eyring_reflection_coefficient().ln() * 8.0, 0.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if crossing(mid, -35.0) - crossing(mid, -5.0) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }
}

/// Per-microphone impulse responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub responses: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirOptions {
    /// Response length in samples; defaults to `T60 · fs`.
    pub num_samples: Option<usize>,
    /// Largest total number of wall reflections; `Some(0)` is free field.
    pub max_order: Option<u32>,
    /// Overrides [`RoomSpec::reflection_coefficient`].
    pub reflection: Option<f64>,
    /// Removes the low-frequency build-up of the all-positive image train
    /// with the Allen–Berkley 100 Hz high-pass filter.
    pub high_pass: bool,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            num_samples: None,
            max_order: None,
            reflection: None,
            high_pass: true,
        }
    }
}

impl RirOptions {
    /// Direct path only, unfiltered.
    pub fn free_field(num_samples: usize) -> Self {
        Self {
            num_samples: Some(num_samples),
            max_order: Some(0),
            reflection: None,
            high_pass: false,
        }
    }
}

/// Allen–Berkley second-order high-pass at 100 Hz, applied in place.
fn allen_berkley_high_pass(h: &mut [f64], fs: f64) {
    let w = TAU * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0f64; 3];
    for v in h.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

/// Width of the windowed-sinc fractional-delay kernel (8 ms at 16 kHz).
fn kernel_width(fs: f64) -> usize {
    2 * (0.004 * fs).round() as usize
}

/// Adds an impulse of `amp` at fractional delay `delay` (samples).
fn add_fractional_impulse(h: &mut [f64], delay: f64, amp: f64, width: usize) {
    let half = (width / 2) as isize;
    let base = delay.floor() as isize;
    let first = (base - half + 1).max(0);
    let last = (base + half).min(h.len() as isize - 1);
    if first > last {
        return;
    }
    let x0 = first as f64 - delay;
    // sin(π(x0 + k)) = (-1)^k sin(π x0); the window cosine is rotated
    // by a fixed step per tap.
    let mut s = (PI * x0).sin();
    let step = TAU / width as f64;
    let (ds, dc) = step.sin_cos();
    let (mut ws, mut wc) = (step * x0).sin_cos();
    let mut x = x0;
    for v in &mut h[first as usize..=last as usize] {
        let sinc = if x.abs() < 1e-9 { 1.0 } else { s / (PI * x) };
        *v += amp * 0.5 * (1.0 + wc) * sinc;
        s = -s;
        x += 1.0;
        let c = wc * dc - ws * ds;
        ws = ws * dc + wc * ds;
        wc = c;
    }
}

/// Allen–Berkley image-source room impulse responses from `src` to every
/// microphone of the room's array.
pub fn image_method_rir(
    room: &RoomSpec,
    src: &SourcePlacement,
    sample_rate: u32,
    opts: RirOptions,
) -> Result<Rir> {
    if !(room.t60 > 0.0) {
        return Err(invalid("T60 must be positive"));
    }
    let fs = f64::from(sample_rate);
    let c = room.geometry.speed_of_sound;
    let s = src.position(room);
    if !room.contains(s, 0.0) {
        return Err(invalid("source lies outside the room"));
    }
    let mics = room.mic_positions();
    if mics.iter().any(|m| !room.contains(*m, 0.0)) {
        return Err(invalid("microphone lies outside the room"));
    }
    let width = kernel_width(fs);
    let n = opts
        .num_samples
        .unwrap_or_else(|| (room.t60 * fs).ceil() as usize)
        .max(1);
    let beta = if opts.max_order == Some(0) {
        0.0
    } else {
        opts.reflection
            .unwrap_or_else(|| room.reflection_coefficient())
    };
    let dims = room.dims();
    let max_dist = (n + width) as f64 * c / fs;
    let reach: Vec<i64> = dims
        .iter()
        .map(|d| (max_dist / (2.0 * d)).ceil() as i64 + 1)
        .collect();
    let max_refl = (6 * (reach.iter().max().copied().unwrap_or(1) + 1)) as usize;
    let beta_pow: Vec<f64> = (0..=max_refl).map(|k| beta.powi(k as i32)).collect();

    let mut responses = Vec::with_capacity(mics.len());
    for m in &mics {
        let mut h = vec![0.0; n];
        // Per-axis candidate offsets: (coordinate delta, reflection count).
        let axis = |a: usize| -> Vec<(f64, usize)> {
            let mut v = Vec::new();
            for k in -reach[a]..=reach[a] {
                for q in 0..2i64 {
                    let img = (1 - 2 * q) as f64 * s[a] + 2.0 * k as f64 * dims[a];
                    let refl = ((k - q).abs() + k.abs()) as usize;
                    v.push((img - m[a], refl));
                }
            }
            v
        };
        let (ax, ay, az) = (axis(0), axis(1), axis(2));
        for &(dx, rx) in &ax {
            if dx.abs() > max_dist {
                continue;
            }
            for &(dy, ry) in &ay {
                let dxy2 = dx * dx + dy * dy;
                if dxy2 > max_dist * max_dist {
                    continue;
                }
                for &(dz, rz) in &az {
                    let order = rx + ry + rz;
                    if let Some(max) = opts.max_order {
                        if order > max as usize {
                            continue;
                        }
                    }
                    let d = (dxy2 + dz * dz).sqrt();
                    let delay = d / c * fs;
                    if delay >= (n + width / 2) as f64 {
                        continue;
                    }
                    let gain = if order == 0 { 1.0 } else { beta_pow[order] };
                    if gain == 0.0 {
                        continue;
                    }
                    add_fractional_impulse(&mut h, delay, gain / (4.0 * PI * d), width);
                }
            }
        }
        if opts.high_pass {
            allen_berkley_high_pass(&mut h, fs);
        }
        responses.push(h);
    }
    Ok(Rir {
        responses,
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::GeometryId;

    fn room(t60: f64) -> RoomSpec {
        RoomSpec {
            length: 6.0,
            width: 5.0,
            height: 3.0,
            t60,
            array_center: [3.0, 2.5, 1.5],
            geometry: GeometryId::Uca10.geometry(),
        }
    }

    fn argmax(h: &[f64]) -> usize {
        h.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0
    }

    /// Sub-sample peak location by parabolic interpolation.
    fn peak(h: &[f64]) -> f64 {
        let i = argmax(h);
        let (a, b, c) = (h[i - 1], h[i], h[i + 1]);
        i as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)
    }

    #[test]
    fn fractional_kernel_matches_direct_evaluation() {
        let mut h = vec![0.0; 300];
        add_fractional_impulse(&mut h, 100.37, 2.0, 128);
        for (i, v) in h.iter().enumerate() {
            let x = i as f64 - 100.37;
            let expected = if x.abs() < 64.0 && i as isize > 100 - 64 {
                2.0 * 0.5 * (1.0 + (TAU * x / 128.0).cos()) * (PI * x).sin() / (PI * x)
            } else {
                0.0
            };
            assert!((v - expected).abs() < 1e-12, "{i}: {v} vs {expected}");
        }
    }

    #[test]
    fn rejects_sources_outside_and_bad_t60() {
        let r = room(0.3);
        let far = SourcePlacement {
            azimuth: 0.0,
            distance: 5.0,
        };
        assert!(image_method_rir(&r, &far, 16_000, RirOptions::default()).is_err());
        let near = SourcePlacement {
            azimuth: 0.0,
            distance: 1.0,
        };
        assert!(image_method_rir(&room(0.0), &near, 16_000, RirOptions::default()).is_err());
    }

    #[test]
    fn free_field_is_a_single_delayed_impulse() {
        let r = room(0.3);
        let src = SourcePlacement {
            azimuth: 0.7,
            distance: 1.5,
        };
        let opts = RirOptions::free_field(2000);
        let rir = image_method_rir(&r, &src, 16_000, opts).unwrap();
        let s = src.position(&r);
        for (h, m) in rir.responses.iter().zip(r.mic_positions()) {
            let d = ((s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2)).sqrt();
            let expected = d / 343.0 * 16_000.0;
            let peak = argmax(h);
            assert!((peak as f64 - expected).abs() <= 1.0);
            // Everything away from the kernel support is silent.
            let support = 64;
            for (i, v) in h.iter().enumerate() {
                if (i as f64 - expected).abs() > support as f64 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn equidistant_mics_share_direct_path_delay() {
        let r = room(0.3);
        // Mics 0 and 2 sit at 0° and 90°; a source at 45° is equidistant.
        let src = SourcePlacement {
            azimuth: PI / 4.0,
            distance: 1.2,
        };
        let opts = RirOptions::free_field(1000);
        let rir = image_method_rir(&r, &src, 16_000, opts).unwrap();
        let (a, b) = (&rir.responses[0], &rir.responses[2]);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Schroeder backward integration, T30 fit extrapolated to -60 dB.
    fn schroeder_t60(h: &[f64], fs: f64) -> f64 {
        let mut edc: Vec<f64> = h.iter().map(|x| x * x).collect();
        for i in (0..edc.len() - 1).rev() {
            edc[i] += edc[i + 1];
        }
        let total = edc[0];
        let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
        let pts: Vec<(f64, f64)> = db
            .iter()
            .enumerate()
            .filter(|(_, &d)| (-35.0..=-5.0).contains(&d))
            .map(|(i, &d)| (i as f64 / fs, d))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -60.0 / (cov / var)
    }

    #[test]
    fn schroeder_decay_matches_requested_t60() {
        let cases = [
            (room(0.5), 2.0, 12_000),
            (
                RoomSpec {
                    length: 9.0,
                    width: 7.0,
                    height: 3.2,
                    array_center: [4.0, 3.0, 1.4],
                    ..room(0.3)
                },
                4.0,
                8_000,
            ),
        ];
        for (r, azimuth, n) in cases {
            let src = SourcePlacement {
                azimuth,
                distance: 1.5,
            };
            let opts = RirOptions {
                num_samples: Some(n),
                ..RirOptions::default()
            };
            let rir = image_method_rir(&r, &src, 16_000, opts).unwrap();
            for h in &rir.responses {
                let t = schroeder_t60(h, 16_000.0);
                assert!(
                    (t - r.t60).abs() <= 0.2 * r.t60,
                    "measured T60 {t} for {}",
                    r.t60
                );
            }
        }
    }

    #[test]
    fn direct_path_delays_follow_far_field_geometry() {
        let r = RoomSpec {
            length: 11.0,
            width: 11.0,
            height: 3.0,
            ..room(0.3)
        };
        let r = RoomSpec {
            array_center: [5.5, 5.5, 1.5],
            ..r
        };
        let src = SourcePlacement {
            azimuth: 1.1,
            distance: 2.0,
        };
        let opts = RirOptions::free_field(1000);
        let rir = image_method_rir(&r, &src, 16_000, opts).unwrap();
        let g = &r.geometry;
        let fs = 16_000.0;
        for a in 0..g.num_mics() {
            for b in 0..g.num_mics() {
                let measured = peak(&rir.responses[a]) - peak(&rir.responses[b]);
                // Mic a hears the source earlier by (r/c)(cos(θ-ψa) - cos(θ-ψb)).
                let expected = -(g.delay(src.azimuth, a) - g.delay(src.azimuth, b)) * fs;
                assert!(
                    (measured - expected).abs() <= 0.25,
                    "{a} {b}: {measured} vs {expected}"
                );
            }
        }
    }
}
