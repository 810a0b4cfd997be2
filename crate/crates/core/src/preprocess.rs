//! Signal conditioning: unify the sampling rate at 500 Hz, then fix the
//! length at 8192 samples per lead.
//!
//! Records arrive at 1000 Hz (halved by polyphase decimation), 500 Hz
//! (left alone), or other rates like 257 Hz (Fourier resampling). Signals
//! stay in raw millivolt units throughout — no per-record normalization.
//! Everything here is lead-independent: each row is processed on its own,
//! and the random crop start is shared across rows.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::rng::SeedRng;
use crate::tensor::{Tensor, TensorError};
use rand::Rng;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("polyphase decimation requires from_fs == 2*to_fs, got {from_fs} -> {to_fs}")]
    BadRate { from_fs: u32, to_fs: u32 },
    #[error("signal must be [leads, samples] with at least {min_len} samples, got {shape:?}")]
    BadShape { shape: Vec<usize>, min_len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type PreprocessResult<T> = Result<T, PreprocessError>;

/// The sampling rate every record is brought to before the model sees it.
pub const TARGET_FS: u32 = 500;

/// A multichannel record as it comes off disk: row-major `[n_leads, L]`
/// samples in millivolts, plus the source sampling rate.
#[derive(Debug, Clone)]
pub struct RawSignal {
    pub samples: Tensor,
    pub fs: u32,
}

impl RawSignal {
    /// Bring the record to `to_fs`: identity if already there, polyphase
    /// decimation for exact 2:1, Fourier resampling otherwise.
    pub fn resample_to(&self, to_fs: u32) -> PreprocessResult<RawSignal> {
        let samples = if self.fs == to_fs {
            self.samples.clone()
        } else if self.fs == 2 * to_fs {
            resample_polyphase(&self.samples, self.fs, to_fs)?
        } else {
            resample_fft(&self.samples, self.fs, to_fs)?
        };
        Ok(RawSignal { samples, fs: to_fs })
    }
}

fn check_2d(x: &Tensor, min_len: usize) -> PreprocessResult<(usize, usize)> {
    match x.shape() {
        [c, l] if *l >= min_len => Ok((*c, *l)),
        _ => Err(PreprocessError::BadShape {
            shape: x.shape().to_vec(),
            min_len,
        }),
    }
}

/// Zeroth-order modified Bessel function, by its power series. Converges
/// in ~25 terms for the arguments the Kaiser window needs.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass, `taps` odd, unity DC gain.
/// `cutoff` is in cycles per sample (e.g. 0.25 for 250 Hz at 1000 Hz).
fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "zero-phase filter needs odd length");
    let center = (taps / 2) as f64;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - center;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let r = t / (center + 1.0);
            let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
            sinc * window
        })
        .collect();
    let gain: f64 = h.iter().sum();
    for v in &mut h {
        *v /= gain;
    }
    h
}

/// 2:1 anti-aliased decimation: a zero-phase Kaiser-windowed FIR low-pass
/// with cutoff at the output Nyquist (stopband ≥ 60 dB), evaluated only at
/// the kept sample positions. Edges are handled by replicating the first
/// and last samples, which keeps the unity passband gain exact out to the
/// boundaries. Output length is `ceil(L/2)`.
pub fn resample_polyphase(x: &Tensor, from_fs: u32, to_fs: u32) -> PreprocessResult<Tensor> {
    if to_fs == 0 || from_fs != 2 * to_fs {
        return Err(PreprocessError::BadRate { from_fs, to_fs });
    }
    let (c, l) = check_2d(x, 1)?;
    // 127 taps (~64 per phase); beta 5.653 is the standard Kaiser choice
    // for 60 dB stopband attenuation.
    let h = kaiser_lowpass(127, 0.25, 5.653);
    let center = h.len() as i64 / 2;
    let out_len = l.div_ceil(2);
    let data = x.data();
    let mut out = vec![0.0; c * out_len];
    for lead in 0..c {
        let row = &data[lead * l..(lead + 1) * l];
        for t in 0..out_len {
            let mut acc = 0.0;
            for (k, &hv) in h.iter().enumerate() {
                let j = (2 * t) as i64 + k as i64 - center;
                let j = j.clamp(0, l as i64 - 1) as usize;
                acc += hv * row[j];
            }
            out[lead * out_len + t] = acc;
        }
    }
    Ok(Tensor::from_vec(out, &[c, out_len])?)
}

/// Fourier-method resampling to `round(L * to_fs / from_fs)` samples:
/// forward FFT, spectrum zero-padded (or truncated) with Hermitian
/// symmetry preserved and the Nyquist bin split when present, inverse
/// FFT, amplitude scaled by `new_len/old_len` so tone amplitudes are
/// preserved.
pub fn resample_fft(x: &Tensor, from_fs: u32, to_fs: u32) -> PreprocessResult<Tensor> {
    let (c, l) = check_2d(x, 2)?;
    let m = ((l as f64) * (to_fs as f64) / (from_fs as f64)).round() as usize;
    let m = m.max(2);
    if m == l {
        return Ok(x.clone());
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(l);
    let inv = planner.plan_fft_inverse(m);
    let data = x.data();
    let mut out = vec![0.0; c * m];
    for lead in 0..c {
        let row = &data[lead * l..(lead + 1) * l];
        let mut spec: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut spec);
        let mut y = vec![Complex::new(0.0, 0.0); m];
        if m > l {
            if l % 2 == 0 {
                let nyq = l / 2;
                y[..nyq].copy_from_slice(&spec[..nyq]);
                for j in 1..nyq {
                    y[m - j] = spec[l - j];
                }
                // Split the old Nyquist bin across the two new mirror
                // positions so the spectrum stays Hermitian.
                y[nyq] = 0.5 * spec[nyq];
                y[m - nyq] = 0.5 * spec[nyq].conj();
            } else {
                let half = l / 2;
                y[..=half].copy_from_slice(&spec[..=half]);
                for j in 1..=half {
                    y[m - j] = spec[l - j];
                }
            }
        } else {
            // Truncation (band-limiting) for completeness; the challenge
            // data only upsamples through this path.
            if m % 2 == 0 {
                let nyq = m / 2;
                y[..nyq].copy_from_slice(&spec[..nyq]);
                for j in 1..nyq {
                    y[m - j] = spec[l - j];
                }
                y[nyq] = spec[nyq] + spec[l - nyq];
            } else {
                let half = m / 2;
                y[..=half].copy_from_slice(&spec[..=half]);
                for j in 1..=half {
                    y[m - j] = spec[l - j];
                }
            }
        }
        inv.process(&mut y);
        // Unnormalized transforms: dividing by the *old* length both
        // undoes the forward scaling and applies the new_len/old_len
        // amplitude convention.
        let scale = 1.0 / l as f64;
        for (o, v) in out[lead * m..(lead + 1) * m].iter_mut().zip(&y) {
            *o = v.re * scale;
        }
    }
    Ok(Tensor::from_vec(out, &[c, m])?)
}

/// Force every lead to exactly `target` samples: shorter records are
/// right zero-padded, longer ones are cropped to a contiguous window
/// whose start is drawn uniformly from `[0, L - target]` — the same
/// window for every lead. With `rng: None` (deterministic evaluation
/// mode) the window always starts at 0.
pub fn fix_length(
    x: &Tensor,
    target: usize,
    rng: Option<&mut SeedRng>,
) -> PreprocessResult<Tensor> {
    let (c, l) = check_2d(x, 1)?;
    let data = x.data();
    let mut out = vec![0.0; c * target];
    if l <= target {
        for lead in 0..c {
            out[lead * target..lead * target + l]
                .copy_from_slice(&data[lead * l..(lead + 1) * l]);
        }
    } else {
        let start = match rng {
            Some(r) => r.gen_range(0..=l - target),
            None => 0,
        };
        for lead in 0..c {
            out[lead * target..(lead + 1) * target]
                .copy_from_slice(&data[lead * l + start..lead * l + start + target]);
        }
    }
    Ok(Tensor::from_vec(out, &[c, target])?)
}

/// Full conditioning pipeline for one record: resample to `to_fs`, then
/// fix the per-lead length. Training passes an RNG for the random crop;
/// evaluation passes `None`.
pub fn prepare(
    raw: &RawSignal,
    to_fs: u32,
    target_len: usize,
    rng: Option<&mut SeedRng>,
) -> PreprocessResult<Tensor> {
    let resampled = raw.resample_to(to_fs)?;
    fix_length(&resampled.samples, target_len, rng)
}
