//! Synthetic ECG-like corpus with class-separable spectral content.
//!
//! Each class `c` is assigned a marker tone at `3 + 4c` Hz (class 0 →
//! 3 Hz, class 1 → 7 Hz, ...) plus a pulse train whose period depends on
//! the class. A record carries the tones of every class in its label
//! set, per-lead gains, baseline wander, and noise, so classes are
//! separable by spectrum but not by any single sample. Generation is
//! deterministic in `(n_records, n_classes, seed)`.

use std::collections::BTreeSet;

use rand::Rng;

use super::{DataError, DataResult, EcgRecord};
use crate::preprocess::RawSignal;
use crate::rng::rng_for;
use crate::tensor::Tensor;

const N_LEADS: usize = 12;
const FS: u32 = 500;
const LENGTHS: [usize; 3] = [4096, 8192, 12000];

/// Highest class count the generator supports. It matches the largest
/// real label map (26 classes), and the top marker tone `3 + 4·25 =
/// 103` Hz still sits comfortably below the 250 Hz Nyquist limit of the
/// generated records.
pub const MAX_SYNTH_CLASSES: usize = 26;

/// Generate `n_records` deterministic multilabel records. Codes follow
/// the `SYN{c:03}` scheme of the synthetic label map. Record `i` always
/// carries class `i % n_classes` and, with probability 1/4, the class
/// `(7i + 3) % n_classes` when that differs — so every record has at
/// least one positive label.
pub fn synth_generate(n_records: usize, n_classes: usize, seed: u64) -> DataResult<Vec<EcgRecord>> {
    if n_classes == 0 || n_classes > MAX_SYNTH_CLASSES {
        return Err(DataError::BadMap(format!(
            "synthetic corpus supports 1..={MAX_SYNTH_CLASSES} classes, got {n_classes}"
        )));
    }
    let mut out = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mut rng = rng_for(seed, i as u64);
        let mut classes = BTreeSet::new();
        classes.insert(i % n_classes);
        let extra = (7 * i + 3) % n_classes;
        let take_extra = rng.gen::<f64>() < 0.25;
        if take_extra && extra != i % n_classes {
            classes.insert(extra);
        }

        let len = LENGTHS[rng.gen_range(0..LENGTHS.len())];
        let gains: Vec<f64> = (0..N_LEADS).map(|_| rng.gen_range(0.4..1.2)).collect();
        let tone_phases: Vec<f64> = classes
            .iter()
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);

        let mut data = vec![0.0f64; N_LEADS * len];
        for (ci, &c) in classes.iter().enumerate() {
            let freq = (3 + 4 * c) as f64;
            let period = (350 + 60 * c) as f64;
            let phase = tone_phases[ci];
            for t in 0..len {
                let ts = t as f64 / FS as f64;
                let tone = (std::f64::consts::TAU * freq * ts + phase).sin();
                // Gaussian bump train: a crude beat morphology whose
                // spacing is class-specific.
                let off = (t as f64) % period - period / 2.0;
                let pulse = 0.5 * (-off * off / (2.0 * 12.0 * 12.0)).exp();
                let v = tone + pulse;
                for (lead, &g) in gains.iter().enumerate() {
                    data[lead * len + t] += g * v;
                }
            }
        }
        for t in 0..len {
            let ts = t as f64 / FS as f64;
            let wander = 0.15 * (std::f64::consts::TAU * 0.3 * ts + wander_phase).sin();
            for lead in 0..N_LEADS {
                data[lead * len + t] += wander + (rng.gen::<f64>() - 0.5) * 0.1;
            }
        }

        out.push(EcgRecord {
            id: format!("synth-{i:05}"),
            signal: RawSignal {
                samples: Tensor::from_vec(data, &[N_LEADS, len]).map_err(DataError::Tensor)?,
                fs: FS,
            },
            dx_codes: classes.iter().map(|c| format!("SYN{c:03}")).collect(),
            age: rng.gen_range(18..=90).to_string(),
            sex: if rng.gen::<bool>() { "Male" } else { "Female" }.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Amplitude of the component at frequency `f` by direct projection;
    /// tolerates tones that do not land on an integer DFT bin.
    fn tone_amplitude(x: &[f64], fs: f64, f: f64) -> f64 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (t, &v) in x.iter().enumerate() {
            let ang = -std::f64::consts::TAU * f * t as f64 / fs;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        2.0 * re.hypot(im) / x.len() as f64
    }

    #[test]
    fn classes_are_spectrally_separable() {
        let corpus = synth_generate(40, 2, 7).unwrap();
        let only = |code: &str| {
            corpus
                .iter()
                .find(|r| r.dx_codes.len() == 1 && r.dx_codes.contains(code))
                .unwrap()
        };
        for (code, strong, weak) in [("SYN000", 3.0, 7.0), ("SYN001", 7.0, 3.0)] {
            let rec = only(code);
            let len = rec.signal.samples.shape()[1];
            let lead0 = &rec.signal.samples.data()[..len];
            let a_strong = tone_amplitude(lead0, FS as f64, strong);
            let a_weak = tone_amplitude(lead0, FS as f64, weak);
            assert!(
                a_strong > 3.0 * a_weak,
                "{code}: {strong} Hz amp {a_strong:.4} vs {weak} Hz amp {a_weak:.4}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(12, 3, 42).unwrap();
        let b = synth_generate(12, 3, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.dx_codes, y.dx_codes);
            assert_eq!(x.age, y.age);
            assert_eq!(x.sex, y.sex);
            assert_eq!(x.signal.fs, y.signal.fs);
            assert_eq!(x.signal.samples.data(), y.signal.samples.data());
        }
        let c = synth_generate(12, 3, 43).unwrap();
        assert!(a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.signal.samples.data() != y.signal.samples.data()));
    }

    #[test]
    fn every_record_is_labeled_and_well_shaped() {
        let corpus = synth_generate(30, 4, 1).unwrap();
        assert_eq!(corpus.len(), 30);
        for (i, rec) in corpus.iter().enumerate() {
            assert_eq!(rec.id, format!("synth-{i:05}"));
            assert!(!rec.dx_codes.is_empty());
            assert!(rec.dx_codes.contains(&format!("SYN{:03}", i % 4)));
            let shape = rec.signal.samples.shape();
            assert_eq!(shape[0], N_LEADS);
            assert!(LENGTHS.contains(&shape[1]), "odd length {}", shape[1]);
            assert_eq!(rec.signal.fs, FS);
        }
    }

    #[test]
    fn class_count_is_guarded() {
        assert!(synth_generate(4, 0, 1).is_err());
        assert!(synth_generate(4, 27, 1).is_err());
        assert!(synth_generate(4, 26, 1).is_ok());
    }
}
