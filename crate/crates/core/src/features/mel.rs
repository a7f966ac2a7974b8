use ndarray::{Array2, Axis};

use super::stft::Stft;
use super::{AudioWaveform, FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};

/// Magnitudes are clamped to this value before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
/// Per-dimension variance floor in [`utterance_mvn`].
pub const MVN_VAR_FLOOR: f64 = 1e-8;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters spanning 0 Hz to Nyquist, `n_mels × n_bins`.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Array2<f64> {
    let n_fft = cfg.n_fft();
    let n_bins = n_fft / 2 + 1;
    let sr = cfg.sample_rate as f64;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

pub fn compute_log_mel(wav: &AudioWaveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    wav.check()?;
    if wav.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidInput(format!(
            "waveform rate {} Hz differs from configured {} Hz",
            wav.sample_rate, cfg.sample_rate
        )));
    }
    let stft = Stft::new(cfg);
    let spec = stft.forward(&wav.samples);
    let mag = spec.mapv(|c| c.norm());
    let fb = mel_filterbank(cfg);
    let mel = mag.dot(&fb.t()).mapv(|v| v.max(LOG_FLOOR).ln());
    Ok(MelSpectrogram::new(mel, cfg))
}

/// Standardizes every mel dimension to zero mean and unit variance over the
/// utterance.
pub fn utterance_mvn(mel: &MelSpectrogram) -> MelSpectrogram {
    let x = &mel.frames;
    let t = x.nrows().max(1) as f64;
    let mean = x.sum_axis(Axis(0)) / t;
    let centered = x - &mean.view().insert_axis(Axis(0));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / t;
    let inv_std = var.mapv(|v| 1.0 / v.max(MVN_VAR_FLOOR).sqrt());
    let frames = &centered * &inv_std.view().insert_axis(Axis(0));
    MelSpectrogram {
        frames,
        frame_shift_ms: mel.frame_shift_ms,
        frame_length_ms: mel.frame_length_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> AudioWaveform {
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioWaveform::new(s, sr)
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let cfg = FeatureConfig::default();
        let wav = AudioWaveform::new(vec![0.0; 24_000], 24_000);
        let mel = compute_log_mel(&wav, &cfg).unwrap();
        assert_eq!(mel.frames.dim(), (80, 80));
        assert!(mel.frames.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn stationary_tone_has_constant_peak_bin() {
        let cfg = FeatureConfig::default();
        let mel = compute_log_mel(&sine(440.0, 1.0, 24_000), &cfg).unwrap();
        let argmax = |r: usize| {
            let row = mel.frames.row(r);
            (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
        };
        let first = argmax(4);
        for t in 4..mel.num_frames() - 4 {
            assert_eq!(argmax(t), first, "frame {t}");
        }
    }

    #[test]
    fn frame_count_is_ceil_of_samples_over_hop() {
        let cfg = FeatureConfig::default();
        for n in [1usize, 299, 300, 301, 12_345] {
            let wav = AudioWaveform::new(vec![0.1; n], 24_000);
            let mel = compute_log_mel(&wav, &cfg).unwrap();
            assert_eq!(mel.num_frames(), n.div_ceil(300));
        }
    }

    #[test]
    fn rejects_empty_and_nan() {
        let cfg = FeatureConfig::default();
        let empty = AudioWaveform::new(vec![], 24_000);
        assert!(matches!(compute_log_mel(&empty, &cfg), Err(Error::InvalidInput(_))));
        let nan = AudioWaveform::new(vec![0.0, f64::NAN, 0.0], 24_000);
        assert!(matches!(compute_log_mel(&nan, &cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn deterministic_bitwise() {
        let cfg = FeatureConfig::default();
        let w = sine(313.0, 0.3, 24_000);
        let a = compute_log_mel(&w, &cfg).unwrap();
        let b = compute_log_mel(&w, &cfg).unwrap();
        assert!(a.frames.iter().zip(b.frames.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mvn_of_constant_is_zero() {
        let cfg = FeatureConfig::default();
        let m = MelSpectrogram::new(Array2::from_elem((7, 80), 3.25), &cfg);
        assert!(utterance_mvn(&m).frames.iter().all(|&v| v == 0.0));
    }

    fn arb_mel() -> impl Strategy<Value = MelSpectrogram> {
        (2usize..30, 1usize..6).prop_flat_map(|(t, d)| {
            proptest::collection::vec(-20.0f64..20.0, t * d).prop_map(move |v| {
                MelSpectrogram::new(
                    Array2::from_shape_vec((t, d), v).unwrap(),
                    &FeatureConfig::default(),
                )
            })
        })
    }

    fn non_degenerate(m: &MelSpectrogram) -> bool {
        m.frames.axis_iter(Axis(1)).all(|c| {
            let mean = c.mean().unwrap();
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64 > 1e-3
        })
    }

    proptest! {
        #[test]
        fn mvn_standardizes(m in arb_mel()) {
            prop_assume!(non_degenerate(&m));
            let y = utterance_mvn(&m);
            let t = y.num_frames() as f64;
            for c in y.frames.axis_iter(Axis(1)) {
                let mean = c.sum() / t;
                let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((var - 1.0).abs() < 1e-4);
            }
        }

        #[test]
        fn mvn_idempotent_and_affine_invariant(m in arb_mel(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            prop_assume!(non_degenerate(&m));
            let once = utterance_mvn(&m);
            let twice = utterance_mvn(&once);
            for (x, y) in once.frames.iter().zip(twice.frames.iter()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let shifted = MelSpectrogram { frames: m.frames.mapv(|v| a * v + b), ..m.clone() };
            let z = utterance_mvn(&shifted);
            for (x, y) in once.frames.iter().zip(z.frames.iter()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
