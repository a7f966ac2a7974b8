use super::stft::{num_frames, reflect_index};
use super::{AudioWaveform, FeatureConfig};
use crate::error::{Error, Result};

/// Minimum normalized autocorrelation peak for a frame to count as voiced.
pub const VOICING_THRESHOLD: f64 = 0.3;

/// Per-frame fundamental frequency in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Contour {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
    pub frame_shift_ms: f64,
}

impl F0Contour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_fully_voiced(&self) -> bool {
        self.voiced.iter().all(|&v| v)
    }

    pub fn truncate(&mut self, len: usize) {
        self.values.truncate(len);
        self.voiced.truncate(len);
    }
}

/// Normalized-autocorrelation pitch tracker on the mel framing grid.
pub fn extract_f0(wav: &AudioWaveform, cfg: &FeatureConfig) -> Result<F0Contour> {
    cfg.validate()?;
    wav.check()?;
    if (wav.sample_rate as f64) < 2.0 * cfg.f0_ceil {
        return Err(Error::InvalidConfig(format!(
            "sample rate {} Hz is below twice the F0 ceiling {} Hz",
            wav.sample_rate, cfg.f0_ceil
        )));
    }
    let sr = wav.sample_rate as f64;
    let hop = cfg.hop_length();
    let win = cfg.win_length();
    let min_lag = (sr / cfg.f0_ceil).floor().max(2.0) as usize;
    let max_lag = ((sr / cfg.f0_floor).ceil() as usize).min(win.saturating_sub(2));
    let t_len = num_frames(wav.samples.len(), hop);
    let mut values = vec![0.0; t_len];
    let mut voiced = vec![false; t_len];
    if max_lag <= min_lag + 1 {
        return Err(Error::InvalidConfig("frame too short for the F0 search band".into()));
    }

    let n = wav.samples.len();
    let mut frame = vec![0.0; win];
    for t in 0..t_len {
        let start = (t * hop) as isize - (win / 2) as isize;
        for (j, f) in frame.iter_mut().enumerate() {
            *f = wav.samples[reflect_index(start + j as isize, n)];
        }
        let mean = frame.iter().sum::<f64>() / win as f64;
        frame.iter_mut().for_each(|v| *v -= mean);
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        if energy < 1e-10 * win as f64 {
            continue;
        }
        // prefix energies give the per-lag normalization in O(1)
        let mut prefix = vec![0.0; win + 1];
        for j in 0..win {
            prefix[j + 1] = prefix[j] + frame[j] * frame[j];
        }
        let lo = min_lag - 1;
        let hi = max_lag + 1;
        let mut r = vec![0.0; hi + 1];
        for lag in lo..=hi {
            let m = win - lag;
            let cross: f64 = frame[..m].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
            let e0 = prefix[m];
            let e1 = prefix[win] - prefix[lag];
            let d = (e0 * e1).sqrt();
            r[lag] = if d > 0.0 { cross / d } else { 0.0 };
        }
        let global = (min_lag..=max_lag).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        if global < VOICING_THRESHOLD {
            continue;
        }
        // earliest local peak close to the best one avoids octave-down errors
        let pick = (min_lag..=max_lag)
            .find(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1] && r[l] >= 0.9 * global);
        let Some(lag) = pick else { continue };
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        let f0 = sr / (lag as f64 + delta.clamp(-0.5, 0.5));
        if f0 >= cfg.f0_floor && f0 <= cfg.f0_ceil {
            values[t] = f0;
            voiced[t] = true;
        }
    }
    Ok(F0Contour {
        values,
        voiced,
        frame_shift_ms: cfg.frame_shift_ms,
    })
}

/// Fills unvoiced runs: linear between voiced neighbours, nearest value at the
/// edges. Voiced frames keep their values bit-for-bit.
pub fn interpolate_f0(contour: &F0Contour) -> Result<F0Contour> {
    let voiced_idx: Vec<usize> = (0..contour.len()).filter(|&i| contour.voiced[i]).collect();
    let (Some(&first), Some(&last)) = (voiced_idx.first(), voiced_idx.last()) else {
        return Err(Error::NoVoicing);
    };
    let mut values = contour.values.clone();
    for v in values.iter_mut().take(first) {
        *v = contour.values[first];
    }
    for v in values.iter_mut().skip(last + 1) {
        *v = contour.values[last];
    }
    for w in voiced_idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (contour.values[a], contour.values[b]);
        for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *v = va + (vb - va) * frac;
        }
    }
    Ok(F0Contour {
        values,
        voiced: vec![true; contour.len()],
        frame_shift_ms: contour.frame_shift_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, secs: f64) -> Vec<f64> {
        let sr = 24_000.0;
        (0..(secs * sr) as usize)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect()
    }

    fn contour(values: Vec<f64>, voiced: Vec<bool>) -> F0Contour {
        F0Contour { values, voiced, frame_shift_ms: 12.5 }
    }

    #[test]
    fn tracks_a_pure_tone() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&AudioWaveform::new(tone(220.0, 1.0), 24_000), &cfg).unwrap();
        assert_eq!(f0.len(), 80);
        for t in 2..f0.len() - 2 {
            assert!(f0.voiced[t], "frame {t} unvoiced");
            assert!((f0.values[t] - 220.0).abs() <= 3.0, "frame {t}: {}", f0.values[t]);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&AudioWaveform::new(vec![0.0; 12_000], 24_000), &cfg).unwrap();
        assert!(f0.voiced.iter().all(|v| !v));
        assert!(f0.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_gap_is_unvoiced_and_flanks_voiced() {
        let cfg = FeatureConfig::default();
        let mut s = tone(200.0, 1.0);
        let (gap_lo, gap_hi) = (12_000, 14_400); // 100 ms
        s[gap_lo..gap_hi].fill(0.0);
        let f0 = extract_f0(&AudioWaveform::new(s, 24_000), &cfg).unwrap();
        let (hop, half) = (300usize, 600usize);
        for t in 0..f0.len() {
            let (lo, hi) = ((t * hop).saturating_sub(half), t * hop + half);
            if lo >= gap_lo && hi <= gap_hi {
                assert!(!f0.voiced[t], "frame {t} inside the gap is voiced");
            }
            let clear = hi + 300 < gap_lo || lo > gap_hi + 300;
            if clear && t >= 2 && t + 2 < f0.len() {
                assert!(f0.voiced[t], "frame {t} on the flank is unvoiced");
            }
        }
        assert!(f0.voiced.iter().filter(|v| !**v).count() >= 4);
    }

    #[test]
    fn rate_below_nyquist_of_ceiling_is_rejected() {
        let cfg = FeatureConfig { f0_ceil: 500.0, ..Default::default() };
        let wav = AudioWaveform::new(vec![0.1; 900], 900);
        assert!(matches!(extract_f0(&wav, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn interpolation_examples() {
        let c = contour(vec![100.0, 0.0, 0.0, 200.0], vec![true, false, false, true]);
        let out = interpolate_f0(&c).unwrap();
        let want = [100.0, 100.0 + 100.0 / 3.0, 100.0 + 200.0 / 3.0, 200.0];
        for (a, b) in out.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((out.values[1] - 133.33).abs() < 5e-3 && (out.values[2] - 166.67).abs() < 5e-3);

        let c = contour(vec![0.0, 150.0, 0.0], vec![false, true, false]);
        assert_eq!(interpolate_f0(&c).unwrap().values, vec![150.0; 3]);

        let c = contour(vec![120.0, 130.5, 99.0], vec![true; 3]);
        assert_eq!(interpolate_f0(&c).unwrap(), c);

        let c = contour(vec![0.0; 3], vec![false; 3]);
        assert!(matches!(interpolate_f0(&c), Err(Error::NoVoicing)));
    }

    proptest! {
        #[test]
        fn interpolation_is_continuous_and_preserves_voiced(
            frames in proptest::collection::vec((any::<bool>(), 50.0f64..400.0), 1..60)
        ) {
            prop_assume!(frames.iter().any(|f| f.0));
            let c = contour(
                frames.iter().map(|&(v, f)| if v { f } else { 0.0 }).collect(),
                frames.iter().map(|f| f.0).collect(),
            );
            let out = interpolate_f0(&c).unwrap();
            prop_assert!(out.is_fully_voiced());
            for i in 0..c.len() {
                if c.voiced[i] {
                    prop_assert_eq!(out.values[i].to_bits(), c.values[i].to_bits());
                }
            }
            // adjacent steps never exceed the steepest slope between voiced anchors
            let idx: Vec<usize> = (0..c.len()).filter(|&i| c.voiced[i]).collect();
            let max_slope = idx.windows(2)
                .map(|w| (c.values[w[1]] - c.values[w[0]]).abs() / (w[1] - w[0]) as f64)
                .fold(0.0, f64::max);
            for w in out.values.windows(2) {
                prop_assert!((w[1] - w[0]).abs() <= max_slope + 1e-9);
            }
        }
    }
}
