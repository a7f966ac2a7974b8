//! Griffin-Lim phase reconstruction from log-mel frames.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::{mel_filterbank, LOG_FLOOR};
use super::stft::Stft;
use super::{AudioWaveform, FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};

pub const GRIFFIN_LIM_ITERS: usize = 60;
const MOMENTUM: f64 = 0.99;
const NNLS_ITERS: usize = 100;

/// Least-squares linear magnitudes for each mel frame, clamped non-negative.
fn mel_to_linear(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Array2<f64> {
    let fb = mel_filterbank(cfg);
    let (m, b) = fb.dim();
    let dm = DMatrix::from_fn(m, b, |i, j| fb[[i, j]]);
    let pinv = dm.pseudo_inverse(1e-10).expect("pseudo-inverse of filterbank");
    let floor_log = LOG_FLOOR.ln() + 1e-9;
    let energies = mel.frames.mapv(|v| if v <= floor_log { 0.0 } else { v.exp() });
    let pinv_t = Array2::from_shape_fn((m, b), |(i, j)| pinv[(j, i)]);
    let mut lin = energies.dot(&pinv_t).mapv(|v| v.max(1e-12));
    // refine with multiplicative non-negative least-squares updates
    let numer = energies.dot(&fb);
    let gram = fb.t().dot(&fb);
    for _ in 0..NNLS_ITERS {
        let denom = lin.dot(&gram);
        ndarray::Zip::from(&mut lin)
            .and(&numer)
            .and(&denom)
            .for_each(|x, &n, &d| *x *= n.max(0.0) / (d + 1e-20));
    }
    lin
}

pub fn invert_mel(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Result<AudioWaveform> {
    cfg.validate()?;
    if mel.n_mels() != cfg.n_mels {
        return Err(Error::InvalidConfig(format!(
            "mel has {} bins, config expects {}",
            mel.n_mels(),
            cfg.n_mels
        )));
    }
    let stft = Stft::new(cfg);
    let target = mel_to_linear(mel, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut spec = target.mapv(|a| {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        Complex64::from_polar(a, phase)
    });
    // fast Griffin-Lim: extrapolate the projection with momentum
    let mut prev = spec.clone();
    for _ in 0..GRIFFIN_LIM_ITERS {
        let y = stft.inverse(&spec);
        let est = stft.forward(&y);
        let mut proj = est.clone();
        ndarray::Zip::from(&mut proj)
            .and(&est)
            .and(&target)
            .for_each(|s, &e, &a| {
                let n = e.norm();
                *s = if n > 1e-12 { e * (a / n) } else { Complex64::new(a, 0.0) };
            });
        ndarray::Zip::from(&mut spec)
            .and(&proj)
            .and(&prev)
            .for_each(|s, &p, &q| *s = p + (p - q) * MOMENTUM);
        prev = proj;
    }
    let samples = stft.inverse(&prev);
    Ok(AudioWaveform::new(samples, cfg.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_log_mel;

    #[test]
    fn silence_inverts_to_near_zero() {
        let cfg = FeatureConfig::default();
        let mel = MelSpectrogram::new(Array2::from_elem((20, 80), LOG_FLOOR.ln()), &cfg);
        let wav = invert_mel(&mel, &cfg).unwrap();
        assert_eq!(wav.samples.len(), 20 * 300);
        assert!(wav.samples.iter().all(|s| s.abs() < 1e-2));
    }

    #[test]
    fn bin_count_mismatch_is_config_error() {
        let cfg = FeatureConfig::default();
        let mel = MelSpectrogram::new(Array2::zeros((4, 40)), &cfg);
        assert!(matches!(invert_mel(&mel, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn output_length_is_frames_times_hop() {
        let cfg = FeatureConfig::default();
        let wav = AudioWaveform::new(
            (0..7_777).map(|i| (i as f64 * 0.05).sin() * 0.3).collect(),
            24_000,
        );
        let mel = compute_log_mel(&wav, &cfg).unwrap();
        let out = invert_mel(&mel, &cfg).unwrap();
        assert_eq!(out.samples.len(), mel.num_frames() * cfg.hop_length());
    }
}
