use std::path::Path;

use super::AudioWaveform;
use crate::error::{Error, Result};

/// Reads 16-bit PCM mono RIFF WAV, resampling to `target_rate` when it differs.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<AudioWaveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidInput(format!(
            "{}: expected 16-bit PCM",
            path.display()
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let wav = AudioWaveform::new(samples, spec.sample_rate);
    Ok(if spec.sample_rate == target_rate {
        wav
    } else {
        resample_linear(&wav, target_rate)
    })
}

/// Writes 16-bit PCM mono, clipping to [-1, 1].
pub fn write_wav(path: &Path, wav: &AudioWaveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wav.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn resample_linear(wav: &AudioWaveform, target_rate: u32) -> AudioWaveform {
    if wav.samples.is_empty() || wav.sample_rate == target_rate {
        return AudioWaveform::new(wav.samples.clone(), target_rate);
    }
    let ratio = wav.sample_rate as f64 / target_rate as f64;
    let n_out = ((wav.samples.len() as f64) / ratio).round().max(1.0) as usize;
    let last = wav.samples.len() - 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let k = (pos.floor() as usize).min(last);
            let frac = pos - k as f64;
            let next = wav.samples[(k + 1).min(last)];
            wav.samples[k] * (1.0 - frac) + next * frac
        })
        .collect();
    AudioWaveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_round_trip_and_resample() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let wav = AudioWaveform::new((0..1600).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect(), 16_000);
        write_wav(&p, &wav).unwrap();
        let same = read_wav(&p, 16_000).unwrap();
        assert_eq!(same.samples.len(), 1600);
        assert!(same.samples.iter().zip(&wav.samples).all(|(a, b)| (a - b).abs() < 1e-4));
        let up = read_wav(&p, 24_000).unwrap();
        assert_eq!(up.sample_rate, 24_000);
        assert_eq!(up.samples.len(), 2400);
    }
}
