//! Small synthetic speech-like corpora for desk-scale experiments.
//!
//! Each phoneme is a formant envelope over a harmonic source (or shaped noise
//! for fricatives); speakers differ in pitch and vocal-tract scale. Durations
//! are known exactly, so the corpus ships with perfect alignments.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    format_alignments, format_manifest, AlignmentTable, DurationSequence, PhonemeInventory,
    PhonemeSequence, UtteranceRecord,
};
use crate::error::{Error, Result};
use crate::features::{write_wav, AudioWaveform, FeatureConfig};

struct PhoneAcoustics {
    formants: [f64; 3],
    voiced_gain: f64,
    noise_gain: f64,
}

const TOY_SYMBOLS: [&str; 8] = ["a", "i", "u", "e", "o", "m", "n", "s"];

fn acoustics(symbol: &str) -> PhoneAcoustics {
    let (formants, voiced_gain, noise_gain) = match symbol {
        "a" => ([800.0, 1200.0, 2500.0], 1.0, 0.0),
        "i" => ([300.0, 2300.0, 3000.0], 1.0, 0.0),
        "u" => ([350.0, 800.0, 2300.0], 1.0, 0.0),
        "e" => ([500.0, 1900.0, 2600.0], 1.0, 0.0),
        "o" => ([500.0, 900.0, 2400.0], 1.0, 0.0),
        "m" => ([250.0, 1100.0, 2200.0], 0.35, 0.0),
        "n" => ([250.0, 1600.0, 2700.0], 0.35, 0.0),
        "s" => ([5000.0, 6500.0, 8000.0], 0.0, 0.25),
        _ => ([600.0, 1500.0, 2500.0], 0.8, 0.05),
    };
    PhoneAcoustics {
        formants,
        voiced_gain,
        noise_gain,
    }
}

/// Eight-symbol inventory used by the synthetic corpora.
pub fn toy_inventory() -> PhonemeInventory {
    PhonemeInventory::new(&TOY_SYMBOLS).expect("toy inventory is valid")
}

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_utterances: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            n_utterances: 20,
            min_phonemes: 4,
            max_phonemes: 7,
            min_frames: 4,
            max_frames: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker: String,
    pub speaker_index: usize,
    pub phonemes: PhonemeSequence,
    pub durations: DurationSequence,
    pub wav: AudioWaveform,
}

pub fn speaker_name(index: usize) -> String {
    format!("spk{index}")
}

fn speaker_voice(index: usize) -> (f64, f64) {
    // (mean F0, formant scale)
    const VOICES: [(f64, f64); 6] = [
        (120.0, 1.0),
        (215.0, 1.15),
        (160.0, 0.92),
        (250.0, 1.22),
        (100.0, 0.88),
        (185.0, 1.08),
    ];
    VOICES[index % VOICES.len()]
}

/// Renders one utterance. Style is a pitch-contour depth and rate.
pub fn synthesize_utterance(
    inventory: &PhonemeInventory,
    phonemes: &PhonemeSequence,
    durations: &DurationSequence,
    speaker_index: usize,
    style: (f64, f64),
    cfg: &FeatureConfig,
    rng: &mut ChaCha8Rng,
) -> AudioWaveform {
    let sr = cfg.sample_rate as f64;
    let hop = cfg.hop_length();
    let (f0_mean, vt_scale) = speaker_voice(speaker_index);
    let (depth, rate) = style;
    let n: usize = durations.total() * hop;
    let phones: Vec<PhoneAcoustics> = phonemes
        .tokens()
        .iter()
        .map(|&t| acoustics(inventory.symbol(t).unwrap_or("?")))
        .collect();
    // per-sample phone index and position for crossfades
    let mut owner = Vec::with_capacity(n);
    for (i, &d) in durations.as_slice().iter().enumerate() {
        owner.extend(std::iter::repeat_n(i, d * hop));
    }
    let max_harm = 40usize;
    let mut phase = vec![0.0f64; max_harm];
    let mut prev_noise = 0.0;
    let fade = (0.01 * sr) as usize;
    let mut boundaries = Vec::new();
    let mut acc = 0;
    for &d in durations.as_slice() {
        acc += d * hop;
        boundaries.push(acc);
    }
    let mut samples = Vec::with_capacity(n);
    for s in 0..n {
        let t = s as f64 / sr;
        let f0 = f0_mean * (1.0 + depth * (TAU * rate * t).sin());
        let p = owner[s];
        // blend weight toward the next phone near a boundary
        let end = boundaries[p];
        let (w_next, q) = if p + 1 < phones.len() && end - s < fade {
            (0.5 * (1.0 - (end - s) as f64 / fade as f64), p + 1)
        } else {
            (0.0, p)
        };
        let mix = |f: &dyn Fn(&PhoneAcoustics) -> f64| (1.0 - w_next) * f(&phones[p]) + w_next * f(&phones[q]);
        let voiced_gain = mix(&|a| a.voiced_gain);
        let noise_gain = mix(&|a| a.noise_gain);
        let formants: Vec<f64> = (0..3).map(|k| mix(&|a| a.formants[k]) * vt_scale).collect();
        let mut v = 0.0;
        for (h, ph) in phase.iter_mut().enumerate() {
            let fh = f0 * (h + 1) as f64;
            *ph = (*ph + TAU * fh / sr) % TAU;
            if fh > 0.45 * sr {
                continue;
            }
            let env: f64 = formants
                .iter()
                .enumerate()
                .map(|(k, &fm)| {
                    let bw = 90.0 + 60.0 * k as f64;
                    (-((fh - fm) / bw).powi(2)).exp() / (1.0 + k as f64)
                })
                .sum::<f64>()
                + 0.02;
            v += env * ph.sin();
        }
        let white: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let hp = white - prev_noise;
        prev_noise = white;
        let floor = 1e-3 * (rng.random::<f64>() * 2.0 - 1.0);
        samples.push(0.12 * voiced_gain * v + noise_gain * 0.5 * hp + floor);
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.9 {
        samples.iter_mut().for_each(|x| *x *= 0.9 / peak);
    }
    AudioWaveform::new(samples, cfg.sample_rate)
}

/// Random utterances with no immediate phoneme repeats.
pub fn synthesize_corpus(
    spec: &SyntheticSpec,
    inventory: &PhonemeInventory,
    cfg: &FeatureConfig,
) -> Vec<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_sym = inventory.n_symbols();
    (0..spec.n_utterances)
        .map(|u| {
            let speaker_index = u % spec.n_speakers.max(1);
            let len = rng.random_range(spec.min_phonemes..=spec.max_phonemes);
            let mut tokens: Vec<usize> = Vec::with_capacity(len);
            while tokens.len() < len {
                let t = rng.random_range(0..n_sym);
                if tokens.last() != Some(&t) {
                    tokens.push(t);
                }
            }
            let durs: Vec<usize> = (0..len)
                .map(|_| rng.random_range(spec.min_frames..=spec.max_frames))
                .collect();
            let style = (rng.random_range(0.02..0.15), rng.random_range(1.0..4.0));
            let phonemes = PhonemeSequence(tokens);
            let durations = DurationSequence::new(durs).expect("durations >= 1");
            let wav = synthesize_utterance(inventory, &phonemes, &durations, speaker_index, style, cfg, &mut rng);
            SyntheticUtterance {
                id: format!("utt{u:04}"),
                speaker: speaker_name(speaker_index),
                speaker_index,
                phonemes,
                durations,
                wav,
            }
        })
        .collect()
}

/// Writes `wav/*.wav`, `manifest.tsv`, `alignments.txt` and `inventory.txt`.
/// Manifest audio paths are relative to `dir`.
pub fn write_corpus(
    dir: &Path,
    utterances: &[SyntheticUtterance],
    inventory: &PhonemeInventory,
) -> Result<Vec<UtteranceRecord>> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::new();
    let mut table = AlignmentTable::new();
    for u in utterances {
        let rel = format!("wav/{}.wav", u.id);
        write_wav(&dir.join(&rel), &u.wav)?;
        records.push(UtteranceRecord {
            id: u.id.clone(),
            audio_path: rel,
            speaker: u.speaker.clone(),
            phonemes: u.phonemes.clone(),
        });
        table.insert(u.id.clone(), u.durations.clone());
    }
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("manifest.tsv", format_manifest(&records, inventory))?;
    write("alignments.txt", format_alignments(&table))?;
    write("inventory.txt", inventory.to_text())?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_log_mel;

    #[test]
    fn frames_match_durations_and_no_repeats() {
        let cfg = FeatureConfig::default();
        let inv = toy_inventory();
        let spec = SyntheticSpec { n_utterances: 4, ..Default::default() };
        for u in synthesize_corpus(&spec, &inv, &cfg) {
            let mel = compute_log_mel(&u.wav, &cfg).unwrap();
            assert_eq!(mel.num_frames(), u.durations.total());
            assert!(u.phonemes.tokens().windows(2).all(|w| w[0] != w[1]));
            assert!(u.wav.samples.iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn same_seed_same_audio() {
        let cfg = FeatureConfig::default();
        let inv = toy_inventory();
        let spec = SyntheticSpec { n_utterances: 2, ..Default::default() };
        let a = synthesize_corpus(&spec, &inv, &cfg);
        let b = synthesize_corpus(&spec, &inv, &cfg);
        assert_eq!(a[1].wav, b[1].wav);
    }
}
