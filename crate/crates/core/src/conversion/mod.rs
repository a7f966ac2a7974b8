//! Source speech to phonemes, reference speech to style, and both plus a
//! target speaker through the generator and vocoder.

mod batch;
mod store;

pub use batch::{batch_convert, BatchReport, BatchRow, BatchStatus, ReferencePolicy, REPORT_CSV_HEADER};
pub use store::{read_mel_binary, read_meta, write_mel_binary, ConversionMeta, MEL_MAGIC};

use crate::corpus::{DurationSequence, PhonemeSequence};
use crate::error::{Error, Result};
use crate::features::{compute_log_mel, invert_mel, utterance_mvn, AudioWaveform, FeatureConfig, MelSpectrogram};
use crate::generator::{quantize_durations, state_expand, Generator, SpeakerId, StyleEmbedding};
use crate::recognizer::{recognize, Recognizer, DEFAULT_BEAM};

/// Everything the pipeline produced for one utterance.
#[derive(Clone, Debug)]
pub struct Conversion {
    pub mel: MelSpectrogram,
    pub wav: AudioWaveform,
    pub phonemes: PhonemeSequence,
    pub durations: DurationSequence,
    pub style: StyleEmbedding,
    /// Raw rhythm-module output before quantization.
    pub predicted_durations: Vec<f64>,
    /// Recognition stopped at the length limit without `<eos>`.
    pub partial: bool,
}

/// Checks that the two checkpoints and the feature settings describe the
/// same phoneme inventory and mel layout.
pub fn check_compatible(rec: &Recognizer, generator: &Generator, cfg: &FeatureConfig) -> Result<()> {
    cfg.validate()?;
    if rec.inventory.hash() != generator.inventory.hash() {
        return Err(Error::Validation(
            "recognizer and generator were trained on different phoneme inventories".into(),
        ));
    }
    for (what, n) in [("recognizer", rec.config.n_mels), ("generator", generator.config.n_mels)] {
        if n != cfg.n_mels {
            return Err(Error::InvalidConfig(format!(
                "{what} expects {n} mel bins, features produce {}",
                cfg.n_mels
            )));
        }
    }
    if (generator.config.frame_shift_ms - cfg.frame_shift_ms).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "generator frame shift {} ms differs from feature frame shift {} ms",
            generator.config.frame_shift_ms, cfg.frame_shift_ms
        )));
    }
    Ok(())
}

/// Converts `source` to `target` speaking with the style of `reference`.
/// Passing the source as its own reference transfers the source style.
pub fn convert(
    source: &AudioWaveform,
    reference: &AudioWaveform,
    target: SpeakerId,
    rec: &Recognizer,
    generator: &Generator,
    cfg: &FeatureConfig,
) -> Result<Conversion> {
    convert_with_beam(source, reference, target, rec, generator, cfg, DEFAULT_BEAM)
}

pub fn convert_with_beam(
    source: &AudioWaveform,
    reference: &AudioWaveform,
    target: SpeakerId,
    rec: &Recognizer,
    generator: &Generator,
    cfg: &FeatureConfig,
    beam: usize,
) -> Result<Conversion> {
    check_compatible(rec, generator, cfg)?;
    if target.0 >= generator.speakers.len() {
        return Err(Error::InvalidInput(format!(
            "target speaker {} is not in the speaker table ({} speakers)",
            target.0,
            generator.speakers.len()
        )));
    }

    let source_mel = utterance_mvn(&compute_log_mel(source, cfg)?);
    let recognition = recognize(rec, &source_mel, beam)?;
    if recognition.phonemes.is_empty() {
        return Err(Error::InvalidInput("recognizer produced no phonemes for the source".into()));
    }
    let encoded = generator.cbhg_encode(&recognition.phonemes)?;

    let reference_mel = compute_log_mel(reference, cfg)?;
    let style = generator.gst_encode(&reference_mel)?;

    let predicted = generator.predict_rhythm(&encoded, &style, target)?;
    let durations = quantize_durations(&predicted)?;
    let expanded = state_expand(&encoded, durations.as_slice())?;
    let mel = generator.decode_mel(&expanded, &style, target, None)?;
    let wav = invert_mel(&mel, cfg)?;
    Ok(Conversion {
        mel,
        wav,
        phonemes: recognition.phonemes,
        durations,
        style,
        predicted_durations: predicted,
        partial: recognition.timed_out,
    })
}

#[cfg(test)]
mod tests;
