use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::store::{write_mel_binary, ConversionMeta};
use super::{check_compatible, convert, Conversion};
use crate::corpus::{resolve_audio_path, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{read_wav, write_wav, AudioWaveform, FeatureConfig};
use crate::generator::{Generator, SpeakerId};
use crate::recognizer::Recognizer;

pub const REPORT_CSV_HEADER: &str = "id,status,output_frames,wall_time,error";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReferencePolicy {
    /// Every utterance is its own reference.
    Source,
    /// One reference utterance for the whole batch.
    Fixed(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchStatus {
    Ok,
    Partial,
    Failed,
}

impl BatchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchStatus::Ok => "ok",
            BatchStatus::Partial => "partial",
            BatchStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub id: String,
    pub status: BatchStatus,
    pub output_frames: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    /// Manifest order.
    pub rows: Vec<BatchRow>,
}

impl BatchReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status == BatchStatus::Failed).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
            out.push_str(&format!(
                "{},{},{},{:.3},{}\n",
                r.id,
                r.status.as_str(),
                r.output_frames,
                r.wall_time_s,
                err
            ));
        }
        out
    }
}

fn write_outputs(out_dir: &Path, meta: ConversionMeta, c: &Conversion) -> Result<()> {
    let id = meta.id.clone();
    write_wav(&out_dir.join(format!("{id}.wav")), &c.wav)?;
    write_mel_binary(&out_dir.join(format!("{id}.mel")), &c.mel)?;
    let p = out_dir.join(format!("{id}.meta"));
    std::fs::write(&p, meta.to_text()).map_err(|e| Error::io(&p, e))
}

/// Converts every manifest entry to `target`, writing `<id>.wav`, `<id>.mel`
/// and `<id>.meta` under `out_dir` plus `report.csv`. Per-utterance failures
/// are reported, not raised. Relative audio paths resolve against `base_dir`.
#[allow(clippy::too_many_arguments)]
pub fn batch_convert(
    records: &[UtteranceRecord],
    base_dir: &Path,
    policy: &ReferencePolicy,
    target: SpeakerId,
    rec: &Recognizer,
    generator: &Generator,
    cfg: &FeatureConfig,
    out_dir: &Path,
) -> Result<BatchReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("manifest has no utterances".into()));
    }
    check_compatible(rec, generator, cfg)?;
    let speaker = generator
        .speakers
        .get(target.0)
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("target speaker {} is not in the speaker table", target.0)))?;
    let fixed: Option<(String, AudioWaveform)> = match policy {
        ReferencePolicy::Source => None,
        ReferencePolicy::Fixed(p) => Some((p.display().to_string(), read_wav(p, cfg.sample_rate)?)),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let rows: Vec<BatchRow> = records
        .par_iter()
        .map(|r| {
            let t0 = Instant::now();
            let result = (|| {
                let source = read_wav(&resolve_audio_path(base_dir, &r.audio_path), cfg.sample_rate)?;
                let (ref_name, c) = match &fixed {
                    Some((name, wav)) => (name.clone(), convert(&source, wav, target, rec, generator, cfg)?),
                    None => (r.id.clone(), convert(&source, &source, target, rec, generator, cfg)?),
                };
                let meta = ConversionMeta {
                    id: r.id.clone(),
                    speaker: speaker.clone(),
                    reference: ref_name,
                    phonemes: rec.inventory.decode(&c.phonemes).into_iter().map(String::from).collect(),
                    durations: c.durations.as_slice().to_vec(),
                    style: c.style.vector.clone(),
                    partial: c.partial,
                };
                write_outputs(out_dir, meta, &c)?;
                Ok::<_, Error>(c)
            })();
            let wall_time_s = t0.elapsed().as_secs_f64();
            match result {
                Ok(c) => BatchRow {
                    id: r.id.clone(),
                    status: if c.partial { BatchStatus::Partial } else { BatchStatus::Ok },
                    output_frames: c.mel.num_frames(),
                    wall_time_s,
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(id = %r.id, error = %e, "conversion failed");
                    BatchRow {
                        id: r.id.clone(),
                        status: BatchStatus::Failed,
                        output_frames: 0,
                        wall_time_s,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let report = BatchReport { rows };
    let p = out_dir.join("report.csv");
    std::fs::write(&p, report.to_csv()).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
