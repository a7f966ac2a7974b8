use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

pub const MEL_MAGIC: &[u8; 8] = b"SVCMEL01";

/// Layout: magic, `u32` rows, `u32` cols, `f64` frame shift (ms), `f64`
/// frame length (ms), then `rows × cols` row-major `f32`. Little endian.
pub fn write_mel_binary(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let (rows, cols) = mel.frames.dim();
    let mut buf = Vec::with_capacity(32 + rows * cols * 4);
    buf.extend_from_slice(MEL_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.extend_from_slice(&mel.frame_shift_ms.to_le_bytes());
    buf.extend_from_slice(&mel.frame_length_ms.to_le_bytes());
    for v in mel.frames.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_mel_binary(path: &Path) -> Result<MelSpectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 || &bytes[..8] != MEL_MAGIC {
        return Err(bad("not a mel matrix file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (rows, cols) = (u32_at(8), u32_at(12));
    if bytes.len() != 32 + rows * cols * 4 {
        return Err(bad("payload size does not match header"));
    }
    let data = bytes[32..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((rows, cols), data).expect("size checked"),
        frame_shift_ms: f64_at(16),
        frame_length_ms: f64_at(24),
    })
}

/// Key-value record written beside every converted utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversionMeta {
    pub id: String,
    pub speaker: String,
    pub reference: String,
    pub phonemes: Vec<String>,
    pub durations: Vec<usize>,
    pub style: Vec<f64>,
    pub partial: bool,
}

impl ConversionMeta {
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "id={}", self.id);
        let _ = writeln!(out, "speaker={}", self.speaker);
        let _ = writeln!(out, "reference={}", self.reference);
        let _ = writeln!(out, "phonemes={}", self.phonemes.join(" "));
        let _ = writeln!(out, "durations={}", join(self.durations.iter().map(|d| d.to_string()).collect()));
        let _ = writeln!(out, "frames={}", self.durations.iter().sum::<usize>());
        let _ = writeln!(out, "style={}", join(self.style.iter().map(|v| format!("{v:.6}")).collect()));
        let _ = writeln!(out, "partial={}", self.partial);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("meta line without '=': {line}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("meta is missing {k}")))
        };
        let nums = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::InvalidInput(format!("meta {k}: bad number {s}"))))
                .collect()
        };
        Ok(Self {
            id: get("id")?.to_string(),
            speaker: get("speaker")?.to_string(),
            reference: get("reference")?.to_string(),
            phonemes: get("phonemes")?.split_whitespace().map(String::from).collect(),
            durations: nums("durations")?.into_iter().map(|d| d as usize).collect(),
            style: nums("style")?,
            partial: get("partial")? == "true",
        })
    }
}

pub fn read_meta(path: &Path) -> Result<ConversionMeta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConversionMeta::parse(&text)
}
