//! Dataset ingestion: manifests, phoneme inventory, duration alignments and
//! deterministic splits.
//!
//! Manifest lines are `id<TAB>audio_path<TAB>speaker<TAB>ph ph ph`.
//! Alignment lines are `id d1 d2 ...` with durations in mel frames.

mod inventory;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inventory::{PhonemeInventory, PhonemeSequence};

/// Per-phoneme durations in frames, every entry at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DurationSequence(Vec<usize>);

impl DurationSequence {
    pub fn new(durations: Vec<usize>) -> Result<Self> {
        if let Some(i) = durations.iter().position(|&d| d == 0) {
            return Err(Error::InvalidInput(format!("duration {i} is zero")));
        }
        Ok(Self(durations))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total frame count.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: String,
    pub speaker: String,
    pub phonemes: PhonemeSequence,
}

pub fn parse_manifest(text: &str, inventory: &PhonemeInventory) -> Result<Vec<UtteranceRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Validation(format!(
                "manifest line {}: expected 4 tab-separated fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Validation(format!("manifest line {}: empty id", lineno + 1)));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Validation(format!("duplicate utterance id {id}")));
        }
        let symbols: Vec<&str> = fields[3].split_whitespace().collect();
        if symbols.is_empty() {
            return Err(Error::Validation(format!("utterance {id}: empty phoneme sequence")));
        }
        let mut tokens = Vec::with_capacity(symbols.len());
        for s in symbols {
            let t = inventory.symbol_index(s).ok_or_else(|| {
                Error::Validation(format!("utterance {id}: unknown phoneme symbol {s:?}"))
            })?;
            tokens.push(t);
        }
        out.push(UtteranceRecord {
            id: id.to_string(),
            audio_path: fields[1].trim().to_string(),
            speaker: fields[2].trim().to_string(),
            phonemes: PhonemeSequence(tokens),
        });
    }
    Ok(out)
}

/// Audio path of a manifest entry; relative paths are taken from the
/// manifest's directory.
pub fn resolve_audio_path(base_dir: &Path, audio_path: &str) -> PathBuf {
    let p = Path::new(audio_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub fn load_manifest(path: &Path, inventory: &PhonemeInventory) -> Result<Vec<UtteranceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, inventory)
}

pub fn format_manifest(records: &[UtteranceRecord], inventory: &PhonemeInventory) -> String {
    records
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                r.audio_path,
                r.speaker,
                inventory.decode(&r.phonemes).join(" ")
            )
        })
        .collect()
}

/// Utterance id to reconciled durations.
pub type AlignmentTable = BTreeMap<String, DurationSequence>;

/// Largest frame-count drift absorbed by adjusting the final phoneme.
pub const RECONCILE_TOLERANCE: usize = 2;

/// Validates and reconciles one raw alignment against its utterance.
pub fn reconcile_durations(
    id: &str,
    raw: &[usize],
    phoneme_count: usize,
    mel_frames: usize,
) -> Result<DurationSequence> {
    if raw.len() != phoneme_count {
        return Err(Error::Alignment(format!(
            "utterance {id}: {} durations for {phoneme_count} phonemes",
            raw.len()
        )));
    }
    if raw.is_empty() {
        return Err(Error::Alignment(format!("utterance {id}: empty alignment")));
    }
    let mut d = raw.to_vec();
    for i in 0..d.len() {
        if d[i] != 0 {
            continue;
        }
        d[i] = 1;
        let donor = [i.checked_sub(1), (i + 1 < d.len()).then_some(i + 1)]
            .into_iter()
            .flatten()
            .filter(|&j| d[j] > 1)
            .max_by_key(|&j| d[j])
            .or_else(|| (0..d.len()).filter(|&j| j != i && d[j] > 1).max_by_key(|&j| d[j]));
        match donor {
            Some(j) => {
                d[j] -= 1;
                tracing::warn!(utterance = id, phoneme = i, donor = j, "zero duration clamped to 1");
            }
            None => tracing::warn!(utterance = id, phoneme = i, "zero duration clamped to 1 without donor"),
        }
    }
    let total: usize = d.iter().sum();
    let diff = mel_frames as isize - total as isize;
    if diff.unsigned_abs() > RECONCILE_TOLERANCE {
        return Err(Error::Alignment(format!(
            "utterance {id}: durations sum to {total}, mel has {mel_frames} frames"
        )));
    }
    let last = d.len() - 1;
    let adjusted = d[last] as isize + diff;
    if adjusted < 1 {
        return Err(Error::Alignment(format!(
            "utterance {id}: reconciling {diff:+} frames would empty the final phoneme"
        )));
    }
    d[last] = adjusted as usize;
    DurationSequence::new(d)
}

pub fn parse_alignments(
    text: &str,
    records: &[UtteranceRecord],
    frame_counts: &HashMap<String, usize>,
) -> Result<AlignmentTable> {
    let by_id: HashMap<&str, &UtteranceRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut table = AlignmentTable::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let rec = by_id
            .get(id)
            .ok_or_else(|| Error::Validation(format!("alignment for unknown utterance {id}")))?;
        let raw = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Alignment(format!("line {}: {e}", lineno + 1)))?;
        let frames = *frame_counts
            .get(id)
            .ok_or_else(|| Error::Alignment(format!("no mel frame count for utterance {id}")))?;
        let d = reconcile_durations(id, &raw, rec.phonemes.len(), frames)?;
        if table.insert(id.to_string(), d).is_some() {
            return Err(Error::Alignment(format!("utterance {id} aligned twice")));
        }
    }
    Ok(table)
}

pub fn load_alignments(
    path: &Path,
    records: &[UtteranceRecord],
    frame_counts: &HashMap<String, usize>,
) -> Result<AlignmentTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignments(&text, records, frame_counts)
}

pub fn format_alignments(table: &AlignmentTable) -> String {
    table
        .iter()
        .map(|(id, d)| {
            let ds: Vec<String> = d.as_slice().iter().map(usize::to_string).collect();
            format!("{id} {}\n", ds.join(" "))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Speakers excluded from all three sets (e.g. adaptation targets).
    pub holdout_speakers: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            val_fraction: 0.05,
            test_fraction: 0.05,
            holdout_speakers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<UtteranceRecord>,
    pub val: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
    pub holdout: Vec<UtteranceRecord>,
}

/// Deterministic shuffle-then-cut split; disjoint by utterance id.
pub fn split_records(records: &[UtteranceRecord], cfg: &SplitConfig) -> Split {
    let mut split = Split::default();
    let mut pool: Vec<&UtteranceRecord> = Vec::new();
    for r in records {
        if cfg.holdout_speakers.contains(&r.speaker) {
            split.holdout.push(r.clone());
        } else {
            pool.push(r);
        }
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n = pool.len();
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    let n_test = ((n as f64 * cfg.test_fraction).round() as usize).min(n - n_val.min(n));
    for (i, r) in pool.into_iter().enumerate() {
        let dst = if i < n_val {
            &mut split.val
        } else if i < n_val + n_test {
            &mut split.test
        } else {
            &mut split.train
        };
        dst.push(r.clone());
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(&["a", "b", "c"]).unwrap()
    }

    #[test]
    fn manifest_examples() {
        assert!(parse_manifest("", &inv()).unwrap().is_empty());
        let recs = parse_manifest("u1\t/x/u1.wav\tspk0\ta b c\n", &inv()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "u1");
        assert_eq!(recs[0].audio_path, "/x/u1.wav");
        assert_eq!(recs[0].speaker, "spk0");
        assert_eq!(recs[0].phonemes.0, vec![0, 1, 2]);
        let err = parse_manifest("u1\tp\ts\ta zz\n", &inv()).unwrap_err().to_string();
        assert!(err.contains("zz") && err.contains("u1"), "{err}");
        let dup = parse_manifest("u1\tp\ts\ta\nu1\tq\ts\tb\n", &inv()).unwrap_err();
        assert!(dup.to_string().contains("duplicate"));
        assert_eq!(format_manifest(&recs, &inv()), "u1\t/x/u1.wav\tspk0\ta b c\n");
    }

    fn one(frames: usize, line: &str) -> Result<AlignmentTable> {
        let recs = parse_manifest("u\tp\ts\ta b c\n", &inv()).unwrap();
        let counts = HashMap::from([("u".to_string(), frames)]);
        parse_alignments(line, &recs, &counts)
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(one(10, "u 2 3 5").unwrap()["u"].as_slice(), &[2, 3, 5]);
        assert_eq!(one(11, "u 2 3 5").unwrap()["u"].as_slice(), &[2, 3, 6]);
        assert_eq!(one(8, "u 2 3 5").unwrap()["u"].as_slice(), &[2, 3, 3]);
        assert!(matches!(one(13, "u 2 3 5"), Err(Error::Alignment(_))));
        assert!(matches!(one(5, "u 2 3"), Err(Error::Alignment(_))));
        assert!(matches!(one(5, "v 2 3 5"), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_duration_borrows_from_larger_neighbor() {
        let d = reconcile_durations("u", &[2, 0, 5], 3, 7).unwrap();
        assert_eq!(d.as_slice(), &[2, 1, 4]);
        let d = reconcile_durations("u", &[0, 1, 4], 3, 5).unwrap();
        assert_eq!(d.as_slice(), &[1, 1, 3]);
        assert_eq!(d.total(), 5);
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let text: String = (0..40).map(|i| format!("u{i}\tp\ts{}\ta\n", i % 4)).collect();
        let recs = parse_manifest(&text, &inv()).unwrap();
        let cfg = SplitConfig {
            seed: 3,
            val_fraction: 0.1,
            test_fraction: 0.2,
            holdout_speakers: vec!["s3".into()],
        };
        let a = split_records(&recs, &cfg);
        let b = split_records(&recs, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.holdout.len(), 10);
        assert_eq!((a.val.len(), a.test.len(), a.train.len()), (3, 6, 21));
        let mut ids = HashSet::new();
        for r in a.train.iter().chain(&a.val).chain(&a.test).chain(&a.holdout) {
            assert!(ids.insert(r.id.clone()));
        }
    }
}
