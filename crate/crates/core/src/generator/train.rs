use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Generator, GeneratorLoss, MelStats, SpeakerId};
use crate::corpus::AlignmentTable;
use crate::error::{Error, Result};
use crate::nn::optim::{Adam, LrSchedule};
use crate::nn::{Grads, Graph, Mat};

/// Training utterance: raw log-mel frames, labels and speaker name.
#[derive(Clone, Debug)]
pub struct GeneratorUtterance {
    pub id: String,
    pub mel: Mat,
    pub phonemes: Vec<usize>,
    pub speaker: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub lr: LrSchedule,
}

impl Default for GeneratorSchedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            grad_clip: 1.0,
            seed: 0,
            lr: LrSchedule::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLogRow {
    pub step: usize,
    pub total: f64,
    pub recon_term: f64,
    pub rhythm_term: f64,
}

impl GeneratorLogRow {
    pub const CSV_HEADER: &'static str = "step,total,recon_term,rhythm_term";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.total, self.recon_term, self.rhythm_term)
    }
}

struct Example<'a> {
    mel: &'a Mat,
    phonemes: &'a [usize],
    durations: Vec<usize>,
    speaker: SpeakerId,
}

fn resolve<'a>(
    model: &Generator,
    data: &'a [GeneratorUtterance],
    alignments: &AlignmentTable,
    speaker_override: Option<SpeakerId>,
) -> Result<Vec<Example<'a>>> {
    data.iter()
        .map(|u| {
            let durations = alignments
                .get(&u.id)
                .ok_or_else(|| Error::Validation(format!("no alignment for utterance {}", u.id)))?;
            if durations.len() != u.phonemes.len() || durations.total() != u.mel.nrows() {
                return Err(Error::Validation(format!(
                    "alignment for {} covers {} phonemes / {} frames, utterance has {} / {}",
                    u.id,
                    durations.len(),
                    durations.total(),
                    u.phonemes.len(),
                    u.mel.nrows()
                )));
            }
            let speaker = match speaker_override {
                Some(s) => s,
                None => model
                    .speaker_id(&u.speaker)
                    .ok_or_else(|| Error::InvalidInput(format!("utterance {}: unknown speaker {}", u.id, u.speaker)))?,
            };
            Ok(Example {
                mel: &u.mel,
                phonemes: &u.phonemes,
                durations: durations.as_slice().to_vec(),
                speaker,
            })
        })
        .collect()
}

fn fit(
    model: &mut Generator,
    data: &[Example],
    schedule: &GeneratorSchedule,
    on_step: &mut dyn FnMut(&GeneratorLogRow),
) -> Result<()> {
    if schedule.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut opt = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = Vec::new();
    for _ in 0..schedule.steps {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        while batch.len() < schedule.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().unwrap());
        }
        let m = &*model;
        let step_seed: u64 = rng.random();
        let results: Vec<Result<(Grads, GeneratorLoss)>> = batch
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let ex = &data[i];
                let mut g = Graph::new(&m.params);
                let seed = step_seed.wrapping_add(k as u64);
                let (loss, parts) = m.loss_graph(&mut g, ex.mel, ex.phonemes, &ex.durations, ex.speaker, Some(seed))?;
                Ok((g.backward(loss), parts))
            })
            .collect();
        let mut grads = Grads::zeros_like(&model.params);
        let (mut total, mut recon, mut rhythm) = (0.0, 0.0, 0.0);
        for r in results {
            let (g, l) = r?;
            grads.add_assign(&g);
            total += l.total;
            recon += l.recon_term;
            rhythm += l.rhythm_term;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step: model.step,
                detail: "non-finite gradient".into(),
            });
        }
        grads.clip_global_norm(schedule.grad_clip);
        opt.step(&mut model.params, &grads, schedule.lr.lr(model.step));
        let row = GeneratorLogRow {
            step: model.step,
            total: total / n,
            recon_term: recon / n,
            rhythm_term: rhythm / n,
        };
        model.step += 1;
        on_step(&row);
    }
    Ok(())
}

/// Trains on utterances whose durations come from `alignments`.
///
/// A fresh model (step 0) takes its mel normalization statistics from the
/// training set before the first update.
pub fn train_generator(
    model: &mut Generator,
    data: &[GeneratorUtterance],
    alignments: &AlignmentTable,
    schedule: &GeneratorSchedule,
    mut on_step: impl FnMut(&GeneratorLogRow),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let examples = resolve(model, data, alignments, None)?;
    for ex in &examples {
        model.check_mel(ex.mel)?;
        model.check_phonemes(ex.phonemes)?;
    }
    if schedule.steps > 0 && model.step == 0 {
        model.mel_stats = MelStats::fit(data.iter().map(|u| &u.mel), model.config.n_mels);
    }
    fit(model, &examples, schedule, &mut on_step)
}

/// Fine-tunes every parameter on `data`, all attributed to `speaker`. An
/// unknown speaker gets a new table row (mean of the existing rows). A
/// zero-step schedule leaves the model untouched.
pub fn adapt_generator(
    model: &mut Generator,
    speaker: &str,
    data: &[GeneratorUtterance],
    alignments: &AlignmentTable,
    schedule: &GeneratorSchedule,
    mut on_step: impl FnMut(&GeneratorLogRow),
) -> Result<SpeakerId> {
    if data.is_empty() {
        return Err(Error::InvalidInput("adaptation set is empty".into()));
    }
    if schedule.steps == 0 {
        return model
            .speaker_id(speaker)
            .ok_or_else(|| Error::InvalidInput(format!("speaker {speaker} not in table and no adaptation steps")));
    }
    // validate before growing the table so a failure leaves the model intact
    resolve(model, data, alignments, Some(SpeakerId(0)))?;
    let id = match model.speaker_id(speaker) {
        Some(id) => id,
        None => model.add_speaker(speaker)?,
    };
    let examples = resolve(model, data, alignments, Some(id))?;
    fit(model, &examples, schedule, &mut on_step)?;
    Ok(id)
}
