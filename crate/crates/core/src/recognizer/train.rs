use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ctc, HybridLoss, Recognizer};
use crate::error::{Error, Result};
use crate::nn::optim::{Adam, LrSchedule};
use crate::nn::{Grads, Graph, Mat};

/// One training pair: raw log-mel frames and the phoneme labels.
#[derive(Clone, Debug)]
pub struct RecognizerExample {
    pub id: String,
    pub mel: Mat,
    pub phonemes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub lr: LrSchedule,
}

impl Default for RecognizerSchedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            grad_clip: 5.0,
            seed: 0,
            lr: LrSchedule::default(),
        }
    }
}

/// Per-step log entry; batch means of the loss and its components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecognizerLogRow {
    pub step: usize,
    pub total: f64,
    pub ctc_term: f64,
    pub att_term: f64,
}

impl RecognizerLogRow {
    pub const CSV_HEADER: &'static str = "step,total,ctc_term,att_term";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.total, self.ctc_term, self.att_term)
    }
}

/// Trains `model` in place for `schedule.steps` optimizer steps.
///
/// Every pair is validated before the first update. `on_step` receives one
/// row per step.
pub fn train_recognizer(
    model: &mut Recognizer,
    data: &[RecognizerExample],
    schedule: &RecognizerSchedule,
    mut on_step: impl FnMut(&RecognizerLogRow),
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    for ex in data {
        model.check_mel(&ex.mel).map_err(|e| tag(&ex.id, e))?;
        model.check_labels(&ex.phonemes).map_err(|e| tag(&ex.id, e))?;
        let enc = model.config.encoded_len(ex.mel.nrows());
        ctc::check_feasible(&ex.phonemes, enc).map_err(|e| tag(&ex.id, e))?;
    }
    let lambda = model.config.lambda;
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
        let model_ref = &*model;
        let results: Vec<Result<(Grads, HybridLoss)>> = batch
            .par_iter()
            .map(|&i| {
                let ex = &data[i];
                let mut g = Graph::new(&model_ref.params);
                let (loss, parts) = model_ref.loss_graph(&mut g, &ex.mel, &ex.phonemes, lambda)?;
                Ok((g.backward(loss), parts))
            })
            .collect();
        let mut grads = Grads::zeros_like(&model.params);
        let (mut total, mut ctc_term, mut att_term) = (0.0, 0.0, 0.0);
        for r in results {
            let (g, l) = r.map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence {
                    step: model.step,
                    detail,
                },
                other => other,
            })?;
            grads.add_assign(&g);
            total += l.total;
            ctc_term += l.ctc_term;
            att_term += l.att_term;
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
        let row = RecognizerLogRow {
            step: model.step,
            total: total / n,
            ctc_term: ctc_term / n,
            att_term: att_term / n,
        };
        model.step += 1;
        on_step(&row);
    }
    Ok(())
}

fn tag(id: &str, e: Error) -> Error {
    tracing::error!(utterance = id, "rejected training pair: {e}");
    e
}
