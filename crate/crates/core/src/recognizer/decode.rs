use std::cmp::Ordering;

use super::ctc::{self, CtcPrefixScorer, PrefixState};
use super::Recognizer;
use crate::corpus::{DurationSequence, PhonemeSequence};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{Graph, Mat};

pub const DEFAULT_BEAM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub phonemes: PhonemeSequence,
    /// Joint CTC/attention log score of the hypothesis.
    pub score: f64,
    /// Set when no hypothesis reached `<eos>` within the length limit; the
    /// best partial hypothesis is returned.
    pub timed_out: bool,
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<usize>,
    att: f64,
    ctc: PrefixState,
    score: f64,
}

fn by_score(a: f64, b: f64, ta: &[usize], tb: &[usize]) -> Ordering {
    b.total_cmp(&a).then_with(|| ta.cmp(tb))
}

impl Recognizer {
    fn next_token_log_probs(&self, enc: &Mat, prefix: &[usize]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let e = g.constant(enc.clone());
        let mut input = vec![self.inventory.sos()];
        input.extend_from_slice(prefix);
        let lp = self.decoder_graph(&mut g, e, &input);
        g.value(lp).row(input.len() - 1).to_vec()
    }

    fn search(&self, enc: &Mat, lp: &Mat, beam: usize) -> Recognition {
        let lambda = self.config.lambda;
        let eos = self.inventory.eos();
        let scorer = CtcPrefixScorer::new(lp, self.inventory.blank());
        let max_len = (2 * enc.nrows()).max(1);
        let mut alive = vec![Hyp {
            tokens: Vec::new(),
            att: 0.0,
            ctc: scorer.initial(),
            score: 0.0,
        }];
        let mut ended: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..max_len {
            let mut cands: Vec<(Hyp, bool)> = Vec::new();
            for h in &alive {
                let next = self.next_token_log_probs(enc, &h.tokens);
                for c in (0..self.inventory.n_symbols()).chain(std::iter::once(eos)) {
                    let att = h.att + next[c];
                    if c == eos {
                        let score = lambda * scorer.final_score(&h.ctc) + (1.0 - lambda) * att;
                        cands.push((
                            Hyp {
                                tokens: h.tokens.clone(),
                                att,
                                ctc: h.ctc.clone(),
                                score,
                            },
                            true,
                        ));
                    } else {
                        let st = scorer.extend(&h.ctc, c);
                        let score = lambda * st.prefix_score + (1.0 - lambda) * att;
                        let mut tokens = h.tokens.clone();
                        tokens.push(c);
                        cands.push((Hyp { tokens, att, ctc: st, score }, false));
                    }
                }
            }
            cands.sort_by(|a, b| by_score(a.0.score, b.0.score, &a.0.tokens, &b.0.tokens).then(a.1.cmp(&b.1)));
            cands.truncate(beam);
            alive.clear();
            for (h, done) in cands {
                if done {
                    ended.push((h.tokens, h.score));
                } else {
                    alive.push(h);
                }
            }
            // Scores never increase under extension, so an ended hypothesis
            // at least as good as every live one is final.
            let best_end = ended.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let best_alive = alive.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if alive.is_empty() || (!ended.is_empty() && best_end >= best_alive) {
                break;
            }
        }
        if let Some((tokens, score)) = ended.into_iter().min_by(|a, b| by_score(a.1, b.1, &a.0, &b.0)) {
            return Recognition {
                phonemes: PhonemeSequence(tokens),
                score,
                timed_out: false,
            };
        }
        let best = alive
            .into_iter()
            .min_by(|a, b| by_score(a.score, b.score, &a.tokens, &b.tokens))
            .expect("beam is non-empty");
        tracing::warn!(len = best.tokens.len(), "decode timeout: no hypothesis reached <eos>");
        Recognition {
            phonemes: PhonemeSequence(best.tokens),
            score: best.score,
            timed_out: true,
        }
    }
}

/// Joint CTC/attention beam search. `beam = 1` is greedy decoding; wider
/// beams never return a lower joint score than the greedy hypothesis.
pub fn recognize(model: &Recognizer, mel: &MelSpectrogram, beam: usize) -> Result<Recognition> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let mut g = Graph::new(&model.params);
    let enc = model.encode_graph(&mut g, &mel.frames)?;
    let lp = model.ctc_graph(&mut g, enc);
    let (enc, lp) = (g.value(enc).clone(), g.value(lp).clone());
    let best = model.search(&enc, &lp, beam);
    if beam == 1 {
        return Ok(best);
    }
    let greedy = model.search(&enc, &lp, 1);
    let pick_greedy = match (best.timed_out, greedy.timed_out) {
        (true, false) => true,
        (false, true) => false,
        _ => greedy.score > best.score,
    };
    Ok(if pick_greedy { greedy } else { best })
}

/// Phoneme durations in mel frames from the best CTC path of `phonemes`.
///
/// Encoded-frame counts are scaled by the subsampling factor; the rounding
/// surplus is taken from the final phoneme so the total equals the mel frame
/// count.
pub fn ctc_force_align(model: &Recognizer, mel: &MelSpectrogram, phonemes: &PhonemeSequence) -> Result<DurationSequence> {
    let labels = phonemes.tokens();
    if labels.is_empty() {
        return Err(Error::Alignment("cannot align an empty phoneme sequence".into()));
    }
    model.check_labels(labels)?;
    let frames = mel.num_frames();
    ctc::check_feasible(labels, model.config.encoded_len(frames.max(1)))?;
    let lp = model.ctc_log_probs(mel)?;
    let owners = ctc::viterbi_owners(&lp, labels, model.inventory.blank())?;
    let factor = model.config.subsample_factor;
    let mut dur = vec![0usize; labels.len()];
    for o in owners {
        dur[o] += factor;
    }
    let mut surplus = dur.iter().sum::<usize>() - frames;
    let last = dur.len() - 1;
    let take = surplus.min(dur[last] - 1);
    dur[last] -= take;
    surplus -= take;
    while surplus > 0 {
        let i = (0..dur.len()).max_by_key(|&i| (dur[i], i)).unwrap();
        if dur[i] <= 1 {
            return Err(Error::Alignment(format!(
                "{} phonemes do not fit in {frames} frames",
                labels.len()
            )));
        }
        dur[i] -= 1;
        surplus -= 1;
    }
    DurationSequence::new(dur)
}
