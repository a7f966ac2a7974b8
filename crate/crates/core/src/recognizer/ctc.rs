//! CTC lattice algorithms over per-frame log-probabilities (`T × V`).

use crate::error::{Error, Result};
use crate::nn::Mat;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum frame count for a label sequence: one frame per label plus a
/// separating blank between identical neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn check_feasible(labels: &[usize], frames: usize) -> Result<()> {
    if min_frames(labels) > frames {
        return Err(Error::InfeasibleAlignment {
            labels: labels.len(),
            frames,
        });
    }
    Ok(())
}

fn extended(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Negative log-likelihood of `labels` and its gradient with respect to every
/// entry of `log_probs` (the negated state occupancy).
pub fn ctc_loss(log_probs: &Mat, labels: &[usize], blank: usize) -> Result<(f64, Mat)> {
    let (t_len, _) = log_probs.dim();
    check_feasible(labels, t_len)?;
    let ext = extended(labels, blank);
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let lp = |t: usize, s: usize| log_probs[[t, ext[s]]];

    let mut alpha = vec![vec![ninf; s_len]; t_len];
    alpha[0][0] = lp(0, 0);
    if s_len > 1 {
        alpha[0][1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if can_skip(&ext, s, blank) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if a == ninf { ninf } else { a + lp(t, s) };
        }
    }
    let mut beta = vec![vec![ninf; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s];
            if s + 1 < s_len {
                b = log_add(b, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && can_skip(&ext, s + 2, blank) {
                b = log_add(b, beta[t + 1][s + 2]);
            }
            beta[t][s] = if b == ninf { ninf } else { b + lp(t, s) };
        }
    }
    let mut log_p = alpha[t_len - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[t_len - 1][s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::InfeasibleAlignment {
            labels: labels.len(),
            frames: t_len,
        });
    }
    let mut grad = Mat::zeros(log_probs.dim());
    for t in 0..t_len {
        for s in 0..s_len {
            let occ = alpha[t][s] + beta[t][s] - lp(t, s) - log_p;
            if occ > ninf {
                grad[[t, ext[s]]] -= occ.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Incremental CTC prefix scorer for joint CTC/attention decoding.
pub struct CtcPrefixScorer<'a> {
    log_probs: &'a Mat,
    blank: usize,
}

/// Forward variables of one prefix: probability of the prefix ending at
/// frame `t` in a label (`non_blank`) or a blank (`blank`).
#[derive(Clone, Debug)]
pub struct PrefixState {
    non_blank: Vec<f64>,
    blank: Vec<f64>,
    last: Option<usize>,
    /// Log probability of any continuation starting with this prefix.
    pub prefix_score: f64,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_probs: &'a Mat, blank: usize) -> Self {
        Self { log_probs, blank }
    }

    pub fn initial(&self) -> PrefixState {
        let t_len = self.log_probs.nrows();
        let mut blank = vec![0.0; t_len];
        let mut acc = 0.0;
        for (t, b) in blank.iter_mut().enumerate() {
            acc += self.log_probs[[t, self.blank]];
            *b = acc;
        }
        PrefixState {
            non_blank: vec![f64::NEG_INFINITY; t_len],
            blank,
            last: None,
            prefix_score: 0.0,
        }
    }

    /// Log probability that the full output equals exactly this prefix.
    pub fn final_score(&self, state: &PrefixState) -> f64 {
        let t = self.log_probs.nrows() - 1;
        log_add(state.non_blank[t], state.blank[t])
    }

    pub fn extend(&self, state: &PrefixState, c: usize) -> PrefixState {
        let lp = self.log_probs;
        let t_len = lp.nrows();
        let ninf = f64::NEG_INFINITY;
        let mut non_blank = vec![ninf; t_len];
        let mut blank = vec![ninf; t_len];
        if state.last.is_none() {
            non_blank[0] = lp[[0, c]];
        }
        let phi = |t: usize| {
            if state.last == Some(c) {
                state.blank[t]
            } else {
                log_add(state.blank[t], state.non_blank[t])
            }
        };
        let mut psi = non_blank[0];
        for t in 1..t_len {
            let p = phi(t - 1);
            non_blank[t] = log_add(non_blank[t - 1], p) + lp[[t, c]];
            blank[t] = log_add(blank[t - 1], non_blank[t - 1]) + lp[[t, self.blank]];
            psi = log_add(psi, p + lp[[t, c]]);
        }
        PrefixState {
            non_blank,
            blank,
            last: Some(c),
            prefix_score: psi,
        }
    }
}

/// Best single CTC path through the lattice of `labels`; returns, for every
/// frame, the index of the label that owns it. Blank frames belong to the
/// preceding label; leading blanks belong to the first.
pub fn viterbi_owners(log_probs: &Mat, labels: &[usize], blank: usize) -> Result<Vec<usize>> {
    let t_len = log_probs.nrows();
    if labels.is_empty() {
        return Err(Error::Alignment("cannot align an empty label sequence".into()));
    }
    check_feasible(labels, t_len)?;
    let ext = extended(labels, blank);
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut score = vec![vec![ninf; s_len]; t_len];
    let mut back = vec![vec![0usize; s_len]; t_len];
    score[0][0] = log_probs[[0, ext[0]]];
    score[0][1] = log_probs[[0, ext[1]]];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut best = (score[t - 1][s], s);
            if s >= 1 && score[t - 1][s - 1] > best.0 {
                best = (score[t - 1][s - 1], s - 1);
            }
            if can_skip(&ext, s, blank) && score[t - 1][s - 2] > best.0 {
                best = (score[t - 1][s - 2], s - 2);
            }
            if best.0 > ninf {
                score[t][s] = best.0 + log_probs[[t, ext[s]]];
                back[t][s] = best.1;
            }
        }
    }
    let last = t_len - 1;
    let mut s = if score[last][s_len - 1] >= score[last][s_len - 2] {
        s_len - 1
    } else {
        s_len - 2
    };
    let mut states = vec![0usize; t_len];
    for t in (0..t_len).rev() {
        states[t] = s;
        s = back[t][s];
    }
    Ok(states.into_iter().map(|s| if s == 0 { 0 } else { (s - 1) / 2 }).collect())
}

/// Log score of one explicit CTC path (per-frame token choices).
pub fn path_score(log_probs: &Mat, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &k)| log_probs[[t, k]]).sum()
}
