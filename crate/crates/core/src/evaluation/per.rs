use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error counts against a reference and the derived percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerResult {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
    pub ref_len: usize,
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub per: f64,
}

impl PerResult {
    pub fn from_counts(sub: usize, del: usize, ins: usize, ref_len: usize) -> Result<Self> {
        if ref_len == 0 {
            return Err(Error::InvalidInput("reference is empty".into()));
        }
        let pct = |c: usize| 100.0 * c as f64 / ref_len as f64;
        Ok(Self {
            sub,
            del,
            ins,
            ref_len,
            sub_rate: pct(sub),
            del_rate: pct(del),
            ins_rate: pct(ins),
            per: pct(sub + del + ins),
        })
    }

    pub fn errors(&self) -> usize {
        self.sub + self.del + self.ins
    }

    /// `Sub Del Ins PER` percentages at one decimal.
    pub fn table_row(&self) -> String {
        format!(
            "{:.1}\t{:.1}\t{:.1}\t{:.1}",
            self.sub_rate, self.del_rate, self.ins_rate, self.per
        )
    }
}

/// Minimum edit distance alignment of `hyp` against `reference` with unit
/// costs. Counts come from a single backtrace that, among equal-cost
/// moves, prefers the diagonal (match or substitution), then deletion,
/// then insertion.
pub fn compute_per<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<PerResult> {
    let (r, h) = (reference.len(), hyp.len());
    if r == 0 {
        return Err(Error::InvalidInput("reference is empty".into()));
    }
    let w = h + 1;
    let mut d = vec![0usize; (r + 1) * w];
    for j in 0..=h {
        d[j] = j;
    }
    for i in 1..=r {
        d[i * w] = i;
        for j in 1..=h {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let (mut i, mut j) = (r, h);
    let (mut sub, mut del, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(mismatch) {
                sub += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    PerResult::from_counts(sub, del, ins, r)
}

/// Pooled PER over utterances keyed by id. Returns the pooled result and
/// the per-utterance results in id order.
pub fn corpus_per<T: PartialEq>(
    hyps: &BTreeMap<String, Vec<T>>,
    refs: &BTreeMap<String, Vec<T>>,
) -> Result<(PerResult, Vec<(String, PerResult)>)> {
    let missing_hyp: Vec<&str> = refs.keys().filter(|k| !hyps.contains_key(*k)).map(String::as_str).collect();
    let missing_ref: Vec<&str> = hyps.keys().filter(|k| !refs.contains_key(*k)).map(String::as_str).collect();
    if !missing_hyp.is_empty() || !missing_ref.is_empty() {
        return Err(Error::Validation(format!(
            "id sets differ; missing hypotheses: [{}]; missing references: [{}]",
            missing_hyp.join(", "),
            missing_ref.join(", ")
        )));
    }
    if refs.is_empty() {
        return Err(Error::InvalidInput("no utterances to score".into()));
    }
    let mut rows = Vec::with_capacity(refs.len());
    let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
    for (id, reference) in refs {
        let res = compute_per(&hyps[id], reference).map_err(|e| Error::InvalidInput(format!("utterance {id}: {e}")))?;
        s += res.sub;
        d += res.del;
        i += res.ins;
        n += res.ref_len;
        rows.push((id.clone(), res));
    }
    Ok((PerResult::from_counts(s, d, i, n)?, rows))
}

pub const PER_CSV_HEADER: &str = "id,sub,del,ins,ref_len";

pub fn per_rows_csv(rows: &[(String, PerResult)]) -> String {
    let mut out = String::from(PER_CSV_HEADER);
    out.push('\n');
    for (id, r) in rows {
        out.push_str(&format!("{id},{},{},{},{}\n", r.sub, r.del, r.ins, r.ref_len));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_single_deletion() {
        let r = compute_per(&["a", "b", "c"], &["a", "b", "c"]).unwrap();
        assert_eq!((r.sub, r.del, r.ins, r.per), (0, 0, 0, 0.0));
        let r = compute_per(&["a", "c"], &["a", "b", "c"]).unwrap();
        assert_eq!((r.sub, r.del, r.ins), (0, 1, 0));
        assert_eq!(format!("{:.1}", r.per), "33.3");
        assert!(compute_per::<u8>(&[1], &[]).is_err());
    }

    #[test]
    fn ties_prefer_substitution() {
        // [a] vs [b]: sub (cost 1) beats del+ins (cost 2); [a b] vs [b a] ties
        // two subs against del+ins, the diagonal wins
        let r = compute_per(&["b", "a"], &["a", "b"]).unwrap();
        assert_eq!((r.sub, r.del, r.ins), (2, 0, 0));
    }

    #[test]
    fn pooled_corpus_rate() {
        let mut h = BTreeMap::new();
        let mut r = BTreeMap::new();
        r.insert("x".to_string(), (0..10).collect::<Vec<u8>>());
        let mut hx: Vec<u8> = (0..10).collect();
        hx[3] = 99;
        h.insert("x".to_string(), hx);
        r.insert("y".to_string(), (0..10).collect());
        h.insert("y".to_string(), (0..10).collect());
        let (pooled, rows) = corpus_per(&h, &r).unwrap();
        assert_eq!(pooled.per, 5.0);
        assert_eq!(rows.len(), 2);
        h.remove("y");
        h.insert("z".to_string(), vec![]);
        let err = corpus_per(&h, &r).unwrap_err().to_string();
        assert!(err.contains('y') && err.contains('z'), "{err}");
    }

    #[test]
    fn csv_rows() {
        let r = PerResult::from_counts(1, 0, 2, 10).unwrap();
        assert_eq!(per_rows_csv(&[("u".into(), r)]), "id,sub,del,ins,ref_len\nu,1,0,2,10\n");
    }

    proptest! {
        #[test]
        fn cost_symmetric_decomposition_swaps(
            a in proptest::collection::vec(0u8..5, 1..10),
            b in proptest::collection::vec(0u8..5, 1..10),
        ) {
            let ab = compute_per(&a, &b).unwrap();
            let ba = compute_per(&b, &a).unwrap();
            prop_assert_eq!(ab.errors(), ba.errors());
            // a as hypothesis vs b as reference: deletions and insertions trade
            // places when the roles flip; length difference is invariant
            prop_assert_eq!(ab.ins as i64 - ab.del as i64, ba.del as i64 - ba.ins as i64);
        }

        #[test]
        fn pooled_counts_are_sums(
            pairs in proptest::collection::vec(
                (proptest::collection::vec(0u8..4, 0..6), proptest::collection::vec(0u8..4, 1..6)), 1..6)
        ) {
            let mut h = BTreeMap::new();
            let mut r = BTreeMap::new();
            for (i, (x, y)) in pairs.iter().enumerate() {
                h.insert(format!("u{i}"), x.clone());
                r.insert(format!("u{i}"), y.clone());
            }
            let (pooled, rows) = corpus_per(&h, &r).unwrap();
            prop_assert_eq!(pooled.sub, rows.iter().map(|x| x.1.sub).sum::<usize>());
            prop_assert_eq!(pooled.del, rows.iter().map(|x| x.1.del).sum::<usize>());
            prop_assert_eq!(pooled.ins, rows.iter().map(|x| x.1.ins).sum::<usize>());
            prop_assert_eq!(pooled.ref_len, rows.iter().map(|x| x.1.ref_len).sum::<usize>());
        }
    }
}
