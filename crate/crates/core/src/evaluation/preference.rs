use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NO_PREFERENCE: &str = "NP";

/// One answered trial expressed in system identities (slot order already
/// undone). `chosen` is `None` for no preference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceVote {
    pub test_id: String,
    pub systems: [String; 2],
    pub chosen: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionShare {
    pub option: String,
    pub count: usize,
    pub pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub test_id: String,
    pub trials: usize,
    /// Systems in name order followed by `NP`.
    pub options: Vec<OptionShare>,
}

impl PreferenceSummary {
    pub fn share(&self, option: &str) -> Option<&OptionShare> {
        self.options.iter().find(|o| o.option == option)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("option,count,pct\n");
        for o in &self.options {
            out.push_str(&format!("{},{},{:.2}\n", o.option, o.count, o.pct));
        }
        out
    }
}

pub fn aggregate_preferences(votes: &[PreferenceVote]) -> Result<PreferenceSummary> {
    let first = votes
        .first()
        .ok_or_else(|| Error::InvalidInput("no responses to aggregate".into()))?;
    if let Some(v) = votes.iter().find(|v| v.test_id != first.test_id) {
        return Err(Error::InvalidInput(format!(
            "responses mix tests {} and {}",
            first.test_id, v.test_id
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut np = 0;
    for v in votes {
        for s in &v.systems {
            counts.entry(s.as_str()).or_insert(0);
        }
        match &v.chosen {
            Some(c) if v.systems.contains(c) => *counts.get_mut(c.as_str()).unwrap() += 1,
            Some(c) => {
                return Err(Error::InvalidInput(format!(
                    "choice {c} is not one of the compared systems"
                )))
            }
            None => np += 1,
        }
    }
    let n = votes.len();
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    let mut options: Vec<OptionShare> = counts
        .into_iter()
        .map(|(s, c)| OptionShare {
            option: s.to_string(),
            count: c,
            pct: pct(c),
        })
        .collect();
    options.push(OptionShare {
        option: NO_PREFERENCE.to_string(),
        count: np,
        pct: pct(np),
    });
    Ok(PreferenceSummary {
        test_id: first.test_id.clone(),
        trials: n,
        options,
    })
}
