//! Dialogues, label vocabularies and the corpus-level transforms.

mod bi;
mod corpus;
mod features;
mod folds;
mod stats;
mod synth;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bi::{bi_transform, inside_flags, strip_bi, strip_prefix};
pub use corpus::{
    load_corpus, load_predictions, parse_corpus, write_corpus, write_predictions, Corpus,
    Predictions,
};
pub use features::{synth_features, FeatureStore, SynthFeatures, FEATURE_MAGIC, FEATURE_VERSION};
pub use folds::{carve_validation, make_folds, Fold};
pub use stats::{transition_stats, TransitionStats};
pub(crate) use stats::csv_field;
pub use synth::{synth_corpus, synth_corpus_with, SynthCorpus};
pub use vocab::{LabelVocabulary, Vocabularies};

/// Dialogue role: persuader (ER) or persuadee (EE).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "EE")]
    Ee,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Er, Role::Ee];

    pub fn index(self) -> usize {
        match self {
            Role::Er => 0,
            Role::Ee => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Er => "ER",
            Role::Ee => "EE",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "ER" => Some(Role::Er),
            "EE" => Some(Role::Ee),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub label_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub success: bool,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.utterances.iter().map(|u| u.role).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label_id).collect()
    }
}

/// Positions (original indices) of each role, ER first.
pub fn role_positions(roles: &[Role]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, r) in roles.iter().enumerate() {
        out[r.index()].push(i);
    }
    out
}

/// Order-preserving partition of a dialogue by speaker. Each element keeps
/// its original position.
pub fn split_by_speaker(d: &Dialogue) -> (Vec<&Utterance>, Vec<&Utterance>) {
    d.utterances.iter().partition(|u| u.role == Role::Er)
}

/// Inverse of a speaker split: places every element at its stored position.
/// The two index sets must be disjoint and cover `0..n` exactly.
pub fn merge_by_position<X>(er: Vec<(usize, X)>, ee: Vec<(usize, X)>) -> Result<Vec<X>> {
    let n = er.len() + ee.len();
    let mut slots: Vec<Option<X>> = (0..n).map(|_| None).collect();
    for (pos, x) in er.into_iter().chain(ee) {
        if pos >= n {
            return Err(Error::Partition(format!("position {pos} outside 0..{n}")));
        }
        if slots[pos].is_some() {
            return Err(Error::Partition(format!("position {pos} appears twice")));
        }
        slots[pos] = Some(x);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Partition(format!("position {i} missing"))))
        .collect()
}
