//! Begin/Inside relabelling of strategy runs.
//!
//! An utterance is `I-` when the utterance right before it has the same
//! `(role, label)` pair, `B-` otherwise. Role vocabularies double: label `k`
//! becomes `B-k` at id `2k` and `I-k` at id `2k + 1`.

use super::{Corpus, Dialogue, LabelVocabulary, Role, Vocabularies};
use crate::error::{Error, Result};

/// `true` where the utterance continues the previous one's `(role, label)`.
pub fn inside_flags(d: &Dialogue) -> Vec<bool> {
    let mut out = Vec::with_capacity(d.len());
    let mut prev: Option<(Role, usize)> = None;
    for u in &d.utterances {
        let key = (u.role, u.label_id);
        out.push(prev == Some(key));
        prev = Some(key);
    }
    out
}

fn bi_vocab(v: &LabelVocabulary) -> LabelVocabulary {
    let names = v
        .names()
        .iter()
        .flat_map(|n| [format!("B-{n}"), format!("I-{n}")]);
    LabelVocabulary::from_names(v.role(), names).expect("prefixing keeps names unique")
}

pub fn bi_transform(corpus: &Corpus) -> Corpus {
    let vocabs = Vocabularies {
        er: bi_vocab(&corpus.vocabs.er),
        ee: bi_vocab(&corpus.vocabs.ee),
    };
    let dialogues = corpus
        .dialogues
        .iter()
        .map(|d| {
            let flags = inside_flags(d);
            let mut d = d.clone();
            for (u, inside) in d.utterances.iter_mut().zip(flags) {
                u.label_id = 2 * u.label_id + usize::from(inside);
            }
            d
        })
        .collect();
    Corpus::new(dialogues, vocabs)
}

/// Drops a `B-` or `I-` prefix.
pub fn strip_prefix(label: &str) -> Option<&str> {
    label.strip_prefix("B-").or_else(|| label.strip_prefix("I-"))
}

/// Inverse of [`bi_transform`]. Works on any vocabulary whose labels all
/// carry a prefix, so a BI corpus read back from disk strips too.
pub fn strip_bi(corpus: &Corpus) -> Result<Corpus> {
    let mut vocabs = Vocabularies::empty();
    let mut remap: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for role in Role::ALL {
        for name in corpus.vocabs.get(role).names() {
            let base = strip_prefix(name).ok_or_else(|| {
                Error::Config(format!("{role} label {name:?} has no B-/I- prefix"))
            })?;
            remap[role.index()].push(vocabs.get_mut(role).insert(base));
        }
    }
    let dialogues = corpus
        .dialogues
        .iter()
        .map(|d| {
            let mut d = d.clone();
            for u in &mut d.utterances {
                u.label_id = remap[u.role.index()][u.label_id];
            }
            d
        })
        .collect();
    Ok(Corpus::new(dialogues, vocabs))
}
