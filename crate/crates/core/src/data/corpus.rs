//! JSONL corpus and predictions files.
//!
//! One dialogue per line:
//! `{"id": str, "success": bool, "turns": [{"role": "ER"|"EE", "text": str, "label": str}]}`.
//! A predictions file has the same layout with `"pred"` in place of `"label"`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dialogue, Role, Utterance, Vocabularies};
use crate::error::{Error, Result};

/// Labels whose presence on an EE turn marks a dialogue as successful when
/// the file carries no explicit outcome.
const AGREEING_LABELS: [&str; 2] = ["agree-donation", "provide-donation-amount"];

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub vocabs: Vocabularies,
    /// Non-fatal issues found while loading, e.g. single-role dialogues.
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>, vocabs: Vocabularies) -> Self {
        Corpus {
            dialogues,
            vocabs,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    pub fn mean_turns(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.utterance_count() as f64 / self.len() as f64
    }

    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            dialogues: idx.iter().map(|&i| self.dialogues[i].clone()).collect(),
            vocabs: self.vocabs.clone(),
            warnings: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            let raw = RawDialogue {
                id: d.id.clone(),
                success: Some(d.success),
                turns: d
                    .utterances
                    .iter()
                    .map(|u| RawTurn {
                        role: u.role.as_str().to_string(),
                        text: u.text.clone(),
                        label: self.vocabs.get(u.role).name(u.label_id).unwrap_or("").to_string(),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("plain data"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    role: String,
    text: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct RawDialogue {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
    turns: Vec<RawTurn>,
}

/// Parses JSONL text. Without `fixed`, vocabularies grow in order of first
/// appearance; with it, every label must already be present.
pub fn parse_corpus(text: &str, path: &Path, fixed: Option<&Vocabularies>) -> Result<Corpus> {
    let mut vocabs = fixed.cloned().unwrap_or_else(Vocabularies::empty);
    let mut dialogues = Vec::new();
    let mut warnings = Vec::new();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDialogue =
            serde_json::from_str(line).map_err(|e| perr(lineno, e.to_string()))?;
        if raw.turns.is_empty() {
            return Err(perr(lineno, format!("dialogue {:?} has no turns", raw.id)));
        }
        let mut utterances = Vec::with_capacity(raw.turns.len());
        for (index, t) in raw.turns.into_iter().enumerate() {
            let role = Role::parse(&t.role)
                .ok_or_else(|| perr(lineno, format!("unknown role token {:?}", t.role)))?;
            let label_id = if fixed.is_some() {
                vocabs.get(role).id(&t.label).ok_or_else(|| {
                    perr(
                        lineno,
                        Error::UnknownLabel {
                            role: role.to_string(),
                            label: t.label.clone(),
                        }
                        .to_string(),
                    )
                })?
            } else {
                vocabs.get_mut(role).insert(&t.label)
            };
            utterances.push(Utterance {
                index,
                role,
                text: t.text,
                label_id,
            });
        }
        let success = raw.success.unwrap_or_else(|| {
            utterances.iter().any(|u| {
                u.role == Role::Ee
                    && vocabs
                        .ee
                        .name(u.label_id)
                        .is_some_and(|n| AGREEING_LABELS.contains(&n))
            })
        });
        for role in Role::ALL {
            if !utterances.iter().any(|u| u.role == role) {
                warnings.push(format!("line {lineno}: dialogue {:?} has no {role} turns", raw.id));
            }
        }
        dialogues.push(Dialogue {
            id: raw.id,
            utterances,
            success,
        });
    }
    Ok(Corpus {
        dialogues,
        vocabs,
        warnings,
    })
}

pub fn load_corpus(path: &Path, fixed: Option<&Vocabularies>) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, fixed)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    fs::write(path, corpus.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// Predicted label ids per dialogue, aligned with a gold corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predictions {
    pub entries: Vec<(String, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
struct RawPredTurn {
    role: String,
    text: String,
    pred: String,
}

#[derive(Serialize, Deserialize)]
struct RawPredDialogue {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
    turns: Vec<RawPredTurn>,
}

pub fn write_predictions(path: &Path, gold: &Corpus, preds: &Predictions) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (d, (id, labels)) in gold.dialogues.iter().zip(&preds.entries) {
        debug_assert_eq!(&d.id, id);
        let raw = RawPredDialogue {
            id: id.clone(),
            success: Some(d.success),
            turns: d
                .utterances
                .iter()
                .zip(labels)
                .map(|(u, &p)| RawPredTurn {
                    role: u.role.as_str().into(),
                    text: u.text.clone(),
                    pred: gold.vocabs.get(u.role).name(p).unwrap_or("").into(),
                })
                .collect(),
        };
        writeln!(f, "{}", serde_json::to_string(&raw)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a predictions file, resolving labels through the gold vocabularies.
pub fn load_predictions(path: &Path, vocabs: &Vocabularies) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let raw: RawPredDialogue = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        let mut labels = Vec::with_capacity(raw.turns.len());
        for t in raw.turns {
            let role =
                Role::parse(&t.role).ok_or_else(|| perr(format!("unknown role token {:?}", t.role)))?;
            labels.push(vocabs.get(role).id(&t.pred).ok_or_else(|| {
                perr(format!("unknown {role} label {:?}", t.pred))
            })?);
        }
        entries.push((raw.id, labels));
    }
    Ok(Predictions { entries })
}
