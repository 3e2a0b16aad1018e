//! Per-label precision/recall/F1, macro and support-weighted F1, confusion
//! matrices.

use serde::{Deserialize, Serialize};

use crate::data::LabelVocabulary;
use crate::error::{Error, Result};

/// Which labels enter the macro average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroDomain {
    /// Labels with nonzero gold support.
    #[default]
    GoldPresent,
    /// Labels present in gold or predictions.
    Union,
    /// Every vocabulary label.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub labels: Vec<LabelScore>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

/// `counts[g][p]`: gold `g` predicted as `p`.
pub fn confusion_matrix(gold: &[usize], pred: &[usize], n: usize) -> Result<Vec<Vec<u64>>> {
    if gold.len() != pred.len() {
        return Err(Error::shape("confusion_matrix", &[gold.len()], &[pred.len()]));
    }
    let mut m = vec![vec![0u64; n]; n];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= n || p >= n {
            return Err(Error::LabelOutOfRange {
                role: "metric".into(),
                label: g.max(p),
                size: n,
            });
        }
        m[g][p] += 1;
    }
    Ok(m)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scores from a confusion matrix; label names come from `names`.
pub fn f1_from_confusion(m: &[Vec<u64>], names: &[String], domain: MacroDomain) -> F1Report {
    let n = m.len();
    let total: u64 = m.iter().flatten().sum();
    let mut labels = Vec::with_capacity(n);
    let mut correct = 0;
    for i in 0..n {
        let tp = m[i][i];
        correct += tp;
        let support: u64 = m[i].iter().sum();
        let predicted: u64 = m.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        labels.push(LabelScore {
            label: names.get(i).cloned().unwrap_or_else(|| i.to_string()),
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    let in_domain = |s: &LabelScore| match domain {
        MacroDomain::GoldPresent => s.support > 0,
        MacroDomain::Union => s.support > 0 || s.predicted > 0,
        MacroDomain::All => true,
    };
    let chosen: Vec<f64> = labels.iter().filter(|s| in_domain(s)).map(|s| s.f1).collect();
    let macro_f1 = if chosen.is_empty() {
        0.0
    } else {
        chosen.iter().sum::<f64>() / chosen.len() as f64
    };
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        labels.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64
    };
    F1Report {
        labels,
        macro_f1,
        weighted_f1,
        accuracy: ratio(correct, total),
        total,
    }
}

pub fn f1_report(
    gold: &[usize],
    pred: &[usize],
    vocab: &LabelVocabulary,
    domain: MacroDomain,
) -> Result<F1Report> {
    let m = confusion_matrix(gold, pred, vocab.len())?;
    Ok(f1_from_confusion(&m, vocab.names(), domain))
}
