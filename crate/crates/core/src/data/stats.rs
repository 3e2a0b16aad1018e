//! Adjacent label-pair statistics per role pair.

use super::{Corpus, Role, Vocabularies};
use crate::error::{Error, Result};

/// Average number of `(label_t, label_t+1)` transitions per dialogue, one
/// table for each `(role_t, role_t+1)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionStats {
    pub dialogue_count: usize,
    sizes: [usize; 2],
    counts: [Vec<u64>; 4],
}

fn slot(prev: Role, next: Role) -> usize {
    prev.index() * 2 + next.index()
}

impl TransitionStats {
    pub fn count(&self, prev: Role, next: Role, from: usize, to: usize) -> u64 {
        self.counts[slot(prev, next)][from * self.sizes[next.index()] + to]
    }

    pub fn mean(&self, prev: Role, next: Role, from: usize, to: usize) -> f64 {
        self.count(prev, next, from, to) as f64 / self.dialogue_count as f64
    }

    /// `N_prev × N_next` table of per-dialogue averages.
    pub fn table(&self, prev: Role, next: Role) -> Vec<Vec<f64>> {
        let (rows, cols) = (self.sizes[prev.index()], self.sizes[next.index()]);
        (0..rows)
            .map(|i| (0..cols).map(|j| self.mean(prev, next, i, j)).collect())
            .collect()
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Heatmap-ready CSV: header row of next-role labels, one row per
    /// previous-role label.
    pub fn to_csv(&self, prev: Role, next: Role, vocabs: &Vocabularies) -> String {
        let mut s = format!("{}\\{}", prev, next);
        for n in vocabs.get(next).names() {
            s.push(',');
            s.push_str(&csv_field(n));
        }
        s.push('\n');
        for (i, row) in self.table(prev, next).into_iter().enumerate() {
            s.push_str(&csv_field(vocabs.get(prev).name(i).unwrap_or("")));
            for v in row {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn transition_stats(corpus: &Corpus) -> Result<TransitionStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("transition statistics need a nonempty corpus"));
    }
    let sizes = corpus.vocabs.sizes();
    let mut counts: [Vec<u64>; 4] = Default::default();
    for p in Role::ALL {
        for n in Role::ALL {
            counts[slot(p, n)] = vec![0; sizes[p.index()] * sizes[n.index()]];
        }
    }
    for d in &corpus.dialogues {
        for w in d.utterances.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            counts[slot(a.role, b.role)][a.label_id * sizes[b.role.index()] + b.label_id] += 1;
        }
    }
    Ok(TransitionStats {
        dialogue_count: corpus.len(),
        sizes,
        counts,
    })
}
