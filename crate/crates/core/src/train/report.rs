//! Evaluation and comparison reports: JSON, aligned text and CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::{Evaluation, FoldOutcome};
use super::TrainConfig;
use crate::data::{csv_field, Corpus, Role};
use crate::error::{Error, Result};
use crate::metrics::F1Report;

/// Mean and sample standard deviation over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MetricSummary { mean, std, values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleMetrics {
    pub macro_f1: MetricSummary,
    pub weighted_f1: MetricSummary,
    pub accuracy: MetricSummary,
    pub labels: Vec<String>,
    /// Per-label F1 averaged like the headline numbers.
    pub label_f1: Vec<f64>,
    /// Test-fold confusion counts summed over every completed run.
    pub confusion: Vec<Vec<u64>>,
}

impl RoleMetrics {
    pub fn from_report(r: &F1Report, confusion: Vec<Vec<u64>>) -> Self {
        RoleMetrics {
            macro_f1: MetricSummary::of(vec![r.macro_f1]),
            weighted_f1: MetricSummary::of(vec![r.weighted_f1]),
            accuracy: MetricSummary::of(vec![r.accuracy]),
            labels: r.labels.iter().map(|l| l.label.clone()).collect(),
            label_f1: r.labels.iter().map(|l| l.f1).collect(),
            confusion,
        }
    }

    /// Heatmap-ready CSV: rows are gold labels, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("gold\\pred");
        for l in &self.labels {
            s.push(',');
            s.push_str(&csv_field(l));
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            s.push_str(&csv_field(l));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub display_name: String,
    pub bi: bool,
    pub folds: usize,
    pub repeats: usize,
    /// Training runs attempted and completed.
    pub runs: usize,
    pub completed: usize,
    pub diverged: usize,
    pub diverged_runs: Vec<String>,
    pub er: RoleMetrics,
    pub ee: RoleMetrics,
    pub success_accuracy: Option<MetricSummary>,
    pub config: Option<TrainConfig>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl EvalReport {
    /// Scores for a single prediction set.
    pub fn single(name: &str, eval: &Evaluation) -> Self {
        EvalReport {
            variant: name.to_string(),
            display_name: name.to_string(),
            bi: false,
            folds: 1,
            repeats: 1,
            runs: 1,
            completed: 1,
            diverged: 0,
            diverged_runs: Vec::new(),
            er: RoleMetrics::from_report(&eval.er, eval.confusion[0].clone()),
            ee: RoleMetrics::from_report(&eval.ee, eval.confusion[1].clone()),
            success_accuracy: eval.success_accuracy.map(|a| MetricSummary::of(vec![a])),
            config: None,
        }
    }

    /// Per repeat, metrics are averaged over that repeat's completed folds;
    /// the summaries then run over repeats. Diverged runs are left out and
    /// counted.
    pub fn aggregate(cfg: &TrainConfig, corpus: &Corpus, outcomes: &[FoldOutcome]) -> Result<Self> {
        let diverged_runs: Vec<String> = outcomes
            .iter()
            .filter_map(|o| {
                o.diverged
                    .as_ref()
                    .map(|m| format!("repeat {} fold {}: {m}", o.repeat, o.fold))
            })
            .collect();
        let mut per_repeat: Vec<Vec<&Evaluation>> = vec![Vec::new(); cfg.repeats];
        for o in outcomes {
            if let Some(e) = &o.test {
                per_repeat[o.repeat].push(e);
            }
        }
        per_repeat.retain(|v| !v.is_empty());
        if per_repeat.is_empty() {
            return Err(Error::Diverged(format!(
                "all {} runs of {} diverged",
                outcomes.len(),
                cfg.variant.id()
            )));
        }
        let role_metrics = |role: Role| -> RoleMetrics {
            let over = |f: &dyn Fn(&F1Report) -> f64| -> MetricSummary {
                MetricSummary::of(
                    per_repeat
                        .iter()
                        .map(|evals| mean(&evals.iter().map(|e| f(e.role(role))).collect::<Vec<_>>()))
                        .collect(),
                )
            };
            let n = corpus.vocabs.get(role).len();
            let label_f1 = (0..n)
                .map(|k| over(&|r: &F1Report| r.labels[k].f1).mean)
                .collect();
            let mut confusion = vec![vec![0u64; n]; n];
            for e in per_repeat.iter().flatten() {
                for (dst, src) in confusion.iter_mut().zip(&e.confusion[role.index()]) {
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
            }
            RoleMetrics {
                macro_f1: over(&|r| r.macro_f1),
                weighted_f1: over(&|r| r.weighted_f1),
                accuracy: over(&|r| r.accuracy),
                labels: corpus.vocabs.get(role).names().to_vec(),
                label_f1,
                confusion,
            }
        };
        let success_accuracy = if per_repeat.iter().flatten().all(|e| e.success_accuracy.is_some()) {
            Some(MetricSummary::of(
                per_repeat
                    .iter()
                    .map(|evals| {
                        mean(&evals.iter().map(|e| e.success_accuracy.unwrap()).collect::<Vec<_>>())
                    })
                    .collect(),
            ))
        } else {
            None
        };
        Ok(EvalReport {
            variant: cfg.variant.id().to_string(),
            display_name: cfg.variant.display_name().to_string(),
            bi: cfg.bi,
            folds: cfg.folds,
            repeats: cfg.repeats,
            runs: outcomes.len(),
            completed: outcomes.iter().filter(|o| o.test.is_some()).count(),
            diverged: diverged_runs.len(),
            diverged_runs,
            er: role_metrics(Role::Er),
            ee: role_metrics(Role::Ee),
            success_accuracy,
            config: Some(cfg.clone()),
        })
    }

    pub fn role(&self, role: Role) -> &RoleMetrics {
        match role {
            Role::Er => &self.er,
            Role::Ee => &self.ee,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({} folds x {} repeats, {}/{} runs completed{})",
            self.display_name,
            self.folds,
            self.repeats,
            self.completed,
            self.runs,
            if self.diverged > 0 { format!(", {} diverged", self.diverged) } else { String::new() }
        );
        for role in Role::ALL {
            let m = self.role(role);
            let _ = writeln!(
                s,
                "{role}  macro F1 {}  weighted F1 {}  accuracy {}",
                pct(&m.macro_f1),
                pct(&m.weighted_f1),
                pct(&m.accuracy)
            );
            let width = m.labels.iter().map(String::len).max().unwrap_or(0);
            for (l, f) in m.labels.iter().zip(&m.label_f1) {
                let _ = writeln!(s, "  {l:<width$}  {:5.1}", 100.0 * f);
            }
        }
        if let Some(a) = &self.success_accuracy {
            let _ = writeln!(s, "outcome accuracy {}", pct(a));
        }
        s
    }
}

fn pct(m: &MetricSummary) -> String {
    if m.values.len() > 1 {
        format!("{:.1}±{:.1}", 100.0 * m.mean, 100.0 * m.std)
    } else {
        format!("{:.1}", 100.0 * m.mean)
    }
}

/// One row per variant; columns are W-Avg and macro F1 per role, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub bi: bool,
    pub rows: Vec<EvalReport>,
}

const GRID_COLUMNS: [&str; 4] = ["ER W-Avg F1", "ER Macro F1", "EE W-Avg F1", "EE Macro F1"];

impl GridReport {
    pub fn row(&self, variant: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    fn cells(r: &EvalReport) -> [&MetricSummary; 4] {
        [&r.er.weighted_f1, &r.er.macro_f1, &r.ee.weighted_f1, &r.ee.macro_f1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.display_name.chars().count())
            .chain(["Model".len()])
            .max()
            .unwrap_or(5);
        let body: Vec<[String; 4]> = self.rows.iter().map(|r| Self::cells(r).map(pct)).collect();
        let col_w: Vec<usize> = (0..4)
            .map(|c| {
                body.iter()
                    .map(|b| b[c].chars().count())
                    .chain([GRID_COLUMNS[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = String::new();
        if self.bi {
            s.push_str("BI-scheme labels\n");
        }
        let _ = write!(s, "{:<name_w$}", "Model");
        for (h, w) in GRID_COLUMNS.iter().zip(&col_w) {
            let _ = write!(s, "  {h:>w$}");
        }
        s.push('\n');
        let _ = writeln!(s, "{}", "-".repeat(name_w + col_w.iter().map(|w| w + 2).sum::<usize>()));
        for (r, b) in self.rows.iter().zip(&body) {
            let pad = name_w - r.display_name.chars().count();
            let _ = write!(s, "{}{}", r.display_name, " ".repeat(pad));
            for (cell, w) in b.iter().zip(&col_w) {
                let pad = w - cell.chars().count();
                let _ = write!(s, "  {}{cell}", " ".repeat(pad));
            }
            if r.diverged > 0 {
                let _ = write!(s, "  ({} diverged)", r.diverged);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,er_weighted_f1,er_macro_f1,ee_weighted_f1,ee_macro_f1,\
             er_weighted_f1_std,er_macro_f1_std,ee_weighted_f1_std,ee_macro_f1_std,completed,diverged\n",
        );
        for r in &self.rows {
            let c = Self::cells(r);
            s.push_str(&csv_field(&r.variant));
            for m in c {
                let _ = write!(s, ",{:?}", m.mean);
            }
            for m in c {
                let _ = write!(s, ",{:?}", m.std);
            }
            let _ = writeln!(s, ",{},{}", r.completed, r.diverged);
        }
        s
    }
}
