//! Repeated k-fold cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{EvalReport, GridReport};
use super::{train_model, TrainConfig};
use crate::autodiff::ParamStore;
use crate::data::{bi_transform, carve_validation, make_folds, Corpus, FeatureStore, Role};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, f1_from_confusion, F1Report, MacroDomain};
use crate::model::{snapshot_to_bytes, Model};

/// Scores of one trained model on a set of dialogues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub er: F1Report,
    pub ee: F1Report,
    /// `confusion[role][gold][pred]`.
    pub confusion: [Vec<Vec<u64>>; 2],
    /// Outcome accuracy at threshold 0.5, when the model has a success head.
    pub success_accuracy: Option<f64>,
}

impl Evaluation {
    pub fn role(&self, role: Role) -> &F1Report {
        match role {
            Role::Er => &self.er,
            Role::Ee => &self.ee,
        }
    }
}

/// Decodes every dialogue in `idx` and scores per role.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    corpus: &Corpus,
    features: &FeatureStore,
    idx: &[usize],
    domain: MacroDomain,
) -> Result<Evaluation> {
    let mut gold: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut pred: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut hits = 0usize;
    let mut judged = 0usize;
    for &i in idx {
        let d = &corpus.dialogues[i];
        let f = features
            .get(&d.id)
            .ok_or_else(|| Error::Features(format!("no features for dialogue {:?}", d.id)))?;
        let roles = d.roles();
        let p = model.predict(store, &roles, f)?;
        for (u, &y) in d.utterances.iter().zip(&p) {
            gold[u.role.index()].push(u.label_id);
            pred[u.role.index()].push(y);
        }
        if let Some(prob) = model.success_probability(store, &roles, f)? {
            judged += 1;
            if (prob > 0.5) == d.success {
                hits += 1;
            }
        }
    }
    let mut confusion: [Vec<Vec<u64>>; 2] = [Vec::new(), Vec::new()];
    let mut reports = Vec::with_capacity(2);
    for r in Role::ALL {
        let v = corpus.vocabs.get(r);
        let m = confusion_matrix(&gold[r.index()], &pred[r.index()], v.len())?;
        reports.push(f1_from_confusion(&m, v.names(), domain));
        confusion[r.index()] = m;
    }
    let ee = reports.pop().expect("two roles");
    let er = reports.pop().expect("two roles");
    Ok(Evaluation {
        er,
        ee,
        confusion,
        success_accuracy: (judged > 0).then(|| hits as f64 / judged as f64),
    })
}

/// Result of one (repeat, fold) training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// `None` when training diverged.
    pub test: Option<Evaluation>,
    /// Scores on the carved validation split, if any.
    pub validation: Option<Evaluation>,
    pub epoch_losses: Vec<f64>,
    pub diverged: Option<String>,
}

/// Everything produced by [`run_variant`].
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub report: EvalReport,
    pub outcomes: Vec<FoldOutcome>,
    /// Snapshot of the repeat 0, fold 0 model unless that run diverged.
    pub snapshot: Option<Vec<u8>>,
}

fn run_one(
    cfg: &TrainConfig,
    corpus: &Corpus,
    features: &FeatureStore,
    repeat: usize,
    fold: usize,
    train: &[usize],
    test: &[usize],
) -> Result<(FoldOutcome, Option<Vec<u8>>)> {
    let seed = cfg.seed.wrapping_add(repeat as u64);
    let (fit, val) = if cfg.validation_fraction > 0.0 && train.len() >= 2 {
        carve_validation(train, cfg.validation_fraction, seed.wrapping_add(fold as u64))
    } else {
        (train.to_vec(), Vec::new())
    };
    let run_seed = seed.wrapping_mul(1_000_003).wrapping_add(fold as u64);
    let mut outcome = FoldOutcome {
        repeat,
        fold,
        seed: run_seed,
        train_size: fit.len(),
        test_size: test.len(),
        test: None,
        validation: None,
        epoch_losses: Vec::new(),
        diverged: None,
    };
    match train_model(cfg, corpus, features, &fit, run_seed) {
        Ok(t) => {
            outcome.test = Some(evaluate(&t.model, &t.store, corpus, features, test, cfg.macro_domain)?);
            if !val.is_empty() {
                outcome.validation =
                    Some(evaluate(&t.model, &t.store, corpus, features, &val, cfg.macro_domain)?);
            }
            outcome.epoch_losses = t.epoch_losses;
            let snap = if repeat == 0 && fold == 0 {
                Some(snapshot_to_bytes(t.model.config(), &t.store)?)
            } else {
                None
            };
            Ok((outcome, snap))
        }
        Err(Error::Diverged(msg)) => {
            outcome.diverged = Some(msg);
            Ok((outcome, None))
        }
        Err(e) => Err(e),
    }
}

/// `cfg.repeats` × `cfg.folds` training runs. Repeat `r` reshuffles the folds
/// with seed `cfg.seed + r`. Runs are independent and execute in parallel.
pub fn run_variant(cfg: &TrainConfig, corpus: &Corpus, features: &FeatureStore) -> Result<VariantRun> {
    cfg.validate()?;
    features.validate(corpus)?;
    let bi;
    let corpus = if cfg.bi {
        bi = bi_transform(corpus);
        &bi
    } else {
        corpus
    };
    let mut jobs = Vec::with_capacity(cfg.repeats * cfg.folds);
    for r in 0..cfg.repeats {
        let folds = make_folds(corpus.len(), cfg.folds, cfg.seed.wrapping_add(r as u64))?;
        for (f, fold) in folds.into_iter().enumerate() {
            jobs.push((r, f, fold));
        }
    }
    let results: Vec<Result<(FoldOutcome, Option<Vec<u8>>)>> = jobs
        .par_iter()
        .map(|(r, f, fold)| run_one(cfg, corpus, features, *r, *f, &fold.train, &fold.test))
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut snapshot = None;
    for res in results {
        let (o, snap) = res?;
        if snapshot.is_none() {
            snapshot = snap;
        }
        outcomes.push(o);
    }
    let report = EvalReport::aggregate(cfg, corpus, &outcomes)?;
    Ok(VariantRun {
        report,
        outcomes,
        snapshot,
    })
}

/// Runs each configuration in turn and collects one row per variant.
pub fn run_grid(cfgs: &[TrainConfig], corpus: &Corpus, features: &FeatureStore) -> Result<GridReport> {
    if cfgs.is_empty() {
        return Err(Error::EmptyInput("grid has no configurations"));
    }
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        rows.push(run_variant(cfg, corpus, features)?.report);
    }
    Ok(GridReport {
        bi: cfgs[0].bi,
        rows,
    })
}
