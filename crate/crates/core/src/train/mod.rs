//! Composite-loss training, the cross-validation protocol and its reports.

mod cv;
mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::Ctx;
use crate::autodiff::{Adam, ParamStore, Tape, Tensor};
use crate::data::{Corpus, FeatureStore};
use crate::error::{Error, Result};
use crate::metrics::MacroDomain;
use crate::model::{Model, ModelConfig, Variant};

pub use cv::{evaluate, run_grid, run_variant, Evaluation, FoldOutcome, VariantRun};
pub use report::{EvalReport, GridReport, MetricSummary, RoleMetrics};

/// Hyper-parameters for one variant. Unset fields fall back to the
/// defaults of the variant's family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Defaults to 1e-5 for transformer variants, 1e-4 otherwise.
    pub learning_rate: Option<f64>,
    pub l2_weight: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub rnn_layers: usize,
    pub heads: usize,
    pub use_positional: bool,
    pub use_residual_norm: bool,
    pub start_stop: bool,
    /// Defaults to on for variants with speaker-specific encoders.
    pub success_head: Option<bool>,
    pub mlp_hidden: Option<usize>,
    pub validation_fraction: f64,
    pub macro_domain: MacroDomain,
    /// Relabel the corpus with B-/I- prefixes before training.
    pub bi: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::TransformersExtcrf,
            learning_rate: None,
            l2_weight: 1e-5,
            dropout: 0.1,
            epochs: 65,
            batch_size: 16,
            folds: 5,
            repeats: 5,
            seed: 0,
            hidden: 1024,
            layers: 2,
            rnn_layers: 1,
            heads: 2,
            use_positional: true,
            use_residual_norm: true,
            start_stop: false,
            success_head: None,
            mlp_hidden: None,
            validation_fraction: 0.1,
            macro_domain: MacroDomain::GoldPresent,
            bi: false,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainConfig {
            variant,
            ..TrainConfig::default()
        }
    }

    pub fn lr(&self) -> f64 {
        self.learning_rate
            .unwrap_or(if self.variant.is_transformer() { 1e-5 } else { 1e-4 })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lr().is_nan() || self.lr() <= 0.0 {
            return bad(format!("learning rate {} must be positive", self.lr()));
        }
        if self.l2_weight < 0.0 {
            return bad(format!("l2 weight {} is negative", self.l2_weight));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.validation_fraction));
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize, vocab_sizes: [usize; 2]) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            rnn_layers: self.rnn_layers,
            heads: self.heads,
            dropout: self.dropout,
            use_positional: self.use_positional,
            use_residual_norm: self.use_residual_norm,
            start_stop: self.start_stop,
            success_head: self
                .success_head
                .unwrap_or(self.variant.speaker_kind().is_some()),
            mlp_hidden: self.mlp_hidden,
            ..ModelConfig::new(self.variant, feature_dim, vocab_sizes)
        }
    }
}

/// One dialogue's unnormalized loss and its nonzero parameter gradients.
type DialogueGrad = (f64, Vec<(usize, Tensor<f32>)>);

/// Loss value and gradient of [`crate::model::total_loss`] computed with one
/// tape per dialogue. Dialogues run in parallel; gradients are summed in
/// batch order so the result does not depend on the thread count.
pub fn batch_gradients(
    model: &Model,
    store: &ParamStore<f32>,
    batch: &[(&crate::data::Dialogue, &Tensor<f32>)],
    lambda: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch has no dialogues"));
    }
    let n_utt: usize = batch.iter().map(|(d, _)| d.len()).sum();
    let mut grads: Vec<Tensor<f32>> = store
        .iter()
        .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
        .collect();
    let mut data_loss = 0.0f64;
    let wave = rayon::current_num_threads().max(1);
    for (w, chunk) in batch.chunks(wave).enumerate() {
        let results: Vec<Result<DialogueGrad>> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, (d, f))| {
                let mut ctx = match dropout_seeds {
                    Some(s) => Ctx::train(s[w * wave + i]),
                    None => Ctx::eval(),
                };
                let mut tape = Tape::new();
                let l = model.dialogue_loss(&mut tape, store, d, f, &mut ctx)?;
                let value = tape.value(l).item() as f64;
                tape.backward(l)?;
                let g = tape
                    .param_grads()
                    .map(|(id, g)| (id.index(), g.clone()))
                    .collect();
                Ok((value, g))
            })
            .collect();
        for r in results {
            let (value, g) = r?;
            data_loss += value;
            for (i, t) in g {
                grads[i].data_mut().iter_mut().zip(t.data()).for_each(|(a, &b)| *a += b);
            }
        }
    }
    let inv = 1.0 / n_utt as f32;
    let two_lambda = (2.0 * lambda) as f32;
    for ((_, p), g) in store.iter().zip(grads.iter_mut()) {
        for (gi, &w) in g.data_mut().iter_mut().zip(p.value.data()) {
            *gi = *gi * inv + two_lambda * w;
        }
    }
    let loss = data_loss / n_utt as f64 + lambda * store.sum_squares() as f64;
    Ok((loss, grads))
}

/// A model fitted on one training split.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore<f32>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a fresh model on `train` (indices into `corpus`) for
/// `cfg.epochs` epochs. A non-finite loss aborts with [`Error::Diverged`].
pub fn train_model(
    cfg: &TrainConfig,
    corpus: &Corpus,
    features: &FeatureStore,
    train: &[usize],
    seed: u64,
) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty"));
    }
    let mcfg = cfg.model_config(features.dim(), corpus.vocabs.sizes());
    let mut store = ParamStore::<f32>::new();
    let model = Model::new(&mut store, &mcfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let examples: Vec<(&crate::data::Dialogue, &Tensor<f32>)> = train
        .iter()
        .map(|&i| {
            let d = &corpus.dialogues[i];
            features
                .get(&d.id)
                .map(|f| (d, f))
                .ok_or_else(|| Error::Features(format!("no features for dialogue {:?}", d.id)))
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(cfg.lr());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let use_dropout = cfg.dropout > 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 0)));
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = idx.iter().map(|&i| examples[i]).collect();
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| mix(seed, epoch as u64 * 1_000_003 + b as u64, i as u64 + 1))
                .collect();
            let (loss, grads) =
                batch_gradients(&model, &store, &batch, cfg.l2_weight, use_dropout.then_some(&seeds[..]))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss at epoch {} batch {b}", epoch + 1)));
            }
            let ids: Vec<_> = store.ids().collect();
            for (id, g) in ids.into_iter().zip(grads) {
                store.set_grad(id, g);
            }
            adam.step(&mut store)?;
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(Trained {
        model,
        store,
        epoch_losses,
    })
}
