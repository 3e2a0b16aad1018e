//! The model family: one context encoder configuration and one output layer
//! per variant, sharing a single parameter store.

mod snapshot;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{Ctx, Linear};
use crate::autodiff::{ParamStore, Real, Tape, Tensor, Var};
use crate::data::{merge_by_position, role_positions, Dialogue, Role};
use crate::encoders::{ContextEncoder, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::structured::{argmax_rows, ChainCrf, SoftmaxHead, SuccessClassifier};

pub use snapshot::{read_snapshot, snapshot_from_bytes, snapshot_to_bytes, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[serde(rename = "logreg")]
    LogReg,
    Clstm,
    Bclstm,
    Clstms,
    ClstmsCrf,
    ClstmsExtcrf,
    Transformers,
    TransformersCrf,
    TransformersExtcrf,
    TransformersClstmsExtcrf,
}

/// Where predictions come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputLayer {
    /// Per-role two-layer perceptron.
    Softmax,
    /// One linear-chain CRF per speaker subsequence.
    RoleCrf,
    /// The heterogeneous CRF over the full dialogue; role CRFs only add
    /// auxiliary losses.
    ExtCrf,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::LogReg,
        Variant::Clstm,
        Variant::Bclstm,
        Variant::Clstms,
        Variant::ClstmsCrf,
        Variant::ClstmsExtcrf,
        Variant::Transformers,
        Variant::TransformersCrf,
        Variant::TransformersExtcrf,
        Variant::TransformersClstmsExtcrf,
    ];

    /// Rows of the BI-label comparison.
    pub const BI_GRID: [Variant; 8] = [
        Variant::Clstm,
        Variant::Bclstm,
        Variant::Clstms,
        Variant::ClstmsCrf,
        Variant::ClstmsExtcrf,
        Variant::Transformers,
        Variant::TransformersCrf,
        Variant::TransformersExtcrf,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::LogReg => "logreg",
            Variant::Clstm => "clstm",
            Variant::Bclstm => "bclstm",
            Variant::Clstms => "clstms",
            Variant::ClstmsCrf => "clstms-crf",
            Variant::ClstmsExtcrf => "clstms-extcrf",
            Variant::Transformers => "transformers",
            Variant::TransformersCrf => "transformers-crf",
            Variant::TransformersExtcrf => "transformers-extcrf",
            Variant::TransformersClstmsExtcrf => "transformers-clstms-extcrf",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::LogReg => "LogReg",
            Variant::Clstm => "cLSTM",
            Variant::Bclstm => "bcLSTM",
            Variant::Clstms => "cLSTMs",
            Variant::ClstmsCrf => "cLSTMs-CRF",
            Variant::ClstmsExtcrf => "cLSTMs-ExtCRF",
            Variant::Transformers => "Transformers",
            Variant::TransformersCrf => "Transformers-CRF",
            Variant::TransformersExtcrf => "Transformers-ExtCRF",
            Variant::TransformersClstmsExtcrf => "Transformers-cLSTMs-ExtCRF",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.id() == s.to_ascii_lowercase())
    }

    pub fn is_transformer(self) -> bool {
        matches!(
            self,
            Variant::Transformers
                | Variant::TransformersCrf
                | Variant::TransformersExtcrf
                | Variant::TransformersClstmsExtcrf
        )
    }

    pub fn inter_kind(self) -> EncoderKind {
        match self {
            Variant::LogReg => EncoderKind::None,
            Variant::Bclstm => EncoderKind::Bilstm,
            Variant::Clstm | Variant::Clstms | Variant::ClstmsCrf | Variant::ClstmsExtcrf => EncoderKind::Lstm,
            _ => EncoderKind::Transformer,
        }
    }

    pub fn speaker_kind(self) -> Option<EncoderKind> {
        match self {
            Variant::LogReg | Variant::Clstm | Variant::Bclstm => None,
            Variant::Clstms | Variant::ClstmsCrf | Variant::ClstmsExtcrf | Variant::TransformersClstmsExtcrf => {
                Some(EncoderKind::Lstm)
            }
            _ => Some(EncoderKind::Transformer),
        }
    }

    pub fn output(self) -> OutputLayer {
        match self {
            Variant::ClstmsCrf | Variant::TransformersCrf => OutputLayer::RoleCrf,
            Variant::ClstmsExtcrf | Variant::TransformersExtcrf | Variant::TransformersClstmsExtcrf => {
                OutputLayer::ExtCrf
            }
            _ => OutputLayer::Softmax,
        }
    }

    /// The same encoder stack without any CRF layer, if the grid has one.
    pub fn crf_free_counterpart(self) -> Option<Variant> {
        match self {
            Variant::ClstmsCrf | Variant::ClstmsExtcrf => Some(Variant::Clstms),
            Variant::TransformersCrf | Variant::TransformersExtcrf => Some(Variant::Transformers),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Architecture hyper-parameters; stored inside snapshots so a model can be
/// rebuilt from the file alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub feature_dim: usize,
    pub vocab_sizes: [usize; 2],
    pub hidden: usize,
    /// Transformer blocks per transformer encoder.
    pub layers: usize,
    /// Stacked layers per LSTM encoder.
    pub rnn_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub use_positional: bool,
    pub use_residual_norm: bool,
    pub start_stop: bool,
    pub success_head: bool,
    /// Hidden width of the perceptron heads; defaults to `hidden`.
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
}

impl ModelConfig {
    pub fn new(variant: Variant, feature_dim: usize, vocab_sizes: [usize; 2]) -> Self {
        ModelConfig {
            variant,
            feature_dim,
            vocab_sizes,
            hidden: 1024,
            layers: 2,
            rnn_layers: 1,
            heads: 2,
            dropout: 0.1,
            use_positional: true,
            use_residual_norm: true,
            start_stop: false,
            success_head: variant.speaker_kind().is_some(),
            mlp_hidden: None,
        }
    }

    pub fn mlp_width(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.hidden)
    }

    pub fn encoder_config(&self, kind: EncoderKind) -> EncoderConfig {
        let (layers, hidden) = match kind {
            EncoderKind::Transformer => (self.layers, self.hidden),
            EncoderKind::Lstm | EncoderKind::Bilstm => (self.rnn_layers, self.hidden),
            EncoderKind::None => (1, self.feature_dim),
        };
        EncoderConfig {
            kind,
            layers,
            heads: self.heads,
            hidden,
            dropout: self.dropout,
            use_positional: self.use_positional,
            use_residual_norm: self.use_residual_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::Config(format!("empty label vocabulary: sizes {:?}", self.vocab_sizes)));
        }
        self.encoder_config(self.variant.inter_kind()).validate()?;
        if let Some(k) = self.variant.speaker_kind() {
            self.encoder_config(k).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct RoleCrfs {
    emit: [Linear; 2],
    crf: [ChainCrf; 2],
}

#[derive(Clone, Debug)]
struct ExtHead {
    emit: [Linear; 2],
    crf: ChainCrf,
}

/// Layer layout of one variant. Parameters live in a separate store.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    encoder: ContextEncoder,
    softmax: Option<[SoftmaxHead; 2]>,
    role_crfs: Option<RoleCrfs>,
    ext: Option<ExtHead>,
    success: Option<SuccessClassifier>,
}

impl Model {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.variant;
        let inter = cfg.encoder_config(v.inter_kind());
        let speaker = v.speaker_kind().map(|k| cfg.encoder_config(k));
        let encoder = ContextEncoder::new(store, "enc", cfg.feature_dim, &inter, speaker.as_ref(), rng)?;
        let d = encoder.out_dim();
        let sizes = cfg.vocab_sizes;
        let per_role = |store: &mut ParamStore<T>, rng: &mut R, tag: &str| {
            Role::ALL.map(|r| Linear::new(store, &format!("{tag}.{r}"), d, sizes[r.index()], true, rng))
        };

        let mut softmax = None;
        let mut role_crfs = None;
        let mut ext = None;
        match v.output() {
            OutputLayer::Softmax => {
                softmax = Some(Role::ALL.map(|r| {
                    SoftmaxHead::new(store, &format!("mlp.{r}"), d, cfg.mlp_width(), sizes[r.index()], rng)
                }));
            }
            OutputLayer::RoleCrf | OutputLayer::ExtCrf => {
                let emit = per_role(store, rng, "crf_emit");
                let crf = Role::ALL.map(|r| {
                    ChainCrf::for_role(store, &format!("crf.{r}"), r, sizes[r.index()], cfg.start_stop)
                });
                role_crfs = Some(RoleCrfs { emit, crf });
                if v.output() == OutputLayer::ExtCrf {
                    let emit = per_role(store, rng, "ext_emit");
                    let crf = ChainCrf::for_roles(store, "extcrf", sizes, cfg.start_stop);
                    ext = Some(ExtHead { emit, crf });
                }
            }
        }
        let success = if cfg.success_head {
            Some(SuccessClassifier::new(store, "success", d, cfg.mlp_width(), rng)?)
        } else {
            None
        };
        Ok(Model {
            cfg: cfg.clone(),
            encoder,
            softmax,
            role_crfs,
            ext,
            success,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn ext_crf(&self) -> Option<&ChainCrf> {
        self.ext.as_ref().map(|e| &e.crf)
    }

    pub fn role_crf(&self, role: Role) -> Option<&ChainCrf> {
        self.role_crfs.as_ref().map(|r| &r.crf[role.index()])
    }

    fn check_features<T: Real>(&self, features: &Tensor<T>, n: usize) -> Result<()> {
        if features.rows() != n || features.cols() != self.cfg.feature_dim {
            return Err(Error::shape(
                "dialogue features",
                features.shape(),
                &[n, self.cfg.feature_dim],
            ));
        }
        Ok(())
    }

    /// Context representation, `T × d` (or `T × 2d` with speaker encoders).
    pub fn represent<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        roles: &[Role],
        ctx: &mut Ctx,
    ) -> Result<Var> {
        self.encoder.forward(tape, store, features, roles, ctx)
    }

    /// Unnormalized sum of every active loss term for one dialogue.
    pub fn dialogue_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        dialogue: &Dialogue,
        features: &Tensor<T>,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        self.check_features(features, dialogue.len())?;
        let roles = dialogue.roles();
        let labels = dialogue.labels();
        for u in &dialogue.utterances {
            let size = self.cfg.vocab_sizes[u.role.index()];
            if u.label_id >= size {
                return Err(Error::LabelOutOfRange {
                    role: u.role.to_string(),
                    label: u.label_id,
                    size,
                });
            }
        }
        let x = tape.constant(features.clone());
        let repr = self.represent(tape, store, x, &roles, ctx)?;
        let pos = role_positions(&roles);
        let gold_of = |r: Role| -> Vec<usize> { pos[r.index()].iter().map(|&i| labels[i]).collect() };
        let mut terms = Vec::new();

        if let Some(heads) = &self.softmax {
            for r in Role::ALL {
                if pos[r.index()].is_empty() {
                    continue;
                }
                let rows = tape.gather_rows(repr, &pos[r.index()])?;
                terms.push(heads[r.index()].loss(tape, store, rows, &gold_of(r))?);
            }
        }
        if let Some(rc) = &self.role_crfs {
            for r in Role::ALL {
                let n = pos[r.index()].len();
                if n == 0 {
                    continue;
                }
                let rows = tape.gather_rows(repr, &pos[r.index()])?;
                let em = rc.emit[r.index()].forward(tape, store, rows)?;
                terms.push(rc.crf[r.index()].nll(tape, store, &[em], &vec![r; n], &gold_of(r))?);
            }
        }
        if let Some(ext) = &self.ext {
            let mut blocks = Vec::with_capacity(2);
            for r in Role::ALL {
                let rows = tape.gather_rows(repr, &pos[r.index()])?;
                blocks.push(ext.emit[r.index()].forward(tape, store, rows)?);
            }
            terms.push(ext.crf.nll(tape, store, &blocks, &roles, &labels)?);
        }
        if let Some(s) = &self.success {
            terms.push(s.loss(tape, store, repr, dialogue.success, ctx, self.cfg.dropout)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        Ok(total)
    }

    /// Predicted label ids in utterance order, evaluation mode.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        roles: &[Role],
        features: &Tensor<T>,
    ) -> Result<Vec<usize>> {
        self.check_features(features, roles.len())?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval();
        let x = tape.constant(features.clone());
        let repr = self.represent(&mut tape, store, x, roles, &mut ctx)?;
        let pos = role_positions(roles);

        if let Some(ext) = &self.ext {
            let mut blocks = Vec::with_capacity(2);
            for r in Role::ALL {
                let rows = tape.gather_rows(repr, &pos[r.index()])?;
                let em = ext.emit[r.index()].forward(&mut tape, store, rows)?;
                blocks.push(tape.value(em).clone());
            }
            let refs: Vec<&Tensor<T>> = blocks.iter().collect();
            return ext.crf.decode(store, &refs, roles);
        }

        let mut per_role: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
        for r in Role::ALL {
            let p = &pos[r.index()];
            if p.is_empty() {
                continue;
            }
            let rows = tape.gather_rows(repr, p)?;
            let labels = if let Some(heads) = &self.softmax {
                let l = heads[r.index()].logits(&mut tape, store, rows)?;
                argmax_rows(tape.value(l))
            } else {
                let rc = self.role_crfs.as_ref().expect("variant has an output layer");
                let em = rc.emit[r.index()].forward(&mut tape, store, rows)?;
                let em = tape.value(em).clone();
                rc.crf[r.index()].decode(store, &[&em], &vec![r; p.len()])?
            };
            per_role[r.index()] = p.iter().copied().zip(labels).collect();
        }
        let [er, ee] = per_role;
        merge_by_position(er, ee)
    }

    /// `P(success)` from the outcome head, if the variant has one.
    pub fn success_probability<T: Real>(
        &self,
        store: &ParamStore<T>,
        roles: &[Role],
        features: &Tensor<T>,
    ) -> Result<Option<f64>> {
        let Some(s) = &self.success else {
            return Ok(None);
        };
        self.check_features(features, roles.len())?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let repr = self.represent(&mut tape, store, x, roles, &mut Ctx::eval())?;
        let repr = tape.value(repr).clone();
        s.probability(store, &repr).map(Some)
    }
}

/// The full objective on one tape: every dialogue's loss terms divided by
/// the batch's utterance count, plus `lambda` times the squared parameter
/// norm. `seed` drives dropout when `train` is set.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    model: &Model,
    batch: &[(&Dialogue, &Tensor<T>)],
    lambda: f64,
    ctx: &mut Ctx,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch has no dialogues"));
    }
    let n_utt: usize = batch.iter().map(|(d, _)| d.len()).sum();
    let mut acc: Option<Var> = None;
    for (d, f) in batch {
        let l = model.dialogue_loss(tape, store, d, f, ctx)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, l)?,
            None => l,
        });
    }
    let data = tape.scale(acc.expect("nonempty batch"), T::one() / T::of(n_utt as f64));
    if lambda == 0.0 {
        return Ok(data);
    }
    let mut reg: Option<Var> = None;
    for id in store.ids() {
        let p = tape.param(store, id);
        let s = tape.sum_squares(p);
        reg = Some(match reg {
            Some(r) => tape.add(r, s)?,
            None => s,
        });
    }
    match reg {
        Some(r) => {
            let r = tape.scale(r, T::of(lambda));
            tape.add(data, r)
        }
        None => Ok(data),
    }
}

#[cfg(test)]
mod tests;
