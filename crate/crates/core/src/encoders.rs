//! Inter-speaker and speaker-specific context encoders and the merged
//! per-utterance representation built from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{sinusoidal_positions, Ctx, LayerNorm, Linear, LstmLayer, MultiHeadAttention, PositionWiseFfn};
use crate::autodiff::{ParamStore, Real, Tape, Tensor, Var};
use crate::data::{role_positions, Role};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Transformer,
    Lstm,
    Bilstm,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub use_positional: bool,
    pub use_residual_norm: bool,
}

impl EncoderConfig {
    pub fn transformer(hidden: usize, layers: usize, heads: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::Transformer,
            layers,
            heads,
            hidden,
            dropout: 0.1,
            use_positional: true,
            use_residual_norm: true,
        }
    }

    pub fn lstm(hidden: usize, layers: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::Lstm,
            layers,
            heads: 1,
            hidden,
            dropout: 0.1,
            use_positional: false,
            use_residual_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("encoder hidden size must be positive".into()));
        }
        match self.kind {
            EncoderKind::Transformer if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) => {
                Err(Error::Config(format!(
                    "hidden size {} is not divisible by {} heads",
                    self.hidden, self.heads
                )))
            }
            EncoderKind::Bilstm if !self.hidden.is_multiple_of(2) => Err(Error::Config(format!(
                "bidirectional hidden size {} must be even",
                self.hidden
            ))),
            _ if !(0.0..1.0).contains(&self.dropout) => {
                Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    attention: MultiHeadAttention,
    ffn: PositionWiseFfn,
    norms: Option<(LayerNorm, LayerNorm)>,
}

#[derive(Clone, Debug)]
enum Body {
    Transformer(Vec<Block>),
    Lstm(Vec<LstmLayer>),
    Identity,
}

/// One context encoder mapping `T × d_in` to `T × hidden`. A zero-row input
/// yields a zero-row output.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    project: Option<Linear>,
    body: Body,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let needs_projection = d_in != h && matches!(cfg.kind, EncoderKind::Transformer | EncoderKind::None);
        let project = needs_projection.then(|| Linear::new(store, &format!("{name}.proj"), d_in, h, true, rng));
        let body = match cfg.kind {
            EncoderKind::Transformer => {
                let mut blocks = Vec::with_capacity(cfg.layers);
                for l in 0..cfg.layers {
                    let p = format!("{name}.block{l}");
                    blocks.push(Block {
                        attention: MultiHeadAttention::new(store, &format!("{p}.attn"), h, cfg.heads, rng)?,
                        ffn: PositionWiseFfn::new(store, &format!("{p}.ffn"), h, h, rng),
                        norms: cfg.use_residual_norm.then(|| {
                            (
                                LayerNorm::new(store, &format!("{p}.ln1"), h),
                                LayerNorm::new(store, &format!("{p}.ln2"), h),
                            )
                        }),
                    });
                }
                Body::Transformer(blocks)
            }
            EncoderKind::Lstm | EncoderKind::Bilstm => {
                let bi = cfg.kind == EncoderKind::Bilstm;
                let per_dir = if bi { h / 2 } else { h };
                let mut layers = Vec::with_capacity(cfg.layers);
                let mut input = d_in;
                for l in 0..cfg.layers {
                    let layer = LstmLayer::new(store, &format!("{name}.lstm{l}"), input, per_dir, bi, rng);
                    input = layer.output_dim();
                    layers.push(layer);
                }
                Body::Lstm(layers)
            }
            EncoderKind::None => Body::Identity,
        };
        Ok(Encoder {
            cfg: cfg.clone(),
            project,
            body,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.hidden
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let rows = tape.shape(x)[0];
        if rows == 0 {
            return Ok(tape.constant(Tensor::zeros(0, self.cfg.hidden)));
        }
        let mut h = match &self.project {
            Some(p) => p.forward(tape, store, x)?,
            None => x,
        };
        match &self.body {
            Body::Identity => Ok(h),
            Body::Lstm(layers) => {
                for layer in layers {
                    h = layer.run(tape, store, h)?;
                    h = ctx.dropout(tape, h, self.cfg.dropout)?;
                }
                Ok(h)
            }
            Body::Transformer(blocks) => {
                if self.cfg.use_positional {
                    let pe = tape.constant(sinusoidal_positions(rows, self.cfg.hidden));
                    h = tape.add(h, pe)?;
                }
                for b in blocks {
                    let a = b.attention.forward(tape, store, h, ctx, self.cfg.dropout)?;
                    h = match &b.norms {
                        Some((n1, _)) => {
                            let s = tape.add(h, a)?;
                            n1.forward(tape, store, s)?
                        }
                        None => a,
                    };
                    let f = b.ffn.forward(tape, store, h)?;
                    let f = ctx.dropout(tape, f, self.cfg.dropout)?;
                    h = match &b.norms {
                        Some((_, n2)) => {
                            let s = tape.add(h, f)?;
                            n2.forward(tape, store, s)?
                        }
                        None => f,
                    };
                }
                Ok(h)
            }
        }
    }
}

/// The inter-speaker encoder over the whole dialogue.
pub fn encode_inter<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    enc: &Encoder,
    features: Var,
    ctx: &mut Ctx,
) -> Result<Var> {
    if tape.shape(features)[0] == 0 {
        return Err(Error::EmptyInput("dialogue has no utterances"));
    }
    enc.forward(tape, store, features, ctx)
}

/// Splits the inter-speaker rows by role and runs each role's own encoder.
/// A role with no utterances gets a zero-row output.
pub fn encode_speaker_specific<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    encoders: &[Encoder; 2],
    inter: Var,
    roles: &[Role],
    ctx: &mut Ctx,
) -> Result<(Var, Var)> {
    let rows = tape.shape(inter)[0];
    if rows != roles.len() {
        return Err(Error::shape("encode_speaker_specific", tape.shape(inter), &[roles.len()]));
    }
    let pos = role_positions(roles);
    let mut out = [None, None];
    for role in Role::ALL {
        let sub = tape.gather_rows(inter, &pos[role.index()])?;
        out[role.index()] = Some(encoders[role.index()].forward(tape, store, sub, ctx)?);
    }
    let [er, ee] = out;
    Ok((er.expect("set"), ee.expect("set")))
}

/// Rows of `[er; ee]` that restore original positions.
pub fn merge_order(roles: &[Role]) -> Vec<usize> {
    let n_er = roles.iter().filter(|&&r| r == Role::Er).count();
    let mut next = [0, n_er];
    roles
        .iter()
        .map(|r| {
            let i = next[r.index()];
            next[r.index()] += 1;
            i
        })
        .collect()
}

/// Row `t` becomes `[speaker_specific(t), inter(t)]`, in original order.
pub fn build_merged<T: Real>(
    tape: &mut Tape<T>,
    inter: Var,
    er: Var,
    ee: Var,
    roles: &[Role],
) -> Result<Var> {
    let speaker = merge_speaker_rows(tape, er, ee, roles)?;
    if tape.shape(speaker) != tape.shape(inter) {
        return Err(Error::shape("build_merged", tape.shape(speaker), tape.shape(inter)));
    }
    tape.concat_cols(&[speaker, inter])
}

/// Interleaves per-role row blocks back into dialogue order.
pub fn merge_speaker_rows<T: Real>(tape: &mut Tape<T>, er: Var, ee: Var, roles: &[Role]) -> Result<Var> {
    let pos = role_positions(roles);
    if tape.shape(er)[0] != pos[0].len() || tape.shape(ee)[0] != pos[1].len() {
        return Err(Error::shape("merge_speaker_rows", tape.shape(er), tape.shape(ee)));
    }
    let stacked = tape.concat_rows(&[er, ee])?;
    tape.gather_rows(stacked, &merge_order(roles))
}

/// Encoders for one model: the inter-speaker encoder and, optionally, one
/// speaker-specific encoder per role with separate parameters.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub inter: Encoder,
    pub speaker: Option<[Encoder; 2]>,
}

impl ContextEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        inter: &EncoderConfig,
        speaker: Option<&EncoderConfig>,
        rng: &mut R,
    ) -> Result<Self> {
        let inter_enc = Encoder::new(store, &format!("{name}.inter"), d_in, inter, rng)?;
        let speaker = match speaker {
            Some(cfg) => {
                let d = inter_enc.out_dim();
                let er = Encoder::new(store, &format!("{name}.er"), d, cfg, rng)?;
                let ee = Encoder::new(store, &format!("{name}.ee"), d, cfg, rng)?;
                if er.out_dim() != d {
                    return Err(Error::Config(format!(
                        "speaker encoders must keep width {d}, got {}",
                        er.out_dim()
                    )));
                }
                Some([er, ee])
            }
            None => None,
        };
        Ok(ContextEncoder {
            inter: inter_enc,
            speaker,
        })
    }

    /// Width of the representation handed to the output layers.
    pub fn out_dim(&self) -> usize {
        match self.speaker {
            Some(_) => 2 * self.inter.out_dim(),
            None => self.inter.out_dim(),
        }
    }

    /// `T × out_dim`: the merged representation, or the inter output alone
    /// when there are no speaker encoders.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        roles: &[Role],
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let inter = encode_inter(tape, store, &self.inter, features, ctx)?;
        match &self.speaker {
            Some(encs) => {
                let (er, ee) = encode_speaker_specific(tape, store, encs, inter, roles, ctx)?;
                build_merged(tape, inter, er, ee, roles)
            }
            None => Ok(inter),
        }
    }
}
