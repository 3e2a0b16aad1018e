//! Differentiable building blocks: affine maps, attention, feed-forward,
//! layer norm and LSTMs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-pass state: train/eval switch and the dropout RNG.
pub struct Ctx {
    train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Ctx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Dropout that is a no-op outside training.
    pub fn dropout<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        tape.dropout(x, rate, &mut self.rng)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::xavier(fan_in, fan_out, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// `softmax(q kᵀ / sqrt(d)) v`.
pub fn scaled_dot_attention<T: Real>(tape: &mut Tape<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    attend(tape, q, k, v, None)
}

fn attend<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    dropout: Option<(&mut Ctx, f64)>,
) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs[1] != ks[1] {
        return Err(Error::shape("attention q/k", &qs, &ks));
    }
    if ks[0] != vs[0] {
        return Err(Error::shape("attention k/v", &ks, &vs));
    }
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, T::of(1.0 / (qs[1] as f64).sqrt()));
    let mut weights = tape.softmax_rows(scaled);
    if let Some((ctx, rate)) = dropout {
        weights = ctx.dropout(tape, weights, rate)?;
    }
    tape.matmul(weights, v)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d_model: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let mut mk = |s: &str| store.add(format!("{name}.{s}"), Tensor::xavier(d_model, d_model, rng));
        Ok(MultiHeadAttention {
            heads,
            d_model,
            wq: mk("wq"),
            wk: mk("wk"),
            wv: mk("wv"),
            wo: mk("wo"),
        })
    }

    /// Self-attention over the rows of `x` (`T × d_model`). Dropout, when
    /// active, hits the attention weights.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &mut Ctx,
        dropout: f64,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape[1] != self.d_model {
            return Err(Error::shape("multi_head_attention", &shape, &[self.d_model]));
        }
        if shape[0] == 0 {
            return Ok(x);
        }
        let (wq, wk, wv, wo) = (
            tape.param(store, self.wq),
            tape.param(store, self.wk),
            tape.param(store, self.wv),
            tape.param(store, self.wo),
        );
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let dk = self.d_model / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * dk, (h + 1) * dk);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, s, e)?, tape.slice_cols(k, s, e)?, tape.slice_cols(v, s, e)?)
            };
            outs.push(attend(tape, qh, kh, vh, Some((&mut *ctx, dropout)))?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        tape.matmul(cat, wo)
    }
}

/// `max(0, x W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct PositionWiseFfn {
    pub inner: Linear,
    pub outer: Linear,
}

impl PositionWiseFfn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        PositionWiseFfn {
            inner: Linear::new(store, &format!("{name}.f1"), d_model, d_ff, true, rng),
            outer: Linear::new(store, &format!("{name}.f2"), d_ff, d_model, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.outer.forward(tape, store, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(1, d, T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, d)),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, T::of(1e-5))
    }
}

/// Single-direction LSTM cell with fused gate weights in `[i, f, g, o]`
/// order.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl Lstm {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add(format!("{name}.wx"), Tensor::xavier(input, 4 * hidden, rng));
        let wh = store.add(format!("{name}.wh"), Tensor::xavier(hidden, 4 * hidden, rng));
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            bias.set(0, c, T::one());
        }
        let b = store.add(format!("{name}.b"), bias);
        Lstm {
            input,
            hidden,
            wx,
            wh,
            b,
        }
    }

    /// Runs over the rows of `x`, returning `T × hidden`. With `reverse` the
    /// recurrence runs last-to-first but outputs stay aligned with inputs.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        reverse: bool,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape[0] == 0 {
            return Err(Error::EmptyInput("lstm_sequence"));
        }
        if shape[1] != self.input {
            return Err(Error::shape("lstm_sequence", &shape, &[self.input]));
        }
        let (wx, wh, b) = (
            tape.param(store, self.wx),
            tape.param(store, self.wh),
            tape.param(store, self.b),
        );
        let xw = tape.matmul(x, wx)?;
        let xw = tape.add_row(xw, b)?;
        let h_dim = self.hidden;
        let steps: Vec<usize> = if reverse {
            (0..shape[0]).rev().collect()
        } else {
            (0..shape[0]).collect()
        };
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outs = vec![None; shape[0]];
        for t in steps {
            let mut z = tape.gather_rows(xw, &[t])?;
            if let Some(hp) = h {
                let hw = tape.matmul(hp, wh)?;
                z = tape.add(z, hw)?;
            }
            let zi = tape.slice_cols(z, 0, h_dim)?;
            let zf = tape.slice_cols(z, h_dim, 2 * h_dim)?;
            let zg = tape.slice_cols(z, 2 * h_dim, 3 * h_dim)?;
            let zo = tape.slice_cols(z, 3 * h_dim, 4 * h_dim)?;
            let i = tape.sigmoid(zi);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let ig = tape.mul(i, g)?;
            let cn = match c {
                Some(cp) => {
                    let f = tape.sigmoid(zf);
                    let fc = tape.mul(f, cp)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(cn);
            let hn = tape.mul(o, tc)?;
            outs[t] = Some(hn);
            h = Some(hn);
            c = Some(cn);
        }
        let outs: Vec<Var> = outs.into_iter().map(|v| v.expect("every step ran")).collect();
        tape.concat_rows(&outs)
    }
}

/// One LSTM layer, optionally bidirectional. Output width is the sum of the
/// direction widths.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub forward: Lstm,
    pub backward: Option<Lstm>,
}

impl LstmLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut R,
    ) -> Self {
        LstmLayer {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: bidirectional
                .then(|| Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng)),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.as_ref().map_or(0, |l| l.hidden)
    }

    pub fn run<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        lstm_sequence(tape, store, x, &self.forward, self.backward.as_ref())
    }
}

/// LSTM over a `T × d` sequence. With a backward cell the two directions'
/// hidden states are concatenated per position.
pub fn lstm_sequence<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    forward: &Lstm,
    backward: Option<&Lstm>,
) -> Result<Var> {
    let f = forward.forward(tape, store, x, false)?;
    match backward {
        Some(b) => {
            let r = b.forward(tape, store, x, true)?;
            tape.concat_cols(&[f, r])
        }
        None => Ok(f),
    }
}

/// Sinusoidal position table, `rows × d`.
pub fn sinusoidal_positions<T: Real>(rows: usize, d: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(rows, d);
    for pos in 0..rows {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(pos, i, T::of(v));
        }
    }
    t
}
