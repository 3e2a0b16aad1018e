use rand::Rng;

use crate::autodiff::layers::{Ctx, Linear, MultiHeadAttention};
use crate::autodiff::{ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Summed cross-entropy of row-wise logits against one gold column per row.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, gold: &[usize]) -> Result<Var> {
    let rows = tape.shape(logits)[0];
    if rows != gold.len() {
        return Err(Error::shape("cross_entropy", tape.shape(logits), &[gold.len()]));
    }
    let lp = tape.log_softmax_rows(logits);
    let at: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
    let picked = tape.pick_sum(lp, &at)?;
    Ok(tape.scale(picked, -T::one()))
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows<T: Real>(m: &Tensor<T>) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Two-layer perceptron with a ReLU between and softmax outputs.
#[derive(Clone, Debug)]
pub struct SoftmaxHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl SoftmaxHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        SoftmaxHead {
            hidden: Linear::new(store, &format!("{name}.l1"), d_in, d_hidden, true, rng),
            out: Linear::new(store, &format!("{name}.l2"), d_hidden, classes, true, rng),
        }
    }

    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, store, h)
    }

    pub fn probs<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let l = self.logits(tape, store, x)?;
        Ok(tape.softmax_rows(l))
    }

    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        gold: &[usize],
    ) -> Result<Var> {
        let l = self.logits(tape, store, x)?;
        cross_entropy(tape, l, gold)
    }
}

/// Dialogue-level outcome classifier: single-head self-attention over the
/// utterance sequence, mean pooling, then a ReLU perceptron into
/// `{fail, success}` logits.
#[derive(Clone, Debug)]
pub struct SuccessClassifier {
    pub attention: MultiHeadAttention,
    pub mlp: SoftmaxHead,
}

impl SuccessClassifier {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SuccessClassifier {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), d, 1, rng)?,
            mlp: SoftmaxHead::new(store, &format!("{name}.mlp"), d, d_hidden, 2, rng),
        })
    }

    /// `1 × 2` logits.
    pub fn logits<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &mut Ctx,
        dropout: f64,
    ) -> Result<Var> {
        if tape.shape(x)[0] == 0 {
            return Err(Error::EmptyInput("success classifier over an empty dialogue"));
        }
        let a = self.attention.forward(tape, store, x, ctx, dropout)?;
        let pooled = tape.mean_rows(a)?;
        self.mlp.logits(tape, store, pooled)
    }

    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        success: bool,
        ctx: &mut Ctx,
        dropout: f64,
    ) -> Result<Var> {
        let l = self.logits(tape, store, x, ctx, dropout)?;
        cross_entropy(tape, l, &[usize::from(success)])
    }

    /// `P(success)` in evaluation mode.
    pub fn probability<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let l = self.logits(&mut tape, store, v, &mut Ctx::eval(), 0.0)?;
        let p = tape.softmax_rows(l);
        Ok(tape.value(p).data()[1].as_f64())
    }
}
