//! Linear-chain CRF dynamic programs over positions whose label spaces may
//! differ.
//!
//! Every position carries a tag kind `k` with `sizes[k]` labels. The
//! transition from a kind-`a` position to a kind-`b` position is scored by a
//! rectangular `sizes[a] × sizes[b]` matrix. One kind gives the ordinary
//! linear-chain CRF; two kinds keyed by speaker give the four role-pair
//! matrices.

use crate::autodiff::{logsumexp, Real, Tensor};
use crate::data::Role;
use crate::error::{Error, Result};

/// Transition scores for every ordered pair of tag kinds, plus optional
/// start and stop vectors per kind.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable<T> {
    sizes: Vec<usize>,
    matrices: Vec<Tensor<T>>,
    start: Option<Vec<Tensor<T>>>,
    stop: Option<Vec<Tensor<T>>>,
}

impl<T: Real> TransitionTable<T> {
    pub fn zeros(sizes: &[usize], with_start_stop: bool) -> Self {
        let k = sizes.len();
        let matrices = (0..k * k)
            .map(|i| Tensor::zeros(sizes[i / k], sizes[i % k]))
            .collect();
        let ends = || sizes.iter().map(|&n| Tensor::zeros(1, n)).collect::<Vec<_>>();
        TransitionTable {
            sizes: sizes.to_vec(),
            matrices,
            start: with_start_stop.then(ends),
            stop: with_start_stop.then(ends),
        }
    }

    /// Builds from row-major `(prev, next)` matrices. `start`/`stop`, when
    /// given, hold one `1 × sizes[k]` row per kind.
    pub fn from_parts(
        sizes: &[usize],
        matrices: Vec<Tensor<T>>,
        start: Option<Vec<Tensor<T>>>,
        stop: Option<Vec<Tensor<T>>>,
    ) -> Result<Self> {
        let k = sizes.len();
        if matrices.len() != k * k {
            return Err(Error::Config(format!(
                "{} transition matrices for {k} tag kinds",
                matrices.len()
            )));
        }
        for (i, m) in matrices.iter().enumerate() {
            let want = [sizes[i / k], sizes[i % k]];
            if m.shape() != want {
                return Err(Error::shape("transition table", m.shape(), &want));
            }
        }
        for v in start.iter().chain(stop.iter()) {
            if v.len() != k {
                return Err(Error::Config("one start/stop row per tag kind".into()));
            }
            for (row, &n) in v.iter().zip(sizes) {
                if row.shape() != [1, n] {
                    return Err(Error::shape("start/stop row", row.shape(), &[1, n]));
                }
            }
        }
        Ok(TransitionTable {
            sizes: sizes.to_vec(),
            matrices,
            start,
            stop,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn kinds(&self) -> usize {
        self.sizes.len()
    }

    pub fn matrix(&self, prev: usize, next: usize) -> &Tensor<T> {
        &self.matrices[prev * self.kinds() + next]
    }

    pub fn matrix_mut(&mut self, prev: usize, next: usize) -> &mut Tensor<T> {
        let k = self.kinds();
        &mut self.matrices[prev * k + next]
    }

    /// Role-pair view for a two-kind table keyed by `Role::index`.
    pub fn role_matrix(&self, prev: Role, next: Role) -> &Tensor<T> {
        self.matrix(prev.index(), next.index())
    }

    pub fn matrices(&self) -> &[Tensor<T>] {
        &self.matrices
    }

    pub fn start(&self) -> Option<&[Tensor<T>]> {
        self.start.as_deref()
    }

    pub fn stop(&self) -> Option<&[Tensor<T>]> {
        self.stop.as_deref()
    }

    pub fn has_start_stop(&self) -> bool {
        self.start.is_some()
    }

    fn start_score(&self, kind: usize, y: usize) -> T {
        self.start.as_ref().map_or(T::zero(), |s| s[kind].data()[y])
    }

    fn stop_score(&self, kind: usize, y: usize) -> T {
        self.stop.as_ref().map_or(T::zero(), |s| s[kind].data()[y])
    }
}

/// Emission scores and tag kind per position.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfInstance<T> {
    pub emissions: Vec<Vec<T>>,
    pub kinds: Vec<usize>,
}

impl<T: Real> CrfInstance<T> {
    pub fn new(emissions: Vec<Vec<T>>, kinds: Vec<usize>) -> Self {
        assert_eq!(emissions.len(), kinds.len(), "one kind per position");
        CrfInstance { emissions, kinds }
    }

    /// Kinds taken from speaker roles, for a two-kind table.
    pub fn from_roles(emissions: Vec<Vec<T>>, roles: &[Role]) -> Self {
        CrfInstance::new(emissions, roles.iter().map(|r| r.index()).collect())
    }

    /// A single-role instance for a one-kind table.
    pub fn single_role(emissions: Vec<Vec<T>>, roles: &[Role]) -> Result<Self> {
        if roles.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::MixedRoles);
        }
        Ok(CrfInstance::new(emissions, vec![0; roles.len()]))
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    fn check(&self, table: &TransitionTable<T>) -> Result<()> {
        for (j, (e, &k)) in self.emissions.iter().zip(&self.kinds).enumerate() {
            let n = *table.sizes.get(k).ok_or_else(|| {
                Error::Config(format!("position {j} has tag kind {k}, table has {}", table.kinds()))
            })?;
            if e.len() != n {
                return Err(Error::shape("crf emissions", &[j, e.len()], &[j, n]));
            }
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize], table: &TransitionTable<T>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::shape("crf labels", &[labels.len()], &[self.len()]));
        }
        for (&y, &k) in labels.iter().zip(&self.kinds) {
            if y >= table.sizes[k] {
                return Err(Error::LabelOutOfRange {
                    role: format!("tag kind {k}"),
                    label: y,
                    size: table.sizes[k],
                });
            }
        }
        Ok(())
    }
}

/// Unnormalized log-score of one labeling.
pub fn score_sequence<T: Real>(
    inst: &CrfInstance<T>,
    labels: &[usize],
    table: &TransitionTable<T>,
) -> Result<T> {
    inst.check(table)?;
    inst.check_labels(labels, table)?;
    if inst.is_empty() {
        return Ok(T::zero());
    }
    let mut s = T::zero();
    for j in 0..inst.len() {
        s += inst.emissions[j][labels[j]];
        if j > 0 {
            s += table
                .matrix(inst.kinds[j - 1], inst.kinds[j])
                .at(labels[j - 1], labels[j]);
        }
    }
    let last = inst.len() - 1;
    s += table.start_score(inst.kinds[0], labels[0]);
    s += table.stop_score(inst.kinds[last], labels[last]);
    Ok(s)
}

/// Forward log-messages, `alpha[j][y]`, including emissions at `j` and the
/// start score at 0.
fn forward<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>) -> Vec<Vec<T>> {
    let mut alpha: Vec<Vec<T>> = Vec::with_capacity(inst.len());
    let mut buf = Vec::new();
    for j in 0..inst.len() {
        let k = inst.kinds[j];
        let e = &inst.emissions[j];
        let a: Vec<T> = if j == 0 {
            (0..e.len()).map(|y| e[y] + table.start_score(k, y)).collect()
        } else {
            let prev = &alpha[j - 1];
            let w = table.matrix(inst.kinds[j - 1], k);
            (0..e.len())
                .map(|y| {
                    buf.clear();
                    buf.extend((0..prev.len()).map(|p| prev[p] + w.at(p, y)));
                    logsumexp(&buf) + e[y]
                })
                .collect()
        };
        alpha.push(a);
    }
    alpha
}

/// Backward log-messages, `beta[j][y]`: score of everything after `j`,
/// including the stop score.
fn backward<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>) -> Vec<Vec<T>> {
    let n = inst.len();
    let mut beta: Vec<Vec<T>> = vec![Vec::new(); n];
    let mut buf = Vec::new();
    for j in (0..n).rev() {
        let k = inst.kinds[j];
        let size = inst.emissions[j].len();
        beta[j] = if j + 1 == n {
            (0..size).map(|y| table.stop_score(k, y)).collect()
        } else {
            let next = &beta[j + 1];
            let e = &inst.emissions[j + 1];
            let w = table.matrix(k, inst.kinds[j + 1]);
            (0..size)
                .map(|y| {
                    buf.clear();
                    buf.extend((0..next.len()).map(|q| w.at(y, q) + e[q] + next[q]));
                    logsumexp(&buf)
                })
                .collect()
        };
    }
    beta
}

fn finish<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>, alpha_last: &[T]) -> T {
    let k = *inst.kinds.last().expect("nonempty");
    let v: Vec<T> = alpha_last
        .iter()
        .enumerate()
        .map(|(y, &a)| a + table.stop_score(k, y))
        .collect();
    logsumexp(&v)
}

/// `log Z`, summed over every labeling consistent with the positions' kinds.
pub fn log_partition<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>) -> Result<T> {
    inst.check(table)?;
    if inst.is_empty() {
        return Err(Error::EmptyInput("crf instance has no positions"));
    }
    let alpha = forward(inst, table);
    Ok(finish(inst, table, alpha.last().expect("nonempty")))
}

/// Posterior marginals and expected transition counts.
#[derive(Clone, Debug)]
pub struct Marginals<T> {
    pub log_z: T,
    /// `unary[j][y] = P(y_j = y)`.
    pub unary: Vec<Vec<T>>,
    /// Expected count of each `(prev, next)` label pair, one matrix per
    /// kind pair, laid out like the transition table.
    pub pairwise: Vec<Tensor<T>>,
    pub start: Vec<Vec<T>>,
    pub stop: Vec<Vec<T>>,
}

pub fn marginals<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>) -> Result<Marginals<T>> {
    inst.check(table)?;
    if inst.is_empty() {
        return Err(Error::EmptyInput("crf instance has no positions"));
    }
    let alpha = forward(inst, table);
    let beta = backward(inst, table);
    let log_z = finish(inst, table, alpha.last().expect("nonempty"));
    let kk = table.kinds();
    let unary: Vec<Vec<T>> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| a.iter().zip(b).map(|(&a, &b)| (a + b - log_z).exp()).collect())
        .collect();
    let mut pairwise: Vec<Tensor<T>> = (0..kk * kk)
        .map(|i| Tensor::zeros(table.sizes[i / kk], table.sizes[i % kk]))
        .collect();
    for j in 1..inst.len() {
        let (pk, nk) = (inst.kinds[j - 1], inst.kinds[j]);
        let w = table.matrix(pk, nk);
        let e = &inst.emissions[j];
        let acc = &mut pairwise[pk * kk + nk];
        for p in 0..alpha[j - 1].len() {
            for q in 0..e.len() {
                let lp = alpha[j - 1][p] + w.at(p, q) + e[q] + beta[j][q] - log_z;
                let v = acc.at(p, q) + lp.exp();
                acc.set(p, q, v);
            }
        }
    }
    let mut start: Vec<Vec<T>> = table.sizes.iter().map(|&n| vec![T::zero(); n]).collect();
    let mut stop = start.clone();
    start[inst.kinds[0]].clone_from(&unary[0]);
    let last = inst.len() - 1;
    for (s, &u) in stop[inst.kinds[last]].iter_mut().zip(&unary[last]) {
        *s += u;
    }
    Ok(Marginals {
        log_z,
        unary,
        pairwise,
        start,
        stop,
    })
}

/// `log Z − score(gold)`.
pub fn crf_nll<T: Real>(inst: &CrfInstance<T>, gold: &[usize], table: &TransitionTable<T>) -> Result<T> {
    if gold.is_empty() && !inst.is_empty() {
        return Err(Error::MissingGold);
    }
    let s = score_sequence(inst, gold, table)?;
    Ok(log_partition(inst, table)? - s)
}

/// Gradients of [`crf_nll`]: emissions, then transition matrices, then
/// start and stop rows (empty when the table has none).
#[derive(Clone, Debug)]
pub struct NllGrad<T> {
    pub loss: T,
    pub emissions: Vec<Vec<T>>,
    pub transitions: Vec<Tensor<T>>,
    pub start: Vec<Vec<T>>,
    pub stop: Vec<Vec<T>>,
}

pub fn crf_nll_grad<T: Real>(
    inst: &CrfInstance<T>,
    gold: &[usize],
    table: &TransitionTable<T>,
) -> Result<NllGrad<T>> {
    if gold.is_empty() && !inst.is_empty() {
        return Err(Error::MissingGold);
    }
    let score = score_sequence(inst, gold, table)?;
    let m = marginals(inst, table)?;
    let kk = table.kinds();
    let mut emissions = m.unary;
    for (row, &y) in emissions.iter_mut().zip(gold) {
        row[y] -= T::one();
    }
    let mut transitions = m.pairwise;
    for j in 1..inst.len() {
        let t = &mut transitions[inst.kinds[j - 1] * kk + inst.kinds[j]];
        let v = t.at(gold[j - 1], gold[j]) - T::one();
        t.set(gold[j - 1], gold[j], v);
    }
    let (mut start, mut stop) = (Vec::new(), Vec::new());
    if table.has_start_stop() {
        start = m.start;
        stop = m.stop;
        start[inst.kinds[0]][gold[0]] -= T::one();
        let last = inst.len() - 1;
        stop[inst.kinds[last]][gold[last]] -= T::one();
    }
    Ok(NllGrad {
        loss: m.log_z - score,
        emissions,
        transitions,
        start,
        stop,
    })
}

/// Highest-scoring labeling and its score. Ties go to the lowest label
/// index, both along back-pointers and at the final position.
pub fn viterbi_decode<T: Real>(inst: &CrfInstance<T>, table: &TransitionTable<T>) -> Result<(Vec<usize>, T)> {
    inst.check(table)?;
    if inst.is_empty() {
        return Ok((Vec::new(), T::zero()));
    }
    let n = inst.len();
    let mut delta: Vec<T> = inst.emissions[0]
        .iter()
        .enumerate()
        .map(|(y, &e)| e + table.start_score(inst.kinds[0], y))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
    back.push(Vec::new());
    for j in 1..n {
        let w = table.matrix(inst.kinds[j - 1], inst.kinds[j]);
        let e = &inst.emissions[j];
        let mut next = Vec::with_capacity(e.len());
        let mut ptr = Vec::with_capacity(e.len());
        for q in 0..e.len() {
            let (mut best, mut arg) = (T::neg_infinity(), 0);
            for (p, &d) in delta.iter().enumerate() {
                let s = d + w.at(p, q);
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next.push(best + e[q]);
            ptr.push(arg);
        }
        delta = next;
        back.push(ptr);
    }
    let k_last = inst.kinds[n - 1];
    let (mut best, mut arg) = (T::neg_infinity(), 0);
    for (y, &d) in delta.iter().enumerate() {
        let s = d + table.stop_score(k_last, y);
        if s > best {
            best = s;
            arg = y;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = arg;
    for j in (1..n).rev() {
        path[j - 1] = back[j][path[j]];
    }
    Ok((path, best))
}
