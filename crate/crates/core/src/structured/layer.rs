use crate::autodiff::{CustomOp, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::data::Role;
use crate::error::{Error, Result};

use super::chain::{crf_nll_grad, viterbi_decode, CrfInstance, TransitionTable};

/// Learnable transition table over one tag kind per role. With two roles it
/// scores all four role-pair transitions; with one role it is an ordinary
/// linear-chain CRF restricted to that speaker.
#[derive(Clone, Debug)]
pub struct ChainCrf {
    roles: Vec<Role>,
    sizes: Vec<usize>,
    transitions: Vec<ParamId>,
    start: Option<Vec<ParamId>>,
    stop: Option<Vec<ParamId>>,
}

impl ChainCrf {
    /// Heterogeneous CRF over both roles. Transitions start at zero.
    pub fn for_roles<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: [usize; 2],
        start_stop: bool,
    ) -> Self {
        ChainCrf::new(store, name, &Role::ALL, &sizes, start_stop)
    }

    pub fn for_role<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        role: Role,
        size: usize,
        start_stop: bool,
    ) -> Self {
        ChainCrf::new(store, name, &[role], &[size], start_stop)
    }

    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        roles: &[Role],
        sizes: &[usize],
        start_stop: bool,
    ) -> Self {
        let mut transitions = Vec::new();
        for (a, &ra) in roles.iter().enumerate() {
            for (b, &rb) in roles.iter().enumerate() {
                transitions.push(store.add(
                    format!("{name}.{ra}>{rb}"),
                    Tensor::zeros(sizes[a], sizes[b]),
                ));
            }
        }
        let ends = |store: &mut ParamStore<T>, tag: &str| {
            roles
                .iter()
                .zip(sizes)
                .map(|(r, &n)| store.add(format!("{name}.{tag}.{r}"), Tensor::zeros(1, n)))
                .collect::<Vec<_>>()
        };
        let (start, stop) = if start_stop {
            (Some(ends(store, "start")), Some(ends(store, "stop")))
        } else {
            (None, None)
        };
        ChainCrf {
            roles: roles.to_vec(),
            sizes: sizes.to_vec(),
            transitions,
            start,
            stop,
        }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn has_start_stop(&self) -> bool {
        self.start.is_some()
    }

    /// Every parameter, transitions first.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.transitions.clone();
        ids.extend(self.start.iter().flatten());
        ids.extend(self.stop.iter().flatten());
        ids
    }

    pub fn transition_id(&self, prev: Role, next: Role) -> Option<ParamId> {
        let a = self.kind_of(prev).ok()?;
        let b = self.kind_of(next).ok()?;
        Some(self.transitions[a * self.roles.len() + b])
    }

    pub fn table<T: Real>(&self, store: &ParamStore<T>) -> TransitionTable<T> {
        let get = |ids: &[ParamId]| ids.iter().map(|&i| store.value(i).clone()).collect::<Vec<_>>();
        TransitionTable::from_parts(
            &self.sizes,
            get(&self.transitions),
            self.start.as_deref().map(get),
            self.stop.as_deref().map(get),
        )
        .expect("parameters keep their shapes")
    }

    fn kind_of(&self, role: Role) -> Result<usize> {
        self.roles.iter().position(|&r| r == role).ok_or(Error::MixedRoles)
    }

    fn kinds(&self, roles: &[Role]) -> Result<Vec<usize>> {
        roles.iter().map(|&r| self.kind_of(r)).collect()
    }

    /// Scatters per-role emission rows back into position order.
    fn instance<T: Real>(&self, emissions: &[&Tensor<T>], roles: &[Role]) -> Result<CrfInstance<T>> {
        if emissions.len() != self.roles.len() {
            return Err(Error::Config(format!(
                "{} emission blocks for a CRF over {} roles",
                emissions.len(),
                self.roles.len()
            )));
        }
        let kinds = self.kinds(roles)?;
        let mut next_row = vec![0usize; self.roles.len()];
        let mut rows = Vec::with_capacity(roles.len());
        for &k in &kinds {
            let e = emissions[k];
            if next_row[k] >= e.rows() || e.cols() != self.sizes[k] {
                return Err(Error::shape(
                    "crf emission block",
                    e.shape(),
                    &[next_row[k] + 1, self.sizes[k]],
                ));
            }
            rows.push(e.row(next_row[k]).to_vec());
            next_row[k] += 1;
        }
        for (k, e) in emissions.iter().enumerate() {
            if e.rows() != next_row[k] {
                return Err(Error::shape("crf emission block", e.shape(), &[next_row[k], self.sizes[k]]));
            }
        }
        Ok(CrfInstance::new(rows, kinds))
    }

    /// Negative log-likelihood of `gold` as one tape node.
    ///
    /// `emissions[k]` holds the emission rows of role `roles()[k]`, in the
    /// order those positions appear in `roles`.
    pub fn nll<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        emissions: &[Var],
        roles: &[Role],
        gold: &[usize],
    ) -> Result<Var> {
        if roles.is_empty() {
            return Err(Error::EmptyInput("crf over an empty sequence"));
        }
        let blocks: Vec<&Tensor<T>> = emissions.iter().map(|&v| tape.value(v)).collect();
        let inst = self.instance(&blocks, roles)?;
        let table = self.table(store);
        let g = crf_nll_grad(&inst, gold, &table)?;

        let mut grads: Vec<Tensor<T>> = blocks
            .iter()
            .map(|b| Tensor::zeros(b.rows(), b.cols()))
            .collect();
        let mut next_row = vec![0usize; self.roles.len()];
        for (row, &k) in g.emissions.iter().zip(&inst.kinds) {
            let r = next_row[k];
            for (c, &v) in row.iter().enumerate() {
                grads[k].set(r, c, v);
            }
            next_row[k] += 1;
        }
        grads.extend(g.transitions);
        for rows in [g.start, g.stop] {
            for (row, &n) in rows.into_iter().zip(&self.sizes) {
                grads.push(Tensor::new(vec![1, n], row)?);
            }
        }

        let mut inputs = emissions.to_vec();
        for id in self.param_ids() {
            inputs.push(tape.param(store, id));
        }
        debug_assert_eq!(inputs.len(), grads.len());
        Ok(tape.custom(&inputs, Tensor::scalar(g.loss), Box::new(FusedNll { grads })))
    }

    /// Viterbi labels in position order.
    pub fn decode<T: Real>(
        &self,
        store: &ParamStore<T>,
        emissions: &[&Tensor<T>],
        roles: &[Role],
    ) -> Result<Vec<usize>> {
        let inst = self.instance(emissions, roles)?;
        Ok(viterbi_decode(&inst, &self.table(store))?.0)
    }
}

/// Gradients are computed alongside the loss, so backward only rescales.
struct FusedNll<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> CustomOp<T> for FusedNll<T> {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item();
        self.grads
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.data_mut().iter_mut().for_each(|v| *v *= s);
                Some(g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, check_param_gradients};
    use crate::structured::chain::{crf_nll, CrfInstance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ROLES: [Role; 5] = [Role::Er, Role::Ee, Role::Ee, Role::Er, Role::Ee];

    fn randomized(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (r, c) = (store.value(id).rows(), store.value(id).cols());
            *store.value_mut(id) = Tensor::randn(r, c, rng);
        }
    }

    #[test]
    fn tape_nll_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let crf = ChainCrf::for_roles(&mut store, "ext", [3, 4], false);
        randomized(&mut store, &mut rng);
        let er = Tensor::randn(2, 3, &mut rng);
        let ee = Tensor::randn(3, 4, &mut rng);
        let gold = [2, 0, 3, 1, 1];
        let mut tape = Tape::new();
        let (a, b) = (tape.input(er.clone()), tape.input(ee.clone()));
        let loss = crf.nll(&mut tape, &store, &[a, b], &ROLES, &gold).unwrap();

        let rows = vec![
            er.row(0).to_vec(),
            ee.row(0).to_vec(),
            ee.row(1).to_vec(),
            er.row(1).to_vec(),
            ee.row(2).to_vec(),
        ];
        let inst = CrfInstance::from_roles(rows, &ROLES);
        let direct = crf_nll(&inst, &gold, &crf.table(&store)).unwrap();
        assert!((tape.value(loss).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn emission_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let crf = ChainCrf::for_roles(&mut store, "ext", [3, 4], true);
        randomized(&mut store, &mut rng);
        let inputs = [Tensor::randn(2, 3, &mut rng), Tensor::randn(3, 4, &mut rng)];
        let err = check_gradients(&inputs, 0, |tape, v| {
            crf.nll(tape, &store, v, &ROLES, &[0, 1, 2, 2, 3])
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn transition_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let crf = ChainCrf::for_roles(&mut store, "ext", [3, 4], true);
        randomized(&mut store, &mut rng);
        let er = Tensor::randn(2, 3, &mut rng);
        let ee = Tensor::randn(3, 4, &mut rng);
        let err = check_param_gradients(&store, |tape, s| {
            let a = tape.constant(er.clone());
            let b = tape.constant(ee.clone());
            crf.nll(tape, s, &[a, b], &ROLES, &[1, 1, 0, 2, 3])
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn role_crf_rejects_other_role() {
        let mut store = ParamStore::<f64>::new();
        let crf = ChainCrf::for_role(&mut store, "er", Role::Er, 3, false);
        let mut tape = Tape::new();
        let e = tape.input(Tensor::zeros(2, 3));
        let r = crf.nll(&mut tape, &store, &[e], &[Role::Er, Role::Ee], &[0, 0]);
        assert!(matches!(r, Err(Error::MixedRoles)));
    }

    #[test]
    fn role_crf_leaves_ext_table_untouched() {
        let mut store = ParamStore::<f64>::new();
        let ext = ChainCrf::for_roles(&mut store, "ext", [2, 2], false);
        let er = ChainCrf::for_role(&mut store, "er", Role::Er, 2, false);
        let mut tape = Tape::new();
        let e = tape.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap());
        let loss = er.nll(&mut tape, &store, &[e], &[Role::Er, Role::Er], &[0, 0]).unwrap();
        tape.backward(loss).unwrap();
        store.load_grads(&tape);
        for id in ext.param_ids() {
            assert!(store.grad(id).unwrap().data().iter().all(|&g| g == 0.0));
        }
        let own = er.transition_id(Role::Er, Role::Er).unwrap();
        assert!(store.grad(own).unwrap().data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn block_row_counts_checked() {
        let mut store = ParamStore::<f64>::new();
        let crf = ChainCrf::for_roles(&mut store, "ext", [2, 2], false);
        let er = Tensor::zeros(1, 2);
        let ee = Tensor::zeros(1, 2);
        assert!(crf.decode(&store, &[&er, &ee], &[Role::Er, Role::Er]).is_err());
        assert_eq!(crf.decode(&store, &[&er, &ee], &[Role::Ee, Role::Er]).unwrap().len(), 2);
    }
}
