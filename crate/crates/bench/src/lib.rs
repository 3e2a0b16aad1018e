//! Fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strategyseq::autodiff::Tensor;
use strategyseq::data::{Dialogue, Role, Utterance};
use strategyseq::structured::{CrfInstance, TransitionTable};

/// Random alternating-run role pattern of length `t`.
pub fn roles(t: usize, seed: u64) -> Vec<Role> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Role::Er;
    (0..t)
        .map(|_| {
            if rng.random_bool(0.6) {
                r = if r == Role::Er { Role::Ee } else { Role::Er };
            }
            r
        })
        .collect()
}

/// ExtCRF instance with the default label-set sizes and N(0,1) scores.
pub fn crf_case(t: usize, seed: u64) -> (CrfInstance<f64>, TransitionTable<f64>, Vec<usize>) {
    let sizes = [11usize, 13];
    let roles = roles(t, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let emissions = roles
        .iter()
        .map(|r| (0..sizes[r.index()]).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut table = TransitionTable::zeros(&sizes, false);
    for p in 0..2 {
        for n in 0..2 {
            *table.matrix_mut(p, n) = Tensor::randn(sizes[p], sizes[n], &mut rng);
        }
    }
    let gold = roles.iter().map(|r| rng.random_range(0..sizes[r.index()])).collect();
    (CrfInstance::from_roles(emissions, &roles), table, gold)
}

pub fn features(t: usize, d: usize, seed: u64) -> Tensor<f32> {
    Tensor::randn(t, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn dialogue(t: usize, seed: u64) -> Dialogue {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dialogue {
        id: format!("bench-{seed}"),
        utterances: roles(t, seed)
            .into_iter()
            .enumerate()
            .map(|(index, role)| Utterance {
                index,
                role,
                text: String::new(),
                label_id: rng.random_range(0..if role == Role::Er { 11 } else { 13 }),
            })
            .collect(),
        success: rng.random_bool(0.5),
    }
}
