use proptest::prelude::*;
use strategyseq::autodiff::Tensor;
use strategyseq::data::{
    bi_transform, inside_flags, make_folds, merge_by_position, split_by_speaker, Corpus, Dialogue,
    LabelVocabulary, Role, Utterance, Vocabularies,
};
use strategyseq::metrics::{f1_report, MacroDomain};
use strategyseq::structured::{log_partition, viterbi_decode, CrfInstance, TransitionTable};

fn role(b: bool) -> Role {
    if b {
        Role::Er
    } else {
        Role::Ee
    }
}

fn dialogue(turns: &[(bool, usize)]) -> Dialogue {
    Dialogue {
        id: "p".into(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(index, &(er, label_id))| Utterance {
                index,
                role: role(er),
                text: format!("t{index}"),
                label_id,
            })
            .collect(),
        success: false,
    }
}

fn vocabs(n: usize) -> Vocabularies {
    Vocabularies {
        er: LabelVocabulary::from_names(Role::Er, (0..n).map(|i| format!("r{i}"))).unwrap(),
        ee: LabelVocabulary::from_names(Role::Ee, (0..n).map(|i| format!("e{i}"))).unwrap(),
    }
}

proptest! {
    #[test]
    fn tied_ext_table_equals_single_table(
        n in 1usize..4,
        roles in proptest::collection::vec(any::<bool>(), 1..6),
        seed_vals in proptest::collection::vec(-2.0f64..2.0, 64),
    ) {
        let t = roles.len();
        let m = Tensor::new(vec![n, n], seed_vals[..n * n].to_vec()).unwrap();
        let tied = TransitionTable::from_parts(&[n, n], vec![m.clone(), m.clone(), m.clone(), m.clone()], None, None).unwrap();
        let single = TransitionTable::from_parts(&[n], vec![m], None, None).unwrap();
        let em: Vec<Vec<f64>> = (0..t).map(|i| seed_vals[16 + i * n..16 + (i + 1) * n].to_vec()).collect();
        let roles: Vec<Role> = roles.into_iter().map(role).collect();
        let ext = CrfInstance::from_roles(em.clone(), &roles);
        let one = CrfInstance::new(em, vec![0; t]);
        let (a, b) = (log_partition(&ext, &tied).unwrap(), log_partition(&one, &single).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert_eq!(viterbi_decode(&ext, &tied).unwrap(), viterbi_decode(&one, &single).unwrap());
    }

    #[test]
    fn b_labels_count_runs(turns in proptest::collection::vec((any::<bool>(), 0usize..3), 1..30)) {
        let d = dialogue(&turns);
        let runs = 1 + turns.windows(2).filter(|w| w[0] != w[1]).count();
        let flags = inside_flags(&d);
        prop_assert!(!flags[0]);
        prop_assert_eq!(flags.iter().filter(|f| !**f).count(), runs);
        let bi = bi_transform(&Corpus::new(vec![d], vocabs(3)));
        prop_assert_eq!(bi.vocabs.sizes(), [6, 6]);
    }

    #[test]
    fn alternating_roles_are_all_begin(labels in proptest::collection::vec(0usize..2, 1..20)) {
        let turns: Vec<(bool, usize)> = labels.iter().enumerate().map(|(i, &l)| (i % 2 == 0, l)).collect();
        prop_assert!(inside_flags(&dialogue(&turns)).iter().all(|f| !f));
    }

    #[test]
    fn split_then_merge_is_identity(turns in proptest::collection::vec((any::<bool>(), 0usize..3), 0..25)) {
        let d = dialogue(&turns);
        let (er, ee) = split_by_speaker(&d);
        prop_assert!(er.iter().all(|u| u.role == Role::Er) && ee.iter().all(|u| u.role == Role::Ee));
        let er = er.into_iter().map(|u| (u.index, u.clone())).collect();
        let ee = ee.into_iter().map(|u| (u.index, u.clone())).collect();
        prop_assert_eq!(merge_by_position(er, ee).unwrap(), d.utterances);
    }

    #[test]
    fn macro_f1_permutation_invariant(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..40),
        shift in 1usize..5,
    ) {
        let v = LabelVocabulary::from_names(Role::Er, (0..5).map(|i| format!("l{i}"))).unwrap();
        let (g, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let perm = |x: &usize| (x + shift) % 5;
        let a = f1_report(&g, &p, &v, MacroDomain::GoldPresent).unwrap();
        let b = f1_report(&g.iter().map(perm).collect::<Vec<_>>(), &p.iter().map(perm).collect::<Vec<_>>(), &v, MacroDomain::GoldPresent).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
        for k in 0..5 {
            prop_assert_eq!(a.labels[k].f1, b.labels[perm(&k)].f1);
        }
    }

    #[test]
    fn folds_partition_indices(n in 2usize..60, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = make_folds(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; n];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            for &i in &f.test {
                seen[i] += 1;
                prop_assert!(!f.train.contains(&i));
            }
            let (lo, hi) = (n / k, n.div_ceil(k));
            prop_assert!(f.test.len() >= lo && f.test.len() <= hi);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}
