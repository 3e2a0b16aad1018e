use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_param_gradients;
use crate::data::{synth_corpus_with, synth_features, LabelVocabulary, SynthCorpus, SynthFeatures, Vocabularies};

fn tiny_corpus(n: usize) -> crate::data::Corpus {
    let vocabs = Vocabularies {
        er: LabelVocabulary::from_names(Role::Er, ["a", "b", "c"]).unwrap(),
        ee: LabelVocabulary::from_names(Role::Ee, ["w", "x", "y", "z"]).unwrap(),
    };
    let cfg = SynthCorpus {
        dialogues: n,
        min_turns: 3,
        max_turns: 6,
        ..SynthCorpus::default()
    };
    synth_corpus_with(&cfg, vocabs)
}

fn tiny_config(variant: Variant, d: usize) -> ModelConfig {
    ModelConfig {
        hidden: d,
        heads: 2,
        layers: 1,
        dropout: 0.0,
        mlp_hidden: Some(d),
        ..ModelConfig::new(variant, 6, [3, 4])
    }
}

#[test]
fn every_variant_builds_and_predicts() {
    let corpus = tiny_corpus(3);
    let feats = synth_features(&corpus, &SynthFeatures::new(6, 0.1, 0)).unwrap();
    for v in Variant::ALL {
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(&mut store, &tiny_config(v, 8), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for d in &corpus.dialogues {
            let f = feats.get(&d.id).unwrap().cast::<f64>();
            let mut tape = Tape::new();
            let l = model.dialogue_loss(&mut tape, &store, d, &f, &mut Ctx::eval()).unwrap();
            assert!(tape.value(l).item().is_finite(), "{v}");
            let pred = model.predict(&store, &d.roles(), &f).unwrap();
            assert_eq!(pred.len(), d.len());
            for (p, u) in pred.iter().zip(&d.utterances) {
                assert!(*p < [3, 4][u.role.index()]);
            }
            assert_eq!(
                model.success_probability(&store, &d.roles(), &f).unwrap().is_some(),
                v.speaker_kind().is_some()
            );
        }
    }
}

#[test]
fn variant_ids_round_trip() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.id()), Some(v));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, format!("\"{}\"", v.id()));
    }
    assert_eq!(Variant::parse("dialoguernn"), None);
}

#[test]
fn total_loss_gradcheck() {
    let corpus = tiny_corpus(2);
    let feats = synth_features(&corpus, &SynthFeatures::new(6, 0.5, 3)).unwrap();
    let f: Vec<Tensor<f64>> = corpus.dialogues.iter().map(|d| feats.get(&d.id).unwrap().cast()).collect();
    for v in [Variant::TransformersExtcrf, Variant::ClstmsCrf] {
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(&mut store, &tiny_config(v, 8), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let batch: Vec<_> = corpus.dialogues.iter().zip(&f).collect();
        let err = check_param_gradients(&store, |tape, s| {
            total_loss(tape, s, &model, &batch, 1e-3, &mut Ctx::eval())
        })
        .unwrap();
        assert!(err < 1e-3, "{v}: {err}");
    }
}

#[test]
fn regularizer_strictly_increases_loss() {
    let corpus = tiny_corpus(2);
    let feats = synth_features(&corpus, &SynthFeatures::new(6, 0.5, 3)).unwrap();
    let f: Vec<Tensor<f64>> = corpus.dialogues.iter().map(|d| feats.get(&d.id).unwrap().cast()).collect();
    let batch: Vec<_> = corpus.dialogues.iter().zip(&f).collect();
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(&mut store, &tiny_config(Variant::Transformers, 8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let eval = |lambda| {
        let mut tape = Tape::new();
        let l = total_loss(&mut tape, &store, &model, &batch, lambda, &mut Ctx::eval()).unwrap();
        tape.value(l).item()
    };
    let (plain, reg) = (eval(0.0), eval(1e-5));
    assert!(reg > plain);
    assert!((reg - plain - 1e-5 * store.sum_squares()).abs() < 1e-12);
}

#[test]
fn zero_transition_ext_crf_decodes_emission_argmax() {
    let corpus = tiny_corpus(4);
    let feats = synth_features(&corpus, &SynthFeatures::new(6, 0.5, 3)).unwrap();
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(&mut store, &tiny_config(Variant::TransformersExtcrf, 8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ext = model.ext.as_ref().unwrap();
    for d in &corpus.dialogues {
        let f = feats.get(&d.id).unwrap().cast::<f64>();
        let roles = d.roles();
        let mut tape = Tape::new();
        let x = tape.constant(f.clone());
        let repr = model.represent(&mut tape, &store, x, &roles, &mut Ctx::eval()).unwrap();
        let want: Vec<usize> = (0..d.len())
            .map(|t| {
                let row = tape.gather_rows(repr, &[t]).unwrap();
                let em = ext.emit[roles[t].index()].forward(&mut tape, &store, row).unwrap();
                argmax_rows(tape.value(em))[0]
            })
            .collect();
        assert_eq!(model.predict(&store, &roles, &f).unwrap(), want);
    }
}

#[test]
fn snapshot_round_trip_preserves_predictions() {
    let corpus = tiny_corpus(3);
    let feats = synth_features(&corpus, &SynthFeatures::new(6, 0.3, 1)).unwrap();
    let mut store = ParamStore::<f32>::new();
    let cfg = tiny_config(Variant::TransformersClstmsExtcrf, 8);
    let model = Model::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let bytes = snapshot_to_bytes(&cfg, &store).unwrap();
    assert_eq!(&bytes[..4], b"PFGM");
    let (m2, s2) = snapshot_from_bytes(&bytes).unwrap();
    assert_eq!(m2.config(), &cfg);
    for d in &corpus.dialogues {
        let f = feats.get(&d.id).unwrap();
        assert_eq!(model.predict(&store, &d.roles(), f).unwrap(), m2.predict(&s2, &d.roles(), f).unwrap());
    }
    for (id, p) in store.iter() {
        assert_eq!(&p.value, s2.value(id));
    }
    assert!(snapshot_from_bytes(&bytes[..bytes.len() - 2]).is_err());
    let mut bad = bytes.clone();
    bad[3] = b'X';
    assert!(snapshot_from_bytes(&bad).is_err());
}

#[test]
fn feature_shape_checked() {
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(&mut store, &tiny_config(Variant::Clstm, 8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(model.predict(&store, &[Role::Er, Role::Ee], &Tensor::zeros(2, 5)).is_err());
    assert!(model.predict(&store, &[Role::Er], &Tensor::zeros(2, 6)).is_err());
}
