//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines are always printed; exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use strategyseq::autodiff::gradcheck::{check_gradients, check_param_gradients};
use strategyseq::autodiff::layers::{
    scaled_dot_attention, Ctx, LayerNorm, Linear, Lstm, LstmLayer, MultiHeadAttention,
    PositionWiseFfn,
};
use strategyseq::autodiff::{ParamStore, Tape, Tensor, Var};
use strategyseq::data::{
    bi_transform, load_corpus, merge_by_position, parse_corpus, split_by_speaker, strip_bi,
    synth_corpus, synth_features, Corpus, Dialogue, FeatureStore, Role, SynthCorpus,
    SynthFeatures, Utterance,
};
use strategyseq::metrics::{f1_report, MacroDomain};
use strategyseq::model::{total_loss, Model, ModelConfig, Variant};
use strategyseq::structured::{
    crf_nll_grad, log_partition, viterbi_decode, ChainCrf, CrfInstance, SoftmaxHead,
    SuccessClassifier, TransitionTable,
};
use strategyseq::train::{run_grid, run_variant, TrainConfig};

struct Verdict {
    name: &'static str,
    /// `None`: prerequisites missing, nothing was checked.
    pass: Option<bool>,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict {
        name,
        pass: Some(pass),
        detail,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| normal(rng)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// CRF against brute-force enumeration

/// Every label sequence for the given per-position label counts.
fn all_paths(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

fn crf_correctness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let sizes = [3usize, 4];
    let (mut worst_z, mut worst_v, mut worst_g) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let t = rng.random_range(1..=6);
        let roles: Vec<Role> = (0..t)
            .map(|_| if rng.random_bool(0.5) { Role::Er } else { Role::Ee })
            .collect();
        let kinds: Vec<usize> = roles.iter().map(|r| r.index()).collect();
        let emissions: Vec<Vec<f64>> = kinds
            .iter()
            .map(|&k| (0..sizes[k]).map(|_| normal(&mut rng)).collect())
            .collect();
        let mut table = TransitionTable::<f64>::zeros(&sizes, false);
        let mut trans = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
        for p in 0..2 {
            for n in 0..2 {
                let m = randn(sizes[p], sizes[n], &mut rng);
                trans[p][n] = (0..sizes[p]).map(|i| m.row(i).to_vec()).collect::<Vec<_>>();
                *table.matrix_mut(p, n) = m;
            }
        }
        let score = |path: &[usize]| -> f64 {
            let mut s = 0.0;
            for i in 0..t {
                s += emissions[i][path[i]];
                if i > 0 {
                    s += trans[kinds[i - 1]][kinds[i]][path[i - 1]][path[i]];
                }
            }
            s
        };
        let paths = all_paths(&kinds.iter().map(|&k| sizes[k]).collect::<Vec<_>>());
        let scores: Vec<f64> = paths.iter().map(|p| score(p)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();

        let inst = CrfInstance::from_roles(emissions.clone(), &roles);
        let z = log_partition(&inst, &table).unwrap();
        worst_z = worst_z.max((z - log_z).abs() / log_z.abs().max(1e-300));
        let (path, vscore) = viterbi_decode(&inst, &table).unwrap();
        worst_v = worst_v.max((vscore - max).abs()).max((score(&path) - max).abs());

        let gold = &paths[rng.random_range(0..paths.len())];
        let g = crf_nll_grad(&inst, gold, &table).unwrap();
        for i in 0..t {
            for y in 0..sizes[kinds[i]] {
                let marginal: f64 = paths
                    .iter()
                    .zip(&scores)
                    .filter(|(p, _)| p[i] == y)
                    .map(|(_, s)| (s - log_z).exp())
                    .sum();
                let want = marginal - f64::from(u8::from(gold[i] == y));
                worst_g = worst_g.max((g.emissions[i][y] - want).abs());
            }
        }
    }
    let elapsed = started.elapsed();
    let pass = worst_z < 1e-6 && worst_v <= 1e-9 && worst_g < 1e-5 && elapsed < Duration::from_secs(10);
    verdict(
        "CRF correctness (500 instances vs enumeration)",
        pass,
        format!(
            "logZ rel err {worst_z:.2e} (<1e-6), viterbi gap {worst_v:.2e} (<=1e-9), grad err {worst_g:.2e} (<1e-5), {:.2}s (<10s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// finite-difference gradient suite

type OpCheck = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> strategyseq::Result<Var>>);

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    let data = t.data().iter().map(|&v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v }).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn op_checks(rng: &mut ChaCha8Rng) -> Vec<OpCheck> {
    let mut r = |a, b| randn(a, b, rng);
    let (a34, b34, c42, row4) = (r(3, 4), r(3, 4), r(4, 2), r(1, 4));
    let roles = vec![Role::Er, Role::Ee, Role::Ee, Role::Er, Role::Ee];
    let mut crf_store = ParamStore::<f64>::new();
    let ext = ChainCrf::for_roles(&mut crf_store, "ext", [3, 4], true);
    let mut tr = ChaCha8Rng::seed_from_u64(9);
    for id in crf_store.ids().collect::<Vec<_>>() {
        let v = crf_store.value(id);
        let t = randn(v.rows(), v.cols(), &mut tr);
        *crf_store.value_mut(id) = t;
    }
    let role_crf_store = {
        let mut s = ParamStore::<f64>::new();
        let c = ChainCrf::for_role(&mut s, "ee", Role::Ee, 4, false);
        (s, c)
    };
    let (er_e, ee_e, ee_only) = (r(2, 3), r(3, 4), r(3, 4));
    vec![
        ("matmul", vec![a34.clone(), c42], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![a34.clone(), b34.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![a34.clone(), b34.clone()], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![a34.clone(), b34.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![a34.clone(), row4], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("scale", vec![a34.clone()], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("relu", vec![away_from_zero(a34.clone())], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("tanh", vec![a34.clone()], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![a34.clone()], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("softmax_rows", vec![a34.clone()], Box::new(|t, v| Ok(t.softmax_rows(v[0])))),
        ("log_softmax_rows", vec![a34.clone()], Box::new(|t, v| Ok(t.log_softmax_rows(v[0])))),
        ("transpose", vec![a34.clone()], Box::new(|t, v| Ok(t.transpose(v[0])))),
        ("concat_cols", vec![a34.clone(), b34.clone()], Box::new(|t, v| t.concat_cols(&[v[0], v[1]]))),
        ("concat_rows", vec![a34.clone(), b34.clone()], Box::new(|t, v| t.concat_rows(&[v[1], v[0]]))),
        ("gather_rows", vec![a34.clone()], Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2]))),
        ("slice_cols", vec![a34.clone()], Box::new(|t, v| t.slice_cols(v[0], 1, 3))),
        ("sum", vec![a34.clone()], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("sum_squares", vec![a34.clone()], Box::new(|t, v| Ok(t.sum_squares(v[0])))),
        ("mean_rows", vec![a34.clone()], Box::new(|t, v| t.mean_rows(v[0]))),
        ("pick_sum", vec![a34.clone()], Box::new(|t, v| t.pick_sum(v[0], &[(0, 1), (2, 3), (0, 1)]))),
        (
            "layer_norm",
            vec![a34.clone(), r(1, 4), r(1, 4)],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "dropout",
            vec![a34.clone()],
            Box::new(|t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(4))),
        ),
        (
            "scaled_dot_attention",
            vec![r(3, 4), r(3, 4), r(3, 2)],
            Box::new(|t, v| scaled_dot_attention(t, v[0], v[1], v[2])),
        ),
        (
            "cross_entropy",
            vec![a34.clone()],
            Box::new(|t, v| strategyseq::structured::cross_entropy(t, v[0], &[3, 0, 1])),
        ),
        (
            "ext CRF nll (emissions)",
            vec![er_e, ee_e],
            Box::new(move |t, v| ext.nll(t, &crf_store, &[v[0], v[1]], &roles, &[2, 1, 3, 0, 0])),
        ),
        (
            "role CRF nll (emissions)",
            vec![ee_only],
            Box::new(move |t, v| {
                let (s, c) = &role_crf_store;
                c.nll(t, s, &[v[0]], &[Role::Ee; 3], &[1, 1, 3])
            }),
        ),
    ]
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> strategyseq::Result<Var> {
    let s = tape.shape(out).to_vec();
    let w = tape.constant(randn(s[0], s[1], &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

type ModuleCheck = (&'static str, ParamStore<f64>, Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> strategyseq::Result<Var>>);

fn module_checks() -> Vec<ModuleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = randn(4, 6, &mut rng);
    let mut out: Vec<ModuleCheck> = Vec::new();

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "lin", 6, 3, true, &mut rng);
    let xc = x.clone();
    out.push(("Linear", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = lin.forward(t, s, x)?;
        weighted_sum(t, y, 1)
    })));

    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "mha", 6, 2, &mut rng).unwrap();
    let xc = x.clone();
    out.push(("MultiHeadAttention", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = mha.forward(t, s, x, &mut Ctx::eval(), 0.1)?;
        weighted_sum(t, y, 2)
    })));

    let mut s = ParamStore::new();
    let ffn = PositionWiseFfn::new(&mut s, "ffn", 6, 5, &mut rng);
    let xc = x.clone();
    out.push(("PositionWiseFfn", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = ffn.forward(t, s, x)?;
        weighted_sum(t, y, 3)
    })));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 6);
    let xc = x.clone();
    out.push(("LayerNorm", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = ln.forward(t, s, x)?;
        weighted_sum(t, y, 4)
    })));

    let mut s = ParamStore::new();
    let lstm = Lstm::new(&mut s, "lstm", 6, 3, &mut rng);
    let xc = x.clone();
    out.push(("Lstm (reverse)", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = lstm.forward(t, s, x, true)?;
        weighted_sum(t, y, 5)
    })));

    let mut s = ParamStore::new();
    let bl = LstmLayer::new(&mut s, "bl", 6, 3, true, &mut rng);
    let xc = x.clone();
    out.push(("LstmLayer (bidirectional)", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        let y = bl.run(t, s, x)?;
        weighted_sum(t, y, 6)
    })));

    let mut s = ParamStore::new();
    let head = SoftmaxHead::new(&mut s, "head", 6, 5, 3, &mut rng);
    let xc = x.clone();
    out.push(("SoftmaxHead loss", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        head.loss(t, s, x, &[0, 2, 2, 1])
    })));

    let mut s = ParamStore::new();
    let sc = SuccessClassifier::new(&mut s, "succ", 6, 5, &mut rng).unwrap();
    let xc = x.clone();
    out.push(("SuccessClassifier loss", s, Box::new(move |t, s| {
        let x = t.constant(xc.clone());
        sc.loss(t, s, x, true, &mut Ctx::eval(), 0.1)
    })));

    let mut s = ParamStore::new();
    let crf = ChainCrf::for_roles(&mut s, "crf", [3, 4], true);
    for id in s.ids().collect::<Vec<_>>() {
        let v = s.value(id);
        let t = randn(v.rows(), v.cols(), &mut rng);
        *s.value_mut(id) = t;
    }
    // two chains so every transition block and every start/stop row is used
    let first = (randn(2, 3, &mut rng), randn(3, 4, &mut rng));
    let second = (randn(2, 3, &mut rng), randn(1, 4, &mut rng));
    out.push(("ext CRF nll (transitions, start/stop)", s, Box::new(move |t, s| {
        let a = t.constant(first.0.clone());
        let b = t.constant(first.1.clone());
        let x = crf.nll(t, s, &[a, b], &[Role::Ee, Role::Er, Role::Er, Role::Ee, Role::Ee], &[3, 0, 2, 1, 1])?;
        let a = t.constant(second.0.clone());
        let b = t.constant(second.1.clone());
        let y = crf.nll(t, s, &[a, b], &[Role::Er, Role::Ee, Role::Er], &[1, 2, 0])?;
        t.add(x, y)
    })));
    out
}

fn toy_dialogue() -> (Dialogue, Tensor<f64>) {
    let turns = [(Role::Er, 0), (Role::Ee, 3), (Role::Ee, 1), (Role::Er, 2), (Role::Er, 2), (Role::Ee, 0)];
    let d = Dialogue {
        id: "toy".into(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(index, &(role, label_id))| Utterance {
                index,
                role,
                text: String::new(),
                label_id,
            })
            .collect(),
        success: true,
    };
    (d, randn(6, 8, &mut ChaCha8Rng::seed_from_u64(31)))
}

fn gradient_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut worst_op = (0.0f64, "");
    let mut failures = Vec::new();
    for (k, (name, inputs, f)) in op_checks(&mut rng).into_iter().enumerate() {
        let e = check_gradients(&inputs, k as u64, f).unwrap();
        if e > worst_op.0 {
            worst_op = (e, name);
        }
        if e >= 1e-4 {
            failures.push(format!("{name} {e:.1e}"));
        }
    }
    for (name, store, f) in module_checks() {
        let e = check_param_gradients(&store, f).unwrap();
        if e > worst_op.0 {
            worst_op = (e, name);
        }
        if e >= 1e-4 {
            failures.push(format!("{name} {e:.1e}"));
        }
    }

    let (d, x) = toy_dialogue();
    let mut worst_e2e = (0.0f64, "");
    let mut configs: Vec<(&'static str, ModelConfig)> = Variant::ALL
        .iter()
        .map(|&v| {
            let mut c = ModelConfig::new(v, 8, [3, 4]);
            c.hidden = 8;
            c.layers = 1;
            c.heads = 2;
            c.mlp_hidden = Some(8);
            (v.id(), c)
        })
        .collect();
    let mut ss = configs.last().unwrap().1.clone();
    ss.variant = Variant::TransformersExtcrf;
    ss.start_stop = true;
    configs.push(("transformers-extcrf+start/stop", ss));
    for (name, cfg) in configs {
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let e = check_param_gradients(&store, |t, s| {
            total_loss(t, s, &model, &[(&d, &x)], 1e-3, &mut Ctx::eval())
        })
        .unwrap();
        if e > worst_e2e.0 {
            worst_e2e = (e, name);
        }
        if e >= 1e-3 {
            failures.push(format!("total_loss[{name}] {e:.1e}"));
        }
    }
    verdict(
        "Gradient suite (f64 central differences)",
        failures.is_empty(),
        format!(
            "worst op {:.1e} in {} (<1e-4), worst total_loss {:.1e} in {} (<1e-3){}",
            worst_op.0,
            worst_op.1,
            worst_e2e.0,
            worst_e2e.1,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// structural round-trips

fn random_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let min = rng.random_range(1..=5);
    synth_corpus(&SynthCorpus {
        dialogues: rng.random_range(1..=6),
        min_turns: min,
        max_turns: min + rng.random_range(0..=8),
        switch_prob: rng.random(),
        seed: rng.random(),
    })
}

fn labels_by_name(c: &Corpus) -> Vec<Vec<String>> {
    c.dialogues
        .iter()
        .map(|d| {
            d.utterances
                .iter()
                .map(|u| c.vocabs.get(u.role).name(u.label_id).unwrap().to_string())
                .collect()
        })
        .collect()
}

fn round_trips() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let dir = tempfile::tempdir().unwrap();
    let (mut split_ok, mut bi_ok, mut feat_ok) = (0, 0, 0);
    for k in 0..1000 {
        let c = random_corpus(&mut rng);

        let merged = c.dialogues.iter().all(|d| {
            let (er, ee) = split_by_speaker(d);
            let er = er.into_iter().map(|u| (u.index, u.clone())).collect();
            let ee = ee.into_iter().map(|u| (u.index, u.clone())).collect();
            merge_by_position(er, ee).map(|m| m == d.utterances).unwrap_or(false)
        });
        split_ok += usize::from(merged);

        let bi = bi_transform(&c);
        let direct = strip_bi(&bi).map(|s| s.dialogues == c.dialogues && s.vocabs == c.vocabs);
        let reread = parse_corpus(&bi.to_jsonl(), Path::new("bi"), None)
            .and_then(|b| strip_bi(&b))
            .map(|s| labels_by_name(&s) == labels_by_name(&c));
        bi_ok += usize::from(direct.unwrap_or(false) && reread.unwrap_or(false));

        let fcfg = SynthFeatures::new(rng.random_range(1..=16), rng.random_range(0.0..2.0), rng.random());
        let fs = synth_features(&c, &fcfg).unwrap();
        let path = dir.path().join(format!("f{k}.bin"));
        fs.write(&path).unwrap();
        let back = FeatureStore::load(&path, &c);
        feat_ok += usize::from(back.map(|b| b == fs).unwrap_or(false));
        fs::remove_file(&path).unwrap();
    }
    verdict(
        "Structural round-trips (1000 random corpora)",
        split_ok == 1000 && bi_ok == 1000 && feat_ok == 1000,
        format!("merge/split {split_ok}/1000, BI strip {bi_ok}/1000, features.bin {feat_ok}/1000"),
    )
}

// ---------------------------------------------------------------------------
// learnability on planted data

fn learnability() -> Verdict {
    let corpus = synth_corpus(&SynthCorpus::default());
    let features = synth_features(&corpus, &SynthFeatures::new(32, 0.1, 1)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for v in [Variant::Clstms, Variant::TransformersExtcrf] {
        let cfg = TrainConfig {
            hidden: 32,
            layers: 1,
            heads: 2,
            mlp_hidden: Some(32),
            epochs: 40,
            folds: 5,
            repeats: 1,
            learning_rate: Some(1e-3),
            ..TrainConfig::for_variant(v)
        };
        let started = Instant::now();
        let report = pool.install(|| run_variant(&cfg, &corpus, &features)).unwrap().report;
        let secs = started.elapsed().as_secs_f64();
        let (er, ee) = (report.er.macro_f1.mean, report.ee.macro_f1.mean);
        pass &= er >= 0.95 && ee >= 0.95 && secs < 300.0 && report.diverged == 0;
        parts.push(format!(
            "{} ER {er:.3} EE {ee:.3} in {} epochs, {secs:.0}s on one thread",
            v.display_name(),
            cfg.epochs
        ));
    }
    verdict(
        "Learnability (planted corpus, held-out macro F1 >= 0.95)",
        pass,
        parts.join("; "),
    )
}

// ---------------------------------------------------------------------------
// metrics against an independent reference

/// Direct counting, no confusion matrix.
fn reference_scores(gold: &[usize], pred: &[usize], n: usize) -> (f64, f64) {
    let mut f1s = Vec::new();
    let mut weighted = 0.0;
    let mut total = 0usize;
    for k in 0..n {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == k && **p == k).count();
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != k && **p == k).count();
        let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == k && **p != k).count();
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = tp as f64 / support as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        f1s.push(f);
        weighted += f * support as f64;
        total += support;
    }
    (f1s.iter().sum::<f64>() / f1s.len() as f64, weighted / total as f64)
}

/// scikit-learn's scores for the same sets, if a Python with sklearn exists.
fn sklearn_scores(sets: &[(Vec<usize>, Vec<usize>)]) -> Option<Vec<(f64, f64)>> {
    let payload = serde_json::to_string(sets).ok()?;
    let script = r#"
import json, sys
from sklearn.metrics import f1_score
out = []
for g, p in json.load(sys.stdin):
    labels = sorted(set(g))
    out.append([f1_score(g, p, labels=labels, average="macro", zero_division=0),
                f1_score(g, p, labels=labels, average="weighted", zero_division=0)])
print(json.dumps(out))
"#;
    let mut child = Command::new("python3")
        .args(["-c", script])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::null())
        .spawn()
        .ok()?;
    use std::io::Write;
    child.stdin.take()?.write_all(payload.as_bytes()).ok()?;
    let out = child.wait_with_output().ok()?;
    if !out.status.success() {
        return None;
    }
    let v: Vec<(f64, f64)> = serde_json::from_slice(&out.stdout).ok()?;
    Some(v)
}

fn metric_fidelity() -> Verdict {
    let vocab = |n: usize| {
        strategyseq::data::LabelVocabulary::from_names(Role::Er, (0..n).map(|i| format!("l{i}"))).unwrap()
    };
    let mut hand_ok = true;
    let r = f1_report(&[0, 0, 1], &[0, 1, 1], &vocab(3), MacroDomain::GoldPresent).unwrap();
    hand_ok &= r.labels[0].f1 == 2.0 / 3.0 && r.labels[1].f1 == 2.0 / 3.0 && r.macro_f1 == 2.0 / 3.0;
    let r = f1_report(&[2, 0, 1, 1], &[2, 0, 1, 1], &vocab(4), MacroDomain::GoldPresent).unwrap();
    hand_ok &= r.macro_f1 == 1.0 && r.weighted_f1 == 1.0;
    let a = f1_report(&[0, 0, 1], &[0, 1, 1], &vocab(2), MacroDomain::GoldPresent).unwrap();
    let b = f1_report(&[0, 0, 1], &[0, 1, 1], &vocab(7), MacroDomain::GoldPresent).unwrap();
    hand_ok &= a.macro_f1 == b.macro_f1;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sets = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let len = rng.random_range(1..=60);
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        let pred: Vec<usize> = gold
            .iter()
            .map(|&g| if rng.random_bool(0.5) { g } else { rng.random_range(0..n) })
            .collect();
        sets.push((n, gold, pred));
    }
    let mut worst = 0.0f64;
    let mut ours = Vec::with_capacity(sets.len());
    for (n, g, p) in &sets {
        let r = f1_report(g, p, &vocab(*n), MacroDomain::GoldPresent).unwrap();
        let (m, w) = reference_scores(g, p, *n);
        worst = worst.max((r.macro_f1 - m).abs()).max((r.weighted_f1 - w).abs());
        ours.push((r.macro_f1, r.weighted_f1));
    }
    let plain: Vec<(Vec<usize>, Vec<usize>)> = sets.iter().map(|(_, g, p)| (g.clone(), p.clone())).collect();
    let (sk_note, sk_worst) = match sklearn_scores(&plain) {
        Some(sk) => {
            let w = ours
                .iter()
                .zip(&sk)
                .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
                .fold(0.0, f64::max);
            (format!(", scikit-learn max diff {w:.1e}"), w)
        }
        None => (", scikit-learn unavailable".to_string(), 0.0),
    };
    verdict(
        "Metric fidelity (hand cases + 1000 random sets)",
        hand_ok && worst <= 1e-12 && sk_worst <= 1e-12,
        format!("hand cases {}, counting reference max diff {worst:.1e}{sk_note} (<=1e-12)", if hand_ok { "exact" } else { "WRONG" }),
    )
}

// ---------------------------------------------------------------------------
// reference numbers on the real corpus (needs external data)

fn reference_numbers() -> Verdict {
    let name = "Reference comparison numbers (real corpus + LM features)";
    let (Some(corpus_path), Some(feat_path)) = (
        std::env::var_os("STRATEGYSEQ_CORPUS").map(PathBuf::from),
        std::env::var_os("STRATEGYSEQ_FEATURES").map(PathBuf::from),
    ) else {
        return Verdict {
            name,
            pass: None,
            detail: "set STRATEGYSEQ_CORPUS and STRATEGYSEQ_FEATURES to the annotated corpus and its 1024-dim features".into(),
        };
    };
    let corpus = load_corpus(&corpus_path, None).unwrap();
    let features = FeatureStore::load(&feat_path, &corpus).unwrap();
    let cfgs: Vec<TrainConfig> = Variant::ALL.iter().map(|&v| TrainConfig::for_variant(v)).collect();
    let grid = run_grid(&cfgs, &corpus, &features).unwrap();
    let macro_pct = |v: Variant, r: Role| 100.0 * grid.row(v.id()).unwrap().role(r).macro_f1.mean;
    let er = macro_pct(Variant::TransformersExtcrf, Role::Er);
    let ee = macro_pct(Variant::TransformersExtcrf, Role::Ee);
    let near = (er - 65.2).abs() <= 2.0 && (ee - 51.6).abs() <= 2.0;
    let mut crf_gain = Vec::new();
    for v in Variant::ALL {
        if let Some(base) = v.crf_free_counterpart() {
            for r in Role::ALL {
                crf_gain.push((v, r, macro_pct(v, r) - macro_pct(base, r)));
            }
        }
    }
    let no_crf_gain = crf_gain.iter().all(|(_, _, g)| *g <= 0.5);
    let lstm_wins = Role::ALL
        .iter()
        .all(|&r| macro_pct(Variant::Clstms, r) >= macro_pct(Variant::Transformers, r));
    let best_gain = crf_gain.iter().map(|g| g.2).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        name,
        near && no_crf_gain && lstm_wins,
        format!(
            "Transformers-ExtCRF ER {er:.1} (65.2±2) EE {ee:.1} (51.6±2); largest CRF gain {best_gain:.2} (<=0.5); cLSTMs >= Transformers: {lstm_wins}"
        ),
    )
}

// ---------------------------------------------------------------------------
// transition statistics through the command line

fn transition_stats_cli() -> Verdict {
    let snippet = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/snippet.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_strategyseq"))
        .args(["stats", "--corpus", snippet.to_str().unwrap(), "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    if !status.status.success() {
        return verdict(
            "Transition statistics (snippet corpus via stats)",
            false,
            format!("stats exited with {:?}", status.status.code()),
        );
    }
    // adjacent pairs read off the snippet dialogue by hand
    let pairs: [(&str, &str, &str, &str); 15] = [
        ("ER", "task-related-inquiry", "EE", "positive-to-inquiry"),
        ("EE", "positive-to-inquiry", "ER", "source-related-inquiry"),
        ("ER", "source-related-inquiry", "EE", "positive-to-inquiry"),
        ("EE", "positive-to-inquiry", "EE", "ask-org-info"),
        ("EE", "ask-org-info", "ER", "credibility-appeal"),
        ("ER", "credibility-appeal", "EE", "acknowledgement"),
        ("EE", "acknowledgement", "EE", "ask-org-info"),
        ("EE", "ask-org-info", "ER", "credibility-appeal"),
        ("ER", "credibility-appeal", "ER", "emotion-appeal"),
        ("ER", "emotion-appeal", "ER", "logical-appeal"),
        ("ER", "logical-appeal", "EE", "acknowledgement"),
        ("EE", "acknowledgement", "EE", "ask-persuader-donation-intention"),
        ("EE", "ask-persuader-donation-intention", "ER", "self-modeling"),
        ("ER", "self-modeling", "ER", "logical-appeal"),
        ("ER", "logical-appeal", "EE", "other"),
    ];
    let mut expected: HashMap<(String, String, String, String), f64> = HashMap::new();
    for (a, b, c, d) in pairs {
        *expected.entry((a.into(), b.into(), c.into(), d.into())).or_default() += 1.0;
    }
    let mut cells = 0;
    let mut wrong = Vec::new();
    let mut matched = 0.0;
    for prev in ["ER", "EE"] {
        for next in ["ER", "EE"] {
            let csv = fs::read_to_string(dir.path().join(format!("transitions-{prev}-{next}.csv"))).unwrap();
            let mut lines = csv.lines();
            let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
            for line in lines {
                let fields: Vec<&str> = line.split(',').collect();
                for (col, v) in header.iter().zip(&fields).skip(1) {
                    let got: f64 = v.parse().unwrap_or(f64::NAN);
                    let key = (prev.to_string(), fields[0].to_string(), next.to_string(), col.clone());
                    let want = expected.get(&key).copied().unwrap_or(0.0);
                    matched += if want > 0.0 { want } else { 0.0 };
                    cells += 1;
                    if got != want {
                        wrong.push(format!("{prev}:{} -> {next}:{} = {got} (want {want})", fields[0], col));
                    }
                }
            }
        }
    }
    let key = ("EE".to_string(), "ask-org-info".to_string(), "ER".to_string(), "credibility-appeal".to_string());
    let headline = expected[&key];
    verdict(
        "Transition statistics (snippet corpus via stats)",
        wrong.is_empty() && matched == 15.0,
        format!(
            "{cells} cells checked, {} mismatches, pair mass {matched}/15, EE->ER ask-org-info->credibility-appeal = {headline:?}{}",
            wrong.len(),
            if wrong.is_empty() { String::new() } else { format!(": {}", wrong.join("; ")) }
        ),
    )
}

fn main() {
    let checks: [fn() -> Verdict; 7] = [
        crf_correctness,
        gradient_suite,
        round_trips,
        learnability,
        metric_fidelity,
        reference_numbers,
        transition_stats_cli,
    ];
    let mut failed = 0;
    for check in checks {
        let v = check();
        let tag = match v.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "NOT RUN",
        };
        println!("[{tag}] {}: {}", v.name, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
