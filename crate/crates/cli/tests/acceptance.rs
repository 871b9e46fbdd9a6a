//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use genrank::backbone::{init_model, save_checkpoint, DecodeState, Model, ModelConfig};
use genrank::corpus::Corpus;
use genrank::data::{
    generate_synthetic, write_embeddings, write_sequences, Instance, SyntheticConfig,
};
use genrank::decode::{beam_search, BeamOptions, PrefixState};
use genrank::evaluation::{
    evaluate, ndcg_at_k, recall_at_k, run_ablation, AblationAxis, EvalConfig, EvalResult, YhatMode,
};
use genrank::numerics::{finite_difference_check, Precision, Tensor};
use genrank::serialization::{serialize_history, Vocab};
use genrank::tokenizer::{fit_codebook, save_codebook, tokenize_catalog, SemanticId, SidIndex};
use genrank::training::{
    loss_sid, stage2_gradients, stage2_loss, train_stage1, train_stage2, LossTerms, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale toy configuration shared by the training criteria.
const K: usize = 16;
const S4_MAX: usize = 64;
const WINDOW: usize = 16;
const STAGE1_STEPS: usize = 600;
const STAGE2_STEPS: usize = 150;

struct Outcome {
    id: &'static str,
    pass: bool,
    secs: f64,
    detail: String,
}

fn emit(o: &Outcome) {
    println!(
        "{} {} ({:.1}s) {}",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.secs,
        o.detail
    );
}

fn timed(id: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = f();
    let o = Outcome {
        id,
        pass,
        secs: t.elapsed().as_secs_f64(),
        detail,
    };
    emit(&o);
    o
}

fn toy_model_config(vocab: usize, precision: Precision) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d_model: 32,
        heads: 4,
        ffn: 128,
        context: 256,
        vocab,
        precision,
        ..ModelConfig::default()
    }
}

/// A freshly initialised model with weights redrawn at scale `std` (gains
/// around 1), so outputs depend strongly on inputs.
fn random_model(cfg: &ModelConfig, rng: &mut ChaCha8Rng, std: f64) -> Model {
    let base = init_model(cfg).unwrap();
    let params = base.params().map(|name, t| {
        let data = t
            .data()
            .iter()
            .map(|_| {
                let x = rng.gen_range(-1.0..1.0) * std * 3f64.sqrt();
                if name.ends_with("_g") {
                    1.0 + x
                } else {
                    x
                }
            })
            .collect();
        Arc::new(
            Tensor::new(t.shape().to_vec(), data)
                .unwrap()
                .rounded(cfg.precision),
        )
    });
    Model::from_params(cfg.clone(), params).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn ac1_kv_cache() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 2];
    for case in 0..100u64 {
        let tokens: Vec<usize> = (0..rng.gen_range(1..80))
            .map(|_| rng.gen_range(0..40))
            .collect();
        let mut cuts: Vec<usize> = (0..rng.gen_range(0..8))
            .map(|_| rng.gen_range(1..tokens.len().max(2)))
            .collect();
        cuts.push(tokens.len());
        cuts.sort_unstable();
        cuts.dedup();
        for (pi, precision) in [Precision::F32, Precision::F64].into_iter().enumerate() {
            let cfg = ModelConfig {
                layers: 1 + (case % 3) as usize,
                d_model: 16,
                heads: 4,
                ffn: 32,
                context: 96,
                vocab: 40,
                seed: case,
                precision,
                ..ModelConfig::default()
            };
            let model = random_model(&cfg, &mut rng, 0.3);
            let full = model.forward_full(&tokens).unwrap();
            let mut state = DecodeState::new();
            let mut rows = Vec::new();
            let mut at = 0;
            for &c in &cuts {
                let (h, next) = model.forward_incremental(&state, &tokens[at..c]).unwrap();
                rows.extend_from_slice(h.data());
                state = next;
                at = c;
            }
            let hidden = Tensor::matrix(tokens.len(), cfg.d_model, rows).unwrap();
            let logits = model.sid_logits(&hidden).unwrap();
            let d = max_abs_diff(&hidden, &full.hidden).max(max_abs_diff(&logits, &full.logits));
            worst[pi] = worst[pi].max(d);
        }
    }
    let pass = worst[0] <= 1e-4 && worst[1] <= 1e-9;
    (
        pass,
        format!(
            "max |incremental - full|: f32 {:.2e}, f64 {:.2e}",
            worst[0], worst[1]
        ),
    )
}

fn log_softmax_at(row: &[f64], range: std::ops::Range<usize>, code: usize) -> f64 {
    let xs = &row[range];
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    xs[code] - lse
}

fn ac2_beam_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut mismatches, mut total_leaves) = (0.0f64, 0, 0);
    let models = 24;
    for t in 0..models {
        let k = rng.gen_range(2..5);
        let s4 = 8;
        let n = rng.gen_range(1..=64usize);
        let mut set = BTreeSet::new();
        while set.len() < n {
            set.insert([
                rng.gen_range(0..k as u16),
                rng.gen_range(0..k as u16),
                rng.gen_range(0..k as u16),
                rng.gen_range(0..s4 as u16),
            ]);
        }
        let sids: Vec<SemanticId> = set.into_iter().map(SemanticId::from_codes).collect();
        let index = SidIndex::from_sids(sids, s4).unwrap();
        let vocab = Vocab::for_index(k, &index);
        let cfg = ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            ffn: 32,
            context: 64,
            vocab: vocab.size(),
            seed: t,
            precision: Precision::F64,
            ..ModelConfig::default()
        };
        let model = random_model(&cfg, &mut rng, 0.4);
        let hist: Vec<usize> = (0..rng.gen_range(0..5))
            .map(|_| rng.gen_range(0..n))
            .collect();
        let hist_tokens = serialize_history(&hist, &index, &vocab, None)
            .unwrap()
            .tokens;
        let prefix = PrefixState::build(&model, &vocab, &hist_tokens).unwrap();
        let beam = beam_search(&model, &vocab, &index, &prefix, BeamOptions::new(n)).unwrap();

        let mut oracle: Vec<(f64, [u16; 4])> = index
            .sids()
            .iter()
            .map(|sid| {
                let mut tokens = hist_tokens.clone();
                tokens.extend_from_slice(&vocab.sid_block(*sid));
                let out = model.forward_full(&tokens).unwrap();
                let codes = sid.codes();
                let score = (1..=4)
                    .map(|l| {
                        let row = out.logits.row(hist_tokens.len() + l - 1);
                        log_softmax_at(row, vocab.level_range(l), codes[l - 1] as usize)
                    })
                    .sum::<f64>();
                (score, codes)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        total_leaves += n;
        let got: Vec<[u16; 4]> = beam.candidates.iter().map(|c| c.sid.codes()).collect();
        let want: Vec<[u16; 4]> = oracle.iter().map(|o| o.1).collect();
        if got != want {
            mismatches += 1;
            continue;
        }
        for (c, o) in beam.candidates.iter().zip(&oracle) {
            worst = worst.max((c.gen_logprob - o.0).abs());
        }
    }
    let pass = mismatches == 0 && worst <= 1e-6;
    (
        pass,
        format!("{models} models, {total_leaves} leaves, {mismatches} list mismatches, max score diff {worst:.2e}"),
    )
}

fn small_corpus(seed: u64) -> Corpus {
    let (cat, seqs) = generate_synthetic(&SyntheticConfig {
        items: 60,
        users: 20,
        clusters: 3,
        seq_len: 12,
        dim: 6,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    Corpus::tokenize(cat, seqs, 3, 32, seed).unwrap()
}

fn ac3_gradients() -> (bool, String) {
    let corpus = small_corpus(3);
    let cfg = ModelConfig {
        layers: 1,
        d_model: 8,
        heads: 2,
        ffn: 16,
        context: 128,
        vocab: corpus.vocab.size(),
        precision: Precision::F64,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let model = random_model(&cfg, &mut rng, 0.3);
    let tc = TrainConfig {
        beam: 4,
        retrieval: 2,
        window: 4,
        ..TrainConfig::default()
    };
    // prefer an instance whose beam holds the truth, so both label branches are exercised
    let inst = corpus
        .split
        .train
        .iter()
        .copied()
        .find(|&i| {
            stage2_loss(&model, &corpus, i, &tc, LossTerms::Rank)
                .map(|l| l.labels.contains(&1.0))
                .unwrap_or(false)
        })
        .unwrap_or(corpus.split.train[0]);
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, terms) in [
        ("L_SID", LossTerms::Sid),
        ("L_rank", LossTerms::Rank),
        ("total", LossTerms::Both),
    ] {
        let (loss, grads) = stage2_gradients(&model, &corpus, inst, &tc, terms).unwrap();
        let analytic: Vec<Vec<f64>> = grads.values().into_iter().cloned().collect();
        let mut tensors: Vec<Tensor> = model
            .params()
            .values()
            .into_iter()
            .map(|t| (**t).clone())
            .collect();
        let beam_moved = Cell::new(false);
        let report = finite_difference_check(
            |xs| {
                let p = model
                    .params()
                    .from_values(xs.iter().cloned().map(Arc::new).collect())
                    .unwrap();
                let m = Model::from_params(cfg.clone(), p).unwrap();
                let l = stage2_loss(&m, &corpus, inst, &tc, terms).unwrap();
                if terms != LossTerms::Sid && l.candidates != loss.candidates {
                    beam_moved.set(true);
                }
                l.total
            },
            &mut tensors,
            &analytic,
            1e-4,
            6,
            7,
        );
        let ok = report.passes(1e-4) && !beam_moved.get();
        pass &= ok;
        parts.push(format!(
            "{name} {:.2e} over {}{}",
            report.max_rel_error,
            report.checked,
            if beam_moved.get() {
                " (beam moved)"
            } else {
                ""
            }
        ));
    }
    (pass, format!("max rel error: {}", parts.join(", ")))
}

/// Plain Lloyd's iterations from a given seeding, lowest index on ties.
fn lloyd_oracle(points: &[[f64; 2]], mut cents: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    for _ in 0..100 {
        let assign: Vec<usize> = points
            .iter()
            .map(|p| {
                let d = |c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                (0..cents.len()).fold(0, |best, j| {
                    if d(&cents[j]) < d(&cents[best]) {
                        j
                    } else {
                        best
                    }
                })
            })
            .collect();
        let next: Vec<[f64; 2]> = (0..cents.len())
            .map(|j| {
                let members: Vec<&[f64; 2]> = points
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| a == j)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    return cents[j];
                }
                let n = members.len() as f64;
                [
                    members.iter().map(|p| p[0]).sum::<f64>() / n,
                    members.iter().map(|p| p[1]).sum::<f64>() / n,
                ]
            })
            .collect();
        if next == cents {
            break;
        }
        cents = next;
    }
    cents
}

fn sorted(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    v
}

/// Every separating two-point seeding of `points` must converge to one answer.
fn seeding_oracle(
    points: &[[f64; 2]],
    separates: impl Fn(&[f64; 2], &[f64; 2]) -> bool,
) -> Option<Vec<[f64; 2]>> {
    let mut results = BTreeSet::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i != j && separates(&points[i], &points[j]) {
                let r = sorted(lloyd_oracle(points, vec![points[i], points[j]]));
                results.insert(
                    r.iter()
                        .map(|c| [c[0].to_bits(), c[1].to_bits()])
                        .collect::<Vec<_>>(),
                );
            }
        }
    }
    (results.len() == 1).then(|| {
        results
            .into_iter()
            .next()
            .unwrap()
            .iter()
            .map(|c| [f64::from_bits(c[0]), f64::from_bits(c[1])])
            .collect()
    })
}

fn ac4_tokenizer() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut monotone = 0;
    for t in 0..10u64 {
        let dim = rng.gen_range(2..9);
        let k = rng.gen_range(3..12);
        let pts: Vec<f64> = (0..300 * dim)
            .map(|_| rng.gen_range(-1.0..1.0) * (1.0 + t as f64))
            .collect();
        let cb = fit_codebook(&pts, dim, k, 3, t).unwrap();
        let mse = cb.level_mse(&pts).unwrap();
        if mse.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }

    let (cat, _) = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let mut unique = Vec::new();
    for k in [K, 32] {
        let (_, index) = tokenize_catalog(&cat.to_f64(), cat.dim(), k, S4_MAX, 0).unwrap();
        let distinct: BTreeSet<SemanticId> = index.sids().iter().copied().collect();
        unique.push(distinct.len() == cat.len());
    }

    let points = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
    let level1 = seeding_oracle(&points, |a, b| a[0] != b[0]);
    let mut example_ok = false;
    if let Some(l1) = &level1 {
        let residual: Vec<[f64; 2]> = points
            .iter()
            .map(|p| {
                let c = if p[0] < 5.0 { l1[0] } else { l1[1] };
                [p[0] - c[0], p[1] - c[1]]
            })
            .collect();
        let level2 = seeding_oracle(&residual, |a, b| a[1] != b[1]);
        example_ok = level2.is_some()
            && (0..20u64).all(|seed| {
                let flat: Vec<f64> = points.iter().flatten().copied().collect();
                let cb = fit_codebook(&flat, 2, 2, 2, seed).unwrap();
                let got = |l: usize| {
                    sorted(
                        (0..2)
                            .map(|c| [cb.centroid(l, c)[0] as f64, cb.centroid(l, c)[1] as f64])
                            .collect(),
                    )
                };
                got(0) == *l1 && got(1) == *level2.as_ref().unwrap()
            });
    }
    let pass = monotone == 10 && unique.iter().all(|&u| u) && example_ok;
    (
        pass,
        format!(
            "monotone residuals {monotone}/10, unique SIDs at K=16/32 {:?}, 4-point example vs seeding oracle {}",
            unique,
            if example_ok { "match" } else { "MISMATCH" }
        ),
    )
}

fn ac5_metrics() -> (bool, String) {
    let ranked = [4, 9, 2, 7, 1, 3, 8];
    let checks = [
        recall_at_k(&ranked, 4, 5) == 1.0,
        recall_at_k(&ranked, 8, 5) == 0.0,
        recall_at_k(&ranked, 99, 5) == 0.0,
        ndcg_at_k(&ranked, 4, 5) == 1.0,
        ndcg_at_k(&ranked, 2, 5) == 0.5,
        ndcg_at_k(&ranked, 3, 5) == 0.0,
        ndcg_at_k(&ranked, 99, 10) == 0.0,
    ];
    let ok = checks.iter().filter(|&&c| c).count();
    (
        ok == checks.len(),
        format!(
            "{ok}/{} exact examples, NDCG at rank 3 = {}",
            checks.len(),
            ndcg_at_k(&ranked, 2, 5)
        ),
    )
}

fn ac6_uniform_loss(corpus: &Corpus) -> (bool, String) {
    let mut worst = 0.0f64;
    for precision in [Precision::F32, Precision::F64] {
        let mut model = init_model(&toy_model_config(corpus.vocab.size(), precision)).unwrap();
        let p = model.params_mut();
        p.sid_w = Arc::new(Tensor::zeros(p.sid_w.shape()));
        p.sid_b = Arc::new(Tensor::zeros(p.sid_b.shape()));
        for &inst in corpus.split.test.iter().take(25) {
            let seq = corpus.teacher_sequence(inst, WINDOW).unwrap();
            let t = seq.block_starts.len() as f64;
            let expected = 4.0 * t * (corpus.vocab.size() as f64).ln();
            let got = loss_sid(&model, &seq).unwrap();
            worst = worst.max((got - expected).abs() / expected);
        }
    }
    (
        worst <= 1e-6,
        format!(
            "max relative deviation from 4T ln V: {worst:.2e} (V = {})",
            corpus.vocab.size()
        ),
    )
}

fn eval_cfg(retrieval: usize, yhat: YhatMode) -> EvalConfig {
    EvalConfig {
        beam: 20,
        retrieval,
        window: WINDOW,
        constrained: true,
        yhat,
    }
}

fn ac7_oracle(model: &Model, corpus: &Corpus, test: &[Instance]) -> (bool, String) {
    let res = evaluate(model, corpus, test, &eval_cfg(10, YhatMode::Oracle)).unwrap();
    // independent count: decode each window directly and look for the truth
    let (mut hits, mut spread) = (0usize, 0.0f64);
    for &inst in test {
        let seq = serialize_history(
            corpus.window(inst, WINDOW),
            &corpus.index,
            &corpus.vocab,
            None,
        )
        .unwrap();
        let prefix = PrefixState::build(model, &corpus.vocab, &seq.tokens).unwrap();
        let beam = beam_search(
            model,
            &corpus.vocab,
            &corpus.index,
            &prefix,
            BeamOptions::new(20),
        )
        .unwrap();
        if beam
            .candidates
            .iter()
            .any(|c| c.item == corpus.target(inst))
        {
            hits += 1;
        }
        let g: Vec<f64> = beam.candidates.iter().map(|c| c.gen_logprob).collect();
        spread = spread.max(g[0] - g[g.len() - 1]);
    }
    let rate = hits as f64 / test.len() as f64;
    (
        res.rank.recall_1 == rate && res.instances == test.len(),
        format!(
            "{} instances, Rank Recall@1 {:.4} vs independent beam-hit rate {:.4}, widest beam score spread {:.2}",
            test.len(),
            res.rank.recall_1,
            rate,
            spread
        ),
    )
}

fn same_bits(a: &genrank::evaluation::Metrics, b: &genrank::evaluation::Metrics) -> bool {
    let v = |m: &genrank::evaluation::Metrics| {
        [m.recall_1, m.recall_5, m.recall_10, m.ndcg_5, m.ndcg_10].map(f64::to_bits)
    };
    v(a) == v(b)
}

fn gain(r: &EvalResult) -> f64 {
    r.rank.recall_5 - r.base.recall_5
}

fn main() {
    let started = Instant::now();
    let mut outcomes = vec![
        timed("AC1", ac1_kv_cache),
        timed("AC2", ac2_beam_oracle),
        timed("AC3", ac3_gradients),
        timed("AC4", ac4_tokenizer),
        timed("AC5", ac5_metrics),
    ];
    for o in &mut outcomes {
        let limit = match o.id {
            "AC1" | "AC2" => 60.0,
            "AC3" => 120.0,
            _ => f64::INFINITY,
        };
        if o.secs >= limit {
            o.pass = false;
            println!("{} FAIL runtime {:.1}s exceeds {limit}s", o.id, o.secs);
        }
    }

    let (cat, seqs) = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let corpus = Corpus::tokenize(cat, seqs, K, S4_MAX, 0).unwrap();
    outcomes.push(timed("AC6", || ac6_uniform_loss(&corpus)));

    let stage1_cfg = TrainConfig {
        lr: 3e-3,
        warmup: STAGE1_STEPS / 10,
        total_steps: STAGE1_STEPS,
        batch: 16,
        window: WINDOW,
        ..TrainConfig::default()
    };
    let mut model = init_model(&toy_model_config(corpus.vocab.size(), Precision::F32)).unwrap();
    let test = corpus.split.test.clone();
    outcomes.push(timed("AC8", || {
        let t = Instant::now();
        train_stage1(&mut model, &corpus, &stage1_cfg, |_, _| Ok(())).unwrap();
        let res = evaluate(&model, &corpus, &test, &eval_cfg(10, YhatMode::Model)).unwrap();
        let secs = t.elapsed().as_secs_f64();
        (
            res.base.recall_10 >= 0.05 && secs < 900.0,
            format!(
                "{STAGE1_STEPS} steps, {} users, test Recall@10 (beam 20) {:.4} vs threshold 0.05 (random 0.01)",
                corpus.sequences.len(),
                res.base.recall_10
            ),
        )
    }));

    let oracle_set: Vec<Instance> = test.iter().copied().take(600).collect();
    outcomes.push(timed("AC7", || ac7_oracle(&model, &corpus, &oracle_set)));

    let mut joint = model.clone();
    let stage2_cfg = TrainConfig {
        lr: 1e-3,
        warmup: STAGE2_STEPS / 10,
        total_steps: STAGE2_STEPS,
        batch: 8,
        window: WINDOW,
        seed: 1,
        ..TrainConfig::default()
    };
    outcomes.push(timed("AC9", || {
        train_stage2(&mut joint, &corpus, &stage2_cfg, |_, _, _| Ok(())).unwrap();
        let m10 = evaluate(&joint, &corpus, &test, &eval_cfg(10, YhatMode::Model)).unwrap();
        let constant = evaluate(&joint, &corpus, &test, &eval_cfg(10, YhatMode::Constant)).unwrap();
        let m0 = evaluate(&joint, &corpus, &test, &eval_cfg(0, YhatMode::Model)).unwrap();
        let non_inferior = m10.rank.recall_5 >= m10.base.recall_5 - 0.005;
        let zero_gain = constant.base == constant.rank;
        (
            non_inferior && zero_gain,
            format!(
                "{} instances, Recall@5 Base {:.4} Rank {:.4}; constant-yhat gain {}; report-only: Recall@5 gain at M=0 {:+.4}, at M=10 {:+.4} ({})",
                m10.instances,
                m10.base.recall_5,
                m10.rank.recall_5,
                if zero_gain { "exactly 0" } else { "NONZERO" },
                gain(&m0),
                gain(&m10),
                if gain(&m0) < gain(&m10) { "M=0 smaller, as expected" } else { "M=0 not smaller" }
            ),
        )
    }));

    let ablation_set: Vec<Instance> = test.iter().copied().take(500).collect();
    outcomes.push(timed("AC10", || {
        let grid = run_ablation(
            &joint,
            &corpus,
            &ablation_set,
            AblationAxis::RetrievalLen,
            &[0, 5, 10, 20],
            &eval_cfg(10, YhatMode::Model),
        )
        .unwrap();
        let first = &grid.cells[0].1.base;
        let same = grid.cells.iter().all(|(_, r)| same_bits(&r.base, first));
        (
            same,
            format!(
                "Base metrics over M in {{0,5,10,20}} on {} instances bit-identical: {same}",
                ablation_set.len()
            ),
        )
    }));

    outcomes.push(timed("AC11", || {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(p.join("embeddings.bin"), write_embeddings(&corpus.catalog)).unwrap();
        std::fs::write(
            p.join("sequences.tsv"),
            write_sequences(&corpus.catalog, &corpus.sequences),
        )
        .unwrap();
        save_codebook(p.join("cb.bin"), &corpus.codebook, &corpus.index).unwrap();
        save_checkpoint(&joint, p.join("model.ckpt")).unwrap();
        let run = |out: &str| {
            let status = Command::new(env!("CARGO_BIN_EXE_genrank"))
                .current_dir(p)
                .args([
                    "eval",
                    "--seed",
                    "0",
                    "--embeddings",
                    "embeddings.bin",
                    "--sequences",
                    "sequences.tsv",
                    "--codebook",
                    "cb.bin",
                    "--checkpoint",
                    "model.ckpt",
                    "--window",
                    "16",
                    "--limit",
                    "300",
                    "--out",
                    out,
                ])
                .output()
                .unwrap();
            assert!(
                status.status.success(),
                "{}",
                String::from_utf8_lossy(&status.stderr)
            );
            std::fs::read(p.join(out)).unwrap()
        };
        let (a, b) = (run("a.csv"), run("b.csv"));
        (
            a == b && !a.is_empty(),
            format!(
                "two seeded CLI eval runs: {} bytes each, identical: {}",
                a.len(),
                a == b
            ),
        )
    }));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
