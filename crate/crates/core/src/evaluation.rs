//! Recall/NDCG of generation and combined orderings, and ablation grids.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::corpus::Corpus;
use crate::data::Instance;
use crate::decode::BeamOptions;
use crate::error::{Error, Result};
use crate::rerank::{recommend_with, rerank_candidate, QueryOptions};

/// 1 when `truth` is among the first `k` entries.
pub fn recall_at_k(ranked: &[usize], truth: usize, k: usize) -> f64 {
    if ranked.iter().take(k).any(|&x| x == truth) {
        1.0
    } else {
        0.0
    }
}

/// Binary-relevance NDCG with a single relevant item (ideal DCG is 1).
pub fn ndcg_at_k(ranked: &[usize], truth: usize, k: usize) -> f64 {
    match ranked.iter().take(k).position(|&x| x == truth) {
        Some(r) => 1.0 / ((r + 2) as f64).log2(),
        None => 0.0,
    }
}

/// Where the click probability comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YhatMode {
    #[default]
    Model,
    /// Every candidate gets the same value.
    Constant,
    /// The ground truth gets 1 and every other candidate a value small enough
    /// that the truth always ranks first.
    Oracle,
}

impl FromStr for YhatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(YhatMode::Model),
            "constant" => Ok(YhatMode::Constant),
            "oracle" => Ok(YhatMode::Oracle),
            _ => Err(Error::invalid(format!("unknown yhat mode {s:?}"))),
        }
    }
}

pub const CONSTANT_YHAT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub beam: usize,
    pub retrieval: usize,
    pub window: usize,
    pub constrained: bool,
    pub yhat: YhatMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam: 20,
            retrieval: 10,
            window: 32,
            constrained: true,
            yhat: YhatMode::Model,
        }
    }
}

/// Metrics averaged over instances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub recall_1: f64,
    pub recall_5: f64,
    pub recall_10: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
}

impl Metrics {
    fn add(&mut self, ranked: &[usize], truth: usize) {
        self.recall_1 += recall_at_k(ranked, truth, 1);
        self.recall_5 += recall_at_k(ranked, truth, 5);
        self.recall_10 += recall_at_k(ranked, truth, 10);
        self.ndcg_5 += ndcg_at_k(ranked, truth, 5);
        self.ndcg_10 += ndcg_at_k(ranked, truth, 10);
    }

    fn mean_over(&mut self, n: usize) {
        let n = n.max(1) as f64;
        self.recall_1 /= n;
        self.recall_5 /= n;
        self.recall_10 /= n;
        self.ndcg_5 /= n;
        self.ndcg_10 /= n;
    }

    /// The reported metrics, in table order.
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("Recall@5", self.recall_5),
            ("Recall@10", self.recall_10),
            ("NDCG@5", self.ndcg_5),
            ("NDCG@10", self.ndcg_10),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalResult {
    pub instances: usize,
    pub skipped: usize,
    /// Instances whose ground truth appears anywhere in the beam.
    pub beam_hits: usize,
    pub base: Metrics,
    pub rank: Metrics,
}

impl EvalResult {
    pub fn beam_hit_rate(&self) -> f64 {
        self.beam_hits as f64 / self.instances.max(1) as f64
    }

    pub fn to_csv(&self, axis_value: &str) -> String {
        let mut out = String::from(CSV_HEADER);
        self.write_csv_rows(&mut out, axis_value);
        out
    }

    fn write_csv_rows(&self, out: &mut String, axis_value: &str) {
        for ((name, b), (_, r)) in self.base.named().into_iter().zip(self.rank.named()) {
            let _ = writeln!(out, "{axis_value},{name},{b:.6},{r:.6},{}", gain_pct(b, r));
        }
    }
}

const CSV_HEADER: &str = "axis_value,metric,base,rank,rel_gain_pct\n";

/// Relative gain in percent with two decimals; `NA` when base is zero.
pub fn gain_pct(base: f64, rank: f64) -> String {
    if base > 0.0 {
        format!("{:.2}", (rank - base) / base * 100.0)
    } else {
        "NA".to_string()
    }
}

/// Generates, reranks and scores every instance.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    instances: &[Instance],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if instances.is_empty() {
        return Err(Error::invalid("no evaluation instances"));
    }
    let opts = QueryOptions {
        beam: BeamOptions {
            width: cfg.beam,
            constrained: cfg.constrained,
        },
        m: cfg.retrieval,
        window: cfg.window,
    };
    let mut res = EvalResult::default();
    for &inst in instances {
        let truth = corpus.target(inst);
        if truth >= corpus.catalog.len() {
            res.skipped += 1;
            continue;
        }
        let rec = recommend_with(
            model,
            &corpus.vocab,
            &corpus.index,
            &corpus.catalog,
            corpus.history(inst),
            opts,
            |beam, c, retrieved| match cfg.yhat {
                YhatMode::Model => rerank_candidate(model, &corpus.vocab, c, retrieved),
                YhatMode::Constant => Ok(CONSTANT_YHAT),
                YhatMode::Oracle => Ok(if c.item == truth {
                    1.0
                } else {
                    oracle_epsilon(beam)
                }),
            },
        )?;
        let base = rec.base_items();
        let rank = rec.rank_items();
        let bs: BTreeSet<usize> = base.iter().copied().collect();
        let rs: BTreeSet<usize> = rank.iter().copied().collect();
        if bs != rs || bs.len() != base.len() {
            return Err(Error::invalid(
                "orderings are not permutations of one candidate set",
            ));
        }
        res.instances += 1;
        if bs.contains(&truth) {
            res.beam_hits += 1;
        }
        res.base.add(&base, truth);
        res.rank.add(&rank, truth);
    }
    res.base.mean_over(res.instances);
    res.rank.mean_over(res.instances);
    Ok(res)
}

/// `ε` with `ln ε = (min gen - max gen) - 1` over the beam.
fn oracle_epsilon(beam: &crate::decode::BeamOutput) -> f64 {
    let gens = beam.candidates.iter().map(|c| c.gen_logprob);
    let max = gens.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = gens.fold(f64::INFINITY, f64::min);
    ((min - max) - 1.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Beam,
    SeqLen,
    RetrievalLen,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam" => Ok(AblationAxis::Beam),
            "seq_len" => Ok(AblationAxis::SeqLen),
            "retrieval_len" => Ok(AblationAxis::RetrievalLen),
            _ => Err(Error::invalid(format!(
                "unknown axis {s:?}, expected beam, seq_len or retrieval_len"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Beam => "beam",
            AblationAxis::SeqLen => "seq_len",
            AblationAxis::RetrievalLen => "retrieval_len",
        })
    }
}

impl AblationAxis {
    pub fn apply(self, cfg: &EvalConfig, value: usize) -> EvalConfig {
        let mut c = *cfg;
        match self {
            AblationAxis::Beam => c.beam = value,
            AblationAxis::SeqLen => c.window = value,
            AblationAxis::RetrievalLen => c.retrieval = value,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub cells: Vec<(usize, EvalResult)>,
}

impl AblationGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        for (v, r) in &self.cells {
            r.write_csv_rows(&mut out, &v.to_string());
        }
        out
    }

    /// Aligned table: one row per axis value, Base / Rank (gain) per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}", self.axis.to_string());
        for (name, _) in Metrics::default().named() {
            let _ = write!(out, " | {:^30}", name);
        }
        out.push('\n');
        let _ = write!(out, "{:<14}", "");
        for _ in 0..4 {
            let _ = write!(out, " | {:>8} {:>8} {:>12}", "Base", "Rank", "gain");
        }
        out.push('\n');
        for (v, r) in &self.cells {
            let _ = write!(out, "{:<14}", v);
            for ((_, b), (_, k)) in r.base.named().into_iter().zip(r.rank.named()) {
                let g = gain_pct(b, k);
                let g = if g == "NA" { g } else { format!("({g}%)") };
                let _ = write!(out, " | {:>8.4} {:>8.4} {:>12}", b, k, g);
            }
            out.push('\n');
        }
        out
    }
}

/// One evaluation per value with only the axis changed.
pub fn run_ablation(
    model: &Model,
    corpus: &Corpus,
    instances: &[Instance],
    axis: AblationAxis,
    values: &[usize],
    base: &EvalConfig,
) -> Result<AblationGrid> {
    let mut cells = Vec::with_capacity(values.len());
    for &v in values {
        cells.push((v, evaluate(model, corpus, instances, &axis.apply(base, v))?));
    }
    Ok(AblationGrid { axis, cells })
}
