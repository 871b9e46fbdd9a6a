//! Candidate-aware retrieval from the user's history and rank-head scoring.

use std::cmp::Ordering;

use crate::backbone::Model;
use crate::data::Catalog;
use crate::decode::{beam_search, BeamOptions, BeamOutput, Candidate, PrefixState};
use crate::error::{Error, Result};
use crate::numerics::{kernels, LOG_CLAMP};
use crate::serialization::{build_rerank_suffix, serialize_history, Token, Vocab};
use crate::tokenizer::{SemanticId, SidIndex};

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = kernels::dot(a, a).sqrt();
    let nb = kernels::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((kernels::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Positions of the `m` pool entries most similar to `candidate`, oldest
/// first. Equal similarities favour the more recent entry.
pub fn gsu_select(candidate: &[f64], pool: &[Vec<f64>], m: usize) -> Result<Vec<usize>> {
    let mut scored = pool
        .iter()
        .enumerate()
        .map(|(pos, e)| cosine_sim(candidate, e).map(|s| (s, pos)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut picked: Vec<usize> = scored.into_iter().take(m).map(|(_, p)| p).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Items of `history` (chronological) retrieved for `candidate_item`.
pub fn gsu_retrieve(
    catalog: &Catalog,
    candidate_item: usize,
    history: &[usize],
    m: usize,
) -> Result<Vec<usize>> {
    if m == 0 || history.is_empty() {
        return Ok(Vec::new());
    }
    for &i in history.iter().chain(std::iter::once(&candidate_item)) {
        if i >= catalog.len() {
            return Err(Error::UnknownItem(i));
        }
    }
    let pool: Vec<Vec<f64>> = history.iter().map(|&i| catalog.embedding_f64(i)).collect();
    let picked = gsu_select(&catalog.embedding_f64(candidate_item), &pool, m)?;
    Ok(picked.into_iter().map(|p| history[p]).collect())
}

/// Click probability of `candidate` with `retrieved` appended to its cached
/// branch, read at the final candidate ITEM position.
pub fn rerank_candidate(
    model: &Model,
    vocab: &Vocab,
    candidate: &Candidate,
    retrieved: &[usize],
) -> Result<f64> {
    let mut suffix = Vec::with_capacity(retrieved.len() + 1);
    for &r in retrieved.iter().chain(std::iter::once(&candidate.item)) {
        suffix.push(vocab.encode(Token::Item(r))?);
    }
    let (hidden, _) = model.forward_incremental(&candidate.state, &suffix)?;
    model.rank_probability(hidden.row(hidden.rows() - 1))
}

/// The same probability computed by re-encoding the whole concatenation.
pub fn rerank_from_scratch(
    model: &Model,
    vocab: &Vocab,
    history_tokens: &[usize],
    sid: SemanticId,
    retrieved: &[usize],
    item: usize,
) -> Result<f64> {
    let suffix = build_rerank_suffix(sid, retrieved, item, vocab)?;
    let mut tokens = history_tokens.to_vec();
    tokens.extend_from_slice(&suffix.tokens);
    let out = model.forward_full(&tokens)?;
    model.rank_probability(
        out.hidden
            .row(history_tokens.len() + suffix.scoring_position),
    )
}

pub fn combined_score(gen_logprob: f64, yhat: f64) -> f64 {
    gen_logprob + yhat.max(LOG_CLAMP).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub sid: SemanticId,
    pub item: usize,
    pub gen_logprob: f64,
    pub retrieved: Vec<usize>,
    pub yhat: f64,
    pub score: f64,
    /// 1-based position in the generation-score order.
    pub base_rank: usize,
    /// 1-based position in the combined-score order.
    pub rerank_rank: usize,
}

fn final_cmp(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.gen_logprob.total_cmp(&a.gen_logprob))
        .then(a.sid.cmp(&b.sid))
}

/// Assigns scores and both ranks; returns candidates in combined order.
/// The input must be in generation order.
pub fn rank_candidates(mut cands: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    for (i, c) in cands.iter_mut().enumerate() {
        c.base_rank = i + 1;
        c.score = combined_score(c.gen_logprob, c.yhat);
    }
    cands.sort_by(final_cmp);
    for (i, c) in cands.iter_mut().enumerate() {
        c.rerank_rank = i + 1;
    }
    cands
}

#[derive(Debug, Clone)]
pub struct Recommendation {
    pub beam: BeamOutput,
    /// In combined-score order.
    pub ranked: Vec<ScoredCandidate>,
}

impl Recommendation {
    pub fn base_items(&self) -> Vec<usize> {
        self.beam.candidates.iter().map(|c| c.item).collect()
    }

    pub fn rank_items(&self) -> Vec<usize> {
        self.ranked.iter().map(|c| c.item).collect()
    }

    /// Per-candidate CSV in combined order.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("sid,item,gen_logprob,yhat,combined_score,base_rank,rerank_rank\n");
        for c in &self.ranked {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{}\n",
                c.sid, c.item, c.gen_logprob, c.yhat, c.score, c.base_rank, c.rerank_rank
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    pub beam: BeamOptions,
    /// Retrieval length.
    pub m: usize,
    /// Serialized window in items.
    pub window: usize,
}

/// Generates, retrieves and reranks for a user whose chronological history
/// is `history`. The model sees the last `window` items; retrieval searches
/// the whole history.
pub fn recommend(
    model: &Model,
    vocab: &Vocab,
    index: &SidIndex,
    catalog: &Catalog,
    history: &[usize],
    opts: QueryOptions,
) -> Result<Recommendation> {
    recommend_with(
        model,
        vocab,
        index,
        catalog,
        history,
        opts,
        |_, c, retrieved| rerank_candidate(model, vocab, c, retrieved),
    )
}

/// [`recommend`] with a caller-supplied click probability. `yhat` receives
/// the full beam, one candidate and its retrieved items.
pub fn recommend_with(
    model: &Model,
    vocab: &Vocab,
    index: &SidIndex,
    catalog: &Catalog,
    history: &[usize],
    opts: QueryOptions,
    mut yhat: impl FnMut(&BeamOutput, &Candidate, &[usize]) -> Result<f64>,
) -> Result<Recommendation> {
    let recent = &history[history.len().saturating_sub(opts.window)..];
    let suffix = 1 + crate::tokenizer::SID_DEPTH + opts.m + 1;
    let seq = serialize_history(
        recent,
        index,
        vocab,
        Some(model.config().context.saturating_sub(suffix)),
    )?;
    let prefix = PrefixState::build(model, vocab, &seq.tokens)?;
    let beam = beam_search(model, vocab, index, &prefix, opts.beam)?;
    let mut scored = Vec::with_capacity(beam.candidates.len());
    for c in &beam.candidates {
        let retrieved = gsu_retrieve(catalog, c.item, history, opts.m)?;
        let yhat = yhat(&beam, c, &retrieved)?;
        scored.push(ScoredCandidate {
            sid: c.sid,
            item: c.item,
            gen_logprob: c.gen_logprob,
            retrieved,
            yhat,
            score: 0.0,
            base_rank: 0,
            rerank_rank: 0,
        });
    }
    Ok(Recommendation {
        ranked: rank_candidates(scored),
        beam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sc(sid: u16, gen: f64, yhat: f64) -> ScoredCandidate {
        ScoredCandidate {
            sid: SemanticId::new(sid, 0, 0, 0),
            item: sid as usize,
            gen_logprob: gen,
            retrieved: vec![],
            yhat,
            score: 0.0,
            base_rank: 0,
            rerank_rank: 0,
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
        let c = cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn gsu_examples() {
        let pool = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.9, 0.1]];
        assert_eq!(gsu_select(&[1.0, 0.0], &pool, 2).unwrap(), vec![0, 2]);
        assert!(gsu_select(&[1.0, 0.0], &pool, 0).unwrap().is_empty());
        assert_eq!(gsu_select(&[1.0, 0.0], &pool, 9).unwrap(), vec![0, 1, 2]);
        let same = vec![vec![2.0, 2.0]; 5];
        assert_eq!(gsu_select(&[1.0, 1.0], &same, 2).unwrap(), vec![3, 4]);
    }

    #[test]
    fn combined_score_examples() {
        assert!((combined_score(-1.0, 0.5) - -1.693_147_2).abs() < 1e-7);
        let ranked = rank_candidates(vec![sc(0, -1.0, 0.1), sc(1, -2.0, 0.9)]);
        assert!((ranked[1].score - -3.3026).abs() < 1e-4);
        assert!((ranked[0].score - -2.1054).abs() < 1e-4);
        assert_eq!(ranked[0].item, 1);
        assert_eq!((ranked[0].base_rank, ranked[0].rerank_rank), (2, 1));
        assert!(combined_score(-1.0, 0.0).is_finite());
    }

    proptest! {
        #[test]
        fn gsu_output_is_chronological(
            pool in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 0..30),
            m in 0usize..40,
        ) {
            let pool: Vec<Vec<f64>> = pool.into_iter().map(|mut v| { v[0] += 3.0; v }).collect();
            let out = gsu_select(&[1.0, 0.5, -0.2], &pool, m).unwrap();
            prop_assert_eq!(out.len(), m.min(pool.len()));
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn constant_yhat_keeps_base_order(gens in proptest::collection::vec(-30.0f64..0.0, 1..25), y in 0.01f64..0.99) {
            let mut cands: Vec<ScoredCandidate> =
                gens.iter().enumerate().map(|(i, &g)| sc(i as u16, g, y)).collect();
            cands.sort_by(|a, b| b.gen_logprob.total_cmp(&a.gen_logprob).then(a.sid.cmp(&b.sid)));
            let base: Vec<usize> = cands.iter().map(|c| c.item).collect();
            let ranked: Vec<usize> = rank_candidates(cands).iter().map(|c| c.item).collect();
            prop_assert_eq!(ranked, base);
        }
    }
}
