use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    accumulate, apply_update, bind, loss_rank, loss_sid, make_beam_labels, zero_grads, AdamW,
    Bound, MetricsRow, TrainConfig,
};
use crate::backbone::{forward_segment, rank_probs, DecodeState, LayerKv, Model, Params};
use crate::corpus::Corpus;
use crate::data::Instance;
use crate::decode::{beam_search, BeamOptions, PrefixState};
use crate::error::{Error, Result};
use crate::numerics::{Backend, NodeId};
use crate::rerank::{gsu_retrieve, rerank_candidate};
use crate::serialization::{Token, BLOCK_LEN};
use crate::tokenizer::SemanticId;

/// Which terms a Stage II loss includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerms {
    Sid,
    Rank,
    Both,
}

/// Loss terms of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Loss {
    pub loss_sid: f64,
    pub loss_rank: f64,
    pub total: f64,
    pub candidates: Vec<SemanticId>,
    pub labels: Vec<f64>,
    pub yhats: Vec<f64>,
    /// The beam produced no candidate; no loss was formed.
    pub skipped: bool,
}

fn beam_options(cfg: &TrainConfig) -> BeamOptions {
    BeamOptions {
        width: cfg.beam,
        constrained: cfg.constrained,
    }
}

/// Suffix after the candidate's cached SID block: retrieved items, then the
/// candidate item.
fn item_suffix(corpus: &Corpus, inst: Instance, item: usize, m: usize) -> Result<Vec<usize>> {
    let retrieved = gsu_retrieve(&corpus.catalog, item, corpus.history(inst), m)?;
    retrieved
        .iter()
        .chain(std::iter::once(&item))
        .map(|&i| corpus.vocab.encode(Token::Item(i)))
        .collect()
}

/// Records the instance's losses on `bound`; returns the total loss node
/// unless the instance was skipped.
fn record(
    bound: &mut Bound,
    model: &Model,
    corpus: &Corpus,
    inst: Instance,
    cfg: &TrainConfig,
    terms: LossTerms,
) -> Result<(Option<NodeId>, Stage2Loss)> {
    let seq = corpus.teacher_sequence(inst, cfg.window)?;
    let (lsid, hidden, kv) = bound.loss_sid(model, &seq)?;
    let sid_value = bound.graph.value(lsid).item()?;
    let mut out = Stage2Loss {
        loss_sid: sid_value,
        loss_rank: 0.0,
        total: sid_value,
        candidates: Vec::new(),
        labels: Vec::new(),
        yhats: Vec::new(),
        skipped: false,
    };
    if terms == LossTerms::Sid {
        return Ok((Some(lsid), out));
    }

    // cache through the target's BOS, shared by the beam and every candidate
    let prefix_len = BLOCK_LEN * corpus.window(inst, cfg.window).len() + 1;
    let g = &mut bound.graph;
    let mut past = Vec::with_capacity(kv.len());
    for layer in &kv {
        past.push(LayerKv {
            k: g.slice_rows(&layer.k, 0, prefix_len)?,
            v: g.slice_rows(&layer.v, 0, prefix_len)?,
        });
    }
    let state = DecodeState::from_caches(
        past.iter()
            .map(|c| LayerKv {
                k: Arc::new(g.value(c.k).clone()),
                v: Arc::new(g.value(c.v).clone()),
            })
            .collect(),
    )?;
    let prefix = PrefixState::from_parts(state, g.value(hidden).row(prefix_len - 1).to_vec());
    let beam = beam_search(
        model,
        &corpus.vocab,
        &corpus.index,
        &prefix,
        beam_options(cfg),
    )?;
    if beam.candidates.is_empty() {
        out.skipped = true;
        return Ok((None, out));
    }
    let truth = corpus.index.sid(corpus.target(inst))?;
    out.candidates = beam.candidates.iter().map(|c| c.sid).collect();
    out.labels = make_beam_labels(&out.candidates, truth);

    let mut probs: Option<NodeId> = None;
    for c in &beam.candidates {
        let suffix = item_suffix(corpus, inst, c.item, cfg.retrieval)?;
        let last = if cfg.head_only {
            let (h, _) = model.forward_incremental(&c.state, &suffix)?;
            let row = h.row(h.rows() - 1).to_vec();
            let d = row.len();
            bound
                .graph
                .constant(crate::numerics::Tensor::matrix(1, d, row)?)
        } else {
            let mut tokens: Vec<usize> = corpus.vocab.sid_block(c.sid)[1..].to_vec();
            tokens.extend_from_slice(&suffix);
            let (h, _) = forward_segment(
                &mut bound.graph,
                model.config(),
                &bound.nodes,
                &tokens,
                prefix_len,
                &past,
            )?;
            let n = tokens.len();
            bound.graph.select_rows(&h, &[n - 1])?
        };
        let p = rank_probs(&mut bound.graph, &bound.nodes, &last)?;
        probs = Some(match probs {
            None => p,
            Some(acc) => bound.graph.concat_rows(&acc, &p)?,
        });
    }
    let probs = probs.expect("at least one candidate");
    out.yhats = bound.graph.value(probs).data().to_vec();
    let weights = out
        .labels
        .iter()
        .map(|&y| if y > 0.0 { cfg.pos_weight } else { 1.0 })
        .collect();
    let lrank = bound.graph.bce(probs, out.labels.clone(), weights)?;
    out.loss_rank = bound.graph.value(lrank).item()?;
    if terms == LossTerms::Rank {
        out.total = out.loss_rank;
        return Ok((Some(lrank), out));
    }
    let total = bound.graph.add(&lsid, &lrank)?;
    out.total = bound.graph.value(total).item()?;
    Ok((Some(total), out))
}

/// Forward-only evaluation of the joint loss of one instance.
pub fn stage2_loss(
    model: &Model,
    corpus: &Corpus,
    inst: Instance,
    cfg: &TrainConfig,
    terms: LossTerms,
) -> Result<Stage2Loss> {
    let mut bound = bind(model, cfg.seed);
    record(&mut bound, model, corpus, inst, cfg, terms).map(|(_, l)| l)
}

/// Joint loss of one instance with its parameter gradients. Skipped
/// instances yield zero gradients.
pub fn stage2_gradients(
    model: &Model,
    corpus: &Corpus,
    inst: Instance,
    cfg: &TrainConfig,
    terms: LossTerms,
) -> Result<(Stage2Loss, Params<Vec<f64>>)> {
    let mut bound = bind(model, cfg.seed);
    let (total, loss) = record(&mut bound, model, corpus, inst, cfg, terms)?;
    let grads = match total {
        Some(t) => {
            let g = bound.graph.backward(t)?;
            bound.param_grads(&g)
        }
        None => model.params().map(|_, t| vec![0.0; t.numel()]),
    };
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss_sid: f64,
    pub loss_rank: f64,
    pub used: usize,
    pub skipped: usize,
    pub positives: usize,
}

/// Accumulates gradients over `instances` and applies one update.
pub fn stage2_step(
    model: &mut Model,
    opt: &mut AdamW,
    corpus: &Corpus,
    instances: &[Instance],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepReport> {
    let mut grads = zero_grads(model);
    let mut report = StepReport {
        loss_sid: 0.0,
        loss_rank: 0.0,
        used: 0,
        skipped: 0,
        positives: 0,
    };
    let scale = 1.0 / instances.len().max(1) as f64;
    for &inst in instances {
        let (loss, g) = stage2_gradients(model, corpus, inst, cfg, LossTerms::Both)?;
        if loss.skipped {
            report.skipped += 1;
            continue;
        }
        let pos = loss.labels.iter().filter(|&&y| y > 0.0).count();
        if pos > 1 {
            return Err(Error::invalid(format!("{pos} positive labels in one beam")));
        }
        report.positives += pos;
        report.used += 1;
        report.loss_sid += loss.loss_sid;
        report.loss_rank += loss.loss_rank;
        accumulate(&mut grads, &g, scale);
    }
    if report.used > 0 {
        report.loss_sid /= report.used as f64;
        report.loss_rank /= report.used as f64;
    }
    apply_update(model, opt, &grads, lr, cfg.weight_decay)?;
    Ok(report)
}

/// Joint training from a pretrained model.
pub fn train_stage2(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRow, &StepReport, &Model) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let pool = &corpus.split.train;
    if pool.is_empty() {
        return Err(Error::invalid("no training instances"));
    }
    model.config().check_fits(
        cfg.window,
        1 + crate::tokenizer::SID_DEPTH + cfg.retrieval + 1,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        &model
            .params()
            .values()
            .iter()
            .map(|t| t.numel())
            .collect::<Vec<_>>(),
    );
    let mut rows = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let batch: Vec<Instance> = (0..cfg.batch * cfg.accumulation)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect();
        let lr = cfg.lr_at(step);
        let report = stage2_step(model, &mut opt, corpus, &batch, cfg, lr)?;
        let row = MetricsRow {
            step,
            loss_sid: report.loss_sid,
            loss_rank: report.loss_rank,
            lr,
        };
        on_step(&row, &report, model)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Mean SID and rank losses over `instances`, computed eagerly through the
/// inference path.
pub fn validation_losses(
    model: &Model,
    corpus: &Corpus,
    instances: &[Instance],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if instances.is_empty() {
        return Err(Error::invalid("no validation instances"));
    }
    let (mut sid, mut rank, mut used) = (0.0, 0.0, 0usize);
    for &inst in instances {
        sid += loss_sid(model, &corpus.teacher_sequence(inst, cfg.window)?)?;
        let window = corpus.window(inst, cfg.window);
        let seq =
            crate::serialization::serialize_history(window, &corpus.index, &corpus.vocab, None)?;
        let prefix = PrefixState::build(model, &corpus.vocab, &seq.tokens)?;
        let beam = beam_search(
            model,
            &corpus.vocab,
            &corpus.index,
            &prefix,
            beam_options(cfg),
        )?;
        if beam.candidates.is_empty() {
            continue;
        }
        let truth = corpus.index.sid(corpus.target(inst))?;
        let sids: Vec<SemanticId> = beam.candidates.iter().map(|c| c.sid).collect();
        let labels = make_beam_labels(&sids, truth);
        let mut yhats = Vec::with_capacity(sids.len());
        for c in &beam.candidates {
            let retrieved =
                gsu_retrieve(&corpus.catalog, c.item, corpus.history(inst), cfg.retrieval)?;
            yhats.push(rerank_candidate(model, &corpus.vocab, c, &retrieved)?);
        }
        rank += loss_rank(&yhats, &labels)?;
        used += 1;
    }
    Ok((sid / instances.len() as f64, rank / used.max(1) as f64))
}
