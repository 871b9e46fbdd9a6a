//! Hierarchical beam search over SID levels, reusing the prefix cache.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::backbone::{DecodeState, Model};
use crate::error::{Error, Result};
use crate::numerics::kernels;
use crate::serialization::Vocab;
use crate::tokenizer::{SemanticId, SidIndex, TrieCursor, SID_DEPTH};

/// Decoder state after a history prefix and the opening BOS of the item to
/// generate, with the hidden row at that BOS.
#[derive(Debug, Clone)]
pub struct PrefixState {
    pub state: DecodeState,
    pub last_hidden: Vec<f64>,
}

impl PrefixState {
    /// Runs `history_tokens` followed by BOS.
    pub fn build(model: &Model, vocab: &Vocab, history_tokens: &[usize]) -> Result<Self> {
        let mut tokens = history_tokens.to_vec();
        tokens.push(vocab.bos());
        let (hidden, state) = model.forward_incremental(&DecodeState::new(), &tokens)?;
        Ok(PrefixState {
            state,
            last_hidden: hidden.row(hidden.rows() - 1).to_vec(),
        })
    }

    /// Wraps an existing cache whose last position is the BOS.
    pub fn from_parts(state: DecodeState, last_hidden: Vec<f64>) -> Self {
        PrefixState { state, last_hidden }
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub sid: SemanticId,
    pub item: usize,
    pub gen_logprob: f64,
    /// Cache after the prefix, BOS and the candidate's four SID tokens.
    pub state: DecodeState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamOptions {
    pub width: usize,
    /// Restrict expansions to catalog SIDs. When off, every code of a level
    /// is eligible and uncatalogued results are dropped.
    pub constrained: bool,
}

impl BeamOptions {
    pub fn new(width: usize) -> Self {
        BeamOptions {
            width,
            constrained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub rank: usize,
    pub prefix: Vec<u16>,
    pub logprob: f64,
}

#[derive(Debug, Clone)]
pub struct BeamOutput {
    /// Sorted by `gen_logprob` descending, ties by SID ascending.
    pub candidates: Vec<Candidate>,
    /// Expansion rounds; each advances every live beam by one cached step.
    pub rounds: usize,
    /// Total single-token cache extensions over all beams.
    pub extensions: usize,
    /// Results whose SID is not in the catalog (unconstrained mode only).
    pub dropped: usize,
    pub trace: Vec<TraceRow>,
}

impl BeamOutput {
    /// Per-round beam table as CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("round,rank,prefix,logprob\n");
        for r in &self.trace {
            let prefix: Vec<String> = r.prefix.iter().map(u16::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                r.round,
                r.rank,
                prefix.join("-"),
                r.logprob
            );
        }
        out
    }
}

struct Beam {
    codes: Vec<u16>,
    logprob: f64,
    cursor: Option<TrieCursor>,
    state: DecodeState,
    hidden: Vec<f64>,
}

/// Log-softmax over one SID level's token range.
pub fn level_log_probs(
    model: &Model,
    vocab: &Vocab,
    hidden: &[f64],
    level: usize,
) -> Result<Vec<f64>> {
    let logits = model.sid_logits_range(hidden, vocab.level_range(level))?;
    let mut out = vec![0.0; logits.len()];
    kernels::log_softmax_row(&logits, &mut out);
    model.config().precision.round_all(&mut out);
    Ok(out)
}

/// Orders by score descending, then code tuple ascending.
pub fn rank_order(a: (f64, &[u16]), b: (f64, &[u16])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn beam_search(
    model: &Model,
    vocab: &Vocab,
    index: &SidIndex,
    prefix: &PrefixState,
    opts: BeamOptions,
) -> Result<BeamOutput> {
    if opts.width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let trie = index.trie();
    if trie.is_empty() {
        return Err(Error::EmptyTrie);
    }
    let mut beams = vec![Beam {
        codes: Vec::with_capacity(SID_DEPTH),
        logprob: 0.0,
        cursor: Some(trie.root()),
        state: prefix.state.clone(),
        hidden: prefix.last_hidden.clone(),
    }];
    let mut out = BeamOutput {
        candidates: Vec::new(),
        rounds: 0,
        extensions: 0,
        dropped: 0,
        trace: Vec::new(),
    };
    for level in 1..=SID_DEPTH {
        // (parent beam, code, child cursor, score)
        let mut expansions: Vec<(usize, u16, Option<TrieCursor>, f64)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            let lp = level_log_probs(model, vocab, &beam.hidden, level)?;
            if opts.constrained {
                let cursor = beam.cursor.expect("constrained beams stay on the trie");
                for (code, child) in trie.children(cursor) {
                    expansions.push((bi, code, Some(child), beam.logprob + lp[code as usize]));
                }
            } else {
                for (code, &l) in lp.iter().enumerate() {
                    let child = beam.cursor.and_then(|c| trie.child(c, code as u16));
                    expansions.push((bi, code as u16, child, beam.logprob + l));
                }
            }
        }
        let key = |e: &(usize, u16, Option<TrieCursor>, f64)| {
            let mut c = beams[e.0].codes.clone();
            c.push(e.1);
            c
        };
        let mut keyed: Vec<(Vec<u16>, (usize, u16, Option<TrieCursor>, f64))> =
            expansions.into_iter().map(|e| (key(&e), e)).collect();
        keyed.sort_by(|a, b| rank_order((a.1 .3, &a.0), (b.1 .3, &b.0)));
        keyed.truncate(opts.width);

        let mut next = Vec::with_capacity(keyed.len());
        for (rank, (codes, (bi, code, cursor, score))) in keyed.into_iter().enumerate() {
            out.trace.push(TraceRow {
                round: level,
                rank,
                prefix: codes.clone(),
                logprob: score,
            });
            let parent = &beams[bi];
            let token = vocab.sid_token(level, code);
            let (h, state) = model.forward_incremental(&parent.state, &[token])?;
            out.extensions += 1;
            next.push(Beam {
                codes,
                logprob: score,
                cursor,
                state,
                hidden: h.row(0).to_vec(),
            });
        }
        out.rounds += 1;
        beams = next;
    }
    for b in beams {
        let sid = SemanticId::from_codes(b.codes.as_slice().try_into().expect("four levels"));
        match map_sid_to_item(&sid, index) {
            Some(item) => out.candidates.push(Candidate {
                sid,
                item,
                gen_logprob: b.logprob,
                state: b.state,
            }),
            None => out.dropped += 1,
        }
    }
    out.candidates.sort_by(|a, b| {
        rank_order(
            (a.gen_logprob, &a.sid.codes()),
            (b.gen_logprob, &b.sid.codes()),
        )
    });
    Ok(out)
}

/// The catalog item carrying `sid`, if any.
pub fn map_sid_to_item(sid: &SemanticId, index: &SidIndex) -> Option<usize> {
    index.item(sid)
}
