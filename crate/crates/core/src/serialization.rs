//! Token layout of serialized histories.
//!
//! Every item occupies one block of [`BLOCK_LEN`] tokens,
//! `[BOS, S1(s1), S2(s2), S3(s3), S4(s4), ITEM(x)]`. SID tokens are supervised;
//! BOS and ITEM tokens are inputs only.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::tokenizer::{SemanticId, SidIndex, SID_DEPTH};

pub const BLOCK_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Bos,
    /// `level` is 1-based.
    Sid {
        level: u8,
        code: u16,
    },
    Item(usize),
    Pad,
}

/// Disjoint token-ID ranges: BOS, the four SID levels, items, then PAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    k: usize,
    s4_max: usize,
    items: usize,
}

impl Vocab {
    pub fn new(k: usize, s4_max: usize, items: usize) -> Self {
        Vocab { k, s4_max, items }
    }

    pub fn for_index(k: usize, index: &SidIndex) -> Self {
        Vocab::new(k, index.s4_max(), index.len())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s4_max(&self) -> usize {
        self.s4_max
    }

    pub fn items(&self) -> usize {
        self.items
    }

    fn level_width(&self, level: usize) -> usize {
        if level == SID_DEPTH {
            self.s4_max
        } else {
            self.k
        }
    }

    /// Token IDs of SID level `level` (1-based).
    pub fn level_range(&self, level: usize) -> Range<usize> {
        assert!(
            (1..=SID_DEPTH).contains(&level),
            "SID level {level} out of range"
        );
        let start = 1 + self.k * (level - 1);
        start..start + self.level_width(level)
    }

    fn item_start(&self) -> usize {
        1 + 3 * self.k + self.s4_max
    }

    pub fn size(&self) -> usize {
        self.item_start() + self.items + 1
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn pad(&self) -> usize {
        self.size() - 1
    }

    pub fn sid_token(&self, level: usize, code: u16) -> usize {
        self.level_range(level).start + code as usize
    }

    pub fn item_token(&self, item: usize) -> usize {
        self.item_start() + item
    }

    pub fn encode(&self, t: Token) -> Result<usize> {
        match t {
            Token::Bos => Ok(self.bos()),
            Token::Pad => Ok(self.pad()),
            Token::Sid { level, code } => {
                let level = level as usize;
                if !(1..=SID_DEPTH).contains(&level) || code as usize >= self.level_width(level) {
                    return Err(Error::OutOfRange(format!("SID level {level} code {code}")));
                }
                Ok(self.sid_token(level, code))
            }
            Token::Item(i) if i < self.items => Ok(self.item_token(i)),
            Token::Item(i) => Err(Error::UnknownItem(i)),
        }
    }

    pub fn decode(&self, id: usize) -> Result<Token> {
        if id == 0 {
            return Ok(Token::Bos);
        }
        for level in 1..=SID_DEPTH {
            let r = self.level_range(level);
            if r.contains(&id) {
                return Ok(Token::Sid {
                    level: level as u8,
                    code: (id - r.start) as u16,
                });
            }
        }
        if (self.item_start()..self.item_start() + self.items).contains(&id) {
            return Ok(Token::Item(id - self.item_start()));
        }
        if id == self.pad() {
            return Ok(Token::Pad);
        }
        Err(Error::OutOfRange(format!(
            "token id {id} >= vocab size {}",
            self.size()
        )))
    }

    pub fn is_sid(&self, id: usize) -> bool {
        (1..self.item_start()).contains(&id)
    }

    /// The five tokens `[BOS, S1..S4]` opening an item block.
    pub fn sid_block(&self, sid: SemanticId) -> [usize; 1 + SID_DEPTH] {
        let c = sid.codes();
        [
            self.bos(),
            self.sid_token(1, c[0]),
            self.sid_token(2, c[1]),
            self.sid_token(3, c[2]),
            self.sid_token(4, c[3]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedSequence {
    pub tokens: Vec<usize>,
    /// `target_mask[i]` is true when `tokens[i + 1]` is a SID token.
    pub target_mask: Vec<bool>,
    pub block_starts: Vec<usize>,
}

impl SerializedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn item_count(&self) -> usize {
        self.block_starts.len()
    }

    /// `(predicting position, target token)` for every supervised SID target.
    pub fn sid_targets(&self) -> Vec<(usize, usize)> {
        self.target_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i, self.tokens[i + 1]))
            .collect()
    }

    /// Recovers the item list from the ITEM tokens.
    pub fn items(&self, vocab: &Vocab) -> Result<Vec<usize>> {
        self.block_starts
            .iter()
            .map(|&b| match vocab.decode(self.tokens[b + BLOCK_LEN - 1])? {
                Token::Item(i) => Ok(i),
                other => Err(Error::invalid(format!("block at {b} ends in {other:?}"))),
            })
            .collect()
    }

    pub fn display<'a>(&'a self, vocab: &'a Vocab) -> TokenDisplay<'a> {
        TokenDisplay {
            tokens: &self.tokens,
            vocab,
        }
    }
}

/// Serializes a chronological item list.
///
/// `context` bounds the output length when given.
pub fn serialize_history(
    items: &[usize],
    index: &SidIndex,
    vocab: &Vocab,
    context: Option<usize>,
) -> Result<SerializedSequence> {
    let len = items.len() * BLOCK_LEN;
    if let Some(avail) = context {
        if len > avail {
            return Err(Error::ContextOverflow {
                required: len,
                available: avail,
            });
        }
    }
    let mut tokens = Vec::with_capacity(len);
    let mut target_mask = Vec::with_capacity(len);
    let mut block_starts = Vec::with_capacity(items.len());
    for &item in items {
        let sid = index.sid(item)?;
        block_starts.push(tokens.len());
        tokens.extend_from_slice(&vocab.sid_block(sid));
        tokens.push(vocab.encode(Token::Item(item))?);
        target_mask.extend_from_slice(&[true, true, true, true, false, false]);
    }
    Ok(SerializedSequence {
        tokens,
        target_mask,
        block_starts,
    })
}

/// Position of target `s_t^h` (item `t` 0-based, level `h` 1-based) in a
/// sequence of `items` blocks. Its logit is read one position earlier.
pub fn sid_target_position(t: usize, h: usize, items: usize) -> Result<usize> {
    if t >= items || !(1..=SID_DEPTH).contains(&h) {
        return Err(Error::OutOfRange(format!(
            "target (t={t}, h={h}) with {items} items"
        )));
    }
    Ok(BLOCK_LEN * t + h)
}

/// Tokens appended after the history prefix to score one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankSuffix {
    pub tokens: Vec<usize>,
    /// Index within `tokens` of the scoring (final candidate ITEM) token.
    pub scoring_position: usize,
}

impl RerankSuffix {
    /// Part of the suffix after the candidate's `[BOS, S1..S4]` block.
    pub fn after_sid(&self) -> &[usize] {
        &self.tokens[1 + SID_DEPTH..]
    }
}

/// `[BOS, S1..S4 of the candidate, ITEM(r_1) .. ITEM(r_M), ITEM(candidate)]`.
pub fn build_rerank_suffix(
    candidate_sid: SemanticId,
    retrieved: &[usize],
    candidate_item: usize,
    vocab: &Vocab,
) -> Result<RerankSuffix> {
    let mut tokens = vocab.sid_block(candidate_sid).to_vec();
    for &r in retrieved {
        tokens.push(vocab.encode(Token::Item(r))?);
    }
    tokens.push(vocab.encode(Token::Item(candidate_item))?);
    let scoring_position = tokens.len() - 1;
    Ok(RerankSuffix {
        tokens,
        scoring_position,
    })
}

pub struct TokenDisplay<'a> {
    tokens: &'a [usize],
    vocab: &'a Vocab,
}

impl fmt::Display for TokenDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, &t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match self.vocab.decode(t) {
                Ok(Token::Bos) => f.write_str("BOS")?,
                Ok(Token::Pad) => f.write_str("PAD")?,
                Ok(Token::Sid { level, code }) => write!(f, "s{level}:{code}")?,
                Ok(Token::Item(i)) => write!(f, "item:{i}")?,
                Err(_) => write!(f, "?{t}")?,
            }
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index() -> SidIndex {
        let mut sids = vec![SemanticId::new(0, 0, 0, 0); 13];
        for (i, s) in sids.iter_mut().enumerate() {
            *s = SemanticId::new((i % 4) as u16, (i / 4) as u16, 0, (i % 3) as u16);
        }
        sids[7] = SemanticId::new(1, 2, 3, 0);
        sids[12] = SemanticId::new(1, 2, 3, 4);
        SidIndex::from_sids(sids, 8).unwrap()
    }

    #[test]
    fn single_item_block_layout() {
        let idx = index();
        let v = Vocab::new(4, 8, 13);
        let s = serialize_history(&[7], &idx, &v, None).unwrap();
        let expected = vec![
            v.bos(),
            v.sid_token(1, 1),
            v.sid_token(2, 2),
            v.sid_token(3, 3),
            v.sid_token(4, 0),
            v.item_token(7),
        ];
        assert_eq!(s.tokens, expected);
        assert_eq!(
            s.display(&v).to_string(),
            "[BOS s1:1 s2:2 s3:3 s4:0 item:7]"
        );
    }

    #[test]
    fn two_items_and_empty() {
        let idx = index();
        let v = Vocab::new(4, 8, 13);
        let s = serialize_history(&[3, 5], &idx, &v, None).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.block_starts, vec![0, 6]);
        let e = serialize_history(&[], &idx, &v, None).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn overflow_and_unknown_item() {
        let idx = index();
        let v = Vocab::new(4, 8, 13);
        assert!(matches!(
            serialize_history(&[1, 2], &idx, &v, Some(11)),
            Err(Error::ContextOverflow {
                required: 12,
                available: 11
            })
        ));
        assert!(matches!(
            serialize_history(&[99], &idx, &v, None),
            Err(Error::UnknownItem(99))
        ));
    }

    #[test]
    fn target_positions() {
        assert_eq!(sid_target_position(0, 1, 1).unwrap(), 1);
        assert_eq!(sid_target_position(2, 3, 3).unwrap(), 15);
        assert!(sid_target_position(3, 1, 3).is_err());
        assert!(sid_target_position(0, 5, 3).is_err());

        let idx = index();
        let v = Vocab::new(4, 8, 13);
        let s = serialize_history(&[0, 4, 9], &idx, &v, None).unwrap();
        let masked: Vec<usize> = (0..s.len()).filter(|&i| s.target_mask[i]).collect();
        let mut expected = Vec::new();
        for t in 0..3 {
            for h in 1..=4 {
                expected.push(sid_target_position(t, h, 3).unwrap() - 1);
            }
        }
        assert_eq!(masked, expected);
    }

    #[test]
    fn rerank_suffix_layout() {
        let v = Vocab::new(8, 8, 20);
        let sid = SemanticId::new(1, 2, 3, 4);
        let s = build_rerank_suffix(sid, &[7, 9], 12, &v).unwrap();
        assert_eq!(
            s.tokens,
            vec![
                v.bos(),
                v.sid_token(1, 1),
                v.sid_token(2, 2),
                v.sid_token(3, 3),
                v.sid_token(4, 4),
                v.item_token(7),
                v.item_token(9),
                v.item_token(12)
            ]
        );
        assert_eq!(s.scoring_position, 7);
        assert_eq!(
            s.after_sid(),
            &[v.item_token(7), v.item_token(9), v.item_token(12)]
        );

        let empty = build_rerank_suffix(sid, &[], 12, &v).unwrap();
        assert_eq!(empty.tokens.len(), 6);
        assert_eq!(
            v.decode(empty.tokens[empty.scoring_position]).unwrap(),
            Token::Item(12)
        );
        assert!(build_rerank_suffix(sid, &[25], 12, &v).is_err());
    }

    proptest! {
        #[test]
        fn vocab_round_trip(k in 1usize..40, s4 in 1usize..70, items in 1usize..500, pick in 0usize..10_000) {
            let v = Vocab::new(k, s4, items);
            let id = pick % v.size();
            let t = v.decode(id).unwrap();
            prop_assert_eq!(v.encode(t).unwrap(), id);
        }

        #[test]
        fn serialize_round_trip(items in proptest::collection::vec(0usize..13, 0..20)) {
            let idx = index();
            let v = Vocab::new(4, 8, 13);
            let s = serialize_history(&items, &idx, &v, None).unwrap();
            prop_assert_eq!(s.items(&v).unwrap(), items);
            for (i, &m) in s.target_mask.iter().enumerate() {
                let next_is_sid = i + 1 < s.len() && v.is_sid(s.tokens[i + 1]);
                prop_assert_eq!(m, next_is_sid);
            }
        }
    }
}
