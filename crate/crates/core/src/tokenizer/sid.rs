use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of tokens in a semantic ID.
pub const SID_DEPTH: usize = 4;

/// Four-level semantic ID: three quantizer codes and a disambiguation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId {
    pub s1: u16,
    pub s2: u16,
    pub s3: u16,
    pub s4: u16,
}

impl SemanticId {
    pub fn new(s1: u16, s2: u16, s3: u16, s4: u16) -> Self {
        SemanticId { s1, s2, s3, s4 }
    }

    pub fn from_codes(c: [u16; SID_DEPTH]) -> Self {
        SemanticId::new(c[0], c[1], c[2], c[3])
    }

    pub fn codes(&self) -> [u16; SID_DEPTH] {
        [self.s1, self.s2, self.s3, self.s4]
    }

    pub fn prefix(&self) -> [u16; 3] {
        [self.s1, self.s2, self.s3]
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}-{}", self.s1, self.s2, self.s3, self.s4)
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    /// Sorted by code.
    children: Vec<(u16, usize)>,
    item: Option<usize>,
}

/// Prefix tree over all catalogued semantic IDs.
#[derive(Debug, Clone)]
pub struct SidTrie {
    nodes: Vec<TrieNode>,
    leaves: usize,
}

/// Handle to a trie node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieCursor(usize);

impl Default for SidTrie {
    fn default() -> Self {
        SidTrie {
            nodes: vec![TrieNode::default()],
            leaves: 0,
        }
    }
}

impl SidTrie {
    pub fn root(&self) -> TrieCursor {
        TrieCursor(0)
    }

    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    fn insert(&mut self, sid: SemanticId, item: usize) {
        let mut cur = 0;
        for code in sid.codes() {
            let pos = self.nodes[cur]
                .children
                .binary_search_by_key(&code, |c| c.0);
            cur = match pos {
                Ok(p) => self.nodes[cur].children[p].1,
                Err(p) => {
                    self.nodes.push(TrieNode::default());
                    let id = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(p, (code, id));
                    id
                }
            };
        }
        if self.nodes[cur].item.replace(item).is_none() {
            self.leaves += 1;
        }
    }

    /// Valid next codes below `at`, ascending.
    pub fn children(&self, at: TrieCursor) -> impl Iterator<Item = (u16, TrieCursor)> + '_ {
        self.nodes[at.0]
            .children
            .iter()
            .map(|&(c, n)| (c, TrieCursor(n)))
    }

    pub fn child(&self, at: TrieCursor, code: u16) -> Option<TrieCursor> {
        let ch = &self.nodes[at.0].children;
        ch.binary_search_by_key(&code, |c| c.0)
            .ok()
            .map(|p| TrieCursor(ch[p].1))
    }

    pub fn walk(&self, codes: &[u16]) -> Option<TrieCursor> {
        codes
            .iter()
            .try_fold(self.root(), |cur, &c| self.child(cur, c))
    }

    pub fn item_at(&self, at: TrieCursor) -> Option<usize> {
        self.nodes[at.0].item
    }

    /// Depth of every leaf (node holding an item), in DFS order.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, depth)) = stack.pop() {
            if self.nodes[n].item.is_some() {
                out.push(depth);
            }
            for &(_, c) in self.nodes[n].children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }

    /// All complete SIDs in lexicographic order.
    pub fn sids(&self) -> Vec<(SemanticId, usize)> {
        let mut out = Vec::new();
        let mut path = Vec::with_capacity(SID_DEPTH);
        self.collect(0, &mut path, &mut out);
        out
    }

    fn collect(&self, n: usize, path: &mut Vec<u16>, out: &mut Vec<(SemanticId, usize)>) {
        if let Some(item) = self.nodes[n].item {
            if path.len() == SID_DEPTH {
                out.push((SemanticId::new(path[0], path[1], path[2], path[3]), item));
            }
        }
        for &(c, child) in &self.nodes[n].children {
            path.push(c);
            self.collect(child, path, out);
            path.pop();
        }
    }
}

/// Bijection between semantic IDs and dense item IDs, plus its prefix trie.
#[derive(Debug, Clone)]
pub struct SidIndex {
    item_to_sid: Vec<SemanticId>,
    sid_to_item: BTreeMap<SemanticId, usize>,
    trie: SidTrie,
    s4_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionStats {
    pub items: usize,
    pub distinct_prefixes: usize,
    pub colliding_groups: usize,
    pub largest_group: usize,
    pub distinct_sids: usize,
}

impl SidIndex {
    /// Builds an index from explicit assignments (item `i` gets `sids[i]`).
    pub fn from_sids(sids: Vec<SemanticId>, s4_max: usize) -> Result<Self> {
        let mut sid_to_item = BTreeMap::new();
        let mut trie = SidTrie::default();
        for (item, &sid) in sids.iter().enumerate() {
            if sid.s4 as usize >= s4_max {
                return Err(Error::invalid(format!(
                    "item {item}: s4 {} out of range [0, {s4_max})",
                    sid.s4
                )));
            }
            if let Some(other) = sid_to_item.insert(sid, item) {
                return Err(Error::invalid(format!(
                    "items {other} and {item} share semantic ID {sid}"
                )));
            }
            trie.insert(sid, item);
        }
        Ok(SidIndex {
            item_to_sid: sids,
            sid_to_item,
            trie,
            s4_max,
        })
    }

    pub fn len(&self) -> usize {
        self.item_to_sid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_to_sid.is_empty()
    }

    pub fn s4_max(&self) -> usize {
        self.s4_max
    }

    pub fn sid(&self, item: usize) -> Result<SemanticId> {
        self.item_to_sid
            .get(item)
            .copied()
            .ok_or(Error::UnknownItem(item))
    }

    pub fn item(&self, sid: &SemanticId) -> Option<usize> {
        self.sid_to_item.get(sid).copied()
    }

    pub fn sids(&self) -> &[SemanticId] {
        &self.item_to_sid
    }

    pub fn trie(&self) -> &SidTrie {
        &self.trie
    }

    pub fn collision_stats(&self) -> CollisionStats {
        let mut groups: BTreeMap<[u16; 3], usize> = BTreeMap::new();
        for s in &self.item_to_sid {
            *groups.entry(s.prefix()).or_default() += 1;
        }
        CollisionStats {
            items: self.item_to_sid.len(),
            distinct_prefixes: groups.len(),
            colliding_groups: groups.values().filter(|&&n| n > 1).count(),
            largest_group: groups.values().copied().max().unwrap_or(0),
            distinct_sids: self.sid_to_item.len(),
        }
    }
}

/// Gives every item a distinct fourth code.
///
/// Items sharing a quantizer prefix form a collision group; each group draws
/// its codes without replacement from its own seeded shuffle of
/// `0..s4_max`, members taking them in ascending item order.
pub fn resolve_collisions(prefixes: &[[u16; 3]], s4_max: usize, seed: u64) -> Result<SidIndex> {
    let mut groups: BTreeMap<[u16; 3], Vec<usize>> = BTreeMap::new();
    for (item, p) in prefixes.iter().enumerate() {
        groups.entry(*p).or_default().push(item);
    }
    if let Some(size) = groups.values().map(Vec::len).find(|&n| n > s4_max) {
        return Err(Error::CollisionOverflow { size, s4_max });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<u16> = (0..s4_max as u16).collect();
    let mut sids = vec![SemanticId::default(); prefixes.len()];
    for (prefix, members) in &groups {
        pool.shuffle(&mut rng);
        for (&item, &s4) in members.iter().zip(&pool) {
            sids[item] = SemanticId::new(prefix[0], prefix[1], prefix[2], s4);
        }
    }
    SidIndex::from_sids(sids, s4_max)
}

impl Default for SemanticId {
    fn default() -> Self {
        SemanticId::new(0, 0, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn colliding_items_get_distinct_s4() {
        let idx = resolve_collisions(&[[1, 2, 3], [1, 2, 3]], 64, 7).unwrap();
        let (a, b) = (idx.sid(0).unwrap(), idx.sid(1).unwrap());
        assert_eq!(a.prefix(), [1, 2, 3]);
        assert_ne!(a.s4, b.s4);
        for (item, sid) in [(0, a), (1, b)] {
            let cur = idx.trie().walk(&sid.codes()).unwrap();
            assert_eq!(idx.trie().item_at(cur), Some(item));
        }
        assert!(idx.trie().leaf_depths().iter().all(|&d| d == 4));
    }

    #[test]
    fn distinct_prefixes_keep_bijection() {
        let prefixes = [[0, 0, 0], [0, 0, 1], [5, 1, 2]];
        let idx = resolve_collisions(&prefixes, 4, 1).unwrap();
        for item in 0..3 {
            assert_eq!(idx.item(&idx.sid(item).unwrap()), Some(item));
        }
        assert_eq!(idx.trie().leaf_count(), 3);
    }

    #[test]
    fn oversized_group_is_rejected() {
        let err = resolve_collisions(&[[1, 1, 1]; 5], 4, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::CollisionOverflow { size: 5, s4_max: 4 }
        ));
    }

    #[test]
    fn resolution_is_seed_deterministic() {
        let prefixes: Vec<[u16; 3]> = (0..50).map(|i| [i % 3, 0, i % 2]).collect();
        let a = resolve_collisions(&prefixes, 32, 9).unwrap();
        let b = resolve_collisions(&prefixes, 32, 9).unwrap();
        assert_eq!(a.sids(), b.sids());
        let distinct: BTreeSet<_> = a.sids().iter().collect();
        assert_eq!(distinct.len(), 50);
    }

    #[test]
    fn trie_lists_children_in_order() {
        let idx = SidIndex::from_sids(
            vec![
                SemanticId::new(2, 0, 0, 0),
                SemanticId::new(1, 3, 0, 0),
                SemanticId::new(1, 0, 0, 1),
            ],
            4,
        )
        .unwrap();
        let t = idx.trie();
        let top: Vec<u16> = t.children(t.root()).map(|c| c.0).collect();
        assert_eq!(top, vec![1, 2]);
        let under1 = t.walk(&[1]).unwrap();
        let second: Vec<u16> = t.children(under1).map(|c| c.0).collect();
        assert_eq!(second, vec![0, 3]);
        assert!(t.walk(&[3]).is_none());
        assert_eq!(t.sids().len(), 3);
    }
}
