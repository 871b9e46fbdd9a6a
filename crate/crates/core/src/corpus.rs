//! A tokenized dataset: catalog, user sequences, SIDs and the split.

use crate::data::{make_splits, Catalog, Instance, Split, UserSequence};
use crate::error::{Error, Result};
use crate::serialization::{serialize_history, SerializedSequence, Vocab};
use crate::tokenizer::{tokenize_catalog, Codebook, SidIndex};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
    pub codebook: Codebook,
    pub index: SidIndex,
    pub vocab: Vocab,
    pub split: Split,
}

impl Corpus {
    pub fn new(
        catalog: Catalog,
        sequences: Vec<UserSequence>,
        codebook: Codebook,
        index: SidIndex,
    ) -> Result<Self> {
        if index.len() != catalog.len() {
            return Err(Error::DimMismatch {
                expected: catalog.len(),
                got: index.len(),
            });
        }
        for s in &sequences {
            s.validate(&catalog)?;
        }
        let vocab = Vocab::for_index(codebook.k(), &index);
        let split = make_splits(&sequences);
        Ok(Corpus {
            catalog,
            sequences,
            codebook,
            index,
            vocab,
            split,
        })
    }

    /// Tokenizes the catalog (`k` codes per level, at most `s4_max` items per
    /// shared prefix) and assembles the corpus.
    pub fn tokenize(
        catalog: Catalog,
        sequences: Vec<UserSequence>,
        k: usize,
        s4_max: usize,
        seed: u64,
    ) -> Result<Self> {
        let (codebook, index) =
            tokenize_catalog(&catalog.to_f64(), catalog.dim(), k, s4_max, seed)?;
        Corpus::new(catalog, sequences, codebook, index)
    }

    /// Every event before the instance's target, oldest first.
    pub fn history(&self, inst: Instance) -> &[usize] {
        &self.sequences[inst.user].events[..inst.target]
    }

    /// The last `window` events before the target.
    pub fn window(&self, inst: Instance, window: usize) -> &[usize] {
        let h = self.history(inst);
        &h[h.len().saturating_sub(window)..]
    }

    pub fn target(&self, inst: Instance) -> usize {
        self.sequences[inst.user].events[inst.target]
    }

    /// Serialized window followed by the target's block.
    pub fn teacher_sequence(&self, inst: Instance, window: usize) -> Result<SerializedSequence> {
        let mut items = self.window(inst, window).to_vec();
        items.push(self.target(inst));
        serialize_history(&items, &self.index, &self.vocab, None)
    }
}
