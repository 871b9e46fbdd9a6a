//! Item catalogs, user interaction sequences and evaluation splits.

mod files;
mod split;
mod synthetic;

pub use files::{
    load_taobao_mm, parse_sequences, read_embeddings, write_embeddings, write_sequences,
    LoadReport, EMBEDDINGS_MAGIC,
};
pub use split::{make_splits, Instance, Split};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

/// Item embeddings indexed by dense item ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    dim: usize,
    embeddings: Vec<f32>,
    clusters: Option<Vec<usize>>,
    external_ids: Vec<u64>,
}

impl Catalog {
    pub fn new(dim: usize, embeddings: Vec<f32>) -> Result<Self> {
        if dim == 0 || embeddings.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form embeddings of width {dim}",
                embeddings.len()
            )));
        }
        let n = embeddings.len() / dim;
        for (i, e) in embeddings.chunks(dim).enumerate() {
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of item {i}")));
            }
            if e.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!("embedding of item {i} is zero")));
            }
        }
        Ok(Catalog {
            dim,
            embeddings,
            clusters: None,
            external_ids: (0..n as u64).collect(),
        })
    }

    pub fn with_clusters(mut self, clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != self.len() {
            return Err(Error::invalid("one cluster label per item required"));
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn with_external_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::invalid("one external id per item required"));
        }
        self.external_ids = ids;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embedding(&self, item: usize) -> &[f32] {
        &self.embeddings[item * self.dim..(item + 1) * self.dim]
    }

    pub fn embedding_f64(&self, item: usize) -> Vec<f64> {
        self.embedding(item).iter().map(|&v| v as f64).collect()
    }

    pub fn raw(&self) -> &[f32] {
        &self.embeddings
    }

    /// All embeddings widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.embeddings.iter().map(|&v| v as f64).collect()
    }

    pub fn cluster(&self, item: usize) -> Option<usize> {
        self.clusters.as_ref().map(|c| c[item])
    }

    pub fn external_id(&self, item: usize) -> u64 {
        self.external_ids[item]
    }

    pub fn external_ids(&self) -> &[u64] {
        &self.external_ids
    }
}

/// One user's interactions, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user_id: u64,
    pub events: Vec<usize>,
}

impl UserSequence {
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.events.len() < 2 {
            return Err(Error::invalid(format!(
                "user {} has {} events, need at least 2",
                self.user_id,
                self.events.len()
            )));
        }
        if let Some(&bad) = self.events.iter().find(|&&e| e >= catalog.len()) {
            return Err(Error::UnknownItem(bad));
        }
        Ok(())
    }
}
