//! Residual k-means item tokenizer.
//!
//! Each item embedding is quantized greedily level by level: level 1 picks the
//! nearest centroid to the embedding, level 2 the nearest to what remains, and
//! so on. The resulting code prefix is made unique per item by a fourth,
//! randomly drawn disambiguation code (see [`resolve_collisions`]).

mod io;
pub mod kmeans;
mod sid;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use io::{load_codebook, read_codebook, save_codebook, write_codebook, CODEBOOK_MAGIC};
pub use sid::{
    resolve_collisions, CollisionStats, SemanticId, SidIndex, SidTrie, TrieCursor, SID_DEPTH,
};

use crate::error::{Error, Result};

/// Number of quantized levels in a semantic ID.
pub const QUANTIZED_LEVELS: usize = 3;

/// Per-level centroid tables of a residual quantizer.
///
/// Centroids are stored in single precision, matching the on-disk format, so
/// a saved and reloaded codebook assigns exactly the same codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    k: usize,
    levels: Vec<Vec<f32>>,
    seed: u64,
}

impl Codebook {
    pub fn from_parts(dim: usize, k: usize, levels: Vec<Vec<f32>>, seed: u64) -> Result<Self> {
        if dim == 0 || k == 0 || levels.is_empty() {
            return Err(Error::invalid(
                "codebook needs dim, k and at least one level",
            ));
        }
        for (l, table) in levels.iter().enumerate() {
            if table.len() != dim * k {
                return Err(Error::invalid(format!(
                    "level {l}: {} values, expected {}",
                    table.len(),
                    dim * k
                )));
            }
            if table.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("codebook level {l}")));
            }
        }
        Ok(Codebook {
            dim,
            k,
            levels,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level(&self, l: usize) -> &[f32] {
        &self.levels[l]
    }

    pub fn centroid(&self, level: usize, code: usize) -> &[f32] {
        &self.levels[level][code * self.dim..(code + 1) * self.dim]
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: dim,
            });
        }
        Ok(())
    }

    /// Greedy residual encoding: one code per level, nearest centroid by
    /// squared Euclidean distance, ties to the lowest code.
    pub fn encode(&self, embedding: &[f64]) -> Result<Vec<u16>> {
        self.check_dim(embedding.len())?;
        let mut residual = embedding.to_vec();
        let mut codes = Vec::with_capacity(self.levels.len());
        let mut cent = vec![0.0; self.dim * self.k];
        for table in &self.levels {
            for (c, &v) in cent.iter_mut().zip(table) {
                *c = v as f64;
            }
            let (code, _) = kmeans::nearest(&residual, &cent, self.dim);
            for (r, c) in residual.iter_mut().zip(&cent[code * self.dim..]) {
                *r -= c;
            }
            codes.push(code as u16);
        }
        Ok(codes)
    }

    /// The quantizer prefix `(s1, s2, s3)` of an embedding.
    pub fn assign_sid(&self, embedding: &[f64]) -> Result<[u16; 3]> {
        if self.levels.len() != QUANTIZED_LEVELS {
            return Err(Error::invalid(format!(
                "semantic IDs need {QUANTIZED_LEVELS} quantized levels, codebook has {}",
                self.levels.len()
            )));
        }
        let c = self.encode(embedding)?;
        Ok([c[0], c[1], c[2]])
    }

    /// Sum of the centroids selected by the first `codes.len()` levels.
    pub fn reconstruct(&self, codes: &[u16]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (l, &code) in codes.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.centroid(l, code as usize)) {
                *o += c as f64;
            }
        }
        out
    }

    /// Mean squared reconstruction error using levels `1..=l`, for each `l`.
    pub fn level_mse(&self, points: &[f64]) -> Result<Vec<f64>> {
        if points.len() % self.dim != 0 {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: points.len() % self.dim,
            });
        }
        let n = points.len() / self.dim;
        let mut sums = vec![0.0; self.levels.len()];
        for p in points.chunks(self.dim) {
            let codes = self.encode(p)?;
            for l in 0..self.levels.len() {
                let rec = self.reconstruct(&codes[..=l]);
                sums[l] += kmeans::sq_dist(p, &rec);
            }
        }
        Ok(sums.into_iter().map(|s| s / n.max(1) as f64).collect())
    }
}

/// Fits `levels` residual k-means tables with `k` centroids each.
///
/// `points` is row-major `[n, dim]`. Each level runs Lloyd's algorithm from a
/// k-means++ seeding on the residuals left by the previous levels.
pub fn fit_codebook(
    points: &[f64],
    dim: usize,
    k: usize,
    levels: usize,
    seed: u64,
) -> Result<Codebook> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "{} values do not form rows of width {dim}",
            points.len()
        )));
    }
    if k == 0 || levels == 0 {
        return Err(Error::invalid("k and levels must be positive"));
    }
    let n = points.len() / dim;
    if n < k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    for (i, row) in points.chunks(dim).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of item {i}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = points.to_vec();
    let mut tables = Vec::with_capacity(levels);
    for _ in 0..levels {
        let init: Vec<f64> = kmeans::kmeans_pp_indices(&residual, dim, k, &mut rng)
            .into_iter()
            .flat_map(|i| residual[i * dim..(i + 1) * dim].to_vec())
            .collect();
        let cent = kmeans::lloyd(&residual, dim, init);
        let table: Vec<f32> = cent.iter().map(|&v| v as f32).collect();
        let cent_rounded: Vec<f64> = table.iter().map(|&v| v as f64).collect();
        for r in residual.chunks_mut(dim) {
            let (c, _) = kmeans::nearest(r, &cent_rounded, dim);
            for (x, y) in r.iter_mut().zip(&cent_rounded[c * dim..]) {
                *x -= y;
            }
        }
        tables.push(table);
    }
    Codebook::from_parts(dim, k, tables, seed)
}

/// Fits a three-level codebook and assigns unique semantic IDs to every row.
pub fn tokenize_catalog(
    points: &[f64],
    dim: usize,
    k: usize,
    s4_max: usize,
    seed: u64,
) -> Result<(Codebook, SidIndex)> {
    let codebook = fit_codebook(points, dim, k, QUANTIZED_LEVELS, seed)?;
    let prefixes = points
        .chunks(dim)
        .map(|p| codebook.assign_sid(p))
        .collect::<Result<Vec<_>>>()?;
    let index = resolve_collisions(&prefixes, s4_max, seed)?;
    Ok((codebook, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_centroid_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 4.0, 5.0, 0.0];
        let cb = fit_codebook(&pts, 2, 1, 3, 0).unwrap();
        assert_eq!(cb.centroid(0, 0), &[3.0, 2.0]);
        for p in pts.chunks(2) {
            assert_eq!(cb.assign_sid(p).unwrap(), [0, 0, 0]);
        }
    }

    #[test]
    fn exact_points_leave_zero_residual() {
        let pts = [0.0, 0.0, 4.0, 0.0, 0.0, 4.0];
        let cb = fit_codebook(&pts, 2, 3, 2, 3).unwrap();
        let mse = cb.level_mse(&pts).unwrap();
        assert_eq!(mse[0], 0.0);
        assert_eq!(mse[1], 0.0);
    }

    #[test]
    fn assign_matches_centroid_chain() {
        let levels = vec![
            vec![0.0, 0.0, 5.0, 5.0, 10.0, 0.0],
            vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.25, 0.25, 0.5, 0.5],
        ];
        let cb = Codebook::from_parts(2, 3, levels, 0).unwrap();
        // c1[2] + c2[0] + c3[1]
        let e = [10.0 + 1.0 + 0.25, 0.0 + 0.0 + 0.25];
        assert_eq!(cb.assign_sid(&e).unwrap(), [2, 0, 1]);
        let rec = cb.reconstruct(&[2, 0, 1]);
        assert_eq!(rec, e.to_vec());
    }

    #[test]
    fn tie_goes_to_lower_code() {
        let cb = Codebook::from_parts(1, 2, vec![vec![-1.0, 1.0]; 3], 0).unwrap();
        assert_eq!(cb.assign_sid(&[0.0]).unwrap()[0], 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            fit_codebook(&[0.0, 1.0], 1, 3, 1, 0),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
        let err = fit_codebook(&[0.0, 1.0, f64::NAN, 2.0], 1, 2, 1, 0).unwrap_err();
        assert!(err.to_string().contains("item 2"), "{err}");
        let cb = fit_codebook(&[0.0, 1.0, 2.0, 3.0], 2, 1, 3, 0).unwrap();
        assert!(matches!(
            cb.assign_sid(&[0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }
}
