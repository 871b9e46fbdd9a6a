//! Synthetic catalog and user walks with planted sequential structure.
//!
//! Items belong to `clusters` groups whose embeddings scatter around a unit
//! center. Users walk a Markov chain over the groups (stay with
//! `self_prob`, otherwise jump to a uniformly chosen other group) and emit
//! one item of the current group per step. Two optional knobs shape which
//! item: `popularity_skew` makes in-group choice Zipf-distributed instead of
//! uniform, and `repeat_prob` re-emits one of the user's own earlier items
//! from the same group, so a user's history contains items identical to
//! future targets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Catalog, UserSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub items: usize,
    pub users: usize,
    pub clusters: usize,
    pub self_prob: f64,
    pub noise_sigma: f64,
    pub seq_len: usize,
    pub dim: usize,
    /// Zipf exponent of in-group item choice; 0 is uniform.
    pub popularity_skew: f64,
    /// Probability of repeating an earlier item of the current group.
    pub repeat_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            items: 1000,
            users: 2000,
            clusters: 8,
            self_prob: 0.6,
            noise_sigma: 0.15,
            seq_len: 40,
            dim: 16,
            popularity_skew: 1.0,
            repeat_prob: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// The plain process: uniform in-group choice, no repeats.
    pub fn uniform(self) -> Self {
        SyntheticConfig {
            popularity_skew: 0.0,
            repeat_prob: 0.0,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.clusters > self.items {
            return Err(Error::invalid(format!(
                "clusters must be in 1..={}, got {}",
                self.items, self.clusters
            )));
        }
        if !(self.self_prob > 0.0 && self.self_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "self_prob {} not in (0, 1]",
                self.self_prob
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(
                "noise_sigma must be finite and non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.repeat_prob) || !(self.popularity_skew >= 0.0) {
            return Err(Error::invalid(
                "repeat_prob must be in [0, 1], popularity_skew >= 0",
            ));
        }
        if self.seq_len < 2 || self.dim == 0 || self.users == 0 {
            return Err(Error::invalid("need seq_len >= 2, dim >= 1, users >= 1"));
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Catalog, Vec<UserSequence>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (g, d) = (cfg.clusters, cfg.dim);

    let centers: Vec<Vec<f64>> = (0..g)
        .map(|_| {
            let mut c: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&mut c);
            c
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.items).collect();
    order.shuffle(&mut rng);
    let mut cluster_of = vec![0; cfg.items];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (pos, &item) in order.iter().enumerate() {
        cluster_of[item] = pos % g;
        members[pos % g].push(item);
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut embeddings = Vec::with_capacity(cfg.items * d);
    for &c in &cluster_of {
        let mut e = centers[c].clone();
        if cfg.noise_sigma > 0.0 {
            e.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
        }
        normalize(&mut e);
        embeddings.extend(e.iter().map(|&x| x as f32));
    }

    // cumulative Zipf weights over each group's (already shuffled) members
    let cumulative: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut acc = 0.0;
            (0..m.len())
                .map(|r| {
                    acc += 1.0 / ((r + 1) as f64).powf(cfg.popularity_skew);
                    acc
                })
                .collect()
        })
        .collect();

    let mut sequences = Vec::with_capacity(cfg.users);
    for user in 0..cfg.users {
        let mut state = rng.gen_range(0..g);
        let mut events: Vec<usize> = Vec::with_capacity(cfg.seq_len);
        for step in 0..cfg.seq_len {
            if step > 0 && g > 1 && rng.gen::<f64>() >= cfg.self_prob {
                let jump = rng.gen_range(0..g - 1);
                state = if jump >= state { jump + 1 } else { jump };
            }
            let repeat = cfg.repeat_prob > 0.0 && rng.gen::<f64>() < cfg.repeat_prob;
            let seen: Vec<usize> = if repeat {
                events
                    .iter()
                    .copied()
                    .filter(|&e| cluster_of[e] == state)
                    .collect()
            } else {
                Vec::new()
            };
            let item = if let Some(&it) = seen.choose(&mut rng) {
                it
            } else {
                let cum = &cumulative[state];
                let u = rng.gen::<f64>() * cum[cum.len() - 1];
                let r = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
                members[state][r]
            };
            events.push(item);
        }
        sequences.push(UserSequence {
            user_id: user as u64,
            events,
        });
    }

    let catalog = Catalog::new(d, embeddings)?.with_clusters(cluster_of)?;
    Ok((catalog, sequences))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            items: 200,
            users: 100,
            clusters: 4,
            seq_len: 20,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_noise_collapses_clusters() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let (cat, _) = generate_synthetic(&cfg).unwrap();
        for a in 0..cat.len() {
            for b in 0..cat.len() {
                if cat.cluster(a) == cat.cluster(b) {
                    assert_eq!(cat.embedding(a), cat.embedding(b));
                }
            }
        }
    }

    #[test]
    fn full_self_prob_never_leaves_cluster() {
        let cfg = SyntheticConfig {
            self_prob: 1.0,
            ..small()
        };
        let (cat, seqs) = generate_synthetic(&cfg).unwrap();
        for s in &seqs {
            let c0 = cat.cluster(s.events[0]);
            assert!(s.events.iter().all(|&e| cat.cluster(e) == c0));
        }
    }

    #[test]
    fn seed_determinism() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        for bad in [
            SyntheticConfig {
                self_prob: 0.0,
                ..small()
            },
            SyntheticConfig {
                self_prob: 1.5,
                ..small()
            },
            SyntheticConfig {
                clusters: 201,
                ..small()
            },
            SyntheticConfig {
                noise_sigma: -1.0,
                ..small()
            },
        ] {
            assert!(generate_synthetic(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let (cat, _) = generate_synthetic(&small()).unwrap();
        for i in 0..cat.len() {
            let n: f64 = cat.embedding_f64(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}
