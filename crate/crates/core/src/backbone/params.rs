use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Weights of one pre-norm decoder block. Matrices are `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<V> {
    pub ln1_g: V,
    pub ln1_b: V,
    pub wq: V,
    pub bq: V,
    pub wk: V,
    pub bk: V,
    pub wv: V,
    pub bv: V,
    pub wo: V,
    pub bo: V,
    pub ln2_g: V,
    pub ln2_b: V,
    pub w1: V,
    pub b1: V,
    pub w2: V,
    pub b2: V,
}

/// Full parameter set, generic over how a tensor is held (shared tensor,
/// graph node, gradient buffer, optimizer moment).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<V> {
    pub tok_emb: V,
    pub pos_emb: V,
    pub layers: Vec<LayerParams<V>>,
    pub lnf_g: V,
    pub lnf_b: V,
    pub sid_w: V,
    pub sid_b: V,
    pub rank_w: V,
    pub rank_b: V,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl<V> LayerParams<V> {
    fn entries(&self, prefix: &str) -> Vec<(String, &V)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((format!("{prefix}.{}", stringify!($f)), &self.$f)),*] };
        }
        layer_fields!(list)
    }

    fn try_map<W>(
        &self,
        prefix: &str,
        f: &mut impl FnMut(&str, &V) -> Result<W>,
    ) -> Result<LayerParams<W>> {
        macro_rules! build {
            ($($f:ident),*) => {
                LayerParams { $($f: f(&format!("{prefix}.{}", stringify!($f)), &self.$f)?),* }
            };
        }
        Ok(layer_fields!(build))
    }
}

impl<V> Params<V> {
    /// Every parameter with its name, in a fixed order.
    pub fn entries(&self) -> Vec<(String, &V)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.entries(&format!("layer{i}")));
        }
        out.extend([
            ("lnf_g".to_string(), &self.lnf_g),
            ("lnf_b".to_string(), &self.lnf_b),
            ("sid_w".to_string(), &self.sid_w),
            ("sid_b".to_string(), &self.sid_b),
            ("rank_w".to_string(), &self.rank_w),
            ("rank_b".to_string(), &self.rank_b),
        ]);
        out
    }

    pub fn values(&self) -> Vec<&V> {
        self.entries().into_iter().map(|(_, v)| v).collect()
    }

    pub fn try_map<W>(&self, mut f: impl FnMut(&str, &V) -> Result<W>) -> Result<Params<W>> {
        Ok(Params {
            tok_emb: f("tok_emb", &self.tok_emb)?,
            pos_emb: f("pos_emb", &self.pos_emb)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("layer{i}"), &mut f))
                .collect::<Result<_>>()?,
            lnf_g: f("lnf_g", &self.lnf_g)?,
            lnf_b: f("lnf_b", &self.lnf_b)?,
            sid_w: f("sid_w", &self.sid_w)?,
            sid_b: f("sid_b", &self.sid_b)?,
            rank_w: f("rank_w", &self.rank_w)?,
            rank_b: f("rank_b", &self.rank_b)?,
        })
    }

    pub fn map<W>(&self, mut f: impl FnMut(&str, &V) -> W) -> Params<W> {
        self.try_map(|n, v| Ok(f(n, v))).expect("infallible")
    }

    /// Rebuilds a parameter set from values listed in [`Params::entries`] order.
    pub fn from_values<W>(&self, values: Vec<W>) -> Result<Params<W>> {
        let expected = self.entries().len();
        if values.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut it = values.into_iter();
        self.try_map(|_, _| Ok(it.next().expect("length checked")))
    }
}

impl Params<Arc<Tensor>> {
    pub fn num_scalars(&self) -> usize {
        self.values().iter().map(|t| t.numel()).sum()
    }

    /// Expected shape of every parameter under `cfg`.
    pub fn shapes(cfg: &ModelConfig) -> Params<Vec<usize>> {
        let (d, f, v) = (cfg.d_model, cfg.ffn, cfg.vocab);
        let layer = LayerParams {
            ln1_g: vec![d],
            ln1_b: vec![d],
            wq: vec![d, d],
            bq: vec![d],
            wk: vec![d, d],
            bk: vec![d],
            wv: vec![d, d],
            bv: vec![d],
            wo: vec![d, d],
            bo: vec![d],
            ln2_g: vec![d],
            ln2_b: vec![d],
            w1: vec![d, f],
            b1: vec![f],
            w2: vec![f, d],
            b2: vec![d],
        };
        Params {
            tok_emb: vec![v, d],
            pos_emb: vec![cfg.context, d],
            layers: vec![layer; cfg.layers],
            lnf_g: vec![d],
            lnf_b: vec![d],
            sid_w: vec![d, v],
            sid_b: vec![v],
            rank_w: vec![d, 1],
            rank_b: vec![1],
        }
    }

    /// Seeded Gaussian weights, zero biases, unit LayerNorm gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Ok(Self::shapes(cfg).map(|name, shape| {
            let n: usize = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or(name);
            let data: Vec<f64> = if leaf.ends_with("_g") {
                vec![1.0; n]
            } else if shape.len() == 1 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            let t = Tensor::new(shape.clone(), data).expect("shape matches data");
            Arc::new(t.rounded(cfg.precision))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 8,
            heads: 2,
            ffn: 16,
            context: 12,
            vocab: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = Params::init(&cfg()).unwrap();
        let b = Params::init(&cfg()).unwrap();
        assert_eq!(a, b);
        let c = Params::init(&ModelConfig { seed: 9, ..cfg() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_zero_and_gains_one() {
        let p = Params::init(&cfg()).unwrap();
        assert!(p.layers[1].b1.data().iter().all(|&v| v == 0.0));
        assert!(p.lnf_g.data().iter().all(|&v| v == 1.0));
        assert!(p.layers[0].ln2_b.data().iter().all(|&v| v == 0.0));
        let w = p.layers[0].wq.data();
        let sd = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
        assert!(sd > 0.005 && sd < 0.05, "{sd}");
    }

    #[test]
    fn entries_round_trip_through_from_values() {
        let p = Params::init(&cfg()).unwrap();
        let names: Vec<String> = p.entries().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 2 + 16 * 2 + 6);
        assert_eq!(names[2], "layer0.ln1_g");
        let again = p
            .from_values(p.values().into_iter().cloned().collect())
            .unwrap();
        assert_eq!(again, p);
    }
}
