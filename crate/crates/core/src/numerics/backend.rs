use std::sync::Arc;

use super::ops;
use super::tensor::{Precision, Tensor};
use crate::error::Result;

/// The primitive set a model forward pass is written against.
///
/// [`Eager`] evaluates immediately; [`super::Graph`] additionally records each
/// call for reverse-mode differentiation. Both route through [`ops`], so the
/// same model code yields bitwise-identical values on either backend.
pub trait Backend {
    type Value: Clone;

    fn precision(&self) -> Precision;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn layer_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
    ) -> Result<Self::Value>;
    fn gelu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn embed(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value>;
    fn slice_rows(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value>;
    fn select_rows(&mut self, x: &Self::Value, idx: &[usize]) -> Result<Self::Value>;
    fn concat_rows(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn attention(
        &mut self,
        q: &Self::Value,
        k: &Self::Value,
        v: &Self::Value,
        heads: usize,
        offset: usize,
    ) -> Result<Self::Value>;
    fn dropout(&mut self, x: &Self::Value, rate: f64) -> Self::Value;

    /// `x @ w + b`.
    fn linear(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let y = self.matmul(x, w)?;
        self.add_bias(&y, b)
    }
}

/// Immediate evaluation without recording. Values are shared, immutable tensors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager {
    precision: Precision,
}

impl Eager {
    pub fn new(precision: Precision) -> Self {
        Eager { precision }
    }
}

impl Backend for Eager {
    type Value = Arc<Tensor>;

    fn precision(&self) -> Precision {
        self.precision
    }

    fn tensor<'a>(&'a self, v: &'a Arc<Tensor>) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::matmul(a, b, self.precision).map(Arc::new)
    }

    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::add(a, b, self.precision).map(Arc::new)
    }

    fn add_bias(&mut self, x: &Arc<Tensor>, bias: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::add_bias(x, bias, self.precision).map(Arc::new)
    }

    fn layer_norm(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
    ) -> Result<Arc<Tensor>> {
        ops::layer_norm(x, gamma, beta, self.precision).map(|o| Arc::new(o.out))
    }

    fn gelu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(ops::map(x, super::kernels::gelu, self.precision))
    }

    fn sigmoid(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(ops::map(x, super::kernels::sigmoid, self.precision))
    }

    fn embed(&mut self, table: &Arc<Tensor>, ids: &[usize]) -> Result<Arc<Tensor>> {
        ops::embed(table, ids, self.precision).map(Arc::new)
    }

    fn slice_rows(&mut self, x: &Arc<Tensor>, start: usize, end: usize) -> Result<Arc<Tensor>> {
        ops::slice_rows(x, start, end).map(Arc::new)
    }

    fn select_rows(&mut self, x: &Arc<Tensor>, idx: &[usize]) -> Result<Arc<Tensor>> {
        ops::select_rows(x, idx).map(Arc::new)
    }

    fn concat_rows(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::concat_rows(a, b).map(Arc::new)
    }

    fn attention(
        &mut self,
        q: &Arc<Tensor>,
        k: &Arc<Tensor>,
        v: &Arc<Tensor>,
        heads: usize,
        offset: usize,
    ) -> Result<Arc<Tensor>> {
        ops::attention(q, k, v, heads, offset, self.precision).map(|o| Arc::new(o.out))
    }

    fn dropout(&mut self, x: &Arc<Tensor>, _rate: f64) -> Arc<Tensor> {
        x.clone()
    }
}
