//! Shape-checked forward primitives on [`Tensor`]s.
//!
//! Both backends call these, so eager inference and recorded training compute
//! identical values.

use super::kernels::{self, AttnShape};
use super::tensor::{Precision, Tensor};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    let (m, k) = a.expect_matrix("matmul")?;
    let (k2, n) = b.expect_matrix("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n)).map(|t| t.rounded(p))
}

pub fn add(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).map(|t| t.rounded(p))
}

pub fn mul(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch("mul", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).map(|t| t.rounded(p))
}

/// Adds a length-`n` bias to every row of an `[m, n]` matrix.
pub fn add_bias(x: &Tensor, bias: &Tensor, p: Precision) -> Result<Tensor> {
    let (_, n) = x.expect_matrix("add_bias")?;
    if bias.numel() != n {
        return Err(mismatch("add_bias", x, bias));
    }
    let b = bias.data();
    let data = x
        .data()
        .chunks(n)
        .flat_map(|row| row.iter().zip(b).map(|(v, c)| v + c))
        .collect();
    Tensor::new(x.shape().to_vec(), data).map(|t| t.rounded(p))
}

pub fn scale(x: &Tensor, s: f64, p: Precision) -> Tensor {
    let data = x.data().iter().map(|v| v * s).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap().rounded(p)
}

pub fn map(x: &Tensor, f: impl Fn(f64) -> f64, p: Precision) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap().rounded(p)
}

pub struct LayerNormOut {
    pub out: Tensor,
    pub means: Vec<f64>,
    pub rstds: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, p: Precision) -> Result<LayerNormOut> {
    let (rows, cols) = x.expect_matrix("layer_norm")?;
    if gamma.numel() != cols {
        return Err(mismatch("layer_norm", x, gamma));
    }
    if beta.numel() != cols {
        return Err(mismatch("layer_norm", x, beta));
    }
    let (out, means, rstds) = kernels::layer_norm(x.data(), gamma.data(), beta.data(), rows, cols);
    Ok(LayerNormOut {
        out: Tensor::new(x.shape().to_vec(), out)?.rounded(p),
        means,
        rstds,
    })
}

/// Gathers rows `ids` of a `[vocab, d]` table.
pub fn embed(table: &Tensor, ids: &[usize], p: Precision) -> Result<Tensor> {
    let (rows, d) = table.expect_matrix("embed")?;
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= rows {
            return Err(Error::OutOfRange(format!(
                "embed: id {id} >= table rows {rows}"
            )));
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], data).map(|t| t.rounded(p))
}

pub fn slice_rows(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("slice_rows")?;
    if start > end || end > rows {
        return Err(Error::OutOfRange(format!(
            "slice_rows: {start}..{end} of {rows} rows"
        )));
    }
    Tensor::new(
        vec![end - start, cols],
        x.data()[start * cols..end * cols].to_vec(),
    )
}

pub fn select_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("select_rows")?;
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &r in idx {
        if r >= rows {
            return Err(Error::OutOfRange(format!("select_rows: row {r} of {rows}")));
        }
        data.extend_from_slice(x.row(r));
    }
    Tensor::new(vec![idx.len(), cols], data)
}

pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.expect_matrix("concat_rows")?;
    let (rb, cb) = b.expect_matrix("concat_rows")?;
    if ca != cb {
        return Err(mismatch("concat_rows", a, b));
    }
    let mut data = Vec::with_capacity((ra + rb) * ca);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ra + rb, ca], data)
}

pub fn softmax(x: &Tensor, p: Precision) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("softmax")?;
    Tensor::new(x.shape().to_vec(), kernels::softmax(x.data(), rows, cols)).map(|t| t.rounded(p))
}

pub fn log_softmax(x: &Tensor, p: Precision) -> Result<Tensor> {
    let (rows, cols) = x.expect_matrix("log_softmax")?;
    Tensor::new(
        x.shape().to_vec(),
        kernels::log_softmax(x.data(), rows, cols),
    )
    .map(|t| t.rounded(p))
}

pub struct AttentionOut {
    pub out: Tensor,
    pub probs: Vec<f64>,
    pub shape: AttnShape,
}

/// Causal multi-head attention of `q` (absolute positions `offset..offset+n`)
/// over keys/values covering positions `0..offset+n`.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    offset: usize,
    p: Precision,
) -> Result<AttentionOut> {
    let (nq, d) = q.expect_matrix("attention")?;
    let (nk, dk) = k.expect_matrix("attention")?;
    if dk != d || k.shape() != v.shape() {
        return Err(mismatch("attention", q, k));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!(
            "attention: {heads} heads do not divide width {d}"
        )));
    }
    if nk != offset + nq {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: vec![offset, nq],
            rhs: k.shape().to_vec(),
        });
    }
    let shape = AttnShape {
        queries: nq,
        keys: nk,
        dim: d,
        heads,
        offset,
    };
    let (out, probs) = kernels::attention(q.data(), k.data(), v.data(), shape);
    Ok(AttentionOut {
        out: Tensor::new(vec![nq, d], out)?.rounded(p),
        probs,
        shape,
    })
}
