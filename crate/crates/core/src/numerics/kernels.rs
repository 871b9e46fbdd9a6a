//! Slice-level kernels shared by the eager and the recording backends.
//!
//! Every reduction runs sequentially in ascending index order, and every
//! output row depends only on its own input row, so a row computed as part of
//! a long sequence is bitwise identical to the same row computed alone.

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `a[m,k] @ b[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    out
}

/// Gradient of `a @ b` with respect to `a`: `dc @ b^T`.
pub fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = dot(drow, brow);
        }
    }
    da
}

/// Gradient of `a @ b` with respect to `b`: `a^T @ dc`.
pub fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let drow = &dc[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (o, &d) in dbrow.iter_mut().zip(drow) {
                *o += aip * d;
            }
        }
    }
    db
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Row-wise layer normalisation. Returns the output together with per-row
/// mean and reciprocal standard deviation.
pub fn layer_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rows: usize,
    cols: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * cols];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let orow = &mut out[r * cols..(r + 1) * cols];
        for c in 0..cols {
            orow[c] = (row[c] - mean) * rstd * gamma[c] + beta[c];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Backward of [`layer_norm`]: returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    means: &[f64],
    rstds: &[f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * cols];
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    let mut xhat = vec![0.0; cols];
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let drow = &dy[r * cols..(r + 1) * cols];
        let (mean, rstd) = (means[r], rstds[r]);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..cols {
            xhat[c] = (row[c] - mean) * rstd;
            dxhat[c] = drow[c] * gamma[c];
            dgamma[c] += drow[c] * xhat[c];
            dbeta[c] += drow[c];
            sum_dxhat += dxhat[c];
            sum_dxhat_xhat += dxhat[c] * xhat[c];
        }
        let n = cols as f64;
        let dxrow = &mut dx[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dxrow[c] = rstd * (dxhat[c] - sum_dxhat / n - xhat[c] * sum_dxhat_xhat / n);
        }
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-softmax over one row.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        log_softmax_row(
            &x[r * cols..(r + 1) * cols],
            &mut out[r * cols..(r + 1) * cols],
        );
    }
    out
}

pub fn softmax(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        softmax_row(
            &x[r * cols..(r + 1) * cols],
            &mut out[r * cols..(r + 1) * cols],
        );
    }
    out
}

/// Geometry of a causal multi-head attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub queries: usize,
    pub keys: usize,
    pub dim: usize,
    pub heads: usize,
    /// Absolute position of the first query; query `i` sees keys `0..=offset + i`.
    pub offset: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn visible(&self, i: usize) -> usize {
        self.offset + i + 1
    }
}

/// Causal scaled dot-product attention. Returns the output `[queries, dim]`
/// and the attention probabilities laid out `[heads, queries, keys]` (masked
/// entries are zero).
pub fn attention(q: &[f64], k: &[f64], v: &[f64], s: AttnShape) -> (Vec<f64>, Vec<f64>) {
    let dh = s.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; s.queries * s.dim];
    let mut probs = vec![0.0; s.heads * s.queries * s.keys];
    let mut scores = vec![0.0; s.keys];
    for h in 0..s.heads {
        let c0 = h * dh;
        for i in 0..s.queries {
            let qi = &q[i * s.dim + c0..i * s.dim + c0 + dh];
            let vis = s.visible(i);
            for j in 0..vis {
                let kj = &k[j * s.dim + c0..j * s.dim + c0 + dh];
                scores[j] = dot(qi, kj) * scale;
            }
            let p = &mut probs[(h * s.queries + i) * s.keys..(h * s.queries + i) * s.keys + vis];
            softmax_row(&scores[..vis], p);
            let orow = &mut out[i * s.dim + c0..i * s.dim + c0 + dh];
            for (j, &pij) in p.iter().enumerate() {
                let vj = &v[j * s.dim + c0..j * s.dim + c0 + dh];
                for (o, &x) in orow.iter_mut().zip(vj) {
                    *o += pij * x;
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`attention`]: returns `(dq, dk, dv)`.
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    s: AttnShape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = s.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; s.queries * s.dim];
    let mut dk = vec![0.0; s.keys * s.dim];
    let mut dv = vec![0.0; s.keys * s.dim];
    let mut dp = vec![0.0; s.keys];
    for h in 0..s.heads {
        let c0 = h * dh;
        for i in 0..s.queries {
            let vis = s.visible(i);
            let p = &probs[(h * s.queries + i) * s.keys..(h * s.queries + i) * s.keys + vis];
            let doi = &dout[i * s.dim + c0..i * s.dim + c0 + dh];
            let mut weighted = 0.0;
            for j in 0..vis {
                let vj = &v[j * s.dim + c0..j * s.dim + c0 + dh];
                dp[j] = dot(doi, vj);
                weighted += p[j] * dp[j];
                let dvj = &mut dv[j * s.dim + c0..j * s.dim + c0 + dh];
                for (o, &g) in dvj.iter_mut().zip(doi) {
                    *o += p[j] * g;
                }
            }
            let qi_start = i * s.dim + c0;
            for j in 0..vis {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj_start = j * s.dim + c0;
                for c in 0..dh {
                    dq[qi_start + c] += ds * k[kj_start + c];
                    dk[kj_start + c] += ds * q[qi_start + c];
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        assert_eq!(softmax(&[0.0, 0.0], 1, 2), vec![0.5, 0.5]);
    }

    #[test]
    fn log_softmax_survives_huge_logits() {
        let out = log_softmax(&[1000.0, 1000.0], 1, 2);
        let ln2 = std::f64::consts::LN_2;
        assert!(out.iter().all(|v| (v + ln2).abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn sigmoid_midpoint_and_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite());
    }

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] @ [5; 6] = [17; 39]
        assert_eq!(
            matmul(&[1., 2., 3., 4.], &[5., 6.], 2, 2, 1),
            vec![17., 39.]
        );
    }

    #[test]
    fn attention_single_key_copies_value() {
        let s = AttnShape {
            queries: 1,
            keys: 1,
            dim: 2,
            heads: 1,
            offset: 0,
        };
        let (out, probs) = attention(&[1.0, 0.0], &[3.0, 1.0], &[7.0, -2.0], s);
        assert_eq!(out, vec![7.0, -2.0]);
        assert_eq!(probs, vec![1.0]);
    }
}
