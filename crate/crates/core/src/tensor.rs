//! Dense row-major 2-D tensors and the pointwise/matrix kernels used across
//! the crate. Every higher-level block (state-space scans, fusion, the
//! survival head) is built from these primitives, and the autodiff tape
//! reuses the same forward kernels so tracked and untracked evaluation
//! cannot drift apart.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("non-finite value produced by {op} at position {position}")]
    NonFinite { op: &'static str, position: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major matrix of f64. Row count `rows`, column count `cols`.
/// Scalars are represented as 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(TensorError::Domain {
                op: "new",
                msg: format!(
                    "shape {}x{} needs {} values, got {}",
                    rows,
                    cols,
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::Domain {
                    op: "from_rows",
                    msg: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

// ── activation scalars ─────────────────────────────────────────────────

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

// ── elementwise and matrix kernels ─────────────────────────────────────

/// a @ b for a: MxK, b: KxP.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(TensorError::DimensionMismatch {
            op: "matmul",
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        });
    }
    let (m, k, p) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[kk * p..(kk + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        rows: m,
        cols: p,
        data: out,
    })
}

pub fn transpose(a: &Tensor) -> Tensor {
    let mut out = vec![0.0; a.numel()];
    for r in 0..a.rows {
        for c in 0..a.cols {
            out[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    Tensor {
        rows: a.cols,
        cols: a.rows,
        data: out,
    }
}

/// Binary elementwise op. Shapes must match exactly, or one side may be a
/// 1x1 scalar that broadcasts over the other.
fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            rows: a.rows,
            cols: a.cols,
            data,
        })
    } else if b.is_scalar() {
        let s = b.data[0];
        Ok(a.map(|x| f(x, s)))
    } else if a.is_scalar() {
        let s = a.data[0];
        Ok(b.map(|y| f(s, y)))
    } else {
        Err(TensorError::DimensionMismatch {
            op,
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        })
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, "add", |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, "mul", |x, y| x * y)
}

/// m: NxD plus a 1xD row vector added to every row.
pub fn add_row_broadcast(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if v.rows != 1 || v.cols != m.cols {
        return Err(TensorError::DimensionMismatch {
            op: "add_row_broadcast",
            lhs: vec![m.rows, m.cols],
            rhs: vec![v.rows, v.cols],
        });
    }
    let mut out = m.clone();
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.data[r * m.cols + c] += v.data[c];
        }
    }
    Ok(out)
}

pub fn scalar_mul(a: &Tensor, s: f64) -> Tensor {
    a.map(|x| x * s)
}

pub fn scalar_add(a: &Tensor, s: f64) -> Tensor {
    a.map(|x| x + s)
}

pub fn neg(a: &Tensor) -> Tensor {
    a.map(|x| -x)
}

pub fn silu(a: &Tensor) -> Tensor {
    a.map(silu_scalar)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub fn softplus(a: &Tensor) -> Tensor {
    a.map(softplus_scalar)
}

pub fn exp(a: &Tensor) -> Tensor {
    a.map(f64::exp)
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    if let Some(pos) = a.data.iter().position(|&x| x <= 0.0) {
        return Err(TensorError::Domain {
            op: "log",
            msg: format!("non-positive value {} at flat index {}", a.data[pos], pos),
        });
    }
    Ok(a.map(f64::ln))
}

pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    a.map(|x| x.clamp(lo, hi))
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

/// Per-row layer normalization with affine parameters, x: NxD,
/// gamma/beta: 1xD. Variance uses the biased (1/D) estimator.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols;
    if gamma.numel() != d || beta.numel() != d {
        return Err(TensorError::DimensionMismatch {
            op: "layer_norm",
            lhs: vec![x.rows, x.cols],
            rhs: vec![gamma.numel(), beta.numel()],
        });
    }
    if d == 0 || eps <= 0.0 {
        return Err(TensorError::Domain {
            op: "layer_norm",
            msg: "requires D >= 1 and eps > 0".into(),
        });
    }
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        for c in 0..d {
            out[r * d + c] = (row[c] - mean) * inv_std * gamma.data[c] + beta.data[c];
        }
    }
    Ok(Tensor {
        rows: x.rows,
        cols: x.cols,
        data: out,
    })
}

/// Depthwise causal 1-D convolution. x: LxD (time along rows), kernel: WxD.
/// Position t sees inputs t-W+1..=t with zero left padding, so the output is
/// strictly causal.
pub fn causal_conv1d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if kernel.cols != x.cols {
        return Err(TensorError::DimensionMismatch {
            op: "causal_conv1d",
            lhs: vec![x.rows, x.cols],
            rhs: vec![kernel.rows, kernel.cols],
        });
    }
    if kernel.rows == 0 {
        return Err(TensorError::Domain {
            op: "causal_conv1d",
            msg: "kernel width must be >= 1".into(),
        });
    }
    let (l, d, w) = (x.rows, x.cols, kernel.rows);
    let mut out = vec![0.0; l * d];
    for t in 0..l {
        for c in 0..d {
            let mut acc = 0.0;
            // kernel row w-1 aligns with the current position t
            for kw in 0..w {
                let src = t as isize - (w - 1 - kw) as isize;
                if src >= 0 {
                    acc += kernel.data[kw * d + c] * x.data[src as usize * d + c];
                }
            }
            out[t * d + c] = acc;
        }
    }
    Ok(Tensor {
        rows: l,
        cols: d,
        data: out,
    })
}

/// Per-channel max over the sequence axis; returns the pooled 1xD row and
/// the argmax row index per channel (ties go to the first occurrence).
pub fn max_pool_seq(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.rows == 0 {
        return Err(TensorError::Domain {
            op: "max_pool_seq",
            msg: "empty sequence".into(),
        });
    }
    let d = x.cols;
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for r in 1..x.rows {
        let row = x.row(r);
        for c in 0..d {
            if row[c] > best[c] {
                best[c] = row[c];
                arg[c] = r;
            }
        }
    }
    Ok((
        Tensor {
            rows: 1,
            cols: d,
            data: best,
        },
        arg,
    ))
}

pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(TensorError::DimensionMismatch {
            op: "concat_rows",
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        });
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor {
        rows: a.rows + b.rows,
        cols: a.cols,
        data,
    })
}

pub fn slice_cols(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if start + len > x.cols {
        return Err(TensorError::Domain {
            op: "slice_cols",
            msg: format!("range {}..{} exceeds width {}", start, start + len, x.cols),
        });
    }
    let mut data = Vec::with_capacity(x.rows * len);
    for r in 0..x.rows {
        data.extend_from_slice(&x.data[r * x.cols + start..r * x.cols + start + len]);
    }
    Ok(Tensor {
        rows: x.rows,
        cols: len,
        data,
    })
}

pub fn slice_rows(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if start + len > x.rows {
        return Err(TensorError::Domain {
            op: "slice_rows",
            msg: format!("range {}..{} exceeds length {}", start, start + len, x.rows),
        });
    }
    Ok(Tensor {
        rows: len,
        cols: x.cols,
        data: x.data[start * x.cols..(start + len) * x.cols].to_vec(),
    })
}

pub fn reverse_rows(x: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(x.numel());
    for r in (0..x.rows).rev() {
        data.extend_from_slice(x.row(r));
    }
    Tensor {
        rows: x.rows,
        cols: x.cols,
        data,
    }
}
