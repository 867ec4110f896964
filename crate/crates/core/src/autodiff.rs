//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns every intermediate value of one forward evaluation as an
//! append-only list, so parent indices are always topologically ordered and
//! the backward pass is a single reverse sweep. Forward values are computed
//! by the same kernels in [`crate::tensor`] and [`crate::scan_kernel`] that
//! the untracked evaluation path uses.

use crate::scan_kernel::{scan_backward, scan_forward, ScanInputs};
use crate::tensor::{self, Tensor, TensorError};

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        tracked: bool,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRowBroadcast {
        m: Var,
        v: Var,
    },
    ScalarMul {
        a: Var,
        s: f64,
    },
    ScalarAdd {
        a: Var,
    },
    Silu {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Softplus {
        a: Var,
    },
    Exp {
        a: Var,
    },
    Log {
        a: Var,
    },
    Clamp {
        a: Var,
        lo: f64,
        hi: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    CausalConv1d {
        x: Var,
        kernel: Var,
    },
    MaxPoolSeq {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatRows {
        a: Var,
        b: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ReverseRows {
        x: Var,
    },
    Sum {
        x: Var,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        b_seq: Var,
        c_seq: Var,
        a: Var,
        d_skip: Option<Var>,
        history: Vec<f64>,
    },
}

/// Recorded forward computation plus per-node gradient accumulators.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` target w.r.t. this node, if backward
    /// has run and the node participated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.push(value, Op::Leaf { tracked })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let out = tensor::add_row_broadcast(self.value(m), self.value(v))?;
        Ok(self.push(out, Op::AddRowBroadcast { m, v }))
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let v = tensor::scalar_mul(self.value(a), s);
        self.push(v, Op::ScalarMul { a, s })
    }

    pub fn scalar_add(&mut self, a: Var, s: f64) -> Var {
        let v = tensor::scalar_add(self.value(a), s);
        self.push(v, Op::ScalarAdd { a })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scalar_mul(a, -1.0)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = tensor::silu(self.value(a));
        self.push(v, Op::Silu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = tensor::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid { a })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = tensor::softplus(self.value(a));
        self.push(v, Op::Softplus { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = tensor::exp(self.value(a));
        self.push(v, Op::Exp { a })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = tensor::log(self.value(a))?;
        Ok(self.push(v, Op::Log { a }))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = tensor::clamp(self.value(a), lo, hi);
        self.push(v, Op::Clamp { a, lo, hi })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
        ))
    }

    pub fn causal_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let v = tensor::causal_conv1d(self.value(x), self.value(kernel))?;
        Ok(self.push(v, Op::CausalConv1d { x, kernel }))
    }

    pub fn max_pool_seq(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = tensor::max_pool_seq(self.value(x))?;
        Ok(self.push(v, Op::MaxPoolSeq { x, argmax }))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::concat_rows(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::ConcatRows { a, b }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = tensor::slice_cols(self.value(x), start, len)?;
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = tensor::slice_rows(self.value(x), start, len)?;
        Ok(self.push(v, Op::SliceRows { x, start }))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let v = tensor::reverse_rows(self.value(x));
        self.push(v, Op::ReverseRows { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = tensor::sum(self.value(x));
        self.push(v, Op::Sum { x })
    }

    /// Time-varying diagonal scan as a single fused node: `u`/`delta` are
    /// L x d, `b_seq`/`c_seq` are L x s, `a` is d x s, optional skip is 1 x d.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        b_seq: Var,
        c_seq: Var,
        a: Var,
        d_skip: Option<Var>,
    ) -> Result<Var> {
        let (l, d) = self.value(u).shape();
        let s = self.value(b_seq).cols();
        self.check_scan_shapes(u, delta, b_seq, c_seq, a, d_skip)?;
        let skip_vec = d_skip.map(|v| self.value(v).data().to_vec());
        let inputs = ScanInputs {
            seq_len: l,
            channels: d,
            state: s,
            u: self.value(u).data(),
            delta: self.value(delta).data(),
            b_seq: self.value(b_seq).data(),
            c_seq: self.value(c_seq).data(),
            a: self.value(a).data(),
            d_skip: skip_vec.as_deref(),
        };
        let (y, hist) = scan_forward(&inputs, true)?;
        let value = Tensor::new(l, d, y)?;
        Ok(self.push(
            value,
            Op::SelectiveScan {
                u,
                delta,
                b_seq,
                c_seq,
                a,
                d_skip,
                history: hist.expect("history requested"),
            },
        ))
    }

    fn check_scan_shapes(
        &self,
        u: Var,
        delta: Var,
        b_seq: Var,
        c_seq: Var,
        a: Var,
        d_skip: Option<Var>,
    ) -> Result<()> {
        let (l, d) = self.value(u).shape();
        let s = self.value(b_seq).cols();
        let ok = self.value(delta).shape() == (l, d)
            && self.value(b_seq).rows() == l
            && self.value(c_seq).shape() == (l, s)
            && self.value(a).shape() == (d, s)
            && d_skip.map_or(true, |v| self.value(v).shape() == (1, d));
        if !ok {
            return Err(TensorError::DimensionMismatch {
                op: "selective_scan",
                lhs: vec![l, d],
                rhs: vec![s],
            });
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: &[f64]) {
        let numel = self.values[v.0].numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; numel]);
        for (g, c) in slot.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn grad_of(&mut self, v: Var) -> Vec<f64> {
        let numel = self.values[v.0].numel();
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; numel])
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate across
    /// repeated uses of a node; calling `backward` twice accumulates again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.is_empty() {
            return Err(TensorError::Domain {
                op: "backward",
                msg: "empty tape".into(),
            });
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Domain {
                op: "backward",
                msg: format!(
                    "loss must be scalar, got {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        self.accumulate(loss, &[1.0]);

        for i in (0..=loss.0).rev() {
            let grad = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.ops[i] {
                Op::Leaf { .. } => {}
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let g = Tensor::new(
                        self.values[i].rows(),
                        self.values[i].cols(),
                        grad,
                    )?;
                    let bt = tensor::transpose(self.value(b));
                    let da = tensor::matmul(&g, &bt)?;
                    let at = tensor::transpose(self.value(a));
                    let db = tensor::matmul(&at, &g)?;
                    self.accumulate(a, da.data());
                    self.accumulate(b, db.data());
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate_broadcast(a, &grad);
                    self.accumulate_broadcast(b, &grad);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.value(a).clone();
                    let bv = self.value(b).clone();
                    let da = mul_grad_for(&av, &bv, &grad);
                    let db = mul_grad_for(&bv, &av, &grad);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddRowBroadcast { m, v } => {
                    let (m, v) = (*m, *v);
                    let cols = self.value(v).cols();
                    let mut dv = vec![0.0; cols];
                    for (idx, g) in grad.iter().enumerate() {
                        dv[idx % cols] += g;
                    }
                    self.accumulate(m, &grad);
                    self.accumulate(v, &dv);
                }
                Op::ScalarMul { a, s } => {
                    let (a, s) = (*a, *s);
                    let dg: Vec<f64> = grad.iter().map(|g| g * s).collect();
                    self.accumulate(a, &dg);
                }
                Op::ScalarAdd { a } => {
                    let a = *a;
                    self.accumulate(a, &grad);
                }
                Op::Silu { a } => {
                    let a = *a;
                    let dg: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&x, g)| {
                            let s = tensor::sigmoid_scalar(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let dg: Vec<f64> = self.values[i]
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&y, g)| g * y * (1.0 - y))
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::Softplus { a } => {
                    let a = *a;
                    let dg: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&x, g)| g * tensor::sigmoid_scalar(x))
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::Exp { a } => {
                    let a = *a;
                    let dg: Vec<f64> = self.values[i]
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&y, g)| g * y)
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::Log { a } => {
                    let a = *a;
                    let dg: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&x, g)| g / x)
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::Clamp { a, lo, hi } => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let dg: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(&x, g)| if x >= lo && x <= hi { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &dg);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    eps,
                } => {
                    let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                    let (dx, dgamma, dbeta) =
                        layer_norm_backward(self.value(x), self.value(gamma), eps, &grad);
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::CausalConv1d { x, kernel } => {
                    let (x, kernel) = (*x, *kernel);
                    let (dx, dk) = conv_backward(self.value(x), self.value(kernel), &grad);
                    self.accumulate(x, &dx);
                    self.accumulate(kernel, &dk);
                }
                Op::MaxPoolSeq { x, argmax } => {
                    let x = *x;
                    let argmax = argmax.clone();
                    let (rows, cols) = self.value(x).shape();
                    let mut dx = vec![0.0; rows * cols];
                    for (c, &r) in argmax.iter().enumerate() {
                        dx[r * cols + c] = grad[c];
                    }
                    self.accumulate(x, &dx);
                }
                Op::ConcatRows { a, b } => {
                    let (a, b) = (*a, *b);
                    let split = self.value(a).numel();
                    let (ga, gb) = grad.split_at(split);
                    let (ga, gb) = (ga.to_vec(), gb.to_vec());
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let (rows, cols) = self.value(x).shape();
                    let len = self.values[i].cols();
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..len {
                            dx[r * cols + start + c] = grad[r * len + c];
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::SliceRows { x, start } => {
                    let (x, start) = (*x, *start);
                    let (rows, cols) = self.value(x).shape();
                    let mut dx = vec![0.0; rows * cols];
                    dx[start * cols..start * cols + grad.len()].copy_from_slice(&grad);
                    self.accumulate(x, &dx);
                }
                Op::ReverseRows { x } => {
                    let x = *x;
                    let (rows, cols) = self.value(x).shape();
                    let mut dx = Vec::with_capacity(rows * cols);
                    for r in (0..rows).rev() {
                        dx.extend_from_slice(&grad[r * cols..(r + 1) * cols]);
                    }
                    self.accumulate(x, &dx);
                }
                Op::Sum { x } => {
                    let x = *x;
                    let dx = vec![grad[0]; self.value(x).numel()];
                    self.accumulate(x, &dx);
                }
                Op::SelectiveScan {
                    u,
                    delta,
                    b_seq,
                    c_seq,
                    a,
                    d_skip,
                    history: _,
                } => {
                    let (u, delta, b_seq, c_seq, a, d_skip) =
                        (*u, *delta, *b_seq, *c_seq, *a, *d_skip);
                    let hist = std::mem::take(
                        match &mut self.ops[i] {
                            Op::SelectiveScan { history, .. } => history,
                            _ => unreachable!(),
                        },
                    );
                    let skip_vec = d_skip.map(|v| self.value(v).data().to_vec());
                    let inputs = ScanInputs {
                        seq_len: self.value(u).rows(),
                        channels: self.value(u).cols(),
                        state: self.value(b_seq).cols(),
                        u: self.value(u).data(),
                        delta: self.value(delta).data(),
                        b_seq: self.value(b_seq).data(),
                        c_seq: self.value(c_seq).data(),
                        a: self.value(a).data(),
                        d_skip: skip_vec.as_deref(),
                    };
                    let grads = scan_backward(&inputs, &hist, &grad);
                    // restore history so repeated backward calls stay valid
                    if let Op::SelectiveScan { history, .. } = &mut self.ops[i] {
                        *history = hist;
                    }
                    self.accumulate(u, &grads.du);
                    self.accumulate(delta, &grads.ddelta);
                    self.accumulate(b_seq, &grads.db_seq);
                    self.accumulate(c_seq, &grads.dc_seq);
                    self.accumulate(a, &grads.da);
                    if let (Some(v), Some(dd)) = (d_skip, grads.dd_skip) {
                        self.accumulate(v, &dd);
                    }
                }
            }
        }

        // tracked leaves always end up with a gradient buffer
        for i in 0..self.ops.len() {
            if let Op::Leaf { tracked: true } = self.ops[i] {
                let numel = self.values[i].numel();
                self.grads[i].get_or_insert_with(|| vec![0.0; numel]);
            }
        }
        let _ = self.grad_of(loss);
        Ok(())
    }

    /// Accumulate `grad` into `target`, summing it down to a scalar when the
    /// target was a broadcast 1x1 operand.
    fn accumulate_broadcast(&mut self, target: Var, grad: &[f64]) {
        if self.value(target).numel() == grad.len() {
            self.accumulate(target, grad);
        } else {
            debug_assert!(self.value(target).is_scalar());
            let s: f64 = grad.iter().sum();
            self.accumulate(target, &[s]);
        }
    }
}

/// d(a*b)/da contribution: grad * b, handling the scalar-broadcast cases.
fn mul_grad_for(a: &Tensor, b: &Tensor, grad: &[f64]) -> Vec<f64> {
    if a.shape() == b.shape() {
        grad.iter().zip(b.data()).map(|(g, &y)| g * y).collect()
    } else if b.is_scalar() {
        // out has a's shape
        let s = b.data()[0];
        grad.iter().map(|g| g * s).collect()
    } else {
        // a is scalar: out has b's shape, reduce to 1 element
        debug_assert!(a.is_scalar());
        vec![grad.iter().zip(b.data()).map(|(g, &y)| g * y).sum()]
    }
}

fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (rows, d) = x.shape();
    let mut dx = vec![0.0; rows * d];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let df = d as f64;
    for r in 0..rows {
        let row = x.row(r);
        let g = &grad[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / df;
        let inv_std = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
        let dxhat: Vec<f64> = g
            .iter()
            .zip(gamma.data())
            .map(|(gv, &gm)| gv * gm)
            .collect();
        let sum_dxhat: f64 = dxhat.iter().sum();
        let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        for c in 0..d {
            dgamma[c] += g[c] * xhat[c];
            dbeta[c] += g[c];
            dx[r * d + c] =
                inv_std / df * (df * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

fn conv_backward(x: &Tensor, kernel: &Tensor, grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (l, d) = x.shape();
    let w = kernel.rows();
    let mut dx = vec![0.0; l * d];
    let mut dk = vec![0.0; w * d];
    for t in 0..l {
        for c in 0..d {
            let g = grad[t * d + c];
            if g == 0.0 {
                continue;
            }
            for kw in 0..w {
                let src = t as isize - (w - 1 - kw) as isize;
                if src >= 0 {
                    let src = src as usize;
                    dx[src * d + c] += kernel.data()[kw * d + c] * g;
                    dk[kw * d + c] += x.data()[src * d + c] * g;
                }
            }
        }
    }
    (dx, dk)
}
