//! Wall-clock scaling study: the scan-based fusion trunk against a quadratic
//! single-head self-attention baseline and a fixed-query cross-attention
//! baseline, across increasing sequence lengths.
//!
//! Every timed run executes single-threaded, forward-only, with autodiff
//! disabled. Absolute milliseconds are hardware-specific; the report's
//! deliverables are the per-method log-log slopes and the time ratios.

use mmsurv_core::fusion::{FusionConfig, FusionTrunk};
use mmsurv_core::init::randn;
use mmsurv_core::tensor::{Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("resource limit: {msg}; cap the sequence length for this method")]
    Resource { msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

// ── attention baselines ────────────────────────────────────────────────

/// Projection weights for the attention baselines.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl AttentionParams {
    pub fn init(dim: usize, rng: &mut impl rand::Rng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            wq: randn(rng, dim, dim, std),
            wk: randn(rng, dim, dim, std),
            wv: randn(rng, dim, dim, std),
        }
    }

    pub fn param_bytes(&self) -> usize {
        (self.wq.numel() + self.wk.numel() + self.wv.numel()) * 4
    }
}

fn checked_buffer(len: usize, what: &str) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| BenchError::Resource {
        msg: format!("cannot allocate {len} f64 for {what}"),
    })?;
    v.resize(len, 0.0);
    Ok(v)
}

/// Single-head scaled dot-product self-attention over the full sequence,
/// O(L^2 D) time. Scores are streamed one query row at a time with
/// max-subtracted softmax, so memory stays O(L D) and the softmax is exact.
pub fn attention_self_baseline(params: &AttentionParams, f: &Tensor) -> Result<Tensor> {
    let q = mmsurv_core::tensor::matmul(f, &params.wq)?;
    let k = mmsurv_core::tensor::matmul(f, &params.wk)?;
    let v = mmsurv_core::tensor::matmul(f, &params.wv)?;
    attend(&q, &k, &v)
}

/// Cross-attention of a fixed query set over L tokens, O(Q L D) time.
pub fn attention_co_baseline(
    params: &AttentionParams,
    queries: &Tensor,
    keys_values: &Tensor,
) -> Result<Tensor> {
    let q = mmsurv_core::tensor::matmul(queries, &params.wq)?;
    let k = mmsurv_core::tensor::matmul(keys_values, &params.wk)?;
    let v = mmsurv_core::tensor::matmul(keys_values, &params.wv)?;
    attend(&q, &k, &v)
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (rows, d) = q.shape();
    let l = k.rows();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = checked_buffer(rows * d, "attention output")?;
    let mut scores = checked_buffer(l, "attention score row")?;
    for i in 0..rows {
        let qi = q.row(i);
        let mut max_score = f64::NEG_INFINITY;
        for (j, slot) in scores.iter_mut().enumerate() {
            let kj = k.row(j);
            let mut dot = 0.0;
            for (a, b) in qi.iter().zip(kj) {
                dot += a * b;
            }
            let s = dot * scale;
            *slot = s;
            if s > max_score {
                max_score = s;
            }
        }
        let mut denom = 0.0;
        for slot in scores.iter_mut() {
            *slot = (*slot - max_score).exp();
            denom += *slot;
        }
        let orow = &mut out[i * d..(i + 1) * d];
        for (j, &w) in scores.iter().enumerate() {
            let weight = w / denom;
            for (o, &vv) in orow.iter_mut().zip(v.row(j)) {
                *o += weight * vv;
            }
        }
    }
    Ok(Tensor::new(rows, d, out)?)
}

// ── harness ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Strictly increasing sequence lengths.
    pub lengths: Vec<usize>,
    /// Embedding width shared by all methods.
    pub embed_dim: usize,
    /// Number of fixed queries for the cross-attention baseline.
    pub co_queries: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Skip the quadratic baseline beyond this length (resource gate).
    pub max_quadratic_len: Option<usize>,
    /// Local-interaction blocks in the fusion trunk.
    pub n_liam: usize,
    /// Global blocks in the fusion trunk.
    pub n_giem: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1_000, 5_000, 10_000, 20_000, 50_000],
            embed_dim: 512,
            co_queries: 50,
            repetitions: 5,
            warmup: 2,
            seed: 99,
            max_quadratic_len: None,
            n_liam: 2,
            n_giem: 1,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        let increasing = self.lengths.windows(2).all(|w| w[0] < w[1]);
        if self.lengths.is_empty() || !increasing {
            return Err(BenchError::Resource {
                msg: "lengths must be nonempty and strictly increasing".into(),
            });
        }
        if self.repetitions < 3 {
            return Err(BenchError::Resource {
                msg: "need at least 3 repetitions".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FusionTrunk,
    SelfAttention,
    CoAttention,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FusionTrunk => "fusion_trunk",
            Method::SelfAttention => "self_attention",
            Method::CoAttention => "co_attention",
        }
    }

    pub const ALL: [Method; 3] = [Method::FusionTrunk, Method::SelfAttention, Method::CoAttention];
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: Method,
    pub len: usize,
    pub median_ms: f64,
    pub p25_ms: f64,
    pub p75_ms: f64,
    pub param_bytes: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// (method, fitted log-log slope of median time vs length)
    pub slopes: Vec<(Method, f64)>,
    /// Points skipped with the resource message that caused it.
    pub skipped: Vec<(Method, usize, String)>,
    pub timer_tick_ns: f64,
}

impl BenchReport {
    pub fn median_ms(&self, method: Method, len: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.len == len)
            .map(|r| r.median_ms)
    }

    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| *m == method).map(|&(_, s)| s)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "method,L,median_ms,p25_ms,p75_ms,param_bytes")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                r.method.name(),
                r.len,
                r.median_ms,
                r.p25_ms,
                r.p75_ms,
                r.param_bytes
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str("method          L        median_ms    p25_ms       p75_ms\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<15} {:<8} {:<12.3} {:<12.3} {:<12.3}{}\n",
                r.method.name(),
                r.len,
                r.median_ms,
                r.p25_ms,
                r.p75_ms,
                r.warning.as_deref().map(|w| format!("  ! {w}")).unwrap_or_default()
            ));
        }
        s.push('\n');
        for (m, slope) in &self.slopes {
            s.push_str(&format!("{:<15} log-log slope {slope:.2}\n", m.name()));
        }
        for (m, l, msg) in &self.skipped {
            s.push_str(&format!("skipped {} at L={l}: {msg}\n", m.name()));
        }
        s
    }
}

fn timer_tick_ns() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        let d = (b - a).as_nanos() as f64;
        if d > 0.0 && d < best {
            best = d;
        }
    }
    best
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Runs every registered method over the length grid, timing single-threaded
/// forward passes. Resource failures skip the point and the harness moves on.
pub fn run_scaling(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let trunk = FusionTrunk::init(
        FusionConfig {
            d_model: d,
            n_liam: cfg.n_liam,
            n_giem: cfg.n_giem,
            ..FusionConfig::default()
        },
        &mut rng,
    );
    let attn = AttentionParams::init(d, &mut rng);
    let queries = randn(&mut rng, cfg.co_queries, d, 1.0);
    let trunk_bytes = trunk_param_bytes(&trunk);
    let attn_bytes = attn.param_bytes();

    let tick = timer_tick_ns();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &len in &cfg.lengths {
        let f_h = randn(&mut rng, len, d, 1.0);
        let f_p = randn(&mut rng, len, d, 1.0);
        for method in Method::ALL {
            if method == Method::SelfAttention {
                if let Some(cap) = cfg.max_quadratic_len {
                    if len > cap {
                        skipped.push((
                            method,
                            len,
                            format!("length {len} above quadratic cap {cap}"),
                        ));
                        continue;
                    }
                }
            }
            let run = || -> Result<()> {
                match method {
                    Method::FusionTrunk => {
                        std::hint::black_box(trunk.forward(&f_h, &f_p)?);
                    }
                    Method::SelfAttention => {
                        std::hint::black_box(attention_self_baseline(&attn, &f_h)?);
                    }
                    Method::CoAttention => {
                        std::hint::black_box(attention_co_baseline(&attn, &queries, &f_h)?);
                    }
                }
                Ok(())
            };
            let mut times = Vec::with_capacity(cfg.repetitions);
            let mut failed = None;
            for i in 0..cfg.warmup + cfg.repetitions {
                let start = Instant::now();
                if let Err(e) = run() {
                    failed = Some(e.to_string());
                    break;
                }
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                if i >= cfg.warmup {
                    times.push(elapsed);
                }
            }
            if let Some(msg) = failed {
                skipped.push((method, len, msg));
                continue;
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = quantile(&times, 0.5);
            let warning = (median * 1e6 < 10.0 * tick).then(|| {
                format!("median {median:.6} ms below 10 timer ticks ({tick:.0} ns)")
            });
            rows.push(BenchRow {
                method,
                len,
                median_ms: median,
                p25_ms: quantile(&times, 0.25),
                p75_ms: quantile(&times, 0.75),
                param_bytes: match method {
                    Method::FusionTrunk => trunk_bytes,
                    _ => attn_bytes,
                },
                warning,
            });
        }
    }

    let mut slopes = Vec::new();
    for method in Method::ALL {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == method && r.median_ms > 0.0)
            .map(|r| ((r.len as f64).ln(), r.median_ms.ln()))
            .collect();
        if pts.len() >= 2 {
            slopes.push((method, fit_slope(&pts)));
        }
    }
    Ok(BenchReport {
        rows,
        slopes,
        skipped,
        timer_tick_ns: tick,
    })
}

/// Serialized byte count of the trunk blocks alone (projections and head are
/// counted separately by the model).
pub fn trunk_param_bytes(trunk: &FusionTrunk) -> usize {
    let mut named = Vec::new();
    trunk.visit("trunk", &mut named);
    named.iter().map(|(_, t)| t.numel() * 4).sum()
}
