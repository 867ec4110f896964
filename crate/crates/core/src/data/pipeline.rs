//! Feature preprocessing and training-time plumbing: grid-to-patch protein
//! aggregation, the modality projection MLP, interval binning, and the
//! inverse-frequency weighted sampler.

use super::{DataError, Result};
use crate::autodiff::{Tape, Var};
use crate::init::linear_init;
use crate::tensor::{self, Tensor, TensorError};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;

/// Mean predicted intensity per marker over the G grids of one patch,
/// min-max normalized across the M markers into [0,1]. A degenerate range
/// (all markers equal) maps to all zeros.
pub fn pfe_aggregate(grid_preds: &Tensor) -> tensor::Result<Tensor> {
    let (g, m) = grid_preds.shape();
    if g == 0 || m == 0 {
        return Err(TensorError::Domain {
            op: "pfe_aggregate",
            msg: "requires at least one grid and one marker".into(),
        });
    }
    let mut means = vec![0.0; m];
    for r in 0..g {
        for c in 0..m {
            means[c] += grid_preds.get(r, c);
        }
    }
    for v in means.iter_mut() {
        *v /= g as f64;
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let out = if range > 0.0 {
        means.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; m]
    };
    Ok(Tensor::new(1, m, out)?)
}

/// One-hidden-layer MLP with SiLU, used to project raw modality features to
/// the shared trunk width.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: Tensor, // d_in x hidden
    pub b1: Tensor, // 1 x hidden
    pub w2: Tensor, // hidden x d_out
    pub b2: Tensor, // 1 x d_out
}

impl MlpParams {
    pub fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: linear_init(rng, d_in, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: linear_init(rng, hidden, d_out),
            b2: Tensor::zeros(1, d_out),
        }
    }

    pub fn forward(&self, x: &Tensor) -> tensor::Result<Tensor> {
        let h = tensor::silu(&tensor::add_row_broadcast(
            &tensor::matmul(x, &self.w1)?,
            &self.b1,
        )?);
        tensor::add_row_broadcast(&tensor::matmul(&h, &self.w2)?, &self.b2)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w1"), &self.w1));
        out.push((format!("{prefix}.b1"), &self.b1));
        out.push((format!("{prefix}.w2"), &self.w2));
        out.push((format!("{prefix}.b2"), &self.b2));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w1"), &mut self.w1));
        out.push((format!("{prefix}.b1"), &mut self.b1));
        out.push((format!("{prefix}.w2"), &mut self.w2));
        out.push((format!("{prefix}.b2"), &mut self.b2));
    }

    pub fn leaves(&self, tape: &mut Tape, tracked: bool) -> MlpVars {
        MlpVars {
            w1: tape.leaf(self.w1.clone(), tracked),
            b1: tape.leaf(self.b1.clone(), tracked),
            w2: tape.leaf(self.w2.clone(), tracked),
            b2: tape.leaf(self.b2.clone(), tracked),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([self.w1, self.b1, self.w2, self.b2]);
    }
}

pub fn mlp_tape(tape: &mut Tape, p: &MlpVars, x: Var) -> tensor::Result<Var> {
    let l1 = tape.matmul(x, p.w1)?;
    let l1b = tape.add_row_broadcast(l1, p.b1)?;
    let h = tape.silu(l1b);
    let l2 = tape.matmul(h, p.w2)?;
    tape.add_row_broadcast(l2, p.b2)
}

/// Interval boundaries at quantiles of the uncensored event times, and a
/// label in 1..=n for every record. A time exactly on a boundary goes to the
/// lower bin; censored records are binned by their censoring time.
///
/// Boundary i (1-based, i < n) is the ceil(i*m/n)-th smallest uncensored
/// time among the m uncensored events.
pub fn bin_times(times: &[f64], censor: &[u8], n_bins: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if n_bins == 0 {
        return Err(DataError::Config("need at least one interval".into()));
    }
    if times.len() != censor.len() {
        return Err(DataError::Config("times/censor length mismatch".into()));
    }
    let mut uncensored: Vec<f64> = times
        .iter()
        .zip(censor)
        .filter(|(_, &c)| c == 0)
        .map(|(&t, _)| t)
        .collect();
    if uncensored.len() < n_bins {
        return Err(DataError::Config(format!(
            "need at least {} uncensored events to cut {} intervals, got {}",
            n_bins,
            n_bins,
            uncensored.len()
        )));
    }
    uncensored.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let m = uncensored.len();
    let boundaries: Vec<f64> = (1..n_bins)
        .map(|i| uncensored[(i * m).div_ceil(n_bins) - 1])
        .collect();
    let labels = times
        .iter()
        .map(|&t| 1 + boundaries.iter().filter(|&&b| b < t).count())
        .collect();
    Ok((boundaries, labels))
}

/// Reproducible infinite stream of case indices with sampling probability
/// proportional to the inverse frequency of each (label, censor) stratum.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha20Rng,
}

impl WeightedSampler {
    pub fn new(strata: &[(usize, u8)], seed: u64) -> Result<Self> {
        if strata.is_empty() {
            return Err(DataError::Config("cannot sample an empty cohort".into()));
        }
        let mut counts: HashMap<(usize, u8), usize> = HashMap::new();
        for &s in strata {
            *counts.entry(s).or_insert(0) += 1;
        }
        let weights: Vec<f64> = strata.iter().map(|s| 1.0 / counts[s] as f64).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| DataError::Config(format!("bad sampling weights: {e}")))?;
        Ok(Self {
            dist,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn next_index(&mut self) -> usize {
        self.dist.sample(&mut self.rng)
    }
}

impl Iterator for WeightedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.next_index())
    }
}
