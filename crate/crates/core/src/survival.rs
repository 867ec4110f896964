//! Discrete-time survival head: per-interval conditional hazards from the
//! fused sequence, the survival function, the censoring-aware negative
//! log-likelihood, and the scalar risk score.

use crate::autodiff::{Tape, Var};
use crate::tensor::{self, Tensor, TensorError};

pub type Result<T> = std::result::Result<T, TensorError>;

/// Hazards are kept strictly inside (0,1) so every log in the loss is finite.
pub const HAZARD_CLAMP: f64 = 1e-7;

/// One case's outcome: observed or censored follow-up time in months,
/// censoring flag (0 = event observed, 1 = censored), and the assigned
/// interval label in 1..=n.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub case_id: String,
    pub time: f64,
    pub censor: u8,
    pub label: usize,
}

/// Per-case conditional hazards h_1..h_n, each in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct HazardVector {
    h: Vec<f64>,
}

impl HazardVector {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(TensorError::Domain {
                op: "HazardVector::new",
                msg: "empty hazard vector".into(),
            });
        }
        if let Some(&bad) = h.iter().find(|v| !(0.0 < **v && **v < 1.0)) {
            return Err(TensorError::Domain {
                op: "HazardVector::new",
                msg: format!("hazard {bad} outside (0,1)"),
            });
        }
        Ok(Self { h })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }
}

/// `sigmoid(W' pooled + b)` clamped into [HAZARD_CLAMP, 1-HAZARD_CLAMP],
/// where `pooled` is the per-channel max over the fused sequence.
pub fn hazard_head(fused: &Tensor, w: &Tensor, b: &Tensor) -> Result<HazardVector> {
    if w.cols() < 2 {
        return Err(TensorError::Domain {
            op: "hazard_head",
            msg: format!("needs at least 2 intervals, got {}", w.cols()),
        });
    }
    let (pooled, _) = tensor::max_pool_seq(fused)?;
    let logits = tensor::add_row_broadcast(&tensor::matmul(&pooled, w)?, b)?;
    let h = tensor::clamp(&tensor::sigmoid(&logits), HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
    HazardVector::new(h.into_data())
}

/// Tape version; returns the clamped 1 x n hazard row.
pub fn hazard_head_tape(tape: &mut Tape, fused: Var, w: Var, b: Var) -> Result<Var> {
    if tape.value(w).cols() < 2 {
        return Err(TensorError::Domain {
            op: "hazard_head",
            msg: format!("needs at least 2 intervals, got {}", tape.value(w).cols()),
        });
    }
    let pooled = tape.max_pool_seq(fused)?;
    let lin = tape.matmul(pooled, w)?;
    let logits = tape.add_row_broadcast(lin, b)?;
    let sig = tape.sigmoid(logits);
    Ok(tape.clamp(sig, HAZARD_CLAMP, 1.0 - HAZARD_CLAMP))
}

/// Discrete survival function: probability of surviving through interval k,
/// `prod_{i=1..k} (1 - h_i)`. `k = 0` is the empty product.
pub fn f_surv(hazards: &HazardVector, k: usize) -> Result<f64> {
    if k > hazards.len() {
        return Err(TensorError::Domain {
            op: "f_surv",
            msg: format!("interval {k} exceeds {} hazards", hazards.len()),
        });
    }
    Ok(hazards.values()[..k].iter().map(|h| 1.0 - h).product())
}

/// Censoring-aware negative log-likelihood for one case with label `k` and
/// censor flag `c`:
/// `-c log S(k) - (1-c) log S(k-1) - (1-c) log h_k`.
pub fn surv_loss(hazards: &HazardVector, k: usize, censor: u8) -> Result<f64> {
    check_label(hazards, k)?;
    let loss = if censor == 1 {
        -f_surv(hazards, k)?.ln()
    } else {
        -f_surv(hazards, k - 1)?.ln() - hazards.values()[k - 1].ln()
    };
    Ok(loss)
}

fn check_label(hazards: &HazardVector, k: usize) -> Result<()> {
    if k == 0 || k > hazards.len() {
        return Err(TensorError::Domain {
            op: "surv_loss",
            msg: format!("label {k} outside 1..={}", hazards.len()),
        });
    }
    Ok(())
}

/// Same loss on the tape; `hazards` is a clamped 1 x n row.
pub fn surv_loss_tape(tape: &mut Tape, hazards: Var, k: usize, censor: u8) -> Result<Var> {
    let n = tape.value(hazards).cols();
    if k == 0 || k > n {
        return Err(TensorError::Domain {
            op: "surv_loss",
            msg: format!("label {k} outside 1..={n}"),
        });
    }
    // log(1 - h) over all intervals
    let neg_h = tape.scalar_mul(hazards, -1.0);
    let one_minus = tape.scalar_add(neg_h, 1.0);
    let log_surv = tape.log(one_minus)?;
    let loss = if censor == 1 {
        let upto_k = tape.slice_cols(log_surv, 0, k)?;
        let s = tape.sum(upto_k);
        tape.scalar_mul(s, -1.0)
    } else {
        let log_h = tape.log(hazards)?;
        let log_hk = tape.slice_cols(log_h, k - 1, 1)?;
        let event_term = tape.sum(log_hk);
        let total = if k > 1 {
            let upto = tape.slice_cols(log_surv, 0, k - 1)?;
            let s = tape.sum(upto);
            tape.add(s, event_term)?
        } else {
            event_term
        };
        tape.scalar_mul(total, -1.0)
    };
    Ok(loss)
}

/// Risk score `-(S(1) + ... + S(n))`: strictly increasing in every hazard.
pub fn risk_score(hazards: &HazardVector) -> f64 {
    let mut surv = 1.0;
    let mut total = 0.0;
    for &h in hazards.values() {
        surv *= 1.0 - h;
        total += surv;
    }
    -total
}
