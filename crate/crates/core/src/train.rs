//! Training loop: seeded split, inverse-frequency weighted sampling,
//! gradient accumulation over single-case steps, adaptive moment updates
//! with decoupled weight decay, and early stopping on validation concordance.

use crate::data::{DataError, WeightedSampler};
use crate::metrics::{c_index, CasePrediction, CohortPredictions, MetricError};
use crate::model::SurvivalModel;
use crate::autodiff::Tape;
use crate::survival::{risk_score, surv_loss_tape};
use crate::tensor::{Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite loss at epoch {epoch} on case {case_id}")]
    NumericAbort { epoch: usize, case_id: String },
    #[error("training configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One case loaded into memory with its interval label already assigned.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub case_id: String,
    pub hist: Tensor,
    pub prot: Option<Tensor>,
    pub time: f64,
    pub censor: u8,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub accum_steps: usize,
    pub patience: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// When set, validation is fold `fold` of `n_folds` over the seeded
    /// permutation instead of the leading `val_fraction` slice.
    pub fold: Option<usize>,
    pub n_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 100,
            accum_steps: 32,
            patience: 10,
            seed: 0,
            val_fraction: 0.2,
            fold: None,
            n_folds: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_cindex: f64,
    pub best_val_cindex: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_val_cindex: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Adaptive moment optimizer with decoupled weight decay.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = &grads[i];
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}

/// Seeded train/validation split over case indices.
pub fn split_indices(n: usize, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(TrainError::Config(format!(
            "need at least 2 cases to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x5117));
    order.shuffle(&mut rng);
    let (val, train): (Vec<usize>, Vec<usize>) = match cfg.fold {
        Some(f) => {
            if f >= cfg.n_folds {
                return Err(TrainError::Config(format!(
                    "fold {f} out of range for {} folds",
                    cfg.n_folds
                )));
            }
            let chunk = n.div_ceil(cfg.n_folds);
            let lo = f * chunk;
            let hi = ((f + 1) * chunk).min(n);
            (
                order[lo..hi].to_vec(),
                order[..lo].iter().chain(&order[hi..]).copied().collect(),
            )
        }
        None => {
            let k = ((n as f64) * cfg.val_fraction).round().max(1.0) as usize;
            (order[..k].to_vec(), order[k..].to_vec())
        }
    };
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("empty train or validation split".into()));
    }
    Ok((train, val))
}

/// Risk predictions of the current model over a set of cases.
pub fn predict_cohort(
    model: &SurvivalModel,
    cases: &[CaseData],
    indices: &[usize],
) -> Result<CohortPredictions> {
    let mut preds = Vec::with_capacity(indices.len());
    for &i in indices {
        let case = &cases[i];
        let hazards = model.forward_eval(&case.hist, case.prot.as_ref())?;
        preds.push(CasePrediction {
            case_id: case.case_id.clone(),
            risk: risk_score(&hazards),
            time: case.time,
            censor: case.censor,
        });
    }
    Ok(CohortPredictions::new(preds)?)
}

/// Trains in place, restoring the best (checkpoint-precision) parameters into
/// the model before returning. Validation concordance is evaluated once
/// before any update so a zero-epoch run still yields a usable baseline.
pub fn fit(model: &mut SurvivalModel, cases: &[CaseData], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.accum_steps == 0 {
        return Err(TrainError::Config("accumulation steps must be >= 1".into()));
    }
    let (train_idx, val_idx) = split_indices(cases.len(), cfg)?;
    let strata: Vec<(usize, u8)> = train_idx
        .iter()
        .map(|&i| (cases[i].label, cases[i].censor))
        .collect();
    let mut sampler = WeightedSampler::new(&strata, cfg.seed.wrapping_add(0xa11ce))?;

    let mut sizes = Vec::new();
    {
        let mut named = Vec::new();
        model.visit(&mut named);
        for (_, t) in named {
            sizes.push(t.numel());
        }
    }
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay, &sizes);

    let mut best = evaluate_val(model, cases, &val_idx)?;
    let mut best_snapshot = model.snapshot_f32();
    let mut log = vec![EpochLog {
        epoch: 0,
        mean_loss: f64::NAN,
        val_cindex: best,
        best_val_cindex: best,
    }];
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    let groups_per_epoch = (train_idx.len() / cfg.accum_steps).max(1);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..groups_per_epoch {
            let mut grad_accum: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for _ in 0..cfg.accum_steps {
                let case = &cases[train_idx[sampler.next_index()]];
                let mut tape = Tape::new();
                let vars = model.leaves(&mut tape, true);
                let hist = tape.leaf(case.hist.clone(), false);
                let prot = case.prot.as_ref().map(|p| tape.leaf(p.clone(), false));
                let hazards = model.forward_tape(&mut tape, &vars, hist, prot)?;
                let loss = surv_loss_tape(&mut tape, hazards, case.label, case.censor)?;
                let loss_val = tape.value(loss).scalar_value();
                if !loss_val.is_finite() {
                    return Err(TrainError::NumericAbort {
                        epoch,
                        case_id: case.case_id.clone(),
                    });
                }
                loss_sum += loss_val;
                loss_count += 1;
                tape.backward(loss)?;
                let scale = 1.0 / cfg.accum_steps as f64;
                for (slot, var) in grad_accum.iter_mut().zip(vars.all_vars()) {
                    let g = tape.grad(var).expect("tracked leaf gradient");
                    for (acc, gv) in slot.iter_mut().zip(g) {
                        *acc += gv * scale;
                    }
                }
            }
            let mut named = Vec::new();
            model.visit_mut(&mut named);
            adam.update(&mut named, &grad_accum);
        }
        epochs_run = epoch;

        let val_c = evaluate_val(model, cases, &val_idx)?;
        if val_c > best {
            best = val_c;
            best_snapshot = model.snapshot_f32();
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / loss_count.max(1) as f64,
            val_cindex: val_c,
            best_val_cindex: best,
        });
        if stale > cfg.patience {
            break;
        }
    }

    model.load_params(&best_snapshot)?;
    Ok(TrainOutcome {
        best_val_cindex: best,
        epochs_run,
        log,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

fn evaluate_val(model: &SurvivalModel, cases: &[CaseData], val_idx: &[usize]) -> Result<f64> {
    let preds = predict_cohort(model, cases, val_idx)?;
    Ok(c_index(&preds)?)
}
