//! The four pipeline commands. Each is an ordinary function so integration
//! tests drive them directly; the binary only adds argument parsing and exit
//! codes.

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use mmsurv_core::data::{
    bin_times, load_case_bags, pfe_aggregate, read_manifest, synth_generate, Modality,
    SynthSummary,
};
use mmsurv_core::metrics::{
    c_index, km_estimate, logrank_test, median_split, write_km_csv, CohortPredictions,
};
use mmsurv_core::model::SurvivalModel;
use mmsurv_core::train::{fit, predict_cohort, CaseData, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::fs;
use std::path::{Path, PathBuf};

/// Generates a synthetic cohort under `out_dir` and reports the oracle
/// ceiling of the planted signal.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthSummary> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("{}: {e}", out_dir.display())))?;
    Ok(synth_generate(&cfg.synth_config(), out_dir)?)
}

/// Loads every case of a manifest into memory, aggregates grid-level protein
/// bags to patch level, validates feature widths, and assigns interval
/// labels from the uncensored event-time quantiles.
pub fn load_cohort(
    manifest_path: &Path,
    hist_dim: usize,
    prot_dim: usize,
    n_bins: usize,
    with_protein: bool,
) -> Result<(Vec<CaseData>, Vec<f64>)> {
    let rows = read_manifest(manifest_path)?;
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "{}: empty manifest",
            manifest_path.display()
        )));
    }
    let mut cases = Vec::with_capacity(rows.len());
    for row in &rows {
        let (hist, prot_raw, prot_modality) = load_case_bags(manifest_path, row)?;
        if hist.cols() != hist_dim {
            return Err(CliError::Config(format!(
                "case {}: histology width {} does not match configured {}",
                row.case_id,
                hist.cols(),
                hist_dim
            )));
        }
        let prot = if with_protein {
            let p = if prot_modality == Modality::ProteinGrid {
                pfe_aggregate(&prot_raw)?
            } else {
                prot_raw
            };
            if p.cols() != prot_dim {
                return Err(CliError::Config(format!(
                    "case {}: protein width {} does not match configured {}",
                    row.case_id,
                    p.cols(),
                    prot_dim
                )));
            }
            Some(p)
        } else {
            None
        };
        cases.push(CaseData {
            case_id: row.case_id.clone(),
            hist,
            prot,
            time: row.time_months,
            censor: row.censor,
            label: 0,
        });
    }
    let times: Vec<f64> = cases.iter().map(|c| c.time).collect();
    let censor: Vec<u8> = cases.iter().map(|c| c.censor).collect();
    let (boundaries, labels) = bin_times(&times, &censor, n_bins)?;
    for (case, label) in cases.iter_mut().zip(labels) {
        case.label = label;
    }
    Ok((cases, boundaries))
}

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    pub summary_path: PathBuf,
    pub best_val_cindex: f64,
    pub final_train_cindex: f64,
    pub epochs_run: usize,
    pub param_bytes: usize,
}

/// Trains on the manifest cohort with a seeded split, early stopping on
/// validation concordance, and writes the best checkpoint plus a training
/// log. The summary's final C-index is computed from the restored
/// checkpoint-precision parameters, so a later `eval` on the same manifest
/// reproduces it exactly.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest: &Path,
    out_dir: &Path,
    fold: Option<usize>,
) -> Result<TrainReport> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("{}: {e}", out_dir.display())))?;
    let (cases, boundaries) = load_cohort(
        manifest,
        cfg.hist_dim,
        cfg.prot_dim,
        cfg.n_bins,
        !cfg.disable_pfe,
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = SurvivalModel::init(cfg.model_config(), &mut rng);
    let param_bytes = model.param_bytes();
    let outcome: TrainOutcome = fit(&mut model, &cases, &cfg.train_config(fold))?;

    let checkpoint_dir = out_dir.join("checkpoint");
    model.save(
        &checkpoint_dir,
        serde_json::json!({
            "n_bins": cfg.n_bins,
            "boundaries": boundaries,
            "seed": cfg.seed,
            "fold": fold,
            "best_val_cindex": outcome.best_val_cindex,
            "epochs_run": outcome.epochs_run,
        }),
    )?;

    let log_path = out_dir.join("train_log.csv");
    let mut log = String::from("epoch,mean_loss,val_cindex,best_val_cindex\n");
    for row in &outcome.log {
        log.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.mean_loss, row.val_cindex, row.best_val_cindex
        ));
    }
    fs::write(&log_path, log)?;

    // final concordance over the whole manifest, from checkpoint-precision
    // parameters (fit restored them into the model)
    let all: Vec<usize> = (0..cases.len()).collect();
    let final_preds = predict_cohort(&model, &cases, &all)?;
    let final_train_cindex = c_index(&final_preds)?;
    let summary_path = out_dir.join("train_summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "best_val_cindex": outcome.best_val_cindex,
            "final_train_cindex": final_train_cindex,
            "epochs_run": outcome.epochs_run,
            "param_bytes": param_bytes,
            "train_cases": outcome.train_indices.len(),
            "val_cases": outcome.val_indices.len(),
        }))
        .expect("json"),
    )?;

    Ok(TrainReport {
        checkpoint_dir,
        log_path,
        summary_path,
        best_val_cindex: outcome.best_val_cindex,
        final_train_cindex,
        epochs_run: outcome.epochs_run,
        param_bytes,
    })
}

#[derive(Debug)]
pub struct StratReport {
    pub chi2: f64,
    pub p_value: f64,
    pub km_low_path: PathBuf,
    pub km_high_path: PathBuf,
    pub low_cases: usize,
    pub high_cases: usize,
}

#[derive(Debug)]
pub struct EvalReport {
    pub cindex: f64,
    pub cases: usize,
    /// None when all risks are equal and the median split degenerates.
    pub stratification: Option<StratReport>,
}

/// Scores a manifest with a trained checkpoint: cohort concordance, then
/// median-risk stratification with per-group survival curves and the
/// log-rank test.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, out_dir: &Path) -> Result<EvalReport> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("{}: {e}", out_dir.display())))?;
    let (model, extra) = SurvivalModel::load(checkpoint)?;
    let n_bins = extra["n_bins"].as_u64().unwrap_or(model.cfg.n_bins as u64) as usize;
    if n_bins != model.cfg.n_bins {
        return Err(CliError::Config(format!(
            "checkpoint metadata lists {n_bins} intervals but the head has {}",
            model.cfg.n_bins
        )));
    }
    let (cases, _) = load_cohort(
        manifest,
        model.cfg.hist_dim,
        model.cfg.prot_dim,
        n_bins,
        !model.cfg.disable_pfe,
    )?;
    let all: Vec<usize> = (0..cases.len()).collect();
    let preds: CohortPredictions = predict_cohort(&model, &cases, &all)?;
    let cindex = c_index(&preds)?;

    let (low, high) = median_split(&preds)?;
    let stratification = if high.is_empty() {
        None
    } else {
        let km_low = km_estimate(&low)?;
        let km_high = km_estimate(&high)?;
        let km_low_path = out_dir.join("km_low_risk.csv");
        let km_high_path = out_dir.join("km_high_risk.csv");
        let mut buf = Vec::new();
        write_km_csv(&km_low, &mut buf)?;
        fs::write(&km_low_path, &buf)?;
        buf.clear();
        write_km_csv(&km_high, &mut buf)?;
        fs::write(&km_high_path, &buf)?;
        let (chi2, p_value) = logrank_test(&low, &high)?;
        Some(StratReport {
            chi2,
            p_value,
            km_low_path,
            km_high_path,
            low_cases: low.len(),
            high_cases: high.len(),
        })
    };
    Ok(EvalReport {
        cindex,
        cases: cases.len(),
        stratification,
    })
}

/// Runs the scaling study and writes the CSV report plus a human-readable
/// summary with fitted slopes.
pub fn cmd_bench(cfg: &RunConfig, out_dir: &Path) -> Result<mmsurv_bench::BenchReport> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Resource(format!("{}: {e}", out_dir.display())))?;
    let report = mmsurv_bench::run_scaling(&cfg.bench_config())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(out_dir.join("bench_report.csv"), &csv)?;
    fs::write(out_dir.join("bench_summary.txt"), report.summary())?;
    Ok(report)
}
