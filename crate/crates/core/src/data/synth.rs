//! Synthetic cohort generation with a planted risk signal.
//!
//! Each case has a latent risk r ~ N(0,1). Histology patch rows are drawn
//! around r * u_h with unit noise, protein patch rows around r * u_p with
//! variance 0.5, and the event time is exponential with rate exp(beta * r).
//! The two modalities share r but use different directions and noise scales,
//! so neither alone carries the full signal.

use super::{
    read_feature_bag, write_feature_bag, write_manifest, DataError, ManifestRow, Modality, Result,
};
use crate::metrics::{c_index, CasePrediction, CohortPredictions};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub cases: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    /// Hazard signal strength: event rate is exp(beta * r).
    pub beta: f64,
    /// Fraction of cases censored (uniformly before their event).
    pub censor_frac: f64,
    pub seed: u64,
    pub hist_dim: usize,
    pub prot_dim: usize,
    /// Norm of the planted histology direction u_h.
    pub hist_signal: f64,
    /// Norm of the planted protein direction u_p.
    pub prot_signal: f64,
    /// Scales raw exponential times into month-like magnitudes.
    pub time_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            cases: 500,
            patches_min: 8,
            patches_max: 16,
            beta: 1.5,
            censor_frac: 0.3,
            seed: 17,
            hist_dim: 512,
            prot_dim: 50,
            hist_signal: 0.35,
            prot_signal: 0.3,
            time_scale: 36.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.cases == 0
            || self.patches_min == 0
            || self.patches_max < self.patches_min
            || self.hist_dim == 0
            || self.prot_dim == 0
        {
            return Err(DataError::Config("degenerate synthetic config".into()));
        }
        if !(0.0..1.0).contains(&self.censor_frac) {
            return Err(DataError::Config(format!(
                "censoring fraction must be in [0,1), got {}",
                self.censor_frac
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub oracle_cindex: f64,
    pub events: usize,
    pub censored: usize,
}

fn unit_direction(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x *= scale / norm;
    }
    v
}

/// Writes bags, manifest and ground truth under `out_dir`; byte-identical
/// output for identical configs.
pub fn synth_generate(cfg: &SyntheticConfig, out_dir: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let bags_dir = out_dir.join("bags");
    fs::create_dir_all(&bags_dir).map_err(|e| super::io_err(&bags_dir, e))?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let u_h = unit_direction(&mut rng, cfg.hist_dim, cfg.hist_signal);
    let u_p = unit_direction(&mut rng, cfg.prot_dim, cfg.prot_signal);

    let mut latent = Vec::with_capacity(cfg.cases);
    let mut event_times = Vec::with_capacity(cfg.cases);
    for i in 0..cfg.cases {
        let r: f64 = rng.sample(StandardNormal);
        let n_patches = rng.gen_range(cfg.patches_min..=cfg.patches_max);

        let mut hist = Vec::with_capacity(n_patches * cfg.hist_dim);
        for _ in 0..n_patches {
            for &uh in &u_h {
                let noise: f64 = rng.sample(StandardNormal);
                hist.push(r * uh + noise);
            }
        }
        let prot_std = 0.5f64.sqrt();
        let mut prot = Vec::with_capacity(n_patches * cfg.prot_dim);
        for _ in 0..n_patches {
            for &up in &u_p {
                let noise: f64 = rng.sample(StandardNormal);
                prot.push(r * up + prot_std * noise);
            }
        }
        write_feature_bag(
            &bags_dir.join(format!("case_{i:04}_hist.fbag")),
            &Tensor::new(n_patches, cfg.hist_dim, hist)?,
            Modality::Histology,
        )?;
        write_feature_bag(
            &bags_dir.join(format!("case_{i:04}_prot.fbag")),
            &Tensor::new(n_patches, cfg.prot_dim, prot)?,
            Modality::ProteinPatch,
        )?;

        let u: f64 = rng.gen();
        let raw = -(1.0 - u).ln() / (cfg.beta * r).exp();
        event_times.push((raw * cfg.time_scale).max(1e-6));
        latent.push(r);
    }

    // censor a fixed-size seeded subset uniformly before the event
    let mut censor_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe_f00d_u64);
    let mut order: Vec<usize> = (0..cfg.cases).collect();
    order.shuffle(&mut censor_rng);
    let n_censor = (cfg.censor_frac * cfg.cases as f64).floor() as usize;
    let mut censored_set = order[..n_censor].to_vec();
    censored_set.sort_unstable();
    let mut censor = vec![0u8; cfg.cases];
    let mut observed = event_times.clone();
    for &i in &censored_set {
        let u: f64 = censor_rng.gen();
        observed[i] = (u * event_times[i]).max(1e-6);
        censor[i] = 1;
    }

    let rows: Vec<ManifestRow> = (0..cfg.cases)
        .map(|i| ManifestRow {
            case_id: format!("case_{i:04}"),
            histology_path: format!("bags/case_{i:04}_hist.fbag"),
            protein_path: format!("bags/case_{i:04}_prot.fbag"),
            time_months: observed[i],
            censor: censor[i],
        })
        .collect();
    let manifest_path = out_dir.join("cohort.csv");
    write_manifest(&manifest_path, &rows)?;

    let ground_truth_path = out_dir.join("ground_truth.csv");
    let mut gt = String::from("case_id,r\n");
    for (i, r) in latent.iter().enumerate() {
        gt.push_str(&format!("case_{i:04},{r}\n"));
    }
    fs::write(&ground_truth_path, gt).map_err(|e| super::io_err(&ground_truth_path, e))?;

    let oracle = oracle_c_index(&ground_truth_path, &manifest_path)?;
    Ok(SynthSummary {
        manifest_path,
        ground_truth_path,
        oracle_cindex: oracle,
        events: cfg.cases - n_censor,
        censored: n_censor,
    })
}

/// Concordance of the planted latent risk itself: the ceiling any model can
/// approach on the generated cohort.
pub fn oracle_c_index(ground_truth: &Path, manifest: &Path) -> Result<f64> {
    let gt_text = fs::read_to_string(ground_truth).map_err(|e| super::io_err(ground_truth, e))?;
    let mut risk_by_id = std::collections::HashMap::new();
    for (ln, line) in gt_text.lines().enumerate().skip(1) {
        let (id, r) = line.split_once(',').ok_or_else(|| DataError::Config(format!(
            "{} line {}: expected case_id,r",
            ground_truth.display(),
            ln + 1
        )))?;
        let r: f64 = r.parse().map_err(|e| {
            DataError::Config(format!("{} line {}: {e}", ground_truth.display(), ln + 1))
        })?;
        risk_by_id.insert(id.to_string(), r);
    }
    let rows = super::read_manifest(manifest)?;
    let mut cases = Vec::with_capacity(rows.len());
    for row in rows {
        let risk = *risk_by_id.get(&row.case_id).ok_or_else(|| {
            DataError::Config(format!(
                "{}: case {} missing from ground truth",
                ground_truth.display(),
                row.case_id
            ))
        })?;
        cases.push(CasePrediction {
            case_id: row.case_id,
            risk,
            time: row.time_months,
            censor: row.censor,
        });
    }
    let cohort = CohortPredictions::new(cases)
        .map_err(|e| DataError::Config(format!("oracle cohort invalid: {e}")))?;
    c_index(&cohort).map_err(|e| DataError::Config(format!("oracle c-index undefined: {e}")))
}

/// Reads one case's bags back with modality validation; the returned tag
/// distinguishes patch-level from grid-level protein files.
pub fn load_case_bags(
    manifest_path: &Path,
    row: &ManifestRow,
) -> Result<(Tensor, Tensor, Modality)> {
    let (hist, m1) = read_feature_bag(&row.resolve_histology(manifest_path))?;
    if m1 != Modality::Histology {
        return Err(DataError::Config(format!(
            "case {}: histology bag has modality {m1:?}",
            row.case_id
        )));
    }
    let (prot, m2) = read_feature_bag(&row.resolve_protein(manifest_path))?;
    if m2 != Modality::ProteinPatch && m2 != Modality::ProteinGrid {
        return Err(DataError::Config(format!(
            "case {}: protein bag has modality {m2:?}",
            row.case_id
        )));
    }
    Ok((hist, prot, m2))
}
