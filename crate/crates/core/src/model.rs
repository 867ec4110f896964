//! Full survival model: per-modality projection MLPs, the fusion trunk, and
//! the discrete-hazard head, with ablation switches for the protein path and
//! for either fusion stage.

use crate::autodiff::{Tape, Var};
use crate::data::{MlpParams, MlpVars};
use crate::data::{load_checkpoint, save_checkpoint};
use crate::fusion::{trunk_tape, FusionConfig, FusionTrunk, TrunkVars};
use crate::init::randn;
use crate::ssm::bimamba_tape;
use crate::survival::{hazard_head, hazard_head_tape, HazardVector};
use crate::tensor::{Tensor, TensorError};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Shared trunk width.
    pub d_model: usize,
    /// Number of hazard intervals.
    pub n_bins: usize,
    pub n_liam: usize,
    pub n_giem: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub giem_expand: usize,
    pub liam_selective: bool,
    pub use_skip: bool,
    /// Raw histology feature width.
    pub hist_dim: usize,
    /// Raw protein feature width.
    pub prot_dim: usize,
    pub mlp_hidden: usize,
    /// Drop the protein path entirely (single-modality trunk).
    pub disable_pfe: bool,
    /// Skip the local cross-gated blocks.
    pub disable_liam: bool,
    /// Skip the global bidirectional blocks.
    pub disable_giem: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_bins: 4,
            n_liam: 2,
            n_giem: 1,
            d_state: 16,
            conv_width: 4,
            giem_expand: 2,
            liam_selective: true,
            use_skip: true,
            hist_dim: 512,
            prot_dim: 50,
            mlp_hidden: 256,
            disable_pfe: false,
            disable_liam: false,
            disable_giem: false,
        }
    }
}

impl ModelConfig {
    fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            d_model: self.d_model,
            n_liam: if self.disable_liam || self.disable_pfe {
                0
            } else {
                self.n_liam
            },
            n_giem: if self.disable_giem { 0 } else { self.n_giem },
            d_state: self.d_state,
            conv_width: self.conv_width,
            giem_expand: self.giem_expand,
            liam_selective: self.liam_selective,
            giem_tied: false,
            use_skip: self.use_skip,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurvivalModel {
    pub cfg: ModelConfig,
    pub proj_h: MlpParams,
    pub proj_p: Option<MlpParams>,
    pub trunk: FusionTrunk,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl SurvivalModel {
    pub fn init(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let proj_h = MlpParams::init(cfg.hist_dim, cfg.mlp_hidden, cfg.d_model, rng);
        let proj_p = (!cfg.disable_pfe)
            .then(|| MlpParams::init(cfg.prot_dim, cfg.mlp_hidden, cfg.d_model, rng));
        let trunk = FusionTrunk::init(cfg.fusion_config(), rng);
        Self {
            cfg,
            proj_h,
            proj_p,
            trunk,
            // near-zero head keeps untrained hazards at ~0.5
            head_w: randn(rng, cfg.d_model, cfg.n_bins, 0.01),
            head_b: Tensor::zeros(1, cfg.n_bins),
        }
    }

    /// Untracked forward pass for one case.
    pub fn forward_eval(&self, hist: &Tensor, prot: Option<&Tensor>) -> Result<HazardVector> {
        let f_h = self.proj_h.forward(hist)?;
        let fused = match (&self.proj_p, prot) {
            (Some(pp), Some(prot)) => {
                let f_p = pp.forward(prot)?;
                self.trunk.forward(&f_h, &f_p)?
            }
            _ => {
                let mut x = f_h;
                for g in &self.trunk.giem_blocks {
                    x = g.forward(&x)?;
                }
                x
            }
        };
        hazard_head(&fused, &self.head_w, &self.head_b)
    }

    pub fn leaves(&self, tape: &mut Tape, tracked: bool) -> ModelVars {
        ModelVars {
            proj_h: self.proj_h.leaves(tape, tracked),
            proj_p: self.proj_p.as_ref().map(|p| p.leaves(tape, tracked)),
            trunk: self.trunk.leaves(tape, tracked),
            head_w: tape.leaf(self.head_w.clone(), tracked),
            head_b: tape.leaf(self.head_b.clone(), tracked),
        }
    }

    /// Tracked forward pass; returns the clamped 1 x n hazard row.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        hist: Var,
        prot: Option<Var>,
    ) -> Result<Var> {
        let f_h = crate::data::mlp_tape(tape, &vars.proj_h, hist)?;
        let fused = match (&vars.proj_p, prot) {
            (Some(pp), Some(prot)) => {
                let f_p = crate::data::mlp_tape(tape, pp, prot)?;
                trunk_tape(tape, &vars.trunk, f_h, f_p)?
            }
            _ => {
                let mut x = f_h;
                for g in &vars.trunk.giem_blocks {
                    x = bimamba_tape(tape, g, x)?;
                }
                x
            }
        };
        hazard_head_tape(tape, fused, vars.head_w, vars.head_b)
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.proj_h.visit("proj_h", out);
        if let Some(p) = &self.proj_p {
            p.visit("proj_p", out);
        }
        self.trunk.visit("trunk", out);
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.proj_h.visit_mut("proj_h", out);
        if let Some(p) = &mut self.proj_p {
            p.visit_mut("proj_p", out);
        }
        self.trunk.visit_mut("trunk", out);
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
    }

    /// Exact serialized parameter byte count at 32-bit width.
    pub fn param_bytes(&self) -> usize {
        let mut named = Vec::new();
        self.visit(&mut named);
        named.iter().map(|(_, t)| t.numel() * 4).sum()
    }

    pub fn save(
        &self,
        dir: &std::path::Path,
        extra_hyper: serde_json::Value,
    ) -> crate::data::Result<()> {
        let mut named = Vec::new();
        self.visit(&mut named);
        let hyper = serde_json::json!({
            "model": self.cfg,
            "extra": extra_hyper,
        });
        save_checkpoint(dir, &named, &hyper)
    }

    /// Loads a checkpoint directory into a freshly constructed model. Returns
    /// the model and the `extra` hyperparameter blob stored at save time.
    pub fn load(dir: &std::path::Path) -> crate::data::Result<(Self, serde_json::Value)> {
        let (params, hyper) = load_checkpoint(dir)?;
        let cfg: ModelConfig = serde_json::from_value(hyper["model"].clone())
            .map_err(|e| crate::data::DataError::Config(format!("bad model config: {e}")))?;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
        let mut model = Self::init(cfg, &mut rng);
        model.load_params(&params)?;
        Ok((model, hyper["extra"].clone()))
    }

    /// Replaces parameter values by name; every model parameter must be
    /// present with a matching shape.
    pub fn load_params(&mut self, params: &[(String, Tensor)]) -> crate::data::Result<()> {
        use std::collections::HashMap;
        let by_name: HashMap<&str, &Tensor> =
            params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut slots = Vec::new();
        self.visit_mut(&mut slots);
        for (name, slot) in slots {
            let found = by_name.get(name.as_str()).ok_or_else(|| {
                crate::data::DataError::Config(format!("checkpoint missing parameter {name}"))
            })?;
            if found.shape() != slot.shape() {
                return Err(crate::data::DataError::Config(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    found.shape(),
                    slot.shape()
                )));
            }
            *slot = (*found).clone();
        }
        Ok(())
    }

    /// Named copies of the current parameters with values passed through the
    /// on-disk 32-bit width, exactly as a checkpoint would store them.
    pub fn snapshot_f32(&self) -> Vec<(String, Tensor)> {
        let mut named = Vec::new();
        self.visit(&mut named);
        named
            .into_iter()
            .map(|(n, t)| (n, t.map(|v| v as f32 as f64)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub proj_h: MlpVars,
    pub proj_p: Option<MlpVars>,
    pub trunk: TrunkVars,
    pub head_w: Var,
    pub head_b: Var,
}

impl ModelVars {
    /// Parameter handles in the same order as `SurvivalModel::visit`.
    pub fn all_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.proj_h.collect(&mut out);
        if let Some(p) = &self.proj_p {
            p.collect(&mut out);
        }
        out.extend(self.trunk.all_vars());
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::risk_score;
    use rand_chacha::ChaCha20Rng;
    use tempfile::tempdir;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_bins: 4,
            n_liam: 1,
            n_giem: 1,
            d_state: 4,
            conv_width: 3,
            giem_expand: 2,
            hist_dim: 12,
            prot_dim: 6,
            mlp_hidden: 8,
            ..Default::default()
        }
    }

    #[test]
    fn eval_and_tape_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let model = SurvivalModel::init(tiny_cfg(), &mut rng);
        let hist = randn(&mut rng, 5, 12, 1.0);
        let prot = randn(&mut rng, 5, 6, 1.0);
        let pure = model.forward_eval(&hist, Some(&prot)).unwrap();
        let mut tape = Tape::new();
        let vars = model.leaves(&mut tape, false);
        let hv = tape.leaf(hist, false);
        let pv = tape.leaf(prot, false);
        let out = model.forward_tape(&mut tape, &vars, hv, Some(pv)).unwrap();
        assert_eq!(tape.value(out).data(), pure.values());
    }

    #[test]
    fn untrained_model_is_near_half_hazards() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let model = SurvivalModel::init(tiny_cfg(), &mut rng);
        let hist = randn(&mut rng, 4, 12, 1.0);
        let prot = randn(&mut rng, 4, 6, 1.0);
        let h = model.forward_eval(&hist, Some(&prot)).unwrap();
        for &v in h.values() {
            assert!((v - 0.5).abs() < 0.2, "hazard {v}");
        }
    }

    #[test]
    fn ablated_model_drops_protein_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cfg = ModelConfig {
            disable_pfe: true,
            ..tiny_cfg()
        };
        let model = SurvivalModel::init(cfg, &mut rng);
        assert!(model.proj_p.is_none());
        assert!(model.trunk.liam_blocks.is_empty());
        let hist = randn(&mut rng, 4, 12, 1.0);
        let h = model.forward_eval(&hist, None).unwrap();
        assert_eq!(h.len(), 4);
    }

    #[test]
    fn checkpoint_round_trip_preserves_eval() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let model = SurvivalModel::init(tiny_cfg(), &mut rng);
        let dir = tempdir().unwrap();
        model
            .save(dir.path(), serde_json::json!({"note": "test"}))
            .unwrap();
        let (loaded, extra) = SurvivalModel::load(dir.path()).unwrap();
        assert_eq!(extra["note"], "test");

        let hist = randn(&mut rng, 5, 12, 1.0);
        let prot = randn(&mut rng, 5, 6, 1.0);
        // saved values pass through f32; the reloaded model must match a
        // f32-rounded snapshot of the original exactly
        let mut rounded = model.clone();
        let snap = model.snapshot_f32();
        rounded.load_params(&snap).unwrap();
        let a = rounded.forward_eval(&hist, Some(&prot)).unwrap();
        let b = loaded.forward_eval(&hist, Some(&prot)).unwrap();
        assert_eq!(a.values(), b.values());
        let _ = risk_score(&a);
    }

    #[test]
    fn param_bytes_counts_all_tensors() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let model = SurvivalModel::init(tiny_cfg(), &mut rng);
        let mut named = Vec::new();
        model.visit(&mut named);
        let total: usize = named.iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(model.param_bytes(), total * 4);
    }
}
