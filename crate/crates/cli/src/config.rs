//! Plain-text `key = value` run configuration. Unknown keys are rejected;
//! every field has a default (documented in the README) so an empty or
//! missing file is a valid configuration.

use crate::error::{CliError, Result};
use mmsurv_core::data::SyntheticConfig;
use mmsurv_core::model::ModelConfig;
use mmsurv_core::train::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // model
    pub d_model: usize,
    pub n_bins: usize,
    pub n_liam: usize,
    pub n_giem: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub giem_expand: usize,
    pub mlp_hidden: usize,
    pub hist_dim: usize,
    pub prot_dim: usize,
    // optimization
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub accum_steps: usize,
    pub patience: usize,
    pub val_fraction: f64,
    // ablations
    pub disable_pfe: bool,
    pub disable_liam: bool,
    pub disable_giem: bool,
    // synthetic cohort
    pub synth_cases: usize,
    pub synth_patches_min: usize,
    pub synth_patches_max: usize,
    pub synth_beta: f64,
    pub synth_censor_frac: f64,
    pub synth_hist_signal: f64,
    pub synth_prot_signal: f64,
    pub synth_time_scale: f64,
    // benchmark
    pub bench_lengths: Vec<usize>,
    pub bench_dim: usize,
    pub bench_co_queries: usize,
    pub bench_repetitions: usize,
    pub bench_warmup: usize,
    pub bench_max_quadratic_len: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_model: 256,
            n_bins: 4,
            n_liam: 2,
            n_giem: 1,
            d_state: 16,
            conv_width: 4,
            giem_expand: 2,
            mlp_hidden: 256,
            hist_dim: 512,
            prot_dim: 50,
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 100,
            accum_steps: 32,
            patience: 10,
            val_fraction: 0.2,
            disable_pfe: false,
            disable_liam: false,
            disable_giem: false,
            synth_cases: 500,
            synth_patches_min: 8,
            synth_patches_max: 16,
            synth_beta: 1.5,
            synth_censor_frac: 0.3,
            synth_hist_signal: 0.35,
            synth_prot_signal: 0.3,
            synth_time_scale: 36.0,
            bench_lengths: vec![1_000, 5_000, 10_000, 20_000, 50_000],
            bench_dim: 512,
            bench_co_queries: 50,
            bench_repetitions: 5,
            bench_warmup: 2,
            bench_max_quadratic_len: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = Self::default();
        let mut saw_mlp_hidden = false;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", ln + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let err = |e: String| format!("line {}: {key}: {e}", ln + 1);
            match key {
                "seed" => cfg.seed = parse(value).map_err(err)?,
                "d_model" => cfg.d_model = parse(value).map_err(err)?,
                "n_bins" => cfg.n_bins = parse(value).map_err(err)?,
                "n_liam" => cfg.n_liam = parse(value).map_err(err)?,
                "n_giem" => cfg.n_giem = parse(value).map_err(err)?,
                "d_state" => cfg.d_state = parse(value).map_err(err)?,
                "conv_width" => cfg.conv_width = parse(value).map_err(err)?,
                "giem_expand" => cfg.giem_expand = parse(value).map_err(err)?,
                "mlp_hidden" => {
                    cfg.mlp_hidden = parse(value).map_err(err)?;
                    saw_mlp_hidden = true;
                }
                "hist_dim" => cfg.hist_dim = parse(value).map_err(err)?,
                "prot_dim" => cfg.prot_dim = parse(value).map_err(err)?,
                "lr" => cfg.lr = parse(value).map_err(err)?,
                "weight_decay" => cfg.weight_decay = parse(value).map_err(err)?,
                "epochs" => cfg.epochs = parse(value).map_err(err)?,
                "accum_steps" => cfg.accum_steps = parse(value).map_err(err)?,
                "patience" => cfg.patience = parse(value).map_err(err)?,
                "val_fraction" => cfg.val_fraction = parse(value).map_err(err)?,
                "disable_pfe" => cfg.disable_pfe = parse_bool(value).map_err(err)?,
                "disable_liam" => cfg.disable_liam = parse_bool(value).map_err(err)?,
                "disable_giem" => cfg.disable_giem = parse_bool(value).map_err(err)?,
                "synth_cases" => cfg.synth_cases = parse(value).map_err(err)?,
                "synth_patches_min" => cfg.synth_patches_min = parse(value).map_err(err)?,
                "synth_patches_max" => cfg.synth_patches_max = parse(value).map_err(err)?,
                "synth_beta" => cfg.synth_beta = parse(value).map_err(err)?,
                "synth_censor_frac" => cfg.synth_censor_frac = parse(value).map_err(err)?,
                "synth_hist_signal" => cfg.synth_hist_signal = parse(value).map_err(err)?,
                "synth_prot_signal" => cfg.synth_prot_signal = parse(value).map_err(err)?,
                "synth_time_scale" => cfg.synth_time_scale = parse(value).map_err(err)?,
                "bench_lengths" => {
                    cfg.bench_lengths = value
                        .split(',')
                        .map(|v| parse(v.trim()))
                        .collect::<std::result::Result<_, _>>()
                        .map_err(err)?;
                }
                "bench_dim" => cfg.bench_dim = parse(value).map_err(err)?,
                "bench_co_queries" => cfg.bench_co_queries = parse(value).map_err(err)?,
                "bench_repetitions" => cfg.bench_repetitions = parse(value).map_err(err)?,
                "bench_warmup" => cfg.bench_warmup = parse(value).map_err(err)?,
                "bench_max_quadratic_len" => {
                    cfg.bench_max_quadratic_len = Some(parse(value).map_err(err)?)
                }
                other => return Err(format!("line {}: unknown key `{other}`", ln + 1)),
            }
        }
        if !saw_mlp_hidden {
            cfg.mlp_hidden = cfg.d_model;
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_bins: self.n_bins,
            n_liam: self.n_liam,
            n_giem: self.n_giem,
            d_state: self.d_state,
            conv_width: self.conv_width,
            giem_expand: self.giem_expand,
            liam_selective: true,
            use_skip: true,
            hist_dim: self.hist_dim,
            prot_dim: self.prot_dim,
            mlp_hidden: self.mlp_hidden,
            disable_pfe: self.disable_pfe,
            disable_liam: self.disable_liam,
            disable_giem: self.disable_giem,
        }
    }

    pub fn train_config(&self, fold: Option<usize>) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            accum_steps: self.accum_steps,
            patience: self.patience,
            seed: self.seed,
            val_fraction: self.val_fraction,
            fold,
            n_folds: 5,
        }
    }

    pub fn synth_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            cases: self.synth_cases,
            patches_min: self.synth_patches_min,
            patches_max: self.synth_patches_max,
            beta: self.synth_beta,
            censor_frac: self.synth_censor_frac,
            seed: self.seed,
            hist_dim: self.hist_dim,
            prot_dim: self.prot_dim,
            hist_signal: self.synth_hist_signal,
            prot_signal: self.synth_prot_signal,
            time_scale: self.synth_time_scale,
        }
    }

    pub fn bench_config(&self) -> mmsurv_bench::BenchConfig {
        mmsurv_bench::BenchConfig {
            lengths: self.bench_lengths.clone(),
            embed_dim: self.bench_dim,
            co_queries: self.bench_co_queries,
            repetitions: self.bench_repetitions,
            warmup: self.bench_warmup,
            seed: self.seed,
            max_quadratic_len: self.bench_max_quadratic_len,
            n_liam: self.n_liam,
            n_giem: self.n_giem,
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected boolean, got `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_protocol() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lr, 2e-4);
        assert_eq!(cfg.weight_decay, 1e-5);
        assert_eq!(cfg.accum_steps, 32);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.n_liam, 2);
        assert_eq!(cfg.n_giem, 1);
        assert_eq!(cfg.n_bins, 4);
    }

    #[test]
    fn parses_keys_comments_and_lists() {
        let cfg = RunConfig::parse(
            "# comment\nseed = 7\nd_model = 32  # trailing\nbench_lengths = 10, 20, 40\ndisable_liam = true\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.bench_lengths, vec![10, 20, 40]);
        assert!(cfg.disable_liam);
        // mlp_hidden follows d_model unless set
        assert_eq!(cfg.mlp_hidden, 32);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("bogus = 1\n").is_err());
        assert!(RunConfig::parse("epochs = many\n").is_err());
        assert!(RunConfig::parse("no_equals_here\n").is_err());
    }
}
