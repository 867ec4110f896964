//! Checkpoint container: a directory of named parameter blobs in the
//! feature-bag format (modality tag `Parameter`) plus a JSON metadata file
//! listing names, shapes, and hyperparameters. Parameter values pass through
//! the on-disk 32-bit width.

use super::{io_err, read_feature_bag, write_feature_bag, DataError, Modality, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub params: Vec<ParamInfo>,
    pub hyper: serde_json::Value,
}

pub fn save_checkpoint(
    dir: &Path,
    named: &[(String, &Tensor)],
    hyper: &serde_json::Value,
) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|e| io_err(&params_dir, e))?;
    let mut infos = Vec::with_capacity(named.len());
    for (name, tensor) in named {
        write_feature_bag(
            &params_dir.join(format!("{name}.fbag")),
            tensor,
            Modality::Parameter,
        )?;
        infos.push(ParamInfo {
            name: name.clone(),
            rows: tensor.rows(),
            cols: tensor.cols(),
        });
    }
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        params: infos,
        hyper: hyper.clone(),
    };
    let meta_path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| DataError::Config(format!("metadata serialization: {e}")))?;
    fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let meta_path = dir.join("metadata.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| DataError::Config(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(DataError::Config(format!(
            "{}: unsupported checkpoint version {} (expected {})",
            meta_path.display(),
            meta.format_version,
            CHECKPOINT_VERSION
        )));
    }
    let mut params = Vec::with_capacity(meta.params.len());
    for info in &meta.params {
        let path = dir.join("params").join(format!("{}.fbag", info.name));
        let (tensor, modality) = read_feature_bag(&path)?;
        if modality != Modality::Parameter {
            return Err(DataError::Config(format!(
                "{}: expected parameter blob, found {modality:?}",
                path.display()
            )));
        }
        if tensor.shape() != (info.rows, info.cols) {
            return Err(DataError::Config(format!(
                "{}: shape {:?} does not match metadata {}x{}",
                path.display(),
                tensor.shape(),
                info.rows,
                info.cols
            )));
        }
        params.push((info.name.clone(), tensor));
    }
    Ok((params, meta.hyper))
}
