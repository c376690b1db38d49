//! Parameter checkpoints: one tensor file per parameter plus a JSON manifest
//! naming shapes and roles.

use std::fs;
use std::path::{Path, PathBuf};

use neurodecode_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Role, RunningStats};
use crate::corpus::tensor_io::{read_tensor, write_tensor};
use crate::corpus::GridGeometry;
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    grid: GridGeometry,
    params: Vec<Entry>,
    bn_running: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    role: Role,
    file: String,
}

/// Writes the model under `dir`. Values are stored as 32-bit floats.
pub fn write_checkpoint(model: &Model, dir: &Path) -> Result<PathBuf> {
    let sub = dir.join("params");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut params = Vec::new();
    for p in model.params.iter() {
        let file = format!("params/{}.tensor", p.name);
        let data: Vec<f32> = p.value.data().iter().map(|&v| v as f32).collect();
        write_tensor(&dir.join(&file), p.value.shape(), &data)?;
        params.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            role: p.role,
            file,
        });
    }
    let m = Manifest {
        config: model.config.clone(),
        grid: model.grid,
        params,
        bn_running: model
            .bn_running
            .iter()
            .map(|r| (r.mean.clone(), r.var.clone()))
            .collect(),
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m).expect("serializable")).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_checkpoint(manifest: &Path) -> Result<Model> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let bad = |detail: String| Error::Manifest {
        path: manifest.to_path_buf(),
        detail,
    };
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut model = Model::new(m.config, m.grid, 0)?;
    if m.params.len() != model.params.len() || m.bn_running.len() != model.bn_running.len() {
        return Err(bad("parameter list does not match the architecture".into()));
    }
    for e in m.params {
        let (shape, data) = read_tensor(&base.join(&e.file))?;
        let slot = model
            .params
            .get_mut(&e.name)
            .ok_or_else(|| bad(format!("unknown parameter {}", e.name)))?;
        if shape != e.shape || shape != slot.value.shape() || e.role != slot.role {
            return Err(bad(format!("parameter {} shape or role mismatch", e.name)));
        }
        slot.value = Tensor::new(shape, data.into_iter().map(f64::from).collect())?;
    }
    model.bn_running = m
        .bn_running
        .into_iter()
        .map(|(mean, var)| RunningStats { mean, var })
        .collect();
    Ok(model)
}
