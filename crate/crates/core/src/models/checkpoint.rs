//! Checkpoints: a directory of named tensor containers plus a JSON manifest
//! carrying the architecture config, seed, and step.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::tensor::Tensor;

use super::{StudentConfig, StudentNet, TeacherConfig, TeacherEnsemble};

pub const CHECKPOINT_FORMAT: &str = "sakdn-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    BadManifest { path: String, detail: String },
    #[error("{path}: manifest kind {got:?}, expected {expected:?}")]
    WrongKind {
        path: String,
        got: String,
        expected: String,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    kind: String,
    seed: u64,
    step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    modalities: Option<usize>,
    config: serde_json::Value,
    /// Parameter name → tensor file name.
    tensors: BTreeMap<String, String>,
}

fn tensor_file_name(param: &str) -> String {
    format!("{}.tnsr", param.replace('/', "__"))
}

fn write_params(dir: &Path, params: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, String>> {
    let mut index = BTreeMap::new();
    for (name, tensor) in params {
        let file = tensor_file_name(name);
        io::write_tensor(&dir.join(&file), tensor)?;
        index.insert(name.clone(), file);
    }
    Ok(index)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, body).map_err(|source| CheckpointError::File {
        path: path.display().to_string(),
        source,
    })
}

fn read_manifest(dir: &Path, expected_kind: &str) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let body = fs::read_to_string(&path).map_err(|source| CheckpointError::File {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&body).map_err(|e| CheckpointError::BadManifest {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::BadManifest {
            path: path.display().to_string(),
            detail: format!("unsupported format {:?}", manifest.format),
        });
    }
    if manifest.kind != expected_kind {
        return Err(CheckpointError::WrongKind {
            path: path.display().to_string(),
            got: manifest.kind,
            expected: expected_kind.to_string(),
        });
    }
    Ok(manifest)
}

fn read_params(dir: &Path, index: &BTreeMap<String, String>) -> Result<BTreeMap<String, Tensor>> {
    let mut params = BTreeMap::new();
    for (name, file) in index {
        params.insert(name.clone(), io::read_tensor(&dir.join(file))?);
    }
    Ok(params)
}

pub fn save_teachers(dir: &Path, ensemble: &TeacherEnsemble, step: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CheckpointError::File {
        path: dir.display().to_string(),
        source,
    })?;
    let tensors = write_params(dir, &ensemble.params)?;
    write_manifest(
        dir,
        &Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: "teachers".to_string(),
            seed: ensemble.seed,
            step,
            modalities: Some(ensemble.modalities),
            config: serde_json::to_value(&ensemble.config).expect("config serializes"),
            tensors,
        },
    )
}

pub fn load_teachers(dir: &Path) -> Result<TeacherEnsemble> {
    let manifest = read_manifest(dir, "teachers")?;
    let config: TeacherConfig =
        serde_json::from_value(manifest.config).map_err(|e| CheckpointError::BadManifest {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
    Ok(TeacherEnsemble {
        config,
        modalities: manifest.modalities.unwrap_or(1),
        params: read_params(dir, &manifest.tensors)?,
        seed: manifest.seed,
    })
}

pub fn save_student(dir: &Path, net: &StudentNet, step: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CheckpointError::File {
        path: dir.display().to_string(),
        source,
    })?;
    let tensors = write_params(dir, &net.params)?;
    write_manifest(
        dir,
        &Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: "student".to_string(),
            seed: net.seed,
            step,
            modalities: None,
            config: serde_json::to_value(&net.config).expect("config serializes"),
            tensors,
        },
    )
}

pub fn load_student(dir: &Path) -> Result<StudentNet> {
    let manifest = read_manifest(dir, "student")?;
    let config: StudentConfig =
        serde_json::from_value(manifest.config).map_err(|e| CheckpointError::BadManifest {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
    Ok(StudentNet {
        config,
        params: read_params(dir, &manifest.tensors)?,
        seed: manifest.seed,
    })
}
