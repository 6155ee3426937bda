//! Named-tensor blobs shared by the model checkpoint formats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{atomic_write, f32_to_le_bytes, read_f32_blob};
use crate::nn::Param;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

pub fn save_tensors(dir: &Path, params: &[&Param<f32>]) -> Result<Vec<TensorEntry>> {
    params
        .iter()
        .map(|p| {
            let file = format!("{}.f32", p.name);
            atomic_write(&dir.join(&file), &f32_to_le_bytes(&p.value))?;
            Ok(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                file,
            })
        })
        .collect()
}

/// Fills `params` in order, checking names and shapes against the manifest
/// entries and blob sizes against the shapes.
pub fn load_tensors(
    dir: &Path,
    entries: &[TensorEntry],
    params: Vec<&mut Param<f32>>,
) -> Result<()> {
    if entries.len() != params.len() {
        return Err(Error::format(
            dir,
            format!(
                "manifest lists {} tensors, architecture has {}",
                entries.len(),
                params.len()
            ),
        ));
    }
    for (entry, p) in entries.iter().zip(params) {
        if entry.name != p.name || entry.shape != p.shape {
            return Err(Error::format(
                dir,
                format!(
                    "tensor {} {:?} does not match architecture tensor {} {:?}",
                    entry.name, entry.shape, p.name, p.shape
                ),
            ));
        }
        p.value = read_f32_blob(&dir.join(&entry.file), p.len())?;
    }
    Ok(())
}
