//! GAN checkpoint directory: `model_manifest.json` plus one little-endian f32
//! blob per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GanArch, GanModel, Phase};
use crate::checkpoint::{load_tensors, save_tensors, TensorEntry};
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::nn::Module;
use crate::rng;

pub const GAN_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanManifest {
    pub format_version: String,
    pub phase: Phase,
    pub arch: GanArch,
    pub noise_dim: usize,
    pub embed_dim: usize,
    pub image_shape: ImageShape,
    pub num_classes: usize,
    pub classes: Vec<u32>,
    pub generator: Vec<TensorEntry>,
    pub discriminator: Vec<TensorEntry>,
}

pub fn save_gan(model: &GanModel<f32>, dir: &Path) -> Result<()> {
    let generator = save_tensors(dir, &model.generator.params())?;
    let discriminator = save_tensors(dir, &model.discriminator.params())?;
    write_json(
        &dir.join("model_manifest.json"),
        &GanManifest {
            format_version: GAN_FORMAT_VERSION.into(),
            phase: model.phase,
            arch: model.arch.clone(),
            noise_dim: model.arch.noise_dim,
            embed_dim: model.arch.embed_dim,
            image_shape: model.arch.image_shape,
            num_classes: model.arch.num_classes,
            classes: model.classes.clone(),
            generator,
            discriminator,
        },
    )
}

pub fn load_gan(dir: &Path) -> Result<GanModel<f32>> {
    let path = dir.join("model_manifest.json");
    let m: GanManifest = read_json(&path)?;
    if m.format_version != GAN_FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported format version {:?}", m.format_version),
        ));
    }
    if m.noise_dim != m.arch.noise_dim
        || m.embed_dim != m.arch.embed_dim
        || m.image_shape != m.arch.image_shape
        || m.num_classes != m.arch.num_classes
    {
        return Err(Error::format(
            &path,
            "top-level dimensions disagree with the architecture",
        ));
    }
    let mut model = GanModel::new(m.arch.clone(), m.classes.clone(), &mut rng::rng(0))
        .map_err(|e| Error::format(&path, e.to_string()))?;
    load_tensors(dir, &m.generator, model.generator.params_mut())?;
    load_tensors(dir, &m.discriminator, model.discriminator.params_mut())?;
    model.phase = m.phase;
    Ok(model)
}
