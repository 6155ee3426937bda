//! Directory format: `manifest.json`, `images.f32`, `embeds.f32`, `labels.u32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::io_util::{
    atomic_write, f32_to_le_bytes, read_f32_blob, read_json, read_u32_blob, u32_to_le_bytes,
    write_json,
};

pub const DATASET_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    /// `[height, width, channels]`
    pub image_shape: [usize; 3],
    pub embed_dim: usize,
    pub classes: Vec<u32>,
    pub sample_count: usize,
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::with_capacity(dataset.len() * dataset.image_shape.len());
    let mut embeds = Vec::with_capacity(dataset.len() * dataset.embed_dim);
    let mut labels = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        images.extend_from_slice(&s.image);
        embeds.extend_from_slice(&s.text_embedding);
        labels.push(s.label);
    }
    atomic_write(&dir.join("images.f32"), &f32_to_le_bytes(&images))?;
    atomic_write(&dir.join("embeds.f32"), &f32_to_le_bytes(&embeds))?;
    atomic_write(&dir.join("labels.u32"), &u32_to_le_bytes(&labels))?;
    let shape = dataset.image_shape;
    write_json(
        &dir.join("manifest.json"),
        &DatasetManifest {
            format_version: DATASET_FORMAT_VERSION.into(),
            image_shape: [shape.height, shape.width, shape.channels],
            embed_dim: dataset.embed_dim,
            classes: dataset.classes.clone(),
            sample_count: dataset.len(),
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let m: DatasetManifest = read_json(&manifest_path)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format version {:?}", m.format_version),
        ));
    }
    let shape = ImageShape::new(m.image_shape[0], m.image_shape[1], m.image_shape[2]);
    let n = m.sample_count;
    let images = read_f32_blob(&dir.join("images.f32"), n * shape.len())?;
    let embeds = read_f32_blob(&dir.join("embeds.f32"), n * m.embed_dim)?;
    let labels = read_u32_blob(&dir.join("labels.u32"), n)?;
    let samples = (0..n)
        .map(|i| Sample {
            image: images[i * shape.len()..(i + 1) * shape.len()].to_vec(),
            text_embedding: embeds[i * m.embed_dim..(i + 1) * m.embed_dim].to_vec(),
            label: labels[i],
        })
        .collect();
    Dataset::new(samples, m.classes, shape, m.embed_dim)
        .map_err(|e| Error::format(dir, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};

    fn spec() -> SynthSpec {
        SynthSpec {
            num_classes: 3,
            samples_per_class: 4,
            image_shape: ImageShape::new(8, 8, 3),
            embed_dim: 5,
            noise_level: 0.2,
            seed: 11,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(&spec()).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rejects_truncated_blob() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&synth_dataset(&spec()).unwrap(), dir.path()).unwrap();
        let path = dir.path().join("embeds.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rejects_manifest_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&synth_dataset(&spec()).unwrap(), dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut m: DatasetManifest = read_json(&mpath).unwrap();
        m.sample_count += 1;
        write_json(&mpath, &m).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rejects_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&synth_dataset(&spec()).unwrap(), dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut m: DatasetManifest = read_json(&mpath).unwrap();
        m.classes = vec![0, 1];
        write_json(&mpath, &m).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
