use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{Arm, ClsHyper};
use crate::data::{load_dataset, synth_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::selection::ScoringRule;
use crate::tcgan::{GanArch, GanHyper};

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Regenerated per experiment seed; `seed` is replaced by the seed's data
    /// stream.
    Synthetic(SynthSpec),
    /// A dataset directory, shared by every seed.
    Directory { path: PathBuf },
}

impl DataSource {
    pub fn load(&self, data_seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => synth_dataset(&SynthSpec {
                seed: data_seed,
                ..spec.clone()
            }),
            DataSource::Directory { path } => load_dataset(path),
        }
    }

    /// The source with the seed actually used for `data_seed`.
    pub fn effective(&self, data_seed: u64) -> DataSource {
        match self {
            DataSource::Synthetic(spec) => DataSource::Synthetic(SynthSpec {
                seed: data_seed,
                ..spec.clone()
            }),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Candidates generated per novel class.
    pub pool_size: usize,
    /// Hallucinated samples kept per class; one augmented cell per value.
    pub m: Vec<usize>,
    pub rule: ScoringRule,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            pool_size: 256,
            m: vec![30],
            rule: ScoringRule::ClassOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub base_fraction: f64,
    pub query_per_class: usize,
    pub gan: GanHyper,
    pub selection: SelectionParams,
    pub classifier: ClsHyper,
    pub n_shot: Vec<usize>,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthSpec::default()),
            base_fraction: 0.8,
            query_per_class: 20,
            gan: GanHyper::default(),
            selection: SelectionParams::default(),
            classifier: ClsHyper::default(),
            n_shot: vec![1, 2, 5, 10],
            seeds: vec![0, 1, 2, 3, 4],
            arms: vec![Arm::RealOnly, Arm::Augmented],
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if !(self.base_fraction > 0.0 && self.base_fraction < 1.0) {
            return Err(Error::Config(format!(
                "base_fraction {} not in (0, 1)",
                self.base_fraction
            )));
        }
        if self.query_per_class == 0 {
            return Err(Error::Config("query_per_class must be positive".into()));
        }
        if self.n_shot.is_empty() || self.n_shot.contains(&0) {
            return Err(Error::Config("n_shot must list positive values".into()));
        }
        if self.seeds.is_empty() || self.arms.is_empty() {
            return Err(Error::Config("seeds and arms must be non-empty".into()));
        }
        for (name, v) in [("n_shot", &self.n_shot), ("m", &self.selection.m)] {
            let mut sorted = v.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != v.len() {
                return Err(Error::Config(format!("{name} values must be distinct")));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.arms.contains(&Arm::Augmented) {
            if self.selection.m.is_empty() {
                return Err(Error::Config(
                    "augmented arm needs at least one m value".into(),
                ));
            }
            if let Some(&m) = self
                .selection
                .m
                .iter()
                .find(|&&m| m > self.selection.pool_size)
            {
                return Err(Error::Config(format!(
                    "m = {m} exceeds pool_size {}",
                    self.selection.pool_size
                )));
            }
            if self.selection.pool_size == 0 {
                return Err(Error::Config("pool_size must be positive".into()));
            }
        }
        self.gan.validate()?;
        if let (DataSource::Synthetic(spec), true) =
            (&self.data, self.arms.contains(&Arm::Augmented))
        {
            GanArch {
                image_shape: spec.image_shape,
                embed_dim: spec.embed_dim,
                noise_dim: self.gan.noise_dim,
                num_classes: spec.num_classes,
                widths: self.gan.widths.clone(),
            }
            .validate()?;
        }
        self.classifier.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seeds = [3]
            n_shot = [1]
            [selection]
            m = [0, 10]
            [gan]
            steps_pretrain = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.selection.pool_size, 256);
        assert_eq!(cfg.gan.steps_pretrain, 5);
        assert_eq!(cfg.gan.lr_d, 2e-4);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig {
            seeds: vec![9],
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_invalid() {
        let bad = ExperimentConfig {
            selection: SelectionParams {
                m: vec![300],
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            n_shot: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
