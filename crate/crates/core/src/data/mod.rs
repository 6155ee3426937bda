//! Multimodal samples, the synthetic dataset generator, base/novel splits and
//! n-shot episodes.

mod io;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub use synth::{synth_dataset, synth_prototypes, SynthSpec};

use crate::error::{Error, Result};
use crate::rng;

/// Image geometry, stored height × width × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One (image, text embedding, label) triple. The image is HWC with values in
/// [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub text_embedding: Vec<f32>,
    pub label: u32,
}

/// HWC → CHW.
pub fn hwc_to_chw(image: &[f32], shape: ImageShape, out: &mut Vec<f32>) {
    let ImageShape {
        height: h,
        width: w,
        channels: c,
    } = shape;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(image[(y * w + x) * c + ch]);
            }
        }
    }
}

/// CHW → HWC.
pub fn chw_to_hwc(planes: &[f32], shape: ImageShape) -> Vec<f32> {
    let ImageShape {
        height: h,
        width: w,
        channels: c,
    } = shape;
    let mut out = vec![0.0; shape.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + ch] = planes[(ch * h + y) * w + x];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Sorted, duplicate-free class identifiers.
    pub classes: Vec<u32>,
    pub image_shape: ImageShape,
    pub embed_dim: usize,
}

impl Dataset {
    /// Builds a dataset and checks every sample against its declared shape.
    pub fn new(
        samples: Vec<Sample>,
        classes: Vec<u32>,
        image_shape: ImageShape,
        embed_dim: usize,
    ) -> Result<Self> {
        let set: BTreeSet<u32> = classes.iter().copied().collect();
        if set.len() != classes.len() {
            return Err(Error::Config("duplicate class identifiers".into()));
        }
        let ds = Dataset {
            samples,
            classes: set.into_iter().collect(),
            image_shape,
            embed_dim,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_shape.is_empty() || self.embed_dim == 0 {
            return Err(Error::Config(
                "image shape and embedding dimension must be positive".into(),
            ));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.len() != self.image_shape.len() {
                return Err(Error::Shape(format!(
                    "sample {i}: image has {} values, expected {}",
                    s.image.len(),
                    self.image_shape.len()
                )));
            }
            if s.text_embedding.len() != self.embed_dim {
                return Err(Error::Shape(format!(
                    "sample {i}: embedding has {} values, expected {}",
                    s.text_embedding.len(),
                    self.embed_dim
                )));
            }
            if s.image.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Numerical(format!(
                    "sample {i}: image value outside [-1, 1]"
                )));
            }
            if s.text_embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "sample {i}: non-finite embedding"
                )));
            }
            if self.classes.binary_search(&s.label).is_err() {
                return Err(Error::ClassMismatch(format!(
                    "sample {i}: label {} not in class set",
                    s.label
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of the samples labelled `class`, in dataset order.
    pub fn indices_of(&self, class: u32) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub base_classes: Vec<u32>,
    pub novel_classes: Vec<u32>,
    pub seed: u64,
}

/// Seeded partition of the class set into base and novel classes.
pub fn make_split(dataset: &Dataset, base_fraction: f64, seed: u64) -> Result<SplitConfig> {
    let k = dataset.classes.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "split needs at least 2 classes, dataset has {k}"
        )));
    }
    if !(base_fraction > 0.0 && base_fraction < 1.0) {
        return Err(Error::Config(format!(
            "base_fraction {base_fraction} not in (0, 1)"
        )));
    }
    let n_base = ((base_fraction * k as f64).round() as usize).clamp(1, k - 1);
    let mut order = dataset.classes.clone();
    order.shuffle(&mut rng::rng(seed));
    let mut base_classes = order[..n_base].to_vec();
    let mut novel_classes = order[n_base..].to_vec();
    base_classes.sort_unstable();
    novel_classes.sort_unstable();
    Ok(SplitConfig {
        base_classes,
        novel_classes,
        seed,
    })
}

/// Sample identities of an episode; resolvable against its dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeIndex {
    pub n_shot: usize,
    pub query_per_class: usize,
    pub novel_classes: Vec<u32>,
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: EpisodeIndex,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
    pub image_shape: ImageShape,
    pub embed_dim: usize,
}

impl Episode {
    pub fn n_shot(&self) -> usize {
        self.index.n_shot
    }

    pub fn novel_classes(&self) -> &[u32] {
        &self.index.novel_classes
    }

    /// Position of `label` in the episode's label space.
    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.index.novel_classes.binary_search(&label).ok()
    }

    /// Materializes an episode index against `dataset`.
    pub fn resolve(dataset: &Dataset, index: EpisodeIndex) -> Result<Self> {
        let fetch = |ids: &[usize]| -> Result<Vec<Sample>> {
            ids.iter()
                .map(|&i| {
                    let s = dataset.samples.get(i).ok_or_else(|| {
                        Error::Config(format!("episode refers to missing sample {i}"))
                    })?;
                    if index.novel_classes.binary_search(&s.label).is_err() {
                        return Err(Error::ClassMismatch(format!(
                            "sample {i} is not from a novel class"
                        )));
                    }
                    Ok(s.clone())
                })
                .collect()
        };
        let support = fetch(&index.support_ids)?;
        let query = fetch(&index.query_ids)?;
        Ok(Episode {
            index,
            support,
            query,
            image_shape: dataset.image_shape,
            embed_dim: dataset.embed_dim,
        })
    }
}

/// Draws `n_shot` support and `query_per_class` disjoint query samples per
/// novel class.
pub fn sample_episode(
    dataset: &Dataset,
    split: &SplitConfig,
    n_shot: usize,
    query_per_class: usize,
    seed: u64,
) -> Result<Episode> {
    if n_shot == 0 || query_per_class == 0 {
        return Err(Error::Config(
            "n_shot and query_per_class must be positive".into(),
        ));
    }
    if split.novel_classes.is_empty() {
        return Err(Error::Empty("split has no novel classes".into()));
    }
    let mut r = rng::rng(seed);
    let mut support_ids = Vec::new();
    let mut query_ids = Vec::new();
    let mut novel = split.novel_classes.clone();
    novel.sort_unstable();
    for &class in &novel {
        let mut ids = dataset.indices_of(class);
        let required = n_shot + query_per_class;
        if ids.len() < required {
            return Err(Error::InsufficientSamples {
                class,
                available: ids.len(),
                required,
            });
        }
        ids.shuffle(&mut r);
        support_ids.extend_from_slice(&ids[..n_shot]);
        query_ids.extend_from_slice(&ids[n_shot..required]);
    }
    Episode::resolve(
        dataset,
        EpisodeIndex {
            n_shot,
            query_per_class,
            novel_classes: novel,
            support_ids,
            query_ids,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(num_classes: usize, per_class: usize) -> Dataset {
        synth_dataset(&SynthSpec {
            num_classes,
            samples_per_class: per_class,
            image_shape: ImageShape::new(8, 8, 3),
            embed_dim: 4,
            noise_level: 0.1,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn split_cardinality_and_disjointness() {
        let ds = small(10, 2);
        let s = make_split(&ds, 0.8, 0).unwrap();
        assert_eq!(s.base_classes.len(), 8);
        assert_eq!(s.novel_classes.len(), 2);
        assert!(s.base_classes.iter().all(|c| !s.novel_classes.contains(c)));
        assert_eq!(s, make_split(&ds, 0.8, 0).unwrap());
    }

    #[test]
    fn split_clamps_to_one_per_side() {
        let ds = small(2, 2);
        let s = make_split(&ds, 0.99, 3).unwrap();
        assert_eq!((s.base_classes.len(), s.novel_classes.len()), (1, 1));
        let s = make_split(&ds, 0.01, 3).unwrap();
        assert_eq!((s.base_classes.len(), s.novel_classes.len()), (1, 1));
    }

    #[test]
    fn split_rejects_single_class() {
        let ds = small(2, 2);
        let one = Dataset::new(
            ds.samples
                .iter()
                .filter(|s| s.label == 0)
                .cloned()
                .collect(),
            vec![0],
            ds.image_shape,
            ds.embed_dim,
        )
        .unwrap();
        assert!(matches!(make_split(&one, 0.5, 0), Err(Error::Config(_))));
        assert!(matches!(make_split(&ds, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn episode_cardinality() {
        let ds = small(10, 8);
        let split = make_split(&ds, 0.8, 0).unwrap();
        let ep = sample_episode(&ds, &split, 1, 5, 4).unwrap();
        assert_eq!(ep.support.len(), 2);
        assert_eq!(ep.query.len(), 10);
        assert!(ep
            .support
            .iter()
            .all(|s| split.novel_classes.contains(&s.label)));
        for id in &ep.index.support_ids {
            assert!(!ep.index.query_ids.contains(id));
        }
        assert_eq!(ep, sample_episode(&ds, &split, 1, 5, 4).unwrap());
    }

    #[test]
    fn episode_boundary_and_shortfall() {
        let ds = small(4, 6);
        let split = make_split(&ds, 0.5, 0).unwrap();
        assert!(sample_episode(&ds, &split, 1, 5, 0).is_ok());
        match sample_episode(&ds, &split, 6, 5, 0) {
            Err(Error::InsufficientSamples {
                class,
                available,
                required,
            }) => {
                assert!(split.novel_classes.contains(&class));
                assert_eq!((available, required), (6, 11));
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn layout_conversion_round_trips() {
        let shape = ImageShape::new(2, 3, 2);
        let hwc: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut chw = Vec::new();
        hwc_to_chw(&hwc, shape, &mut chw);
        assert_eq!(chw[0..6], [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(chw_to_hwc(&chw, shape), hwc);
    }
}
