//! Self-paced sample selection: hallucinate a candidate pool per novel class
//! with G*, score every candidate with D*, keep the top-m per class, and
//! concatenate them with the real support set.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{hwc_to_chw, load_dataset, save_dataset, Dataset, Episode, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_json, write_json};
use crate::rng;
use crate::scalar::{sigmoid, softmax};
use crate::tcgan::{generate_batch, sample_noise, GanModel};

const GENERATION_BATCH: usize = 64;

/// How D*'s two confidences combine into the ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringRule {
    /// The class posterior alone.
    #[default]
    ClassOnly,
    /// Realism score times class posterior.
    RealismGated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub realism_score: f64,
    pub class_posterior: f64,
    pub combined_score: f64,
}

/// Scores from raw D outputs; `class_index` indexes `class_logits`.
pub fn scores_from_logits(
    realism_logit: f64,
    class_logits: &[f64],
    class_index: usize,
    rule: ScoringRule,
) -> Result<Scores> {
    if class_index >= class_logits.len() {
        return Err(Error::LabelOutOfRange {
            label: class_index,
            classes: class_logits.len(),
        });
    }
    if !realism_logit.is_finite() || class_logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite discriminator output".into()));
    }
    let realism_score = sigmoid(realism_logit);
    let class_posterior = softmax(class_logits)[class_index];
    let combined_score = match rule {
        ScoringRule::ClassOnly => class_posterior,
        ScoringRule::RealismGated => realism_score * class_posterior,
    };
    Ok(Scores {
        realism_score,
        class_posterior,
        combined_score,
    })
}

/// Scores a batch of HWC images against their intended classes with D*.
pub fn score_images(
    model: &GanModel<f32>,
    images: &[&[f32]],
    texts: &[&[f32]],
    intended: &[u32],
    rule: ScoringRule,
) -> Result<Vec<Scores>> {
    let arch = &model.arch;
    if images.len() != texts.len() || images.len() != intended.len() {
        return Err(Error::Shape(
            "images, texts and labels differ in length".into(),
        ));
    }
    let mut out = Vec::with_capacity(images.len());
    for start in (0..images.len()).step_by(GENERATION_BATCH) {
        let end = (start + GENERATION_BATCH).min(images.len());
        let n = end - start;
        let mut chw = Vec::with_capacity(n * arch.image_shape.len());
        let mut text = Vec::with_capacity(n * arch.embed_dim);
        for i in start..end {
            if images[i].len() != arch.image_shape.len() || texts[i].len() != arch.embed_dim {
                return Err(Error::Shape(format!(
                    "candidate {i} does not match the model dimensions"
                )));
            }
            hwc_to_chw(images[i], arch.image_shape, &mut chw);
            text.extend_from_slice(texts[i]);
        }
        let d = model.discriminator.forward(&chw, &text, n);
        let k = d.num_classes;
        for (j, i) in (start..end).enumerate() {
            let idx = model
                .class_index(intended[i])
                .ok_or(Error::LabelOutOfRange {
                    label: intended[i] as usize,
                    classes: k,
                })?;
            let logits: Vec<f64> = d.class_logits[j * k..(j + 1) * k]
                .iter()
                .map(|&v| v as f64)
                .collect();
            out.push(scores_from_logits(
                d.realism_logits[j] as f64,
                &logits,
                idx,
                rule,
            )?);
        }
    }
    Ok(out)
}

/// Scores one candidate.
pub fn score_candidate(
    model: &GanModel<f32>,
    image: &[f32],
    text_embedding: &[f32],
    intended_class: u32,
    rule: ScoringRule,
) -> Result<Scores> {
    Ok(score_images(model, &[image], &[text_embedding], &[intended_class], rule)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(skip)]
    pub image: Vec<f32>,
    #[serde(skip)]
    pub text_embedding: Vec<f32>,
    #[serde(rename = "class")]
    pub intended_class: u32,
    /// Index into the episode support of the conditioning embedding.
    pub source_embedding_index: usize,
    pub z_seed: u64,
    pub realism_score: f64,
    pub class_posterior: f64,
    pub combined_score: f64,
    pub generation_index: usize,
}

/// Descending score, ties by ascending generation index.
fn rank_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.combined_score
        .total_cmp(&a.combined_score)
        .then(a.generation_index.cmp(&b.generation_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub pool_size: usize,
    pub image_shape: ImageShape,
    pub embed_dim: usize,
    pub rule: ScoringRule,
    /// Candidates per class identifier, in generation order until sorted.
    pub per_class: BTreeMap<u32, Vec<Candidate>>,
}

impl CandidatePool {
    /// Sorts every class list into selection order.
    pub fn sort(&mut self) {
        for list in self.per_class.values_mut() {
            list.sort_by(rank_order);
        }
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.per_class.values().flatten()
    }
}

/// Draws `pool_size` (embedding, z) pairs per novel class, generates with G*
/// and scores with D*.
pub fn build_pool(
    model: &GanModel<f32>,
    episode: &Episode,
    pool_size: usize,
    seed: u64,
    rule: ScoringRule,
) -> Result<CandidatePool> {
    if pool_size == 0 {
        return Err(Error::Config("pool_size must be positive".into()));
    }
    if episode.support.is_empty() {
        return Err(Error::Empty("episode support is empty".into()));
    }
    let arch = &model.arch;
    let mut per_class = BTreeMap::new();
    for &class in episode.novel_classes() {
        let sources: Vec<usize> = episode
            .support
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if sources.is_empty() {
            return Err(Error::ClassMismatch(format!(
                "class {class} has no support sample"
            )));
        }
        let class_seed = rng::derive(seed, class as u64);
        let mut pick = rng::rng(class_seed);
        let mut list = Vec::with_capacity(pool_size);
        for start in (0..pool_size).step_by(GENERATION_BATCH) {
            let n = GENERATION_BATCH.min(pool_size - start);
            let mut text = Vec::with_capacity(n * arch.embed_dim);
            let mut z = Vec::with_capacity(n * arch.noise_dim);
            let mut meta = Vec::with_capacity(n);
            for g in start..start + n {
                let src = sources[pick.random_range(0..sources.len())];
                let z_seed = rng::derive(class_seed, g as u64 + 1);
                text.extend_from_slice(&episode.support[src].text_embedding);
                z.extend(sample_noise::<f32>(
                    &mut rng::rng(z_seed),
                    1,
                    arch.noise_dim,
                ));
                meta.push((g, src, z_seed));
            }
            let images = generate_batch(model, &text, &z, n)?;
            let imgs: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
            let texts: Vec<&[f32]> = text.chunks_exact(arch.embed_dim).collect();
            let scores = score_images(model, &imgs, &texts, &vec![class; n], rule)?;
            for (((g, src, z_seed), image), s) in meta.into_iter().zip(images).zip(scores) {
                list.push(Candidate {
                    image,
                    text_embedding: episode.support[src].text_embedding.clone(),
                    intended_class: class,
                    source_embedding_index: src,
                    z_seed,
                    realism_score: s.realism_score,
                    class_posterior: s.class_posterior,
                    combined_score: s.combined_score,
                    generation_index: g,
                });
            }
        }
        per_class.insert(class, list);
    }
    Ok(CandidatePool {
        pool_size,
        image_shape: arch.image_shape,
        embed_dim: arch.embed_dim,
        rule,
        per_class,
    })
}

/// The `m` best candidates of every class in non-increasing score order.
/// `m = 0` yields empty lists.
pub fn select_top_m(pool: &CandidatePool, m: usize) -> Result<BTreeMap<u32, Vec<Candidate>>> {
    pool.per_class
        .iter()
        .map(|(&class, list)| {
            if m > list.len() {
                return Err(Error::SelectionTooLarge {
                    class,
                    m,
                    pool: list.len(),
                });
            }
            let mut order: Vec<&Candidate> = list.iter().collect();
            order.sort_by(|a, b| rank_order(a, b));
            Ok((class, order.into_iter().take(m).cloned().collect()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Hallucinated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub real: Vec<Sample>,
    pub hallucinated: Vec<Sample>,
    pub classes: Vec<u32>,
    pub image_shape: ImageShape,
    pub embed_dim: usize,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.real.len() + self.hallucinated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, Provenance)> {
        self.real.iter().map(|s| (s, Provenance::Real)).chain(
            self.hallucinated
                .iter()
                .map(|s| (s, Provenance::Hallucinated)),
        )
    }

    /// Flattens into a dataset over the episode classes plus per-sample
    /// provenance, real samples first.
    pub fn to_dataset(&self) -> Result<(Dataset, Vec<Provenance>)> {
        let ds = Dataset::new(
            self.real
                .iter()
                .chain(&self.hallucinated)
                .cloned()
                .collect(),
            self.classes.clone(),
            self.image_shape,
            self.embed_dim,
        )?;
        Ok((ds, self.iter().map(|(_, p)| p).collect()))
    }
}

/// Concatenates the real support with the selected candidates, relabelled
/// with their intended class. An empty selection yields the real-only set.
pub fn build_augmented(
    episode: &Episode,
    selected: &BTreeMap<u32, Vec<Candidate>>,
) -> Result<AugmentedDataset> {
    let novel = episode.novel_classes();
    if !selected.is_empty() {
        let keys: Vec<u32> = selected.keys().copied().collect();
        if keys != novel {
            return Err(Error::ClassMismatch(format!(
                "selection covers classes {keys:?}, episode has {novel:?}"
            )));
        }
        let m = selected.values().next().map_or(0, Vec::len);
        if selected.values().any(|v| v.len() != m) {
            return Err(Error::ClassMismatch(
                "unequal selection sizes across classes".into(),
            ));
        }
    }
    let mut hallucinated = Vec::new();
    for (&class, list) in selected {
        for c in list {
            if c.intended_class != class {
                return Err(Error::ClassMismatch(format!(
                    "candidate for class {} filed under {class}",
                    c.intended_class
                )));
            }
            hallucinated.push(Sample {
                image: c.image.clone(),
                text_embedding: c.text_embedding.clone(),
                label: class,
            });
        }
    }
    Ok(AugmentedDataset {
        real: episode.support.clone(),
        hallucinated,
        classes: novel.to_vec(),
        image_shape: episode.image_shape,
        embed_dim: episode.embed_dim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub pool_size: usize,
    pub rule: ScoringRule,
    pub classes: Vec<u32>,
}

/// Writes `pool.jsonl`, `pool_manifest.json` and the candidate images as a
/// dataset under `images/`.
pub fn save_pool(pool: &CandidatePool, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = Vec::new();
    for c in pool.candidates() {
        serde_json::to_writer(&mut lines, c)?;
        lines.write_all(b"\n").map_err(|e| Error::io(dir, e))?;
    }
    atomic_write(&dir.join("pool.jsonl"), &lines)?;
    let ds = Dataset::new(
        pool.candidates()
            .map(|c| Sample {
                image: c.image.clone(),
                text_embedding: c.text_embedding.clone(),
                label: c.intended_class,
            })
            .collect(),
        pool.per_class.keys().copied().collect(),
        pool.image_shape,
        pool.embed_dim,
    )?;
    save_dataset(&ds, &dir.join("images"))?;
    write_json(
        &dir.join("pool_manifest.json"),
        &PoolManifest {
            pool_size: pool.pool_size,
            rule: pool.rule,
            classes: pool.per_class.keys().copied().collect(),
        },
    )
}

pub fn load_pool(dir: &Path) -> Result<CandidatePool> {
    let manifest: PoolManifest = read_json(&dir.join("pool_manifest.json"))?;
    let path = dir.join("pool.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let images = load_dataset(&dir.join("images"))?;
    let records: Vec<Candidate> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(&path, e.to_string())))
        .collect::<Result<_>>()?;
    if records.len() != images.len() {
        return Err(Error::format(
            &path,
            format!("{} records but {} images", records.len(), images.len()),
        ));
    }
    let mut per_class: BTreeMap<u32, Vec<Candidate>> =
        manifest.classes.iter().map(|&c| (c, Vec::new())).collect();
    for (mut c, s) in records.into_iter().zip(images.samples.iter().cloned()) {
        if s.label != c.intended_class {
            return Err(Error::format(&path, "record and image labels disagree"));
        }
        c.image = s.image;
        c.text_embedding = s.text_embedding;
        per_class
            .get_mut(&c.intended_class)
            .ok_or_else(|| {
                Error::format(&path, format!("class {} not in manifest", c.intended_class))
            })?
            .push(c);
    }
    Ok(CandidatePool {
        pool_size: manifest.pool_size,
        image_shape: images.image_shape,
        embed_dim: images.embed_dim,
        rule: manifest.rule,
        per_class,
    })
}
