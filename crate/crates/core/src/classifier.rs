//! Final few-shot classifier: a compact convolutional network trained from
//! scratch on the augmented support set, and episodic evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_tensors, save_tensors, TensorEntry};
use crate::data::{hwc_to_chw, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::nn::layers::{leaky_relu, leaky_relu_backward};
use crate::nn::{Adam, AdamConfig, Conv2d, ConvCache, Linear, Module, Param};
use crate::rng;
use crate::scalar::log_softmax;
use crate::selection::{AugmentedDataset, Provenance};

pub const CLASSIFIER_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClsHyper {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weight of hallucinated samples relative to real ones.
    pub hallucinated_weight: f64,
    pub channels: Vec<usize>,
}

impl Default for ClsHyper {
    fn default() -> Self {
        ClsHyper {
            lr: 1e-3,
            steps: 200,
            batch_size: 32,
            seed: 0,
            hallucinated_weight: 1.0,
            channels: vec![8, 16, 32],
        }
    }
}

impl ClsHyper {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.batch_size == 0 {
            return Err(Error::Config(
                "classifier lr and batch_size must be positive".into(),
            ));
        }
        if !(self.hallucinated_weight >= 0.0 && self.hallucinated_weight.is_finite()) {
            return Err(Error::Config(
                "hallucinated_weight must be finite and >= 0".into(),
            ));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(
                "classifier channels must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub image_shape: ImageShape,
    pub channels: Vec<usize>,
    pub classes: Vec<u32>,
}

/// Stride-2 3×3 conv blocks, global average pooling and a linear head over
/// the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    convs: Vec<Conv2d<f32>>,
    head: Linear<f32>,
}

struct Forward {
    caches: Vec<ConvCache<f32>>,
    outputs: Vec<Vec<f32>>,
    pooled: Vec<f32>,
    logits: Vec<f32>,
}

impl ClassifierModel {
    pub fn new(arch: ClassifierArch, rng: &mut impl rand::Rng) -> Result<Self> {
        let ImageShape {
            height,
            width,
            channels,
        } = arch.image_shape;
        let blocks = arch.channels.len();
        if height != width || height % (1 << blocks) != 0 || arch.classes.is_empty() {
            return Err(Error::Config(format!(
                "classifier needs square images divisible by 2^{blocks} and at least one class"
            )));
        }
        let mut convs = Vec::new();
        let mut cin = channels;
        for (i, &c) in arch.channels.iter().enumerate() {
            convs.push(Conv2d::new(
                &format!("cls.conv{i}"),
                cin,
                c,
                3,
                2,
                1,
                1.39,
                rng,
            ));
            cin = c;
        }
        let head = Linear::new("cls.head", cin, arch.classes.len(), 1.0, rng);
        Ok(ClassifierModel { arch, convs, head })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.classes.len()
    }

    fn forward(&self, images: &[f32], batch: usize) -> Forward {
        let mut x = images.to_vec();
        let mut res = self.arch.image_shape.height;
        let mut caches = Vec::new();
        let mut outputs = Vec::new();
        for conv in &self.convs {
            let (mut y, cache) = conv.forward(&x, batch, res, res);
            leaky_relu(&mut y);
            res /= 2;
            caches.push(cache);
            outputs.push(y.clone());
            x = y;
        }
        // Global average pool: one feature per channel.
        let plane = res * res;
        let pooled: Vec<f32> = x
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f32>() / plane as f32)
            .collect();
        let logits = self.head.forward(&pooled, batch);
        Forward {
            caches,
            outputs,
            pooled,
            logits,
        }
    }

    fn backward(&mut self, fwd: &Forward, d_logits: &[f32], batch: usize) {
        let d_pooled = self.head.backward(&fwd.pooled, d_logits, batch);
        let plane = fwd.outputs.last().expect("conv blocks").len() / d_pooled.len();
        let mut d: Vec<f32> = d_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / plane as f32, plane))
            .collect();
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&fwd.outputs[i], &mut d);
            if i == 0 {
                self.convs[0].backward_params(&fwd.caches[0], &d, batch);
            } else {
                d = self.convs[i].backward(&fwd.caches[i], &d, batch);
            }
        }
    }

    /// Logits of HWC images, `n × classes`.
    pub fn logits(&self, images: &[&[f32]]) -> Result<Vec<f32>> {
        let shape = self.arch.image_shape;
        let mut out = Vec::with_capacity(images.len() * self.num_classes());
        for chunk in images.chunks(64) {
            let mut chw = Vec::with_capacity(chunk.len() * shape.len());
            for img in chunk {
                if img.len() != shape.len() {
                    return Err(Error::Shape(format!(
                        "image has {} values, expected {}",
                        img.len(),
                        shape.len()
                    )));
                }
                hwc_to_chw(img, shape, &mut chw);
            }
            out.extend(self.forward(&chw, chunk.len()).logits);
        }
        Ok(out)
    }
}

impl Module<f32> for ClassifierModel {
    fn params(&self) -> Vec<&Param<f32>> {
        let mut v = Vec::new();
        for c in &self.convs {
            v.extend(c.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Seeded initial classifier for `data`'s label space.
pub fn initial_classifier(data: &AugmentedDataset, hyper: &ClsHyper) -> Result<ClassifierModel> {
    ClassifierModel::new(
        ClassifierArch {
            image_shape: data.image_shape,
            channels: hyper.channels.clone(),
            classes: data.classes.clone(),
        },
        &mut rng::rng(rng::derive(hyper.seed, 1)),
    )
}

/// Weighted cross-entropy training over the concatenated set. Returns the model
/// and the per-step loss trace.
pub fn train_classifier(
    data: &AugmentedDataset,
    hyper: &ClsHyper,
) -> Result<(ClassifierModel, Vec<f64>)> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("classifier training set".into()));
    }
    let mut model = initial_classifier(data, hyper)?;
    let k = model.num_classes();
    let shape = data.image_shape;
    let items: Vec<(&Sample, f32, usize)> = data
        .iter()
        .map(|(s, p)| {
            let w = match p {
                Provenance::Real => 1.0,
                Provenance::Hallucinated => hyper.hallucinated_weight as f32,
            };
            let idx = data.classes.binary_search(&s.label).map_err(|_| {
                Error::ClassMismatch(format!("label {} outside the episode classes", s.label))
            })?;
            if s.image.len() != shape.len() {
                return Err(Error::Shape(
                    "training image does not match the image shape".into(),
                ));
            }
            Ok((s, w, idx))
        })
        .collect::<Result<_>>()?;
    let batch = hyper.batch_size.min(items.len());
    let mut opt = Adam::new(AdamConfig {
        beta1: 0.9,
        ..AdamConfig::new(hyper.lr)
    });
    let mut r = rng::rng(rng::derive(hyper.seed, 2));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let mut chw = Vec::with_capacity(batch * shape.len());
        for &i in &picks {
            hwc_to_chw(&items[i].0.image, shape, &mut chw);
        }
        let wsum: f32 = picks.iter().map(|&i| items[i].1).sum();
        if wsum <= 0.0 {
            trace.push(0.0);
            continue;
        }
        model.zero_grad();
        let fwd = model.forward(&chw, batch);
        let mut loss = 0.0f64;
        let mut d = vec![0.0f32; batch * k];
        for (b, &i) in picks.iter().enumerate() {
            let (_, w, label) = items[i];
            let lsm = log_softmax(&fwd.logits[b * k..(b + 1) * k]);
            loss -= (w * lsm[label] / wsum) as f64;
            for j in 0..k {
                let target = if j == label { 1.0 } else { 0.0 };
                d[b * k + j] = w * (lsm[j].exp() - target) / wsum;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: "classifier loss is not finite".into(),
            });
        }
        model.backward(&fwd, &d, batch);
        opt.step(model.params_mut());
        trace.push(loss);
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "real-only")]
    RealOnly,
    #[serde(rename = "augmented")]
    Augmented,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::RealOnly => "real-only",
            Arm::Augmented => "augmented",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real-only" => Ok(Arm::RealOnly),
            "augmented" => Ok(Arm::Augmented),
            other => Err(Error::Config(format!("unknown arm {other:?}"))),
        }
    }
}

/// JSON object keys are strings; parse them back into class ids. Needed when
/// the report is nested in an internally tagged enum, where serde buffers the
/// map and loses its integer-key coercion.
fn class_keyed<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<BTreeMap<u32, f64>, D::Error> {
    BTreeMap::<String, f64>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    #[serde(deserialize_with = "class_keyed")]
    pub per_class_accuracy: BTreeMap<u32, f64>,
    /// Row-major `K × K` counts; row = true class, column = prediction, in
    /// `classes` order.
    pub confusion_matrix: Vec<u64>,
    pub classes: Vec<u32>,
    pub n_shot: usize,
    pub m: usize,
    pub seed: u64,
    pub arm: Arm,
}

impl EvalReport {
    pub fn with_meta(mut self, arm: Arm, n_shot: usize, m: usize, seed: u64) -> Self {
        self.arm = arm;
        self.n_shot = n_shot;
        self.m = m;
        self.seed = seed;
        self
    }

    pub fn total(&self) -> u64 {
        self.confusion_matrix.iter().sum()
    }
}

/// Top-1 accuracy, per-class accuracy and confusion counts on `query`.
/// Metadata fields default to zero / real-only; see [`EvalReport::with_meta`].
pub fn evaluate(model: &ClassifierModel, query: &[Sample]) -> Result<EvalReport> {
    if query.is_empty() {
        return Err(Error::Empty("query set".into()));
    }
    let classes = &model.arch.classes;
    let k = classes.len();
    let truth: Vec<usize> = query
        .iter()
        .map(|s| {
            classes
                .binary_search(&s.label)
                .map_err(|_| Error::LabelOutOfRange {
                    label: s.label as usize,
                    classes: k,
                })
        })
        .collect::<Result<_>>()?;
    let images: Vec<&[f32]> = query.iter().map(|s| s.image.as_slice()).collect();
    let logits = model.logits(&images)?;
    Ok(report_from_predictions(
        classes,
        &truth,
        &logits.chunks_exact(k).map(argmax).collect::<Vec<_>>(),
    ))
}

/// Builds a report from true and predicted class-head indices.
pub fn report_from_predictions(
    classes: &[u32],
    truth: &[usize],
    predicted: &[usize],
) -> EvalReport {
    let k = classes.len();
    let mut confusion = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t * k + p] += 1;
    }
    let correct: u64 = (0..k).map(|i| confusion[i * k + i]).sum();
    let total: u64 = confusion.iter().sum();
    let per_class_accuracy = (0..k)
        .filter_map(|i| {
            let row: u64 = confusion[i * k..(i + 1) * k].iter().sum();
            (row > 0).then(|| (classes[i], confusion[i * k + i] as f64 / row as f64))
        })
        .collect();
    EvalReport {
        top1_accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        per_class_accuracy,
        confusion_matrix: confusion,
        classes: classes.to_vec(),
        n_shot: 0,
        m: 0,
        seed: 0,
        arm: Arm::RealOnly,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub format_version: String,
    pub phase: String,
    pub arch: ClassifierArch,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_classifier(model: &ClassifierModel, dir: &Path) -> Result<()> {
    let tensors = save_tensors(dir, &model.params())?;
    write_json(
        &dir.join("classifier_manifest.json"),
        &ClassifierManifest {
            format_version: CLASSIFIER_FORMAT_VERSION.into(),
            phase: "classifier".into(),
            arch: model.arch.clone(),
            tensors,
        },
    )
}

pub fn load_classifier(dir: &Path) -> Result<ClassifierModel> {
    let path = dir.join("classifier_manifest.json");
    let m: ClassifierManifest = read_json(&path)?;
    if m.format_version != CLASSIFIER_FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported format version {:?}", m.format_version),
        ));
    }
    let mut model = ClassifierModel::new(m.arch, &mut rng::rng(0))
        .map_err(|e| Error::format(&path, e.to_string()))?;
    load_tensors(dir, &m.tensors, model.params_mut())?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let classes = [3, 8];
        let truth = [0, 0, 1, 1];
        let r = report_from_predictions(&classes, &truth, &truth);
        assert_eq!(r.top1_accuracy, 1.0);
        let r = report_from_predictions(&classes, &truth, &[0, 0, 0, 0]);
        assert_eq!(r.top1_accuracy, 0.5);
        assert_eq!(r.per_class_accuracy[&3], 1.0);
        assert_eq!(r.per_class_accuracy[&8], 0.0);
        assert_eq!(r.confusion_matrix, vec![2, 0, 2, 0]);
        assert_eq!(r.total(), 4);
    }

    #[test]
    fn arm_names() {
        assert_eq!("real-only".parse::<Arm>().unwrap(), Arm::RealOnly);
        assert_eq!(
            serde_json::to_string(&Arm::Augmented).unwrap(),
            "\"augmented\""
        );
        assert!("mixed".parse::<Arm>().is_err());
    }
}
