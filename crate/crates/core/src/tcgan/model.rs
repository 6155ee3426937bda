//! Generator and discriminator networks.
//!
//! G: `[text ; z]` → dense → `base×base` feature map → (upsample, 3×3 conv)
//! per stage → tanh image.
//! D: stride-2 3×3 convs form a shared trunk. The realism head sees the
//! flattened trunk features concatenated with the text embedding through one
//! hidden layer; the class head reads the trunk features alone, so it models
//! P(C | I).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::nn::layers::{
    leaky_relu, leaky_relu_backward, tanh_backward, tanh_inplace, upsample2x, upsample2x_backward,
};
use crate::nn::{Conv2d, ConvCache, Linear, Module, Param};
use crate::scalar::Scalar;

const LRELU_GAIN: f64 = 1.39;

/// Layer widths. Stage counts follow from the image size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchWidths {
    pub base_resolution: usize,
    /// Channels of the generator feature maps, coarsest first; one entry per
    /// upsampling stage.
    pub g_channels: Vec<usize>,
    /// Output channels of each stride-2 discriminator conv.
    pub d_channels: Vec<usize>,
    pub d_hidden: usize,
}

impl Default for ArchWidths {
    fn default() -> Self {
        ArchWidths {
            base_resolution: 4,
            g_channels: vec![32, 16, 8],
            d_channels: vec![16, 32, 64],
            d_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GanArch {
    pub image_shape: ImageShape,
    pub embed_dim: usize,
    pub noise_dim: usize,
    pub num_classes: usize,
    pub widths: ArchWidths,
}

impl GanArch {
    pub fn validate(&self) -> Result<()> {
        let ImageShape {
            height,
            width,
            channels,
        } = self.image_shape;
        let w = &self.widths;
        if height != width || channels == 0 {
            return Err(Error::Config(format!(
                "images must be square, got {height}x{width}x{channels}"
            )));
        }
        if self.embed_dim == 0 || self.noise_dim == 0 || self.num_classes == 0 || w.d_hidden == 0 {
            return Err(Error::Config(
                "embed_dim, noise_dim, num_classes and d_hidden must be positive".into(),
            ));
        }
        if w.base_resolution == 0 || height != w.base_resolution << w.g_channels.len() {
            return Err(Error::Config(format!(
                "image size {height} must equal base_resolution {} × 2^{} generator stages",
                w.base_resolution,
                w.g_channels.len()
            )));
        }
        if w.d_channels.is_empty() || height % (1 << w.d_channels.len()) != 0 {
            return Err(Error::Config(format!(
                "image size {height} not divisible by 2^{} discriminator stages",
                w.d_channels.len()
            )));
        }
        if w.g_channels.contains(&0) || w.d_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    fn trunk_resolution(&self) -> usize {
        self.image_shape.height >> self.widths.d_channels.len()
    }

    fn trunk_features(&self) -> usize {
        self.widths.d_channels.last().copied().unwrap_or(0) * self.trunk_resolution().pow(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<F> {
    pub input: Linear<F>,
    pub convs: Vec<Conv2d<F>>,
    base_channels: usize,
    base_resolution: usize,
    embed_dim: usize,
    noise_dim: usize,
}

pub struct GeneratorCache<F> {
    input: Vec<F>,
    base: Vec<F>,
    stages: Vec<(ConvCache<F>, usize)>,
    /// Post-activation output of every conv; the last is the tanh image.
    outputs: Vec<Vec<F>>,
    batch: usize,
}

impl<F: Scalar> Generator<F> {
    pub fn new(arch: &GanArch, rng: &mut impl Rng) -> Self {
        let w = &arch.widths;
        let base_channels = w.g_channels[0];
        let input = Linear::new(
            "g.input",
            arch.embed_dim + arch.noise_dim,
            base_channels * w.base_resolution * w.base_resolution,
            LRELU_GAIN,
            rng,
        );
        let mut convs = Vec::new();
        for i in 0..w.g_channels.len() {
            let cin = w.g_channels[i];
            let last = i + 1 == w.g_channels.len();
            let cout = if last {
                arch.image_shape.channels
            } else {
                w.g_channels[i + 1]
            };
            let gain = if last { 1.0 } else { LRELU_GAIN };
            convs.push(Conv2d::new(
                &format!("g.conv{i}"),
                cin,
                cout,
                3,
                1,
                1,
                gain,
                rng,
            ));
        }
        Generator {
            input,
            convs,
            base_channels,
            base_resolution: w.base_resolution,
            embed_dim: arch.embed_dim,
            noise_dim: arch.noise_dim,
        }
    }

    /// `text` is `batch × embed_dim`, `z` is `batch × noise_dim`. Returns CHW
    /// images in [-1, 1].
    pub fn forward(&self, text: &[F], z: &[F], batch: usize) -> (Vec<F>, GeneratorCache<F>) {
        let in_dim = self.embed_dim + self.noise_dim;
        let mut input = Vec::with_capacity(batch * in_dim);
        for b in 0..batch {
            input.extend_from_slice(&text[b * self.embed_dim..(b + 1) * self.embed_dim]);
            input.extend_from_slice(&z[b * self.noise_dim..(b + 1) * self.noise_dim]);
        }
        let mut base = self.input.forward(&input, batch);
        leaky_relu(&mut base);
        let mut x = base.clone();
        let mut res = self.base_resolution;
        let mut channels = self.base_channels;
        let mut stages = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let up = upsample2x(&x, batch * channels, res, res);
            res *= 2;
            let (mut y, cache) = conv.forward(&up, batch, res, res);
            if i + 1 == self.convs.len() {
                tanh_inplace(&mut y);
            } else {
                leaky_relu(&mut y);
            }
            stages.push((cache, channels));
            channels = conv.out_channels;
            outputs.push(y.clone());
            x = y;
        }
        (
            x,
            GeneratorCache {
                input,
                base,
                stages,
                outputs,
                batch,
            },
        )
    }

    pub fn backward(&mut self, cache: &GeneratorCache<F>, d_images: &[F]) {
        let batch = cache.batch;
        let mut d = d_images.to_vec();
        let n = self.convs.len();
        let mut res = self.base_resolution << n;
        for i in (0..n).rev() {
            if i + 1 == n {
                tanh_backward(&cache.outputs[i], &mut d);
            } else {
                leaky_relu_backward(&cache.outputs[i], &mut d);
            }
            let (conv_cache, in_channels) = &cache.stages[i];
            let d_up = self.convs[i].backward(conv_cache, &d, batch);
            res /= 2;
            d = upsample2x_backward(&d_up, batch * in_channels, res, res);
        }
        leaky_relu_backward(&cache.base, &mut d);
        self.input.backward(&cache.input, &d, batch);
    }
}

impl<F: Scalar> Module<F> for Generator<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v: Vec<&Param<F>> = self.input.params().into();
        for c in &self.convs {
            v.extend(c.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v: Vec<&mut Param<F>> = self.input.params_mut().into();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<F> {
    pub convs: Vec<Conv2d<F>>,
    pub joint: Linear<F>,
    pub realism: Linear<F>,
    pub class_head: Linear<F>,
    resolution: usize,
    embed_dim: usize,
}

pub struct DiscOutput<F> {
    pub realism_logits: Vec<F>,
    /// `batch × num_classes`, row-major.
    pub class_logits: Vec<F>,
    pub num_classes: usize,
    cache: DiscCache<F>,
}

struct DiscCache<F> {
    convs: Vec<ConvCache<F>>,
    outputs: Vec<Vec<F>>,
    joint_in: Vec<F>,
    hidden: Vec<F>,
    batch: usize,
}

impl<F: Scalar> Discriminator<F> {
    pub fn new(arch: &GanArch, rng: &mut impl Rng) -> Self {
        let w = &arch.widths;
        let mut convs = Vec::new();
        let mut cin = arch.image_shape.channels;
        for (i, &cout) in w.d_channels.iter().enumerate() {
            convs.push(Conv2d::new(
                &format!("d.conv{i}"),
                cin,
                cout,
                3,
                2,
                1,
                LRELU_GAIN,
                rng,
            ));
            cin = cout;
        }
        let feat = arch.trunk_features();
        Discriminator {
            convs,
            joint: Linear::new(
                "d.joint",
                feat + arch.embed_dim,
                w.d_hidden,
                LRELU_GAIN,
                rng,
            ),
            realism: Linear::new("d.realism", w.d_hidden, 1, 1.0, rng),
            class_head: Linear::new("d.class", feat, arch.num_classes, 1.0, rng),
            resolution: arch.image_shape.height,
            embed_dim: arch.embed_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_head.fan_out
    }

    /// Replaces the class head with a freshly initialized one over
    /// `num_classes` outputs.
    pub fn reset_class_head(&mut self, num_classes: usize, rng: &mut impl Rng) {
        self.class_head = Linear::new("d.class", self.class_head.fan_in, num_classes, 1.0, rng);
    }

    /// One pass yields both heads. `images` are CHW.
    pub fn forward(&self, images: &[F], text: &[F], batch: usize) -> DiscOutput<F> {
        let mut x = images.to_vec();
        let mut res = self.resolution;
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, cache) = conv.forward(&x, batch, res, res);
            leaky_relu(&mut y);
            res /= 2;
            caches.push(cache);
            outputs.push(y.clone());
            x = y;
        }
        let feat = self.class_head.fan_in;
        let mut joint_in = Vec::with_capacity(batch * (feat + self.embed_dim));
        for b in 0..batch {
            joint_in.extend_from_slice(&x[b * feat..(b + 1) * feat]);
            joint_in.extend_from_slice(&text[b * self.embed_dim..(b + 1) * self.embed_dim]);
        }
        let mut hidden = self.joint.forward(&joint_in, batch);
        leaky_relu(&mut hidden);
        let realism_logits = self.realism.forward(&hidden, batch);
        let class_logits = self.class_head.forward(&x, batch);
        DiscOutput {
            realism_logits,
            class_logits,
            num_classes: self.num_classes(),
            cache: DiscCache {
                convs: caches,
                outputs,
                joint_in,
                hidden,
                batch,
            },
        }
    }

    /// Accumulates parameter gradients for upstream gradients on both heads.
    /// Returns the image gradient when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        out: &DiscOutput<F>,
        d_realism: &[F],
        d_class: &[F],
        need_input_grad: bool,
    ) -> Option<Vec<F>> {
        let cache = &out.cache;
        let batch = cache.batch;
        let feat = self.class_head.fan_in;
        let mut d_hidden = self.realism.backward(&cache.hidden, d_realism, batch);
        leaky_relu_backward(&cache.hidden, &mut d_hidden);
        let d_joint = self.joint.backward(&cache.joint_in, &d_hidden, batch);
        let trunk = cache.outputs.last().expect("at least one conv");
        let mut d = self.class_head.backward(trunk, d_class, batch);
        let stride = feat + self.embed_dim;
        for b in 0..batch {
            for i in 0..feat {
                d[b * feat + i] += d_joint[b * stride + i];
            }
        }
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&cache.outputs[i], &mut d);
            if i == 0 && !need_input_grad {
                self.convs[0].backward_params(&cache.convs[0], &d, batch);
                return None;
            }
            d = self.convs[i].backward(&cache.convs[i], &d, batch);
        }
        Some(d)
    }
}

impl<F: Scalar> Module<F> for Discriminator<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v = Vec::new();
        for c in &self.convs {
            v.extend(c.params());
        }
        v.extend(self.joint.params());
        v.extend(self.realism.params());
        v.extend(self.class_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        v.extend(self.joint.params_mut());
        v.extend(self.realism.params_mut());
        v.extend(self.class_head.params_mut());
        v
    }
}

/// Training phase a model snapshot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Pretrained,
    Finetuned,
}

/// G and D together with the label space of D's class head.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel<F = f32> {
    pub arch: GanArch,
    pub generator: Generator<F>,
    pub discriminator: Discriminator<F>,
    /// Class identifier of each class-head output, in order.
    pub classes: Vec<u32>,
    pub phase: Phase,
}

impl<F: Scalar> GanModel<F> {
    pub fn new(arch: GanArch, classes: Vec<u32>, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        if classes.len() != arch.num_classes {
            return Err(Error::Config(format!(
                "{} class identifiers for a {}-way class head",
                classes.len(),
                arch.num_classes
            )));
        }
        let generator = Generator::new(&arch, rng);
        let discriminator = Discriminator::new(&arch, rng);
        Ok(GanModel {
            arch,
            generator,
            discriminator,
            classes,
            phase: Phase::Initial,
        })
    }

    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }

    /// Re-initializes the class head over a new label space.
    pub fn reset_class_head(&mut self, classes: Vec<u32>, rng: &mut impl Rng) {
        self.arch.num_classes = classes.len();
        self.discriminator.reset_class_head(classes.len(), rng);
        self.classes = classes;
    }

    pub fn num_params(&self) -> usize {
        self.generator.num_params() + self.discriminator.num_params()
    }
}
