//! Discriminative text-conditional GAN: networks, compound losses, the
//! alternating trainer and checkpoints.

mod checkpoint;
pub mod losses;
pub mod model;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;

pub use checkpoint::{load_gan, save_gan, GanManifest, GAN_FORMAT_VERSION};
pub use losses::{
    adv_loss_d, adv_loss_d_grad, adv_loss_g, adv_loss_g_grad, class_loss, class_loss_grad,
    ClassObjective, LossBreakdown,
};
pub use model::{ArchWidths, Discriminator, GanArch, GanModel, Generator, Phase};
pub use train::{
    finetune_novel, initial_model, pretrain_base, GanHyper, GanTrainer, StepRecord, TrainTrace,
    FINETUNE_TAG, HEAD_TAG, INIT_TAG, PRETRAIN_TAG,
};

use crate::data::{chw_to_hwc, hwc_to_chw, Sample};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;

/// Real samples in network layout with class-head label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GanBatch<F> {
    /// CHW images, concatenated.
    pub images: Vec<F>,
    pub text: Vec<F>,
    pub labels: Vec<usize>,
    /// Dataset labels of the samples.
    pub classes: Vec<u32>,
    pub len: usize,
}

impl<F: Scalar> GanBatch<F> {
    /// Converts samples for `model`. Labels outside the model's class head map
    /// to an error only when `need_labels` is set; otherwise they become 0.
    pub fn from_samples(
        model: &GanModel<F>,
        samples: &[&Sample],
        need_labels: bool,
    ) -> Result<Self> {
        let shape = model.arch.image_shape;
        let mut img32 = Vec::with_capacity(samples.len() * shape.len());
        let mut text = Vec::with_capacity(samples.len() * model.arch.embed_dim);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.image.len() != shape.len() || s.text_embedding.len() != model.arch.embed_dim {
                return Err(Error::Shape(
                    "sample does not match the model's image shape or embed_dim".into(),
                ));
            }
            hwc_to_chw(&s.image, shape, &mut img32);
            text.extend(s.text_embedding.iter().map(|&v| F::lit(v as f64)));
            labels.push(match model.class_index(s.label) {
                Some(i) => i,
                None if !need_labels => 0,
                None => {
                    return Err(Error::ClassMismatch(format!(
                        "label {} is not covered by the class head {:?}",
                        s.label, model.classes
                    )))
                }
            });
        }
        Ok(GanBatch {
            images: img32.into_iter().map(|v| F::lit(v as f64)).collect(),
            text,
            labels,
            classes: samples.iter().map(|s| s.label).collect(),
            len: samples.len(),
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "class weight {lambda} must be finite and >= 0"
        )))
    }
}

/// Discriminator compound loss: `adv_loss_d(D(real), D(fake)) + λ·class_loss(D(real))`.
/// `fake_text` holds the embeddings the fakes were generated from.
pub fn loss_d<F: Scalar>(
    model: &GanModel<F>,
    real: &GanBatch<F>,
    fake_images: &[F],
    fake_text: &[F],
    lambda: f64,
    objective: ClassObjective,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let nf = fake_text.len() / model.arch.embed_dim.max(1);
    let d = &model.discriminator;
    let out_real = d.forward(&real.images, &real.text, real.len);
    let out_fake = d.forward(fake_images, fake_text, nf);
    let adv = adv_loss_d(&out_real.realism_logits, &out_fake.realism_logits)?.as_f64();
    let class = if lambda > 0.0 {
        class_loss_grad(
            &out_real.class_logits,
            out_real.num_classes,
            &real.labels,
            objective,
        )?
        .0
        .as_f64()
    } else {
        0.0
    };
    Ok(LossBreakdown {
        adversarial: adv,
        class,
        total: adv + lambda * class,
    })
}

/// Generator compound loss: `adv_loss_g(D(fake)) + λ·class_loss(D(fake), intended)`.
pub fn loss_g<F: Scalar>(
    model: &GanModel<F>,
    fake_images: &[F],
    fake_text: &[F],
    intended: &[usize],
    lambda: f64,
    objective: ClassObjective,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let n = fake_text.len() / model.arch.embed_dim.max(1);
    let out = model.discriminator.forward(fake_images, fake_text, n);
    let adv = adv_loss_g(&out.realism_logits)?.as_f64();
    let class = if lambda > 0.0 {
        class_loss_grad(&out.class_logits, out.num_classes, intended, objective)?
            .0
            .as_f64()
    } else {
        0.0
    };
    Ok(LossBreakdown {
        adversarial: adv,
        class,
        total: adv + lambda * class,
    })
}

/// Zeroes D's gradients and accumulates those of
/// `adv_weight·adv_loss_d + λ·class_loss(real)`. G is read-only here.
pub fn discriminator_grads<F: Scalar>(
    model: &mut GanModel<F>,
    real: &GanBatch<F>,
    fake_images: &[F],
    fake_text: &[F],
    adv_weight: f64,
    lambda: f64,
    objective: ClassObjective,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let nf = fake_text.len() / model.arch.embed_dim.max(1);
    let d = &mut model.discriminator;
    d.zero_grad();
    let out_real = d.forward(&real.images, &real.text, real.len);
    let out_fake = d.forward(fake_images, fake_text, nf);
    let (adv, mut g_real, mut g_fake) =
        adv_loss_d_grad(&out_real.realism_logits, &out_fake.realism_logits)?;
    let aw = F::lit(adv_weight);
    g_real
        .iter_mut()
        .chain(g_fake.iter_mut())
        .for_each(|g| *g *= aw);
    let k = out_real.num_classes;
    let (class, class_grad) = if lambda > 0.0 {
        let (v, mut g) = class_loss_grad(&out_real.class_logits, k, &real.labels, objective)?;
        let l = F::lit(lambda);
        g.iter_mut().for_each(|x| *x *= l);
        (v.as_f64(), g)
    } else {
        (0.0, vec![F::zero(); real.len * k])
    };
    d.backward(&out_real, &g_real, &class_grad, false);
    d.backward(&out_fake, &g_fake, &vec![F::zero(); nf * k], false);
    let adv = adv.as_f64();
    Ok(LossBreakdown {
        adversarial: adv,
        class,
        total: adv_weight * adv + lambda * class,
    })
}

/// Generates fakes from `(text, z)`, backpropagates
/// `adv_weight·adv_loss_g + λ·class_loss(fakes, intended)` through D into G,
/// and leaves the result in G's gradients. D's parameters are read-only; its
/// gradient buffers are scratch.
#[allow(clippy::too_many_arguments)]
pub fn generator_grads<F: Scalar>(
    model: &mut GanModel<F>,
    text: &[F],
    z: &[F],
    intended: &[usize],
    adv_weight: f64,
    lambda: f64,
    objective: ClassObjective,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let n = intended.len();
    model.generator.zero_grad();
    let (fakes, gcache) = model.generator.forward(text, z, n);
    let d = &mut model.discriminator;
    let out = d.forward(&fakes, text, n);
    let (adv, mut g_adv) = adv_loss_g_grad(&out.realism_logits)?;
    let aw = F::lit(adv_weight);
    g_adv.iter_mut().for_each(|g| *g *= aw);
    let k = out.num_classes;
    let (class, class_grad) = if lambda > 0.0 {
        let (v, mut g) = class_loss_grad(&out.class_logits, k, intended, objective)?;
        let l = F::lit(lambda);
        g.iter_mut().for_each(|x| *x *= l);
        (v.as_f64(), g)
    } else {
        (0.0, vec![F::zero(); n * k])
    };
    let d_images = d
        .backward(&out, &g_adv, &class_grad, true)
        .expect("input gradient requested");
    d.zero_grad();
    model.generator.backward(&gcache, &d_images);
    let adv = adv.as_f64();
    Ok(LossBreakdown {
        adversarial: adv,
        class,
        total: adv_weight * adv + lambda * class,
    })
}

/// Standard-normal noise, `n × dim`.
pub fn sample_noise<F: Scalar>(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<F> {
    (0..n * dim)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            F::lit(v)
        })
        .collect()
}

/// One image from `(text_embedding, z)`, HWC in [-1, 1].
pub fn generate(model: &GanModel<f32>, text_embedding: &[f32], z: &[f32]) -> Result<Vec<f32>> {
    Ok(generate_batch(model, text_embedding, z, 1)?
        .pop()
        .expect("one image"))
}

/// `n` images from row-major text and noise matrices.
pub fn generate_batch(
    model: &GanModel<f32>,
    text: &[f32],
    z: &[f32],
    n: usize,
) -> Result<Vec<Vec<f32>>> {
    let arch = &model.arch;
    if text.len() != n * arch.embed_dim {
        return Err(Error::Shape(format!(
            "text embedding has {} values, expected {}",
            text.len(),
            n * arch.embed_dim
        )));
    }
    if z.len() != n * arch.noise_dim {
        return Err(Error::Shape(format!(
            "noise has {} values, expected {}",
            z.len(),
            n * arch.noise_dim
        )));
    }
    let (images, _) = model.generator.forward(text, z, n);
    let len = arch.image_shape.len();
    Ok(images
        .chunks_exact(len)
        .map(|chw| chw_to_hwc(chw, arch.image_shape))
        .collect())
}
