use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    discriminator_grads, generator_grads, sample_noise, ArchWidths, ClassObjective, GanArch,
    GanBatch, GanModel, LossBreakdown, Phase,
};
use crate::data::{Dataset, Episode, Sample, SplitConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Module};
use crate::rng::{self, Rng};

/// Child-seed tags under `GanHyper::seed`: initial weights, the pretraining
/// sampler, the re-initialized class head and the finetuning sampler.
pub const INIT_TAG: u64 = 0x1;
pub const PRETRAIN_TAG: u64 = 0x2;
pub const HEAD_TAG: u64 = 0x3;
pub const FINETUNE_TAG: u64 = 0x4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanHyper {
    pub noise_dim: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub batch_size: usize,
    pub steps_pretrain: usize,
    pub steps_finetune: usize,
    /// λ, the weight of the class-discriminative term.
    pub class_weight: f64,
    pub class_objective: ClassObjective,
    pub widths: ArchWidths,
    /// Matching-aware discrimination: real images paired with another
    /// class's text join the fake side of the D loss.
    pub mismatched_text: bool,
    pub seed: u64,
}

impl Default for GanHyper {
    fn default() -> Self {
        GanHyper {
            noise_dim: 16,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            batch_size: 64,
            steps_pretrain: 3000,
            steps_finetune: 500,
            class_weight: 1.0,
            class_objective: ClassObjective::LogLikelihood,
            widths: ArchWidths::default(),
            mismatched_text: true,
            seed: 0,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "noise_dim and batch_size must be positive".into(),
            ));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config("beta1 must lie in [0, 1)".into()));
        }
        if !(self.class_weight >= 0.0 && self.class_weight.is_finite()) {
            return Err(Error::Config("class_weight must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            ..AdamConfig::new(lr)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub d: LossBreakdown,
    pub g: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
}

/// Alternating optimizer over a fixed pool of real samples. Each iteration is
/// one D step followed by one G step on the same minibatch.
pub struct GanTrainer<'a> {
    pub model: GanModel<f32>,
    pool: Vec<&'a Sample>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    rng: Rng,
    batch_size: usize,
    lambda: f64,
    objective: ClassObjective,
    mismatched_text: bool,
}

impl<'a> GanTrainer<'a> {
    pub fn new(
        model: GanModel<f32>,
        pool: Vec<&'a Sample>,
        hyper: &GanHyper,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if pool.is_empty() {
            return Err(Error::Empty("no training samples".into()));
        }
        Ok(GanTrainer {
            model,
            pool,
            opt_g: Adam::new(hyper.adam(hyper.lr_g)),
            opt_d: Adam::new(hyper.adam(hyper.lr_d)),
            rng: rng::rng(seed),
            batch_size: hyper.batch_size,
            lambda,
            objective: hyper.class_objective,
            mismatched_text: hyper.mismatched_text,
        })
    }

    /// Draws a minibatch (with replacement) and the noise for both half-steps.
    pub fn draw(&mut self) -> Result<(GanBatch<f32>, Vec<f32>, Vec<f32>)> {
        let n = self.batch_size;
        let picks: Vec<&Sample> = (0..n)
            .map(|_| self.pool[self.rng.random_range(0..self.pool.len())])
            .collect();
        let batch = GanBatch::from_samples(&self.model, &picks, self.lambda > 0.0)?;
        let dz = self.model.arch.noise_dim;
        let z_d = sample_noise(&mut self.rng, n, dz);
        let z_g = sample_noise(&mut self.rng, n, dz);
        Ok((batch, z_d, z_g))
    }

    /// Updates D only.
    pub fn d_step(&mut self, batch: &GanBatch<f32>, z: &[f32]) -> Result<LossBreakdown> {
        let (mut fakes, _) = self.model.generator.forward(&batch.text, z, batch.len);
        let mut fake_text = batch.text.clone();
        if self.mismatched_text {
            let (images, text) = mismatched_pairs(
                batch,
                self.model.arch.image_shape.len(),
                self.model.arch.embed_dim,
            );
            fakes.extend(images);
            fake_text.extend(text);
        }
        let loss = discriminator_grads(
            &mut self.model,
            batch,
            &fakes,
            &fake_text,
            1.0,
            self.lambda,
            self.objective,
        )?;
        self.opt_d.step(self.model.discriminator.params_mut());
        Ok(loss)
    }

    /// Updates G only; fakes are conditioned on the batch text and aimed at
    /// the batch labels.
    pub fn g_step(&mut self, batch: &GanBatch<f32>, z: &[f32]) -> Result<LossBreakdown> {
        let loss = generator_grads(
            &mut self.model,
            &batch.text,
            z,
            &batch.labels,
            1.0,
            self.lambda,
            self.objective,
        )?;
        self.opt_g.step(self.model.generator.params_mut());
        Ok(loss)
    }

    pub fn iteration(&mut self, step: usize) -> Result<StepRecord> {
        let (batch, z_d, z_g) = self.draw()?;
        let d = self.d_step(&batch, &z_d)?;
        let g = self.g_step(&batch, &z_g)?;
        if !d.is_finite()
            || !g.is_finite()
            || !self.model.generator.all_finite()
            || !self.model.discriminator.all_finite()
        {
            return Err(Error::Diverged {
                step,
                detail: format!("loss_d {:?}, loss_g {:?}", d, g),
            });
        }
        Ok(StepRecord { step, d, g })
    }

    pub fn run(&mut self, steps: usize) -> Result<TrainTrace> {
        let mut trace = TrainTrace::default();
        for step in 0..steps {
            let rec = self.iteration(step)?;
            if step % 100 == 0 {
                log::debug!(
                    "step {step}: loss_d {:.4} loss_g {:.4}",
                    rec.d.total,
                    rec.g.total
                );
            }
            trace.steps.push(rec);
        }
        Ok(trace)
    }
}

/// Each real image paired with the text of the next sample in the batch of a
/// different class; images without such a partner are left out.
fn mismatched_pairs(
    batch: &GanBatch<f32>,
    image_len: usize,
    embed_dim: usize,
) -> (Vec<f32>, Vec<f32>) {
    let n = batch.len;
    let (mut images, mut text) = (Vec::new(), Vec::new());
    for i in 0..n {
        let Some(j) = (1..n)
            .map(|o| (i + o) % n)
            .find(|&j| batch.classes[j] != batch.classes[i])
        else {
            continue;
        };
        images.extend_from_slice(&batch.images[i * image_len..(i + 1) * image_len]);
        text.extend_from_slice(&batch.text[j * embed_dim..(j + 1) * embed_dim]);
    }
    (images, text)
}

/// Seeded initial model over the base classes.
pub fn initial_model(
    dataset: &Dataset,
    split: &SplitConfig,
    hyper: &GanHyper,
) -> Result<GanModel<f32>> {
    let arch = GanArch {
        image_shape: dataset.image_shape,
        embed_dim: dataset.embed_dim,
        noise_dim: hyper.noise_dim,
        num_classes: split.base_classes.len(),
        widths: hyper.widths.clone(),
    };
    GanModel::new(
        arch,
        split.base_classes.clone(),
        &mut rng::rng(rng::derive(hyper.seed, INIT_TAG)),
    )
}

/// Adversarial-only training (λ = 0) on base-class samples.
pub fn pretrain_base(
    dataset: &Dataset,
    split: &SplitConfig,
    hyper: &GanHyper,
) -> Result<(GanModel<f32>, TrainTrace)> {
    hyper.validate()?;
    if split.base_classes.is_empty() {
        return Err(Error::Empty("split has no base classes".into()));
    }
    let pool: Vec<&Sample> = dataset
        .samples
        .iter()
        .filter(|s| split.base_classes.binary_search(&s.label).is_ok())
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("dataset has no base-class samples".into()));
    }
    let model = initial_model(dataset, split, hyper)?;
    let mut trainer = GanTrainer::new(
        model,
        pool,
        hyper,
        0.0,
        rng::derive(hyper.seed, PRETRAIN_TAG),
    )?;
    let trace = trainer.run(hyper.steps_pretrain)?;
    let mut model = trainer.model;
    model.phase = Phase::Pretrained;
    Ok((model, trace))
}

/// Compound-loss training on the episode support. The class head is
/// re-initialized over the episode's novel classes; everything else is
/// warm-started from `model`.
pub fn finetune_novel(
    model: &GanModel<f32>,
    episode: &Episode,
    hyper: &GanHyper,
) -> Result<(GanModel<f32>, TrainTrace)> {
    hyper.validate()?;
    if episode.support.is_empty() {
        return Err(Error::Empty("episode support is empty".into()));
    }
    if episode.support[0].image.len() != model.arch.image_shape.len()
        || episode.support[0].text_embedding.len() != model.arch.embed_dim
    {
        return Err(Error::Shape(
            "episode samples do not match the model".into(),
        ));
    }
    let mut model = model.clone();
    model.reset_class_head(
        episode.novel_classes().to_vec(),
        &mut rng::rng(rng::derive(hyper.seed, HEAD_TAG)),
    );
    let pool: Vec<&Sample> = episode.support.iter().collect();
    let mut trainer = GanTrainer::new(
        model,
        pool,
        hyper,
        hyper.class_weight,
        rng::derive(hyper.seed, FINETUNE_TAG),
    )?;
    let trace = trainer.run(hyper.steps_finetune)?;
    let mut model = trainer.model;
    model.phase = Phase::Finetuned;
    Ok((model, trace))
}
