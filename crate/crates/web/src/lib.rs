//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything crosses the boundary as bytes (RGBA pixels) or JSON strings, so
//! the same API runs natively in tests.

use halluc_core::data::{
    make_split, sample_episode, synth_dataset, Dataset, Episode, ImageShape, Sample, SplitConfig,
    SynthSpec,
};
use halluc_core::rng::derive;
use halluc_core::selection::{build_pool, select_top_m, CandidatePool, ScoringRule};
use halluc_core::tcgan::{
    finetune_novel, initial_model, ArchWidths, GanHyper, GanModel, GanTrainer, Phase,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SIZE: usize = 16;
const CLASSES: usize = 6;

fn hyper(seed: u64) -> GanHyper {
    GanHyper {
        noise_dim: 8,
        lr_g: 1e-3,
        lr_d: 1e-3,
        batch_size: 16,
        widths: ArchWidths {
            base_resolution: 4,
            g_channels: vec![16, 8],
            d_channels: vec![16, 32],
            d_hidden: 32,
        },
        seed,
        ..GanHyper::default()
    }
}

/// [-1, 1] HWC images side by side as one RGBA strip.
fn strip(images: &[&[f32]]) -> Vec<u8> {
    let w = SIZE * images.len();
    let mut out = vec![255u8; w * SIZE * 4];
    for (k, img) in images.iter().enumerate() {
        for y in 0..SIZE {
            for x in 0..SIZE {
                let o = (y * w + k * SIZE + x) * 4;
                for c in 0..3 {
                    let v = img[(y * SIZE + x) * 3 + c];
                    out[o + c] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    out
}

#[derive(Serialize)]
struct Progress {
    phase: &'static str,
    steps: usize,
    loss_d: f64,
    loss_g: f64,
}

#[derive(Serialize)]
struct Scored {
    class: u32,
    rank: usize,
    generation_index: usize,
    realism: f64,
    posterior: f64,
    score: f64,
    selected: bool,
}

/// One interactive session: a small synthetic dataset, its split and one
/// 1-shot episode, and a GAN trained in increments.
#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    dataset: Dataset,
    split: SplitConfig,
    episode: Episode,
    base: GanModel<f32>,
    base_steps: usize,
    tuned: Option<GanModel<f32>>,
    pool: Option<CandidatePool>,
    m: usize,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, noise_level: f64) -> Result<Demo, String> {
        let seed = seed as u64;
        let spec = SynthSpec {
            num_classes: CLASSES,
            samples_per_class: 16,
            image_shape: ImageShape::new(SIZE, SIZE, 3),
            embed_dim: 8,
            noise_level,
            seed,
        };
        let dataset = synth_dataset(&spec).map_err(|e| e.to_string())?;
        let split = make_split(&dataset, 0.67, derive(seed, 1)).map_err(|e| e.to_string())?;
        let episode =
            sample_episode(&dataset, &split, 1, 4, derive(seed, 2)).map_err(|e| e.to_string())?;
        let base = initial_model(&dataset, &split, &hyper(seed)).map_err(|e| e.to_string())?;
        Ok(Demo {
            seed,
            dataset,
            split,
            episode,
            base,
            base_steps: 0,
            tuned: None,
            pool: None,
            m: 0,
        })
    }

    pub fn image_size(&self) -> usize {
        SIZE
    }

    /// Class identifiers as JSON: `{"base": [...], "novel": [...]}`.
    pub fn classes(&self) -> String {
        serde_json::json!({"base": self.split.base_classes, "novel": self.split.novel_classes})
            .to_string()
    }

    /// Four samples of every class, one row per class, as RGBA rows stacked
    /// vertically.
    pub fn gallery(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for &c in &self.dataset.classes {
            let ids = self.dataset.indices_of(c);
            let imgs: Vec<&[f32]> = ids
                .iter()
                .take(4)
                .map(|&i| self.dataset.samples[i].image.as_slice())
                .collect();
            out.extend(strip(&imgs));
        }
        out
    }

    /// Continues base-class training for `steps` iterations. Optimizer state
    /// starts fresh on every call.
    pub fn train_base(&mut self, steps: usize) -> Result<String, String> {
        let pool: Vec<&Sample> = self
            .dataset
            .samples
            .iter()
            .filter(|s| self.split.base_classes.contains(&s.label))
            .collect();
        let seed = derive(self.seed, 100 + self.base_steps as u64);
        let mut trainer = GanTrainer::new(self.base.clone(), pool, &hyper(self.seed), 0.0, seed)
            .map_err(|e| e.to_string())?;
        let trace = trainer.run(steps).map_err(|e| e.to_string())?;
        self.base = trainer.model;
        self.base.phase = Phase::Pretrained;
        self.base_steps += steps;
        self.tuned = None;
        self.pool = None;
        let last = trace.steps.last();
        Ok(serde_json::to_string(&Progress {
            phase: "base",
            steps: self.base_steps,
            loss_d: last.map_or(f64::NAN, |s| s.d.total),
            loss_g: last.map_or(f64::NAN, |s| s.g.total),
        })
        .expect("serializable"))
    }

    /// Finetunes a copy of the base model on the 1-shot support of the novel
    /// classes with the class term switched on.
    pub fn finetune(&mut self, steps: usize) -> Result<String, String> {
        let h = GanHyper {
            steps_finetune: steps,
            ..hyper(self.seed)
        };
        let (model, trace) =
            finetune_novel(&self.base, &self.episode, &h).map_err(|e| e.to_string())?;
        self.tuned = Some(model);
        self.pool = None;
        let last = trace.steps.last();
        Ok(serde_json::to_string(&Progress {
            phase: "finetune",
            steps,
            loss_d: last.map_or(f64::NAN, |s| s.d.total),
            loss_g: last.map_or(f64::NAN, |s| s.g.total),
        })
        .expect("serializable"))
    }

    /// Hallucinates `pool_size` candidates per novel class, scores them and
    /// marks the top `m`. Returns every candidate in rank order as JSON.
    pub fn hallucinate(
        &mut self,
        pool_size: usize,
        m: usize,
        realism_gated: bool,
    ) -> Result<String, String> {
        let model = self.tuned.as_ref().ok_or("finetune first")?;
        let rule = if realism_gated {
            ScoringRule::RealismGated
        } else {
            ScoringRule::ClassOnly
        };
        let mut pool = build_pool(model, &self.episode, pool_size, derive(self.seed, 3), rule)
            .map_err(|e| e.to_string())?;
        select_top_m(&pool, m).map_err(|e| e.to_string())?;
        pool.sort();
        let rows: Vec<Scored> = pool
            .per_class
            .iter()
            .flat_map(|(&class, list)| {
                list.iter().enumerate().map(move |(rank, c)| Scored {
                    class,
                    rank,
                    generation_index: c.generation_index,
                    realism: c.realism_score,
                    posterior: c.class_posterior,
                    score: c.combined_score,
                    selected: rank < m,
                })
            })
            .collect();
        self.pool = Some(pool);
        self.m = m;
        Ok(serde_json::to_string(&rows).expect("serializable"))
    }

    /// The ranked candidates of novel class `class` as one RGBA strip, best
    /// first; empty before `hallucinate`.
    pub fn candidates(&self, class: u32) -> Vec<u8> {
        let Some(list) = self.pool.as_ref().and_then(|p| p.per_class.get(&class)) else {
            return Vec::new();
        };
        strip(&list.iter().map(|c| c.image.as_slice()).collect::<Vec<_>>())
    }

    /// The real support image of novel class `class`.
    pub fn support(&self, class: u32) -> Vec<u8> {
        let imgs: Vec<&[f32]> = self
            .episode
            .support
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.image.as_slice())
            .collect();
        strip(&imgs)
    }
}
