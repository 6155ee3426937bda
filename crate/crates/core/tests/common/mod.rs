#![allow(dead_code)]

use halluc_core::classifier::{Arm, ClsHyper};
use halluc_core::data::{
    make_split, sample_episode, synth_dataset, Dataset, Episode, ImageShape, SynthSpec,
};
use halluc_core::harness::{DataSource, ExperimentConfig, SelectionParams};
use halluc_core::tcgan::{finetune_novel, pretrain_base, ArchWidths, GanHyper, GanModel};

pub fn tiny_spec(noise_level: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 5,
        samples_per_class: 12,
        image_shape: ImageShape::new(16, 16, 3),
        embed_dim: 8,
        noise_level,
        seed,
    }
}

pub fn tiny_dataset(noise_level: f64, seed: u64) -> Dataset {
    synth_dataset(&tiny_spec(noise_level, seed)).unwrap()
}

pub fn tiny_widths() -> ArchWidths {
    ArchWidths {
        base_resolution: 4,
        g_channels: vec![8, 4],
        d_channels: vec![8, 16],
        d_hidden: 16,
    }
}

pub fn tiny_hyper(seed: u64) -> GanHyper {
    GanHyper {
        noise_dim: 4,
        lr_g: 1e-3,
        lr_d: 1e-3,
        batch_size: 8,
        steps_pretrain: 20,
        steps_finetune: 20,
        widths: tiny_widths(),
        seed,
        ..GanHyper::default()
    }
}

/// A briefly trained G*/D* pair with its episode, for pipeline tests.
pub fn tiny_finetuned(seed: u64, n_shot: usize) -> (Dataset, Episode, GanModel<f32>) {
    let ds = tiny_dataset(0.1, seed);
    let split = make_split(&ds, 0.6, seed).unwrap();
    let hyper = tiny_hyper(seed);
    let (base, _) = pretrain_base(&ds, &split, &hyper).unwrap();
    let episode = sample_episode(&ds, &split, n_shot, 3, seed).unwrap();
    let (model, _) = finetune_novel(&base, &episode, &hyper).unwrap();
    (ds, episode, model)
}

/// A one-seed, one-shot experiment small enough for a unit test.
pub fn tiny_experiment(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(tiny_spec(0.1, 0)),
        base_fraction: 0.6,
        query_per_class: 4,
        gan: GanHyper {
            steps_pretrain: 6,
            steps_finetune: 4,
            ..tiny_hyper(0)
        },
        selection: SelectionParams {
            pool_size: 10,
            m: vec![0, 5],
            ..SelectionParams::default()
        },
        classifier: ClsHyper {
            steps: 15,
            batch_size: 8,
            channels: vec![4, 8],
            ..ClsHyper::default()
        },
        n_shot: vec![1],
        seeds: vec![2],
        arms: vec![Arm::RealOnly, Arm::Augmented],
        output_dir: out.to_path_buf(),
    }
}
