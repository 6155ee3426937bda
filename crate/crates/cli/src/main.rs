//! `halluc`: stage-wise and end-to-end driver for the few-shot hallucination
//! pipeline. Stage commands pass state through directories, and derive their
//! seeds exactly as the experiment harness does, so chaining them by hand
//! reproduces a harness cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use halluc_core::classifier::{
    evaluate, load_classifier, save_classifier, train_classifier, ClsHyper,
};
use halluc_core::data::{
    load_dataset, make_split, sample_episode, save_dataset, Dataset, Episode, EpisodeIndex, Sample,
    SplitConfig,
};
use halluc_core::harness::{
    plot_report, run_experiment, summarize, DataSource, ExperimentConfig, RunRecord, SeedPlan,
};
use halluc_core::io_util::{atomic_write, read_json, write_json};
use halluc_core::rng::{self, rng};
use halluc_core::selection::{
    build_augmented, build_pool, save_pool, select_top_m, AugmentedDataset, Provenance,
};
use halluc_core::tcgan::{
    finetune_novel, generate_batch, load_gan, pretrain_base, sample_noise, save_gan, GanHyper,
};

#[derive(Parser)]
#[command(
    name = "halluc",
    version,
    about = "Few-shot recognition with text-conditional hallucination"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML). Defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; defaults to the first seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n_shot: Option<usize>,
    /// Hallucinated samples kept per class.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Candidates generated per class.
    #[arg(long, global = true)]
    pool_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    SynthData,
    /// Pretrain the GAN on base classes.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample an n-shot episode and finetune a pretrained GAN on it.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint directory.
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate images for every class the model knows.
    Generate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Build a scored candidate pool and keep the top-m per class.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Finetuned checkpoint directory.
        #[arg(long)]
        model: PathBuf,
    },
    /// Train the few-shot classifier on a (possibly augmented) dataset.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a classifier on an episode's query set.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// `episode.json` written by `finetune`.
        #[arg(long)]
        episode: PathBuf,
    },
    /// Run the full seed × n_shot × arm × m grid.
    RunExperiment,
    /// Aggregate a run record into mean/std rows.
    Summarize {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write summary CSV, SVG curves and a markdown report.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.validate()?;
        Ok(config)
    }

    fn seed(&self, config: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(config.seeds[0])
    }

    fn n_shot(&self, config: &ExperimentConfig) -> usize {
        self.n_shot.unwrap_or(config.n_shot[0])
    }

    fn out(&self) -> anyhow::Result<&Path> {
        self.out
            .as_deref()
            .context("--out is required for this command")
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<halluc_core::Error>())
                .map_or("cli", |e| e.kind());
            let record = serde_json::json!({
                "status": "error",
                "kind": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    let config = common.config()?;
    let seed = common.seed(&config);
    match &cli.command {
        Command::SynthData => {
            let DataSource::Synthetic(_) = &config.data else {
                bail!("synth-data needs a synthetic data source in the config");
            };
            let out = common.out()?;
            let ds = config.data.load(SeedPlan::new(seed, 0).data)?;
            save_dataset(&ds, out)?;
            println!(
                "{} samples, {} classes -> {}",
                ds.len(),
                ds.classes.len(),
                out.display()
            );
        }
        Command::Pretrain { data } => {
            let out = common.out()?;
            let ds = load_dataset(data)?;
            let seeds = SeedPlan::new(seed, 0);
            let split = make_split(&ds, config.base_fraction, seeds.split)?;
            let hyper = GanHyper {
                seed: seeds.pretrain,
                ..config.gan.clone()
            };
            let (model, trace) = pretrain_base(&ds, &split, &hyper)?;
            save_gan(&model, out)?;
            write_json(&out.join("split.json"), &split)?;
            write_json(&out.join("trace.json"), &trace)?;
            println!(
                "pretrained on {} base classes ({} steps) -> {}",
                split.base_classes.len(),
                trace.steps.len(),
                out.display()
            );
        }
        Command::Finetune { data, model } => {
            let out = common.out()?;
            let n_shot = common.n_shot(&config);
            let ds = load_dataset(data)?;
            let split: SplitConfig = read_json(&model.join("split.json"))?;
            let base = load_gan(model)?;
            let seeds = SeedPlan::new(seed, n_shot);
            let episode =
                sample_episode(&ds, &split, n_shot, config.query_per_class, seeds.episode)?;
            let hyper = GanHyper {
                seed: seeds.finetune,
                ..config.gan.clone()
            };
            let (tuned, trace) = finetune_novel(&base, &episode, &hyper)?;
            save_gan(&tuned, out)?;
            write_json(&out.join("episode.json"), &episode.index)?;
            write_json(&out.join("trace.json"), &trace)?;
            println!(
                "finetuned on {}-shot episode over classes {:?} -> {}",
                n_shot,
                episode.novel_classes(),
                out.display()
            );
        }
        Command::Generate { data, model, count } => {
            let out = common.out()?;
            let ds = load_dataset(data)?;
            let gan = load_gan(model)?;
            // Condition on the episode support when the model is finetuned,
            // otherwise on every sample of the class.
            let support = match read_episode(model, &ds)? {
                Some(ep) => ep.support,
                None => ds.samples.clone(),
            };
            let mut r = rng(rng::derive(seed, 0x6e6));
            let mut samples = Vec::new();
            for &class in &gan.classes {
                let texts: Vec<&Sample> = support.iter().filter(|s| s.label == class).collect();
                if texts.is_empty() {
                    bail!("no text embeddings for class {class}");
                }
                let mut text = Vec::with_capacity(count * ds.embed_dim);
                for i in 0..*count {
                    text.extend_from_slice(&texts[i % texts.len()].text_embedding);
                }
                let z = sample_noise(&mut r, *count, gan.arch.noise_dim);
                for (image, i) in generate_batch(&gan, &text, &z, *count)?
                    .into_iter()
                    .zip(0..)
                {
                    samples.push(Sample {
                        image,
                        text_embedding: texts[i % texts.len()].text_embedding.clone(),
                        label: class,
                    });
                }
            }
            let generated =
                Dataset::new(samples, gan.classes.clone(), ds.image_shape, ds.embed_dim)?;
            save_dataset(&generated, out)?;
            println!("{} images -> {}", generated.len(), out.display());
        }
        Command::Select { data, model } => {
            let out = common.out()?;
            let ds = load_dataset(data)?;
            let gan = load_gan(model)?;
            let episode = read_episode(model, &ds)?
                .context("model directory has no episode.json; run finetune first")?;
            let m = common.m.unwrap_or(config.selection.m[0]);
            let pool_size = common.pool_size.unwrap_or(config.selection.pool_size);
            let seeds = SeedPlan::new(seed, episode.n_shot());
            let pool = build_pool(&gan, &episode, pool_size, seeds.pool, config.selection.rule)?;
            save_pool(&pool, &out.join("pool"))?;
            let selected = select_top_m(&pool, m)?;
            let indices: BTreeMap<u32, Vec<usize>> = selected
                .iter()
                .map(|(&c, list)| (c, list.iter().map(|cand| cand.generation_index).collect()))
                .collect();
            write_json(&out.join("selected.json"), &indices)?;
            let augmented = build_augmented(&episode, &selected)?;
            save_augmented(&augmented, &out.join("augmented"))?;
            println!(
                "pool {} per class, kept {} per class: {} real + {} hallucinated -> {}",
                pool_size,
                m,
                augmented.real.len(),
                augmented.hallucinated.len(),
                out.join("augmented").display()
            );
        }
        Command::TrainClassifier { data } => {
            let out = common.out()?;
            let augmented = load_augmented(data)?;
            let hyper = ClsHyper {
                seed: SeedPlan::new(seed, common.n_shot(&config)).classifier,
                ..config.classifier.clone()
            };
            let (model, losses) = train_classifier(&augmented, &hyper)?;
            save_classifier(&model, out)?;
            write_json(&out.join("loss_trace.json"), &losses)?;
            println!(
                "trained on {} samples, final loss {:.4} -> {}",
                augmented.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Evaluate {
            data,
            classifier,
            episode,
        } => {
            let ds = load_dataset(data)?;
            let index: EpisodeIndex = read_json(episode)?;
            let episode = Episode::resolve(&ds, index)?;
            let model = load_classifier(classifier)?;
            let mut report = evaluate(&model, &episode.query)?;
            report.n_shot = episode.n_shot();
            report.seed = seed;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)
                    .with_context(|| format!("creating {}", out.display()))?;
                atomic_write(&out.join("eval_report.json"), text.as_bytes())?;
            }
            println!("{text}");
        }
        Command::RunExperiment => {
            let mut config = config;
            if let Some(s) = common.seed {
                config.seeds = vec![s];
            }
            if let Some(n) = common.n_shot {
                config.n_shot = vec![n];
            }
            if let Some(m) = common.m {
                config.selection.m = vec![m];
            }
            if let Some(p) = common.pool_size {
                config.selection.pool_size = p;
            }
            if let Some(out) = &common.out {
                config.output_dir = out.clone();
            }
            let record = run_experiment(&config)?;
            let failed = record.cells.iter().filter(|c| c.report().is_none()).count();
            plot_report(&record, &config.output_dir.join("report"))?;
            println!("{}", summarize(&record)?.to_markdown());
            if failed > 0 {
                log::warn!(
                    "{failed} of {} cells failed; see cells/*.json",
                    record.cells.len()
                );
            }
        }
        Command::Summarize { run } => {
            let record = RunRecord::load(&run.join("run_record.json"))?;
            let summary = summarize(&record)?;
            let out = common.out.as_deref().unwrap_or(run);
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            atomic_write(&out.join("summary.csv"), summary.to_csv().as_bytes())?;
            println!("{}", summary.to_markdown());
        }
        Command::Plot { run } => {
            let record = RunRecord::load(&run.join("run_record.json"))?;
            let out = common.out.clone().unwrap_or_else(|| run.join("report"));
            for path in plot_report(&record, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn read_episode(model_dir: &Path, ds: &Dataset) -> anyhow::Result<Option<Episode>> {
    let path = model_dir.join("episode.json");
    if !path.exists() {
        return Ok(None);
    }
    let index: EpisodeIndex = read_json(&path)?;
    Ok(Some(Episode::resolve(ds, index)?))
}

fn save_augmented(augmented: &AugmentedDataset, dir: &Path) -> anyhow::Result<()> {
    let (ds, provenance) = augmented.to_dataset()?;
    save_dataset(&ds, dir)?;
    write_json(&dir.join("provenance.json"), &provenance)?;
    Ok(())
}

/// A dataset directory as classifier training data; `provenance.json`, when
/// present, marks which samples are hallucinated.
fn load_augmented(dir: &Path) -> anyhow::Result<AugmentedDataset> {
    let ds = load_dataset(dir)?;
    let provenance_path = dir.join("provenance.json");
    let provenance: Vec<Provenance> = if provenance_path.exists() {
        read_json(&provenance_path)?
    } else {
        vec![Provenance::Real; ds.len()]
    };
    if provenance.len() != ds.len() {
        bail!(
            "provenance.json has {} entries for {} samples",
            provenance.len(),
            ds.len()
        );
    }
    let (mut real, mut hallucinated) = (Vec::new(), Vec::new());
    for (sample, p) in ds.samples.into_iter().zip(provenance) {
        match p {
            Provenance::Real => real.push(sample),
            Provenance::Hallucinated => hallucinated.push(sample),
        }
    }
    Ok(AugmentedDataset {
        real,
        hallucinated,
        classes: ds.classes,
        image_shape: ds.image_shape,
        embed_dim: ds.embed_dim,
    })
}
