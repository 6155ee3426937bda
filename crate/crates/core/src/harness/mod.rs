//! Experiment orchestration: the end-to-end pipeline per (seed, n_shot, arm,
//! m) cell, persistence, summaries and figures.
//!
//! Per experiment seed `s` the four streams are
//! `stream_seed(s, Data | Episode | Gan | Classifier)`. The split uses the
//! episode stream directly; everything that depends on `n_shot` derives a
//! child seed with `derive(stream, n_shot)`. Both arms and every `m` share
//! the classifier seed, so an augmented cell with `m = 0` trains on exactly
//! the real-only data with exactly the real-only randomness.

mod config;
mod plot;
mod summary;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{DataSource, ExperimentConfig, SelectionParams};
pub use plot::{plot_report, Series};
pub use summary::{summarize, Summary, SummaryRow};

use crate::classifier::{evaluate, train_classifier, Arm, ClsHyper, EvalReport};
use crate::data::{make_split, sample_episode, Dataset, SplitConfig};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::rng::{self, stream_seed, Stream};
use crate::selection::{build_augmented, build_pool, select_top_m};
use crate::tcgan::{finetune_novel, load_gan, pretrain_base, save_gan, GanHyper, GanModel};

pub const RECORD_FORMAT_VERSION: &str = "1";
pub const CACHE_ENV: &str = "HALLUC_CACHE_DIR";
const POOL_TAG: u64 = 0x9001;

/// Every seed a (master seed, n_shot) cell consumes. The stage-wise CLI uses
/// the same plan, so running the stages by hand reproduces a harness cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub data: u64,
    pub split: u64,
    pub pretrain: u64,
    pub episode: u64,
    pub finetune: u64,
    pub pool: u64,
    pub classifier: u64,
}

impl SeedPlan {
    pub fn new(seed: u64, n_shot: usize) -> Self {
        let n = n_shot as u64;
        let episode = stream_seed(seed, Stream::Episode);
        let gan = stream_seed(seed, Stream::Gan);
        SeedPlan {
            data: stream_seed(seed, Stream::Data),
            split: episode,
            pretrain: gan,
            episode: rng::derive(episode, n),
            finetune: rng::derive(gan, n),
            pool: rng::derive(gan, POOL_TAG + n),
            classifier: rng::derive(stream_seed(seed, Stream::Classifier), n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok { report: EvalReport },
    Failed { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub config_hash: String,
    pub arm: Arm,
    pub seed: u64,
    pub n_shot: usize,
    pub m: usize,
    pub outcome: CellOutcome,
    pub seconds: f64,
}

impl CellRecord {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            CellOutcome::Ok { report } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }

    fn file_name(arm: Arm, seed: u64, n_shot: usize, m: usize) -> String {
        format!("{arm}_s{seed}_n{n_shot}_m{m}.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: String,
    pub config_hash: String,
    pub cells: Vec<CellRecord>,
    /// Wall-clock seconds per stage, keyed `s{seed}/{stage}`.
    pub timings: BTreeMap<String, f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn cell(&self, arm: Arm, seed: u64, n_shot: usize, m: usize) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.arm == arm && c.seed == seed && c.n_shot == n_shot && c.m == m)
    }
}

/// The (arm, m) pairs evaluated for every (seed, n_shot).
pub fn arm_cells(config: &ExperimentConfig) -> Vec<(Arm, usize)> {
    let mut cells = Vec::new();
    for &arm in &config.arms {
        match arm {
            Arm::RealOnly => cells.push((arm, 0)),
            Arm::Augmented => cells.extend(config.selection.m.iter().map(|&m| (arm, m))),
        }
    }
    cells
}

pub fn cache_dir(config: &ExperimentConfig) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| config.output_dir.join("cache"))
}

fn sha_json<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(value).expect("serializable"),
    ))
}

/// Writes into `<dir>.tmp` through `write`, then renames onto `dir`.
fn write_dir_atomically(dir: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = dir.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    write(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

/// Pretrained base model, reused from the cache when the (data, split, GAN
/// hyperparameters) key matches.
fn cached_pretrain(
    config: &ExperimentConfig,
    dataset: &Dataset,
    split: &SplitConfig,
    hyper: &GanHyper,
    data_seed: u64,
) -> Result<(GanModel<f32>, PathBuf, bool)> {
    let key = sha_json(&(config.data.effective(data_seed), split, hyper));
    let dir = cache_dir(config).join(format!("pretrain-{}", &key[..16]));
    if dir.join("model_manifest.json").exists() {
        return Ok((load_gan(&dir)?, dir, true));
    }
    let (model, trace) = pretrain_base(dataset, split, hyper)?;
    write_dir_atomically(&dir, |tmp| {
        save_gan(&model, tmp)?;
        write_json(&tmp.join("trace.json"), &trace)
    })?;
    // Reload so fresh and cached runs see identical f32 parameters.
    Ok((load_gan(&dir)?, dir, false))
}

fn failed(err: &Error) -> CellOutcome {
    let mut message = err.to_string();
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        message = format!("{message}: {s}");
        source = s.source();
    }
    CellOutcome::Failed {
        kind: err.kind().into(),
        message,
    }
}

/// Reads completed cells of a previous run in `dir`, refusing results made
/// under a different config hash.
fn existing_cells(dir: &Path, hash: &str) -> Result<BTreeMap<String, CellRecord>> {
    let mut out = BTreeMap::new();
    let record = dir.join("run_record.json");
    if record.exists() {
        let r: RunRecord = read_json(&record)?;
        if r.config_hash != hash {
            return Err(Error::HashMismatch {
                existing: r.config_hash,
                current: hash.into(),
            });
        }
    }
    let cells = dir.join("cells");
    if !cells.exists() {
        return Ok(out);
    }
    let entries = fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&cells, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let cell: CellRecord = read_json(&path)?;
        if cell.config_hash != hash {
            return Err(Error::HashMismatch {
                existing: cell.config_hash,
                current: hash.into(),
            });
        }
        if cell.report().is_some() {
            out.insert(
                CellRecord::file_name(cell.arm, cell.seed, cell.n_shot, cell.m),
                cell,
            );
        }
    }
    Ok(out)
}

struct SeedContext {
    dataset: Dataset,
    split: SplitConfig,
    /// Present when an augmented arm is configured; a pretraining failure
    /// only fails the augmented cells.
    base: Option<std::result::Result<GanModel<f32>, Error>>,
}

/// Runs every cell of `config`. Stage failures are recorded in the affected
/// cells and never abort sibling cells; invalid configs and hash mismatches
/// are returned as errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let out = &config.output_dir;
    let hash = config.hash();
    let done = existing_cells(out, &hash)?;
    fs::create_dir_all(out.join("cells")).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), config)?;

    let mut cells = Vec::new();
    let mut timings = BTreeMap::new();
    let mut checkpoints = Vec::new();
    let plan = arm_cells(config);

    for &seed in &config.seeds {
        let missing_any = config.n_shot.iter().any(|&n| {
            plan.iter()
                .any(|&(arm, m)| !done.contains_key(&CellRecord::file_name(arm, seed, n, m)))
        });
        let needs_gan = config.arms.contains(&Arm::Augmented);
        let t = Instant::now();
        let ctx: Option<Result<SeedContext>> = missing_any.then(|| {
            let seeds = SeedPlan::new(seed, 0);
            let data_seed = seeds.data;
            let dataset = config.data.load(data_seed)?;
            let split = make_split(&dataset, config.base_fraction, seeds.split)?;
            let base = if needs_gan {
                let hyper = GanHyper {
                    seed: seeds.pretrain,
                    ..config.gan.clone()
                };
                Some(
                    cached_pretrain(config, &dataset, &split, &hyper, data_seed).map(
                        |(model, dir, _)| {
                            checkpoints.push(dir);
                            model
                        },
                    ),
                )
            } else {
                None
            };
            Ok(SeedContext {
                dataset,
                split,
                base,
            })
        });
        timings.insert(format!("s{seed}/setup"), t.elapsed().as_secs_f64());

        for &n_shot in &config.n_shot {
            let pending: Vec<(Arm, usize)> = plan
                .iter()
                .copied()
                .filter(|&(arm, m)| {
                    !done.contains_key(&CellRecord::file_name(arm, seed, n_shot, m))
                })
                .collect();
            let mut outcomes: Vec<(Arm, usize, CellOutcome, f64)> = Vec::new();
            match &ctx {
                Some(Ok(ctx)) if !pending.is_empty() => {
                    let t = Instant::now();
                    let group = run_group(config, seed, n_shot, ctx, &pending, &mut checkpoints);
                    timings.insert(format!("s{seed}/n{n_shot}"), t.elapsed().as_secs_f64());
                    match group {
                        Ok(results) => outcomes.extend(results),
                        Err(e) => {
                            outcomes.extend(pending.iter().map(|&(a, m)| (a, m, failed(&e), 0.0)))
                        }
                    }
                }
                Some(Err(e)) => {
                    outcomes.extend(pending.iter().map(|&(a, m)| (a, m, failed(e), 0.0)))
                }
                _ => {}
            }
            for (arm, m, outcome, seconds) in outcomes {
                let cell = CellRecord {
                    config_hash: hash.clone(),
                    arm,
                    seed,
                    n_shot,
                    m,
                    outcome,
                    seconds,
                };
                write_json(
                    &out.join("cells")
                        .join(CellRecord::file_name(arm, seed, n_shot, m)),
                    &cell,
                )?;
                cells.push(cell);
            }
            for &(arm, m) in &plan {
                if let Some(c) = done.get(&CellRecord::file_name(arm, seed, n_shot, m)) {
                    cells.push(c.clone());
                }
            }
        }
    }
    cells.sort_by_key(|c| (c.seed, c.n_shot, c.arm, c.m));
    let record = RunRecord {
        format_version: RECORD_FORMAT_VERSION.into(),
        config_hash: hash,
        cells,
        timings,
        checkpoints,
    };
    write_json(&out.join("run_record.json"), &record)?;
    Ok(record)
}

/// One (seed, n_shot): episode, then per cell the optional GAN stages and the
/// classifier. GAN stages run once and are shared by all augmented cells.
fn run_group(
    config: &ExperimentConfig,
    seed: u64,
    n_shot: usize,
    ctx: &SeedContext,
    pending: &[(Arm, usize)],
    checkpoints: &mut Vec<PathBuf>,
) -> Result<Vec<(Arm, usize, CellOutcome, f64)>> {
    let seeds = SeedPlan::new(seed, n_shot);
    let episode = sample_episode(
        &ctx.dataset,
        &ctx.split,
        n_shot,
        config.query_per_class,
        seeds.episode,
    )?;
    let cls = ClsHyper {
        seed: seeds.classifier,
        ..config.classifier.clone()
    };

    let mut pool = None;
    let mut results = Vec::new();
    for &(arm, m) in pending {
        let t = Instant::now();
        if arm == Arm::Augmented {
            match &ctx.base {
                Some(Ok(_)) => {}
                Some(Err(e)) => {
                    results.push((arm, m, failed(e), 0.0));
                    continue;
                }
                None => {
                    results.push((
                        arm,
                        m,
                        failed(&Error::Config("no pretrained model".into())),
                        0.0,
                    ));
                    continue;
                }
            }
        }
        let outcome = (|| -> Result<EvalReport> {
            let augmented = match arm {
                Arm::RealOnly => build_augmented(&episode, &BTreeMap::new())?,
                Arm::Augmented => {
                    if pool.is_none() {
                        let hyper = GanHyper {
                            seed: seeds.finetune,
                            ..config.gan.clone()
                        };
                        let Some(Ok(base)) = &ctx.base else {
                            unreachable!("checked before the cell runs")
                        };
                        let (finetuned, trace) = finetune_novel(base, &episode, &hyper)?;
                        let dir = config
                            .output_dir
                            .join("checkpoints")
                            .join(format!("s{seed}_n{n_shot}"));
                        write_dir_atomically(&dir, |tmp| {
                            save_gan(&finetuned, tmp)?;
                            write_json(&tmp.join("trace.json"), &trace)?;
                            write_json(&tmp.join("episode.json"), &episode.index)
                        })?;
                        checkpoints.push(dir.clone());
                        let finetuned = load_gan(&dir)?;
                        pool = Some(build_pool(
                            &finetuned,
                            &episode,
                            config.selection.pool_size,
                            seeds.pool,
                            config.selection.rule,
                        )?);
                    }
                    let selected = select_top_m(pool.as_ref().expect("pool built"), m)?;
                    build_augmented(&episode, &selected)?
                }
            };
            let (model, _) = train_classifier(&augmented, &cls)?;
            Ok(evaluate(&model, &episode.query)?.with_meta(arm, n_shot, m, seed))
        })();
        let outcome = match outcome {
            Ok(report) => CellOutcome::Ok { report },
            Err(e) => {
                log::warn!("cell {arm} seed {seed} n_shot {n_shot} m {m} failed: {e}");
                failed(&e)
            }
        };
        results.push((arm, m, outcome, t.elapsed().as_secs_f64()));
    }
    Ok(results)
}
