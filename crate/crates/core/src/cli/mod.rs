//! Command implementations behind the `crm` binary. Every command is a plain
//! function so it can be driven from tests and examples as well.
//!
//! Exit codes: 0 success, 1 run or verification failure, 2 usage or config
//! error.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::activity::image::{composite_image, field_image};
use crate::activity::{build_activity_map, ActivityMap};
use crate::data::{generate_synthetic, load_dataset, save_dataset, split_dataset, Dataset, SyntheticConfig};
use crate::engine::{AdamState, Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::model::{CrmParams, ModelConfig};
use crate::training::{
    check_model_gradients, evaluate, fuse_predictions, predict, train_two_step, truth_maps, ClassMerge,
    EvalReport, GroupCheck, GroupDecoder, LossWeights, TrainState,
};

pub use config::{Ablation, Paths, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.crm";
pub const LOG_FILE: &str = "epochs.jsonl";

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub scenes: usize,
    pub class_counts: Vec<usize>,
}

/// Generates the configured synthetic dataset and writes it to `paths.dataset`.
pub fn cmd_generate(run: &RunConfig) -> Result<GenerateSummary> {
    let ds = generate_synthetic(&run.data)?;
    if let Some(dir) = run.paths.dataset.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_dataset(&ds, &run.paths.dataset)?;
    Ok(GenerateSummary {
        path: run.paths.dataset.clone(),
        scenes: ds.len(),
        class_counts: ds.class_counts(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedState {
    epoch: usize,
    phase: usize,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
}

/// The run as recorded in checkpoints: output locations are left out so
/// identical runs written to different directories produce identical files.
fn recorded_run(run: &RunConfig) -> RunConfig {
    let mut r = run.clone();
    r.paths.out_dir = PathBuf::new();
    r
}

pub fn save_checkpoint(model: &CrmParams, run: &RunConfig, state: &TrainState, path: &Path) -> Result<()> {
    let saved = SavedState {
        epoch: state.epoch,
        phase: state.phase,
        step: state.adam.step,
        beta1: state.adam.beta1,
        beta2: state.adam.beta2,
        epsilon: state.adam.epsilon,
        learning_rate: state.adam.learning_rate,
    };
    let mut ck = model.to_checkpoint(serde_json::json!({
        "run": recorded_run(run),
        "state": saved,
    }));
    let n = state.adam.len();
    ck.tensors.push("adam.m", Tensor::new(vec![n], state.adam.m.clone())?);
    ck.tensors.push("adam.v", Tensor::new(vec![n], state.adam.v.clone())?);
    ck.save(path)
}

/// A checkpoint written by [`cmd_train`].
pub struct RunCheckpoint {
    pub model: CrmParams,
    pub run: RunConfig,
    pub state: TrainState,
}

pub fn load_checkpoint(path: &Path) -> Result<RunCheckpoint> {
    let ck = Checkpoint::load(path)?;
    let model = CrmParams::from_checkpoint(&ck)?;
    let bad = |field: &str, e: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("metadata.extra.{field}"),
        reason: e,
    };
    let run: RunConfig =
        serde_json::from_value(ck.metadata["extra"]["run"].clone()).map_err(|e| bad("run", e.to_string()))?;
    let s: SavedState =
        serde_json::from_value(ck.metadata["extra"]["state"].clone()).map_err(|e| bad("state", e.to_string()))?;
    let moment = |name: &str| -> Result<Vec<f64>> {
        ck.tensors
            .find(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| bad("tensors", format!("missing {name}")))
    };
    let adam = AdamState {
        step: s.step,
        m: moment("adam.m")?,
        v: moment("adam.v")?,
        beta1: s.beta1,
        beta2: s.beta2,
        epsilon: s.epsilon,
        learning_rate: s.learning_rate,
    };
    Ok(RunCheckpoint {
        model,
        run,
        state: TrainState {
            epoch: s.epoch,
            phase: s.phase,
            adam,
        },
    })
}

/// Training and held-out parts of the run's dataset.
pub fn run_split(run: &RunConfig, ds: &Dataset) -> Result<(Dataset, Option<Dataset>)> {
    if run.train_fraction >= 1.0 {
        return Ok((ds.clone(), None));
    }
    let (a, b) = split_dataset(ds, run.train_fraction, run.train.seed)?;
    Ok((a, Some(b)))
}

fn check_dataset(run: &RunConfig, ds: &Dataset) -> Result<()> {
    let (a, b) = (&run.data, &ds.config);
    let same = (a.image_height, a.image_width, a.grid_height, a.grid_width, a.n_individual, a.n_group)
        == (b.image_height, b.image_width, b.grid_height, b.grid_width, b.n_individual, b.n_group);
    if !same {
        return Err(Error::config(
            "data",
            format!("dataset {} was generated with a different geometry or label space", run.paths.dataset.display()),
        ));
    }
    if ds.frames.is_none() {
        return Err(Error::config("paths.dataset", "dataset has no frames"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs_run: usize,
    pub last: Option<crate::training::EpochRecord>,
}

/// Two-phase training on the run's dataset. Writes `checkpoint.crm` after
/// every epoch and appends one JSON line per epoch to `epochs.jsonl`. With
/// `resume`, continues from the checkpoint in `out_dir`.
pub fn cmd_train(run: &RunConfig, resume: bool) -> Result<TrainSummary> {
    let ds = load_dataset(&run.paths.dataset)?;
    check_dataset(run, &ds)?;
    let (train, heldout) = run_split(run, &ds)?;
    let dir = &run.paths.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(LOG_FILE);

    let (model, state) = if resume && ck_path.exists() {
        let ck = load_checkpoint(&ck_path)?;
        if recorded_run(&ck.run) != recorded_run(run) {
            return Err(Error::config("resume", "checkpoint was written by a different run config"));
        }
        (ck.model, Some(ck.state))
    } else {
        (CrmParams::init(run.model.clone())?, None)
    };
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(state.is_some())
        .truncate(state.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let (_, _, records) = train_two_step(model, &train, heldout.as_ref(), &run.train, state, |rec, model, state| {
        let line = serde_json::to_string(rec).expect("plain record");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(model, run, state, &ck_path)
    })?;
    Ok(TrainSummary {
        checkpoint: ck_path,
        log: log_path,
        epochs_run: records.len(),
        last: records.last().cloned(),
    })
}

/// Scenes scored by [`cmd_eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Subset {
    #[default]
    All,
    Train,
    Heldout,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Dataset to score; defaults to the one the checkpoint was trained on.
    pub dataset: Option<PathBuf>,
    pub subset: Subset,
    /// Class merge such as `"4,5->4"` (1-based).
    pub merge: Option<String>,
    /// Second checkpoint whose probabilities are averaged in.
    pub fuse: Option<PathBuf>,
    pub threads: usize,
}

fn modality_of(ck: &RunCheckpoint) -> usize {
    ck.run.train.modality
}

/// Scores a checkpoint: confusion matrix, MCA and MPCA.
pub fn cmd_eval(checkpoint: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let ck = load_checkpoint(checkpoint)?;
    let path = opts.dataset.clone().unwrap_or_else(|| ck.run.paths.dataset.clone());
    let ds = load_dataset(&path)?;
    let ds = match opts.subset {
        Subset::All => ds,
        Subset::Train | Subset::Heldout => {
            let (train, held) = run_split(&ck.run, &ds)?;
            match opts.subset {
                Subset::Train => train,
                _ => held.ok_or_else(|| Error::config("subset", "the run held nothing out"))?,
            }
        }
    };
    let merge = opts
        .merge
        .as_deref()
        .map(|m| ClassMerge::parse(m, ds.config.n_group))
        .transpose()?;
    let threads = opts.threads.max(1);
    let decoder = ck.run.ablation.decoder();
    let truth: Vec<usize> = ds.scenes.iter().map(|s| s.group).collect();
    let pred: Vec<usize> = match &opts.fuse {
        None => {
            if threads == 1 {
                return evaluate(&ck.model, &ds, modality_of(&ck), decoder, merge.as_ref());
            }
            let preds = predict(&ck.model, &ds, modality_of(&ck), threads)?;
            preds
                .iter()
                .map(|p| match decoder {
                    GroupDecoder::Head => p.group(),
                    GroupDecoder::Pooling => p.pooled_group,
                })
                .collect()
        }
        Some(other) => {
            let ck2 = load_checkpoint(other)?;
            let a = predict(&ck.model, &ds, modality_of(&ck), threads)?;
            let b = predict(&ck2.model, &ds, modality_of(&ck2), threads)?;
            a.iter()
                .zip(&b)
                .map(|(x, y)| fuse_predictions(&x.probs, &y.probs).map(|p| crate::activity::argmax_first(&p)))
                .collect::<Result<_>>()?
        }
    };
    EvalReport::from_labels(&truth, &pred, ds.config.n_group, merge.as_ref())
}

fn write_map_images(map: &ActivityMap, prefix: &str, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let labels = map.labels();
    for f in 0..labels.fields() {
        let p = dir.join(format!("{prefix}_field{:02}.pgm", f + 1));
        field_image(map, f).save(&p)?;
        written.push(p);
    }
    if labels.n_individual > 0 {
        let p = dir.join(format!("{prefix}_individual.ppm"));
        composite_image(map, 0..labels.n_individual).save(&p)?;
        written.push(p);
    }
    let p = dir.join(format!("{prefix}_group.ppm"));
    composite_image(map, labels.n_individual..labels.fields()).save(&p)?;
    written.push(p);
    Ok(())
}

/// Writes one grayscale image per field plus individual and group color
/// composites for scene `scene_id`: the ground truth (`truth_*`) when
/// `checkpoint` is `None`, otherwise every predicted stage (`stage{t}_*`).
pub fn cmd_render(dataset: &Path, scene_id: usize, out_dir: &Path, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(dataset)?;
    let index = ds
        .scenes
        .iter()
        .position(|s| s.id == scene_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no scene with id {scene_id}")))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    match checkpoint {
        None => {
            let map = build_activity_map(&ds.scenes[index], &ds.geometry(), ds.labels())?;
            write_map_images(&map, "truth", out_dir, &mut written)?;
        }
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let out = ck.model.forward(&ds.clip(index, modality_of(&ck))?)?;
            for (t, map) in ck.model.stage_activity_maps(&out)?.iter().enumerate() {
                write_map_images(map, &format!("stage{}", t + 1), out_dir, &mut written)?;
            }
        }
    }
    Ok(written)
}

/// Settings of [`cmd_gradcheck`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    /// Sampled coordinates per parameter group.
    pub per_group: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                in_channels: 3,
                image_height: 48,
                image_width: 64,
                grid_height: 12,
                grid_width: 16,
                backbone_widths: vec![8, 8, 8, 8],
                backbone_pools: 3,
                stages: 2,
                n_individual: 4,
                n_group: 4,
                ..ModelConfig::default()
            }
            .with_uniform_width(8),
            per_group: 80,
            epsilon: 1e-6,
            tolerance: 1e-4,
            weights: LossWeights::PHASE2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference check of the full network on one synthetic scene,
/// reported per parameter group.
pub fn cmd_gradcheck(cfg: &GradcheckConfig, corrupt: bool) -> Result<GradcheckReport> {
    let m = &cfg.model;
    let data = SyntheticConfig {
        image_height: m.image_height,
        image_width: m.image_width,
        grid_height: m.grid_height,
        grid_width: m.grid_width,
        n_individual: m.n_individual.max(2),
        n_group: m.n_group,
        min_persons: 2,
        max_persons: 3,
        scenes: 1,
        seed: cfg.seed,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&data)?;
    let model = CrmParams::init(m.clone())?;
    let truth = truth_maps(&model, &ds)?.remove(0);
    let groups = check_model_gradients(
        &model,
        &ds.clip(0, 0)?,
        &truth,
        ds.scenes[0].group,
        cfg.weights,
        cfg.per_group,
        cfg.epsilon,
        cfg.seed,
        corrupt,
    )?;
    let passed = groups.iter().all(|g| g.max_rel_error < cfg.tolerance && g.checked > 0);
    Ok(GradcheckReport {
        groups,
        tolerance: cfg.tolerance,
        passed,
    })
}

#[derive(Parser, Debug)]
#[command(name = "crm", version, about = "Activity-map group activity recognition on synthetic scenes")]
pub struct Cli {
    /// Worker threads for training and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset described by a run config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-phase training; writes a checkpoint and an epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Confusion matrix, MCA and MPCA of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        /// Merge classes before scoring, e.g. "4,5->4" (1-based).
        #[arg(long)]
        merge: Option<String>,
        /// Average probabilities with a second checkpoint.
        #[arg(long)]
        fuse: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write activity-map images of one scene.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "ground_truth", required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        ground_truth: bool,
    },
    /// Finite-difference check of every parameter group.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Inject a gradient error to confirm the check catches it.
        #[arg(long)]
        corrupt: bool,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        reason: e.to_string(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("plain data");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: Cli) -> Result<i32> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Generate { config, seed } => {
            let run = RunConfig::load(&config)?.resolve(seed)?;
            let s = cmd_generate(&run)?;
            println!("wrote {} scenes to {}", s.scenes, s.path.display());
            for (g, c) in s.class_counts.iter().enumerate() {
                println!("group {:>2}: {c}", g + 1);
            }
            Ok(0)
        }
        Command::Train { config, seed, resume } => {
            let mut run = RunConfig::load(&config)?.resolve(seed)?;
            run.train.threads = threads;
            let s = cmd_train(&run, resume)?;
            println!("ran {} epochs; checkpoint {}; log {}", s.epochs_run, s.checkpoint.display(), s.log.display());
            if let Some(r) = s.last {
                println!("{}", serde_json::to_string(&r).expect("plain record"));
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            dataset,
            subset,
            merge,
            fuse,
            out,
        } => {
            let opts = EvalOptions {
                dataset,
                subset,
                merge,
                fuse,
                threads,
            };
            let report = cmd_eval(&checkpoint, &opts)?;
            print!("{}", report.render());
            let out = out.unwrap_or_else(|| checkpoint.with_file_name("eval.json"));
            write_json(&out, &report)?;
            println!("report written to {}", out.display());
            Ok(0)
        }
        Command::Render {
            dataset,
            scene,
            out,
            checkpoint,
            ground_truth: _,
        } => {
            let files = cmd_render(&dataset, scene, &out, checkpoint.as_deref())?;
            println!("wrote {} images to {}", files.len(), out.display());
            Ok(0)
        }
        Command::Gradcheck { config, seed, corrupt } => {
            let mut cfg: GradcheckConfig = match config {
                Some(p) => load_json(&p)?,
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = cmd_gradcheck(&cfg, corrupt)?;
            for g in &report.groups {
                println!(
                    "{:<10} params {:>6}  checked {:>3}  skipped {:>3}  max rel error {:.3e}",
                    g.group, g.params, g.checked, g.skipped, g.max_rel_error
                );
            }
            println!("{}", if report.passed { "PASS" } else { "FAIL" });
            Ok(if report.passed { 0 } else { 1 })
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
