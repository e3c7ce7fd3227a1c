//! Losses, the two-phase training loop, prediction and scoring.
//!
//! Phase 1 fits the activity maps alone; phase 2 adds the group loss and
//! trains everything jointly. Adam moments persist across learning-rate drops
//! inside a phase and are reset when the phase changes.

mod check;
mod loss;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{argmax_first, build_activity_map, decode_group_by_pooling, ActivityMap, LabelSpace, MapGeometry};
use crate::data::Dataset;
use crate::engine::{adam_step, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::CrmParams;

pub use loss::{
    graph_loss, loss_activity_stage, loss_activity_total, loss_group, loss_total, LossVars, LossWeights,
};
pub use check::{check_model_gradients, GroupCheck};
pub use metrics::{fuse_predictions, ClassMerge, EvalReport};

/// `epochs` consecutive epochs at learning rate `lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub schedule: Vec<LrStep>,
    pub weights: LossWeights,
}

impl PhaseConfig {
    pub fn epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub batch_size: usize,
    /// Input stream: 0 = appearance, 1 = motion.
    #[serde(default)]
    pub modality: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    /// Worker threads for per-sample gradients; results do not depend on it.
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1: PhaseConfig {
                schedule: vec![LrStep { epochs: 15, lr: 1e-3 }, LrStep { epochs: 5, lr: 1e-4 }],
                weights: LossWeights::PHASE1,
            },
            phase2: PhaseConfig {
                schedule: vec![LrStep { epochs: 10, lr: 1e-3 }, LrStep { epochs: 5, lr: 1e-4 }],
                weights: LossWeights::PHASE2,
            },
            batch_size: 8,
            modality: 0,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        for (name, p) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            if p.schedule.iter().any(|s| !(s.lr.is_finite() && s.lr > 0.0)) {
                return Err(Error::config(name, "learning rates must be positive"));
            }
            let w = p.weights;
            if !(w.activity.is_finite() && w.group.is_finite() && w.activity >= 0.0 && w.group >= 0.0) {
                return Err(Error::config(name, "loss weights must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// `(phase, lr, weights)` of every epoch, in order.
    pub fn plan(&self) -> Vec<(usize, f64, LossWeights)> {
        let mut out = Vec::new();
        for (phase, p) in [(1, &self.phase1), (2, &self.phase2)] {
            for s in &p.schedule {
                out.extend(std::iter::repeat_n((phase, s.lr, p.weights), s.epochs));
            }
        }
        out
    }
}

/// One line of the training log. Held-out fields are `None` without a
/// held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, continuing across phases and resumed runs.
    pub epoch: usize,
    pub phase: usize,
    pub lr: f64,
    /// Mean training objective over the epoch's samples.
    pub train_loss: f64,
    /// Group accuracy of the predictions made during the epoch's updates.
    pub train_mca: f64,
    /// Mean held-out activity loss per stage.
    pub heldout_stage_loss: Option<Vec<f64>>,
    pub heldout_group_loss: Option<f64>,
    pub heldout_mca: Option<f64>,
}

/// Where a run stands: completed epochs and the optimizer of the current phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub phase: usize,
    pub adam: AdamState,
}

/// Ground-truth maps on the model's grid. A model without individual fields
/// gets group fields only.
pub fn truth_maps(model: &CrmParams, data: &Dataset) -> Result<Vec<Tensor>> {
    let cfg = model.config();
    if (cfg.image_height, cfg.image_width) != (data.config.image_height, data.config.image_width) {
        return Err(Error::config(
            "image_height",
            format!(
                "model expects {}x{} images, dataset has {}x{}",
                cfg.image_height, cfg.image_width, data.config.image_height, data.config.image_width
            ),
        ));
    }
    if cfg.n_group != data.config.n_group || (cfg.n_individual != 0 && cfg.n_individual != data.config.n_individual) {
        return Err(Error::config("n_group", "model and dataset label counts differ"));
    }
    let geometry = MapGeometry {
        image_height: cfg.image_height,
        image_width: cfg.image_width,
        grid_height: cfg.grid_height,
        grid_width: cfg.grid_width,
    };
    let labels = LabelSpace::new(cfg.n_individual, cfg.n_group);
    data.scenes
        .iter()
        .map(|s| build_activity_map(s, &geometry, labels).map(|m| m.to_tensor()))
        .collect()
}

struct SampleOut {
    grads: Vec<f64>,
    loss: f64,
    probs: Option<Vec<f64>>,
}

fn sample_grads(
    model: &CrmParams,
    data: &Dataset,
    index: usize,
    truth: &Tensor,
    modality: usize,
    weights: LossWeights,
) -> Result<SampleOut> {
    let clip = data.clip(index, modality)?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let fv = model.forward_graph(&mut g, &vars, &clip, true)?;
    let t = g.constant(truth.clone());
    let lv = graph_loss(&mut g, &fv.stage_maps, t, fv.probs, data.scenes[index].group, weights)?;
    let loss = g.value(lv.total).item();
    g.backward(lv.total)?;
    Ok(SampleOut {
        grads: model.collect_grads(&g, &vars),
        loss,
        probs: fv.probs.map(|p| g.value(p).data().to_vec()),
    })
}

/// Per-scene outputs of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub stage_loss: Vec<f64>,
    pub group_loss: f64,
    /// Group class read off the final map by pooling over the person boxes.
    pub pooled_group: usize,
}

impl Prediction {
    pub fn group(&self) -> usize {
        argmax_first(&self.probs)
    }
}

fn run_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Forward pass over every scene.
pub fn predict(model: &CrmParams, data: &Dataset, modality: usize, threads: usize) -> Result<Vec<Prediction>> {
    let truths = truth_maps(model, data)?;
    let cfg = model.config();
    let geometry = MapGeometry {
        image_height: cfg.image_height,
        image_width: cfg.image_width,
        grid_height: cfg.grid_height,
        grid_width: cfg.grid_width,
    };
    let one = |i: usize| -> Result<Prediction> {
        let out = model.forward(&data.clip(i, modality)?)?;
        let stage_loss = out
            .stage_maps
            .iter()
            .map(|m| loss_activity_stage(m, &truths[i]))
            .collect::<Result<Vec<_>>>()?;
        let scene = &data.scenes[i];
        let map = ActivityMap::from_tensor(out.final_map(), cfg.labels())?;
        let boxes: Vec<_> = scene.boxes().iter().map(|b| geometry.to_grid(b)).collect();
        let pooled_group = if boxes.is_empty() {
            0
        } else {
            decode_group_by_pooling(&map, &boxes)?.0
        };
        Ok(Prediction {
            group_loss: loss_group(&out.probs, scene.group)?,
            probs: out.probs,
            stage_loss,
            pooled_group,
        })
    };
    run_pool(threads, || {
        if threads <= 1 {
            (0..data.len()).map(one).collect()
        } else {
            (0..data.len()).into_par_iter().map(one).collect()
        }
    })?
}

/// How the group class is read from a model's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GroupDecoder {
    /// Argmax of the aggregation head's probabilities.
    #[default]
    Head,
    /// Pooling of the final map's group fields over the person boxes.
    Pooling,
}

pub fn evaluate(
    model: &CrmParams,
    data: &Dataset,
    modality: usize,
    decoder: GroupDecoder,
    merge: Option<&ClassMerge>,
) -> Result<EvalReport> {
    let preds = predict(model, data, modality, 1)?;
    let pred: Vec<usize> = preds
        .iter()
        .map(|p| match decoder {
            GroupDecoder::Head => p.group(),
            GroupDecoder::Pooling => p.pooled_group,
        })
        .collect();
    let truth: Vec<usize> = data.scenes.iter().map(|s| s.group).collect();
    EvalReport::from_labels(&truth, &pred, data.config.n_group, merge)
}

/// Held-out summary: mean stage losses, mean group loss, accuracy.
fn heldout_summary(model: &CrmParams, data: &Dataset, modality: usize, threads: usize) -> Result<(Vec<f64>, f64, f64)> {
    let preds = predict(model, data, modality, threads)?;
    let n = preds.len().max(1) as f64;
    let stages = model.config().stages;
    let mut stage = vec![0.0; stages];
    let mut lg = 0.0;
    let mut correct = 0usize;
    for (p, s) in preds.iter().zip(&data.scenes) {
        for (a, l) in stage.iter_mut().zip(&p.stage_loss) {
            *a += l;
        }
        lg += p.group_loss;
        correct += usize::from(p.group() == s.group);
    }
    Ok((stage.iter().map(|v| v / n).collect(), lg / n, correct as f64 / n))
}

/// Two-phase training. `resume` continues a run after its last completed
/// epoch; `on_epoch` sees each record as soon as it is produced.
pub fn train_two_step(
    mut model: CrmParams,
    train: &Dataset,
    heldout: Option<&Dataset>,
    config: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&EpochRecord, &CrmParams, &TrainState) -> Result<()>,
) -> Result<(CrmParams, TrainState, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let truths = truth_maps(&model, train)?;
    let plan = config.plan();
    let numel = model.params().numel();
    let mut state = match resume {
        Some(s) => {
            if s.adam.len() != numel {
                return Err(Error::shape(format!(
                    "resumed optimizer covers {} parameters, model has {numel}",
                    s.adam.len()
                )));
            }
            s
        }
        None => TrainState {
            epoch: 0,
            phase: plan.first().map_or(1, |p| p.0),
            adam: AdamState::new(numel, 0.0),
        },
    };
    let mut records = Vec::new();
    let mut flat = model.params().flatten();
    for (e, &(phase, lr, weights)) in plan.iter().enumerate().skip(state.epoch) {
        let epoch = e + 1;
        if phase != state.phase {
            state.phase = phase;
            state.adam = AdamState::new(numel, lr);
        }
        state.adam.learning_rate = lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let outs: Vec<Result<SampleOut>> = run_pool(config.threads, || {
                let f = |&i: &usize| sample_grads(&model, train, i, &truths[i], config.modality, weights);
                if config.threads <= 1 {
                    batch.iter().map(f).collect()
                } else {
                    batch.par_iter().map(f).collect()
                }
            })?;
            let mut grads = vec![0.0; numel];
            for (&i, out) in batch.iter().zip(outs) {
                let out = out?;
                if !out.loss.is_finite() {
                    return Err(Error::Diverged {
                        phase,
                        epoch,
                        reason: format!("loss {} on scene {}", out.loss, train.scenes[i].id),
                    });
                }
                loss_sum += out.loss;
                if let Some(p) = &out.probs {
                    correct += usize::from(argmax_first(p) == train.scenes[i].group);
                }
                for (a, g) in grads.iter_mut().zip(&out.grads) {
                    *a += g;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            adam_step(&mut flat, &grads, &mut state.adam)?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    phase,
                    epoch,
                    reason: "non-finite parameter after an update".into(),
                });
            }
            model.params_mut().assign_flat(&flat)?;
        }
        state.epoch = epoch;

        let n = train.len() as f64;
        let held = heldout
            .map(|h| heldout_summary(&model, h, config.modality, config.threads))
            .transpose()?;
        let record = EpochRecord {
            epoch,
            phase,
            lr,
            train_loss: loss_sum / n,
            train_mca: correct as f64 / n,
            heldout_stage_loss: held.as_ref().map(|h| h.0.clone()),
            heldout_group_loss: held.as_ref().map(|h| h.1),
            heldout_mca: held.as_ref().map(|h| h.2),
        };
        on_epoch(&record, &model, &state)?;
        records.push(record);
    }
    Ok((model, state, records))
}
