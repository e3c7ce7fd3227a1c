use serde::{Deserialize, Serialize};

use crate::engine::{Graph, Tensor, Var, LOG_CLAMP};
use crate::error::{Error, Result};

/// Weights of the activity-map and group terms of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub activity: f64,
    pub group: f64,
}

impl LossWeights {
    /// Map losses only.
    pub const PHASE1: LossWeights = LossWeights {
        activity: 1.0,
        group: 0.0,
    };
    /// Joint objective with the map term strongly down-weighted.
    pub const PHASE2: LossWeights = LossWeights {
        activity: 1e-4,
        group: 1.0,
    };
}

/// Sum of squared differences over every cell and field.
pub fn loss_activity_stage(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "stage map {:?} vs ground truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Per-stage losses summed over all stages.
pub fn loss_activity_total(stage_maps: &[Tensor], truth: &Tensor) -> Result<f64> {
    if stage_maps.is_empty() {
        return Err(Error::InvalidArgument("need at least one stage".into()));
    }
    stage_maps.iter().map(|m| loss_activity_stage(m, truth)).sum()
}

/// Cross-entropy of `probs` against the one-hot `class`, divided by the
/// number of classes.
pub fn loss_group(probs: &[f64], class: usize) -> Result<f64> {
    let p = probs.get(class).ok_or_else(|| {
        Error::InvalidArgument(format!("class {class} out of range for {} probabilities", probs.len()))
    })?;
    Ok(-p.max(LOG_CLAMP).ln() / probs.len() as f64)
}

pub fn loss_total(
    stage_maps: &[Tensor],
    truth: &Tensor,
    probs: &[f64],
    class: usize,
    weights: LossWeights,
) -> Result<f64> {
    Ok(weights.activity * loss_activity_total(stage_maps, truth)? + weights.group * loss_group(probs, class)?)
}

/// Loss nodes of one sample.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    pub stages: Vec<Var>,
    pub group: Option<Var>,
}

/// Builds the weighted objective on `g`. Terms with zero weight are left out
/// entirely, so nothing upstream of them receives a gradient.
pub fn graph_loss(
    g: &mut Graph,
    stage_maps: &[Var],
    truth: Var,
    probs: Option<Var>,
    class: usize,
    weights: LossWeights,
) -> Result<LossVars> {
    let stages = stage_maps
        .iter()
        .map(|&m| g.sum_squared_error(m, truth))
        .collect::<Result<Vec<_>>>()?;
    let group = match probs {
        Some(p) => {
            let n = g.value(p).len() as f64;
            Some(g.neg_log(p, class, 1.0 / n)?)
        }
        None => None,
    };
    let mut total: Option<Var> = None;
    let mut add = |g: &mut Graph, v: Var| -> Result<()> {
        total = Some(match total {
            Some(t) => g.add(t, v)?,
            None => v,
        });
        Ok(())
    };
    if weights.activity != 0.0 {
        for &s in &stages {
            let v = g.scale(s, weights.activity);
            add(g, v)?;
        }
    }
    if weights.group != 0.0 {
        let lg = group.ok_or_else(|| {
            Error::InvalidArgument("group loss weighted but the head was not run".into())
        })?;
        let v = g.scale(lg, weights.group);
        add(g, v)?;
    }
    let total = match total {
        Some(t) => t,
        None => {
            let z = g.constant(Tensor::scalar(0.0));
            g.scale(z, 1.0)
        }
    };
    Ok(LossVars { total, stages, group })
}
