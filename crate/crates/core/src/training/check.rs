use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{graph_loss, LossWeights};
use crate::engine::{grad_check, GradCheckReport, Graph, Tensor};
use crate::error::Result;
use crate::model::{CrmParams, InputClip};

/// Finite-difference check of one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst_index: Option<usize>,
}

/// Compares backpropagated gradients of the weighted objective against
/// central differences on up to `per_group` random coordinates of every
/// parameter group. With `corrupt` the analytic gradient of the first
/// sampled coordinate of every group is doubled before comparing.
#[allow(clippy::too_many_arguments)]
pub fn check_model_gradients(
    model: &CrmParams,
    clip: &InputClip,
    truth: &Tensor,
    class: usize,
    weights: LossWeights,
    per_group: usize,
    epsilon: f64,
    seed: u64,
    corrupt: bool,
) -> Result<Vec<GroupCheck>> {
    let loss = |m: &CrmParams, with_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, with_grad);
        let fv = m.forward_graph(&mut g, &vars, clip, true)?;
        let t = g.constant(truth.clone());
        let lv = graph_loss(&mut g, &fv.stage_maps, t, fv.probs, class, weights)?;
        let value = g.value(lv.total).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(lv.total)?;
        Ok((value, m.collect_grads(&g, &vars)))
    };
    let (_, mut analytic) = loss(model, true)?;
    let mut flat = model.params().flatten();
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for group in model.groups() {
        let indices: Vec<usize> = model.group_ranges(&group).into_iter().flatten().collect();
        let n = per_group.min(indices.len());
        let mut coords: Vec<usize> = sample(&mut rng, indices.len(), n).into_iter().map(|i| indices[i]).collect();
        coords.sort_unstable();
        if corrupt {
            if let Some(&c) = coords.first() {
                analytic[c] = 2.0 * analytic[c] + 1.0;
            }
        }
        let mut failure = None;
        let report: GradCheckReport = grad_check(
            |p| {
                probe.params_mut().assign_flat(p).expect("same length");
                match loss(&probe, false) {
                    Ok((v, _)) => v,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            &mut flat,
            &analytic,
            epsilon,
            Some(&coords),
        );
        if let Some(e) = failure {
            return Err(e);
        }
        out.push(GroupCheck {
            group,
            params: indices.len(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped: report.skipped,
            worst_index: report.worst_index,
        });
    }
    Ok(out)
}
