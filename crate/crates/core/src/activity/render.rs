use std::f64::consts::PI;

use super::{ActivityMap, BBox, LabelSpace, MapGeometry, Scene};
use crate::error::{Error, Result};

/// Lower bound on each Gaussian standard deviation, in grid cells.
pub const SIGMA_MIN: f64 = 0.5;

/// Center and per-axis standard deviation of a box's Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
}

/// Box center and a quarter of the box extent per axis, floored at [`SIGMA_MIN`].
pub fn gaussian_params(b: &BBox) -> GaussianParams {
    GaussianParams {
        mu: b.center(),
        sigma: (
            (b.width() / 4.0).max(SIGMA_MIN),
            (b.height() / 4.0).max(SIGMA_MIN),
        ),
    }
}

/// Bivariate normal density with diagonal covariance at `(x, y)`.
pub fn gaussian_density(p: &GaussianParams, x: f64, y: f64) -> f64 {
    let (sx, sy) = p.sigma;
    let dx = (x - p.mu.0) / sx;
    let dy = (y - p.mu.1) / sy;
    (-0.5 * (dx * dx + dy * dy)).exp() / (2.0 * PI * sx * sy)
}

/// Person-specific map: the box's Gaussian, sampled at cell centers and
/// divided by its grid maximum, written into the action field (if any) and
/// the group field. Every other field stays zero.
///
/// `bbox` is in grid units.
pub fn render_person_map(
    bbox: &BBox,
    action: Option<usize>,
    group: usize,
    height: usize,
    width: usize,
    labels: LabelSpace,
) -> ActivityMap {
    let params = gaussian_params(bbox);
    let mut field = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            field.push(gaussian_density(&params, x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    let peak = field.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        field.iter_mut().for_each(|v| *v /= peak);
    }
    let mut map = ActivityMap::zeros(height, width, labels);
    let targets = [action, Some(labels.n_individual + group)];
    for (cell, &v) in field.iter().enumerate() {
        for f in targets.iter().flatten() {
            map.data[cell * labels.fields() + f] = v;
        }
    }
    map
}

/// Elementwise maximum of equally shaped maps; an empty list gives zeros.
pub fn combine_max(
    maps: &[ActivityMap],
    height: usize,
    width: usize,
    labels: LabelSpace,
) -> Result<ActivityMap> {
    let mut out = ActivityMap::zeros(height, width, labels);
    for m in maps {
        if !m.same_shape(&out) {
            return Err(Error::shape(format!(
                "cannot combine a {}x{}x{} map into {}x{}x{}",
                m.height,
                m.width,
                m.n_fields(),
                height,
                width,
                labels.fields()
            )));
        }
        for (o, v) in out.data.iter_mut().zip(&m.data) {
            *o = o.max(*v);
        }
    }
    Ok(out)
}

/// Ground-truth activity map of a scene. Image-space boxes are scaled onto the
/// grid and clamped; with `labels.n_individual == 0` only group fields are drawn.
pub fn build_activity_map(scene: &Scene, geometry: &MapGeometry, labels: LabelSpace) -> Result<ActivityMap> {
    if scene.group >= labels.n_group {
        return Err(Error::InvalidScene {
            scene: scene.id,
            reason: format!("group {} outside 0..{}", scene.group, labels.n_group),
        });
    }
    let (h, w) = (geometry.grid_height, geometry.grid_width);
    let mut maps = Vec::with_capacity(scene.persons.len());
    for (m, p) in scene.persons.iter().enumerate() {
        let b = geometry.to_grid(&p.bbox);
        if !b.is_valid() {
            return Err(Error::InvalidScene {
                scene: scene.id,
                reason: format!("person {m} box {:?} is empty on the grid", p.bbox),
            });
        }
        let action = if labels.n_individual == 0 {
            None
        } else if p.action < labels.n_individual {
            Some(p.action)
        } else {
            return Err(Error::InvalidScene {
                scene: scene.id,
                reason: format!("person {m} action {} outside 0..{}", p.action, labels.n_individual),
            });
        };
        maps.push(render_person_map(&b, action, scene.group, h, w, labels));
    }
    combine_max(&maps, h, w, labels)
}
