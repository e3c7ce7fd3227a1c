//! Activity maps: one Gaussian field per individual-action class followed by
//! one per group-activity class, rasterized from annotated person boxes.
//!
//! Class indices are 0-based in memory. Field `i` holds individual action `i`
//! and field `n_individual + g` holds group activity `g`.

mod decode;
pub mod image;
mod render;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub use decode::{argmax_first, box_cells, decode_group_by_pooling, decode_individual_by_pooling};
pub use render::{
    build_activity_map, combine_max, gaussian_density, gaussian_params, render_person_map,
    GaussianParams, SIGMA_MIN,
};

/// Axis-aligned box `(x1, y1)`-`(x2, y2)`, continuous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x2 > self.x1
            && self.y2 > self.y1
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Clamped to `[0, width] x [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }
}

/// Number of individual-action and group-activity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub n_individual: usize,
    pub n_group: usize,
}

impl LabelSpace {
    pub fn new(n_individual: usize, n_group: usize) -> Self {
        LabelSpace {
            n_individual,
            n_group,
        }
    }

    /// Total field count `N = N_I + N_G`.
    pub fn fields(&self) -> usize {
        self.n_individual + self.n_group
    }

    /// Same group classes with the individual fields dropped.
    pub fn group_only(&self) -> Self {
        LabelSpace::new(0, self.n_group)
    }
}

/// Image size and activity-map grid size; boxes are scaled between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
}

impl MapGeometry {
    /// Geometry whose image and grid coincide (boxes already in grid units).
    pub fn grid(height: usize, width: usize) -> Self {
        MapGeometry {
            image_height: height,
            image_width: width,
            grid_height: height,
            grid_width: width,
        }
    }

    /// Maps an image-space box onto the grid, clamped to its bounds.
    pub fn to_grid(&self, b: &BBox) -> BBox {
        let sx = self.grid_width as f64 / self.image_width as f64;
        let sy = self.grid_height as f64 / self.image_height as f64;
        b.scaled(sx, sy)
            .clamped(self.grid_width as f64, self.grid_height as f64)
    }
}

/// One annotated person.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub bbox: BBox,
    pub action: usize,
}

/// An annotated sample: image-space person boxes with individual actions and
/// a single group activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub persons: Vec<Person>,
    pub group: usize,
    /// Person whose action and side decide the group label, when the
    /// labeling rule has one.
    pub key_actor: Option<usize>,
}

impl Scene {
    pub fn boxes(&self) -> Vec<BBox> {
        self.persons.iter().map(|p| p.bbox).collect()
    }

    pub fn validate(&self, labels: LabelSpace, image_height: usize, image_width: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidScene {
            scene: self.id,
            reason,
        };
        if self.group >= labels.n_group {
            return Err(fail(format!(
                "group {} outside 0..{}",
                self.group, labels.n_group
            )));
        }
        for (m, p) in self.persons.iter().enumerate() {
            if !p.bbox.is_valid() {
                return Err(fail(format!("person {m} has a degenerate box {:?}", p.bbox)));
            }
            if p.action >= labels.n_individual {
                return Err(fail(format!(
                    "person {m} action {} outside 0..{}",
                    p.action, labels.n_individual
                )));
            }
            let c = p.bbox.clamped(image_width as f64, image_height as f64);
            if !c.is_valid() {
                return Err(fail(format!("person {m} box lies outside the image")));
            }
        }
        if let Some(k) = self.key_actor {
            if k >= self.persons.len() {
                return Err(fail(format!("key actor {k} out of range")));
            }
        }
        Ok(())
    }
}

/// `H' x W' x N` stack of fields, individual fields first.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMap {
    height: usize,
    width: usize,
    labels: LabelSpace,
    data: Vec<f64>,
}

impl ActivityMap {
    pub fn zeros(height: usize, width: usize, labels: LabelSpace) -> Self {
        ActivityMap {
            height,
            width,
            labels,
            data: vec![0.0; height * width * labels.fields()],
        }
    }

    /// Wraps a predicted `H' x W' x N` tensor.
    pub fn from_tensor(t: &Tensor, labels: LabelSpace) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != labels.fields() {
            return Err(Error::shape(format!(
                "tensor has {c} channels, label space needs {}",
                labels.fields()
            )));
        }
        Ok(ActivityMap {
            height: h,
            width: w,
            labels,
            data: t.data().to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.labels.fields()],
            self.data.clone(),
        )
        .expect("consistent dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> LabelSpace {
        self.labels
    }

    pub fn n_fields(&self) -> usize {
        self.labels.fields()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, field: usize) -> f64 {
        self.data[(y * self.width + x) * self.n_fields() + field]
    }

    pub fn set(&mut self, y: usize, x: usize, field: usize, v: f64) {
        let n = self.n_fields();
        self.data[(y * self.width + x) * n + field] = v;
    }

    /// Row-major copy of one field.
    pub fn field(&self, field: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(field)
            .step_by(self.n_fields())
            .copied()
            .collect()
    }

    pub fn field_max(&self, field: usize) -> f64 {
        self.field(field).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &ActivityMap) -> bool {
        self.height == other.height && self.width == other.width && self.labels == other.labels
    }
}
