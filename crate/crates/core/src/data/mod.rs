//! Synthetic scenes, dataset files and splits.
//!
//! A [`Dataset`] pairs annotated scenes with optional rendered frames. Frames
//! are stored as bytes (`value = byte / 255`) and expanded to `f64` tensors on
//! demand.

mod io;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activity::{LabelSpace, MapGeometry, Scene};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::model::InputClip;

pub use io::{frames_path, load_dataset, parse_annotations, save_dataset, FRAMES_MAGIC};
pub use synth::{generate_synthetic, key_actions, majority_label, render_scene, keyactor_side_label};

/// How a scene's group label follows from its persons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Most frequent individual action; ties go to the lowest action index.
    Majority,
    /// `2 * k + side`, where `k` indexes the key actor's action among the key
    /// actions and `side` is 0 for the left half of the image, 1 for the right.
    KeyactorSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub n_individual: usize,
    pub n_group: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    /// Frames per clip `K`.
    pub frames: usize,
    pub scenes: usize,
    pub seed: u64,
    /// 1 renders appearance frames only; 2 adds a two-channel motion stream.
    pub modalities: usize,
    pub rule: LabelRule,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            image_height: 96,
            image_width: 160,
            grid_height: 24,
            grid_width: 40,
            n_individual: 4,
            n_group: 4,
            min_persons: 3,
            max_persons: 8,
            frames: 1,
            scenes: 400,
            seed: 0,
            modalities: 1,
            rule: LabelRule::KeyactorSide,
        }
    }
}

/// Channels per frame of each modality.
pub const MODALITY_CHANNELS: [usize; 2] = [3, 2];

impl SyntheticConfig {
    pub fn labels(&self) -> LabelSpace {
        LabelSpace::new(self.n_individual, self.n_group)
    }

    pub fn geometry(&self) -> MapGeometry {
        MapGeometry {
            image_height: self.image_height,
            image_width: self.image_width,
            grid_height: self.grid_height,
            grid_width: self.grid_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("grid_height", self.grid_height),
            ("grid_width", self.grid_width),
            ("frames", self.frames),
            ("scenes", self.scenes),
            ("min_persons", self.min_persons),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.n_individual < 2 {
            return Err(Error::config("n_individual", "need at least two action classes"));
        }
        if self.n_group < 2 {
            return Err(Error::config("n_group", "need at least two group classes"));
        }
        if self.max_persons < self.min_persons {
            return Err(Error::config("max_persons", "must be at least min_persons"));
        }
        if !(1..=2).contains(&self.modalities) {
            return Err(Error::config("modalities", "must be 1 or 2"));
        }
        if self.image_height < 16 || self.image_width < 16 {
            return Err(Error::config("image_height", "images must be at least 16x16"));
        }
        match self.rule {
            LabelRule::Majority if self.n_group != self.n_individual => Err(Error::config(
                "n_group",
                "the majority rule needs as many group classes as actions",
            )),
            LabelRule::KeyactorSide if !self.n_group.is_multiple_of(2) => {
                Err(Error::config("n_group", "the keyactor-side rule needs an even count"))
            }
            LabelRule::KeyactorSide if self.n_group / 2 >= self.n_individual => Err(Error::config(
                "n_group",
                "the keyactor-side rule needs fewer key actions than actions",
            )),
            _ => Ok(()),
        }
    }
}

/// Rendered clip of one scene, one byte per channel value, `K x H x W x C`
/// per modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneFrames {
    pub modalities: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SyntheticConfig,
    pub scenes: Vec<Scene>,
    /// Same length as `scenes` when frames are present.
    pub frames: Option<Vec<SceneFrames>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn labels(&self) -> LabelSpace {
        self.config.labels()
    }

    pub fn geometry(&self) -> MapGeometry {
        self.config.geometry()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        for s in &self.scenes {
            s.validate(c.labels(), c.image_height, c.image_width)?;
        }
        if let Some(frames) = &self.frames {
            if frames.len() != self.scenes.len() {
                return Err(Error::shape(format!(
                    "{} frame clips for {} scenes",
                    frames.len(),
                    self.scenes.len()
                )));
            }
            let want: Vec<usize> = MODALITY_CHANNELS[..c.modalities]
                .iter()
                .map(|ch| c.frames * c.image_height * c.image_width * ch)
                .collect();
            for f in frames {
                let got: Vec<usize> = f.modalities.iter().map(Vec::len).collect();
                if got != want {
                    return Err(Error::shape(format!("frame buffer sizes {got:?}, expected {want:?}")));
                }
            }
        }
        Ok(())
    }

    /// Frames of scene `index` in `modality` (0 = appearance, 1 = motion).
    pub fn clip(&self, index: usize, modality: usize) -> Result<InputClip> {
        let frames = self
            .frames
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no frames loaded".into()))?;
        let c = &self.config;
        let bytes = frames
            .get(index)
            .and_then(|f| f.modalities.get(modality))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no modality {modality} for scene index {index}"))
            })?;
        let ch = MODALITY_CHANNELS[modality];
        let per = c.image_height * c.image_width * ch;
        let tensors = bytes
            .chunks(per)
            .map(|b| {
                Tensor::new(
                    vec![c.image_height, c.image_width, ch],
                    b.iter().map(|&v| f64::from(v) / 255.0 - 0.5).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        InputClip::new(tensors)
    }

    /// Group-label histogram.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.config.n_group];
        for s in &self.scenes {
            counts[s.group] += 1;
        }
        counts
    }

    /// Scenes at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            config: SyntheticConfig {
                scenes: indices.len(),
                ..self.config.clone()
            },
            scenes: indices.iter().map(|&i| self.scenes[i].clone()).collect(),
            frames: self
                .frames
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
        }
    }
}

/// Shuffled partition: the first `round(fraction * n)` shuffled scenes go to
/// the first set, the rest to the second. Both keep the shuffled order.
pub fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * dataset.len() as f64).round() as usize;
    Ok((dataset.subset(&order[..cut]), dataset.subset(&order[cut..])))
}
