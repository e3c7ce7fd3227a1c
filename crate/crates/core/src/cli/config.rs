use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::{AggregationInput, ModelConfig};
use crate::training::{GroupDecoder, TrainConfig};

/// Which variant of the network a run trains and scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Feature map and final activity map into the head; evaluate with
    /// `--fuse` for the two-stream prediction.
    Full,
    /// Head reads the feature map only.
    FeatureOnly,
    /// Head reads the final activity map only.
    MapOnly,
    /// Activity maps carry group fields only.
    GroupOnly,
    /// Group class pooled from the final map instead of the head.
    PoolDecode,
    /// Full model with `model.stages` stages.
    #[default]
    StageK,
}

impl Ablation {
    pub fn decoder(self) -> GroupDecoder {
        match self {
            Ablation::PoolDecode => GroupDecoder::Pooling,
            _ => GroupDecoder::Head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Annotation file; the frame sidecar sits next to it.
    pub dataset: PathBuf,
    /// Checkpoint, epoch log and reports.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: PathBuf::from("data/scenes.json"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Everything a run needs. Image size, grid, label counts and input channels
/// of `model` are taken from `data` when the run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
    pub paths: Paths,
    /// Share of the dataset used for training; the rest is held out.
    pub train_fraction: f64,
    /// When set, replaces the data, model and training seeds.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: Ablation::default(),
            paths: Paths::default(),
            train_fraction: 0.8,
            seed: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            location: format!("line {}, column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies the seed override and copies data-derived fields into the
    /// model, then validates the whole run.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.data.seed = s;
            self.model.seed = s;
            self.train.seed = s;
        }
        let m = &mut self.model;
        m.image_height = self.data.image_height;
        m.image_width = self.data.image_width;
        m.grid_height = self.data.grid_height;
        m.grid_width = self.data.grid_width;
        m.n_group = self.data.n_group;
        m.n_individual = if self.ablation == Ablation::GroupOnly {
            0
        } else {
            self.data.n_individual
        };
        m.in_channels = crate::data::MODALITY_CHANNELS
            .get(self.train.modality)
            .copied()
            .ok_or_else(|| Error::config("train.modality", "must be 0 or 1"))?;
        m.aggregation_input = match self.ablation {
            Ablation::FeatureOnly => AggregationInput::FeatureOnly,
            Ablation::MapOnly => AggregationInput::MapOnly,
            _ => AggregationInput::FeatureAndMap,
        };
        if self.train.modality >= self.data.modalities {
            return Err(Error::config("train.modality", "dataset does not render that modality"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1]"));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}
