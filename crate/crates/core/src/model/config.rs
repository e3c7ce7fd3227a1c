use serde::{Deserialize, Serialize};

use crate::activity::LabelSpace;
use crate::error::{Error, Result};

/// What the aggregation head sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationInput {
    /// Feature map concatenated with the final activity map.
    #[default]
    FeatureAndMap,
    /// Feature map only.
    FeatureOnly,
    /// Final activity map only.
    MapOnly,
}

/// Architecture of the whole network. Everything structural lives here so a
/// config file fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels per input frame.
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Output widths of the backbone's 3x3 conv blocks; the last one is `D`.
    pub backbone_widths: Vec<usize>,
    /// A 2x2 max pool follows each of the first `backbone_pools` blocks.
    pub backbone_pools: usize,
    /// Hidden widths of the initial stage: three 3x3 convs then one 1x1 conv.
    pub phi_widths: [usize; 4],
    /// Hidden widths of each refinement stage: three 7x7 convs then one 1x1 conv.
    pub psi_widths: [usize; 4],
    /// Widths of the aggregation head's three 7x7 convs.
    pub zeta_widths: [usize; 3],
    /// Number of activity-map stages `T` (1 = no refinement).
    pub stages: usize,
    pub n_individual: usize,
    pub n_group: usize,
    #[serde(default)]
    pub aggregation_input: AggregationInput,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            image_height: 96,
            image_width: 160,
            grid_height: 24,
            grid_width: 40,
            backbone_widths: vec![16, 32, 32, 32],
            backbone_pools: 3,
            phi_widths: [64, 64, 64, 128],
            psi_widths: [64, 64, 64, 128],
            zeta_widths: [64, 64, 64],
            stages: 4,
            n_individual: 4,
            n_group: 4,
            aggregation_input: AggregationInput::FeatureAndMap,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn labels(&self) -> LabelSpace {
        LabelSpace::new(self.n_individual, self.n_group)
    }

    /// Feature channels `D`.
    pub fn feature_dim(&self) -> usize {
        *self.backbone_widths.last().unwrap_or(&0)
    }

    /// Activity-map channels `N`.
    pub fn map_channels(&self) -> usize {
        self.n_individual + self.n_group
    }

    pub fn aggregation_channels(&self) -> usize {
        match self.aggregation_input {
            AggregationInput::FeatureAndMap => self.feature_dim() + self.map_channels(),
            AggregationInput::FeatureOnly => self.feature_dim(),
            AggregationInput::MapOnly => self.map_channels(),
        }
    }

    /// Same network with every hidden width set to `w`.
    pub fn with_uniform_width(mut self, w: usize) -> Self {
        self.phi_widths = [w; 4];
        self.psi_widths = [w; 4];
        self.zeta_widths = [w; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("grid_height", self.grid_height),
            ("grid_width", self.grid_width),
            ("stages", self.stages),
            ("n_group", self.n_group),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.n_group < 2 {
            return Err(Error::config("n_group", "need at least two group classes"));
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return Err(Error::config("backbone_widths", "need at least one nonzero width"));
        }
        if self.backbone_pools > self.backbone_widths.len() {
            return Err(Error::config(
                "backbone_pools",
                "cannot pool after more blocks than exist",
            ));
        }
        if self.phi_widths.contains(&0) {
            return Err(Error::config("phi_widths", "widths must be nonzero"));
        }
        if self.psi_widths.contains(&0) {
            return Err(Error::config("psi_widths", "widths must be nonzero"));
        }
        if self.zeta_widths.contains(&0) {
            return Err(Error::config("zeta_widths", "widths must be nonzero"));
        }
        Ok(())
    }
}
