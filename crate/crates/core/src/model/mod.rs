//! The network: a small backbone producing the feature map `F`, the initial
//! stage `phi`, refinement stages `psi_2..psi_T` and the aggregation head `zeta`.
//!
//! ```text
//! A_1 = phi(F)
//! A_t = psi_t(F ++ A_{t-1})        1 < t <= T
//! p   = softmax(gap(zeta(F ++ A_T)))
//! ```
//!
//! `++` is channel concatenation. All convolutions are same-padded, stride 1,
//! followed by relu except the last conv of each stage and of the head.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activity::ActivityMap;
use crate::engine::{Checkpoint, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub use config::{AggregationInput, ModelConfig};

/// `K x H x W x C` input stored as one `H x W x C` tensor per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InputClip {
    pub frames: Vec<Tensor>,
}

impl InputClip {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a clip needs at least one frame".into()))?;
        first.hwc()?;
        if frames.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::shape("all frames of a clip must share one shape"));
        }
        Ok(InputClip { frames })
    }

    pub fn single(frame: Tensor) -> Result<Self> {
        InputClip::new(vec![frame])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    kernel: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    backbone: Vec<Conv>,
    phi: Vec<Conv>,
    psi: Vec<Vec<Conv>>,
    zeta: Vec<Conv>,
}

/// Parameter group names, in layout order.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// All learnable weights plus the architecture that shapes them.
#[derive(Debug, Clone)]
pub struct CrmParams {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub feature: Var,
    pub stage_maps: Vec<Var>,
    /// Aggregation logits (before softmax), when the head was run.
    pub logits: Option<Var>,
    pub probs: Option<Var>,
}

/// Plain-value result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmOutput {
    pub stage_maps: Vec<Tensor>,
    pub probs: Vec<f64>,
}

impl CrmOutput {
    pub fn final_map(&self) -> &Tensor {
        self.stage_maps.last().expect("at least one stage")
    }
}

fn push_conv(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
) -> Conv {
    let fan_in = (k * k * cin) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    let n = k * k * cin * cout;
    let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let kernel = params.push(
        format!("{name}.w"),
        Tensor::new(vec![k, k, cin, cout], w).expect("sized"),
    );
    let bias = params.push(format!("{name}.b"), Tensor::zeros(&[cout]));
    Conv { kernel, bias }
}

fn group_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CrmParams {
    /// He-normal weights and zero biases. Each layer group draws from its own
    /// random stream, so changing the head does not move the other weights.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let n = config.map_channels();
        let d = config.feature_dim();

        let mut rng = group_rng(config.seed, 0);
        let mut backbone = Vec::new();
        let mut cin = config.in_channels;
        for (i, &w) in config.backbone_widths.iter().enumerate() {
            backbone.push(push_conv(&mut params, &mut rng, &format!("backbone.{i}"), 3, cin, w));
            cin = w;
        }

        let mut rng = group_rng(config.seed, 1);
        let pw = config.phi_widths;
        let phi_shapes = [(3, d, pw[0]), (3, pw[0], pw[1]), (3, pw[1], pw[2]), (1, pw[2], pw[3]), (1, pw[3], n)];
        let phi = phi_shapes
            .iter()
            .enumerate()
            .map(|(i, &(k, ci, co))| push_conv(&mut params, &mut rng, &format!("phi.{i}"), k, ci, co))
            .collect();

        let qw = config.psi_widths;
        let psi_shapes = [(7, d + n, qw[0]), (7, qw[0], qw[1]), (7, qw[1], qw[2]), (1, qw[2], qw[3]), (1, qw[3], n)];
        let mut psi = Vec::new();
        for t in 2..=config.stages {
            let mut rng = group_rng(config.seed, t as u64);
            psi.push(
                psi_shapes
                    .iter()
                    .enumerate()
                    .map(|(i, &(k, ci, co))| {
                        push_conv(&mut params, &mut rng, &format!("psi{t}.{i}"), k, ci, co)
                    })
                    .collect(),
            );
        }

        let mut rng = group_rng(config.seed, 1000);
        let zw = config.zeta_widths;
        let za = config.aggregation_channels();
        let zeta_shapes = [(7, za, zw[0]), (7, zw[0], zw[1]), (7, zw[1], zw[2]), (1, zw[2], config.n_group)];
        let zeta = zeta_shapes
            .iter()
            .enumerate()
            .map(|(i, &(k, ci, co))| push_conv(&mut params, &mut rng, &format!("zeta.{i}"), k, ci, co))
            .collect();

        Ok(CrmParams {
            config,
            params,
            layout: Layout {
                backbone,
                phi,
                psi,
                zeta,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Distinct parameter group names in layout order
    /// (`backbone`, `phi`, `psi2`.., `zeta`).
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (name, _) in self.params.iter() {
            let g = group_of(name);
            if out.last().map(String::as_str) != Some(g) {
                out.push(g.to_string());
            }
        }
        out
    }

    /// Flat index ranges of every parameter in `group`.
    pub fn group_ranges(&self, group: &str) -> Vec<std::ops::Range<usize>> {
        let offsets = self.params.offsets();
        self.params
            .iter()
            .zip(offsets)
            .filter(|((name, _), _)| group_of(name) == group)
            .map(|((_, t), off)| off..off + t.len())
            .collect()
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Gradients of bound parameters, flattened in parameter order.
    pub fn collect_grads(&self, g: &Graph, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.numel());
        for v in vars {
            match g.grad(*v) {
                Some(gr) => out.extend_from_slice(gr),
                None => out.extend(std::iter::repeat_n(0.0, g.value(*v).len())),
            }
        }
        out
    }

    fn conv(&self, g: &mut Graph, vars: &[Var], c: Conv, x: Var, relu: bool) -> Result<Var> {
        let y = g.conv2d(x, vars[c.kernel], vars[c.bias])?;
        Ok(if relu { g.relu(y) } else { y })
    }

    fn stack(&self, g: &mut Graph, vars: &[Var], convs: &[Conv], mut x: Var) -> Result<Var> {
        let last = convs.len() - 1;
        for (i, &c) in convs.iter().enumerate() {
            x = self.conv(g, vars, c, x, i != last)?;
        }
        Ok(x)
    }

    /// Per-frame conv stack, bilinear resize onto the grid, temporal mean.
    pub fn backbone_forward(&self, g: &mut Graph, vars: &[Var], clip: &InputClip) -> Result<Var> {
        let cfg = &self.config;
        let mut per_frame = Vec::with_capacity(clip.len());
        for frame in &clip.frames {
            let (_, _, c) = frame.hwc()?;
            if c != cfg.in_channels {
                return Err(Error::shape(format!(
                    "frame has {c} channels, model expects {}",
                    cfg.in_channels
                )));
            }
            let mut x = g.constant(frame.clone());
            for (i, &conv) in self.layout.backbone.iter().enumerate() {
                x = self.conv(g, vars, conv, x, true)?;
                if i < cfg.backbone_pools {
                    x = g.maxpool2(x)?;
                }
            }
            let (h, w, _) = g.value(x).hwc()?;
            if (h, w) != (cfg.grid_height, cfg.grid_width) {
                x = g.resize_bilinear(x, cfg.grid_height, cfg.grid_width)?;
            }
            per_frame.push(x);
        }
        if per_frame.len() == 1 {
            Ok(per_frame[0])
        } else {
            g.mean(&per_frame)
        }
    }

    pub fn phi_forward(&self, g: &mut Graph, vars: &[Var], feature: Var) -> Result<Var> {
        self.stack(g, vars, &self.layout.phi, feature)
    }

    /// Refinement stage `t` (2..=T) applied to `F ++ prev`.
    pub fn psi_forward(&self, g: &mut Graph, vars: &[Var], t: usize, feature: Var, prev: Var) -> Result<Var> {
        let convs = self
            .layout
            .psi
            .get(t.wrapping_sub(2))
            .ok_or_else(|| Error::InvalidArgument(format!("no refinement stage {t}")))?;
        let x = g.concat_channels(feature, prev)?;
        self.stack(g, vars, convs, x)
    }

    /// Aggregation head; returns `(logits, probabilities)`.
    pub fn zeta_forward(&self, g: &mut Graph, vars: &[Var], feature: Var, final_map: Var) -> Result<(Var, Var)> {
        let mut x = match self.config.aggregation_input {
            AggregationInput::FeatureAndMap => g.concat_channels(feature, final_map)?,
            AggregationInput::FeatureOnly => feature,
            AggregationInput::MapOnly => final_map,
        };
        let (last, body) = self.layout.zeta.split_last().expect("head has layers");
        for &c in body {
            x = self.conv(g, vars, c, x, true)?;
            x = g.maxpool2(x)?;
        }
        x = self.conv(g, vars, *last, x, false)?;
        let logits = g.global_avg_pool(x)?;
        let probs = g.softmax(logits)?;
        Ok((logits, probs))
    }

    /// Whole pipeline on a graph. With `run_head == false` the aggregation
    /// head is skipped (only activity maps are produced).
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], clip: &InputClip, run_head: bool) -> Result<ForwardVars> {
        let feature = self.backbone_forward(g, vars, clip)?;
        let mut stage_maps = vec![self.phi_forward(g, vars, feature)?];
        for t in 2..=self.config.stages {
            let prev = *stage_maps.last().expect("nonempty");
            stage_maps.push(self.psi_forward(g, vars, t, feature, prev)?);
        }
        let (logits, probs) = if run_head {
            let last = *stage_maps.last().expect("nonempty");
            let (l, p) = self.zeta_forward(g, vars, feature, last)?;
            (Some(l), Some(p))
        } else {
            (None, None)
        };
        Ok(ForwardVars {
            feature,
            stage_maps,
            logits,
            probs,
        })
    }

    /// Inference without gradient tracking.
    pub fn forward(&self, clip: &InputClip) -> Result<CrmOutput> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = self.forward_graph(&mut g, &vars, clip, true)?;
        Ok(CrmOutput {
            stage_maps: out.stage_maps.iter().map(|v| g.value(*v).clone()).collect(),
            probs: g.value(out.probs.expect("head ran")).data().to_vec(),
        })
    }

    pub fn stage_activity_maps(&self, out: &CrmOutput) -> Result<Vec<ActivityMap>> {
        out.stage_maps
            .iter()
            .map(|t| ActivityMap::from_tensor(t, self.config.labels()))
            .collect()
    }

    /// Replaces the aggregation head with a freshly initialized one reading
    /// `input`, keeping every other weight.
    pub fn with_aggregation_input(&self, input: AggregationInput) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.aggregation_input = input;
        let mut fresh = CrmParams::init(cfg)?;
        for i in 0..fresh.params.len() {
            if group_of(fresh.params.name(i)) != "zeta" {
                let src = self.params.get(i).clone();
                *fresh.params.get_mut(i) = src;
            }
        }
        Ok(fresh)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        Checkpoint {
            metadata: serde_json::json!({
                "model": self.config,
                "extra": extra,
            }),
            tensors: self.params.clone(),
        }
    }

    /// Rebuilds the model described by a checkpoint's metadata and loads its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(ck.metadata["model"].clone())
            .map_err(|e| Error::config("model", e.to_string()))?;
        let mut model = CrmParams::init(cfg)?;
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_string();
            let t = ck
                .tensors
                .find(&name)
                .ok_or_else(|| Error::config(name.clone(), "missing from checkpoint"))?;
            if t.shape() != model.params.get(i).shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.get(i).shape()
                )));
            }
            *model.params.get_mut(i) = t.clone();
        }
        Ok(model)
    }
}

/// Receptive field (in grid cells, one side) of stage `t` outputs with respect
/// to the feature map: `phi` sees 7x7, every refinement stage adds 18.
pub fn stage_receptive_field(t: usize) -> usize {
    let phi = 1 + 3 * 2;
    phi + t.saturating_sub(1) * 3 * 6
}
