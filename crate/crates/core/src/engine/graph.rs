//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in insertion order; [`Graph::backward`]
//! walks that record in reverse. Leaf gradients accumulate across calls until
//! [`Graph::zero_grad`]; intermediate gradients are rebuilt on every call.

use super::kernels::{self, AxisPlan, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        k: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    Resize {
        input: Var,
        ys: AxisPlan,
        xs: AxisPlan,
    },
    Mean {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    SumSquaredError {
        pred: Var,
        target: Var,
    },
    NegLog {
        probs: Var,
        class: usize,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are only tracked for leaves created with
    /// `requires_grad` and for values derived from them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, or zeros when backward never reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.value(v).len()],
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Same-padded stride-1 convolution. `input` is `H x W x Cin`, `kernel`
    /// is `k x k x Cin x Cout` with odd `k`, `bias` has `Cout` entries.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (h, w, cin) = self.value(input).hwc()?;
        let (k, kcin, cout) = match self.value(kernel).shape()[..] {
            [k1, k2, ci, co] if k1 == k2 => (k1, ci, co),
            ref s => return Err(Error::shape(format!("conv kernel must be k x k x Cin x Cout, got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv kernel size {k} must be odd")));
        }
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv input has {cin} channels but kernel expects {kcin}"
            )));
        }
        if self.value(bias).len() != cout {
            return Err(Error::shape(format!(
                "conv bias has {} entries, expected {cout}",
                self.value(bias).len()
            )));
        }
        let dims = ConvDims { h, w, cin, cout, k };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &dims,
        );
        let value = Tensor::new(vec![h, w, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                k,
            },
            &[input, kernel, bias],
        ))
    }

    /// 2x2 stride-2 max pooling; output is `ceil(H/2) x ceil(W/2) x C`.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        if h == 0 || w == 0 {
            return Err(Error::shape("max pool over an empty grid"));
        }
        let (out, argmax, oh, ow) = kernels::maxpool2_forward(self.value(input).data(), h, w, c);
        let value = Tensor::new(vec![oh, ow, c], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { input }, &[input])
    }

    /// Channel concatenation: channels of `a` precede channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ha, wa, ca) = self.value(a).hwc()?;
        let (hb, wb, cb) = self.value(b).hwc()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(format!(
                "concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let c = ca + cb;
        let mut data = Vec::with_capacity(ha * wa * c);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for px in 0..ha * wa {
            data.extend_from_slice(&da[px * ca..(px + 1) * ca]);
            data.extend_from_slice(&db[px * cb..(px + 1) * cb]);
        }
        let value = Tensor::new(vec![ha, wa, c], data)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    /// Mean over all spatial positions: `H x W x C -> C`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        if h * w == 0 {
            return Err(Error::shape("global average pool over an empty grid"));
        }
        let mut sums = vec![0.0; c];
        for px in self.value(input).data().chunks_exact(c.max(1)) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (h * w) as f64;
        let data = sums.into_iter().map(|s| s / n).collect();
        let value = Tensor::new(vec![c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }, &[input]))
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 1 {
            return Err(Error::shape(format!("softmax expects a vector, got {:?}", x.shape())));
        }
        let value = Tensor::new(x.shape().to_vec(), softmax(x.data()))?;
        Ok(self.push(value, Op::Softmax { input }, &[input]))
    }

    /// Bilinear resize (align-corners false) of an `h x w x C` tensor.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::shape("bilinear resize needs nonempty grids"));
        }
        let ys = AxisPlan::new(h, out_h);
        let xs = AxisPlan::new(w, out_w);
        let out = kernels::resize_forward(self.value(input).data(), w, c, &ys, &xs);
        let value = Tensor::new(vec![out_h, out_w, c], out)?;
        Ok(self.push(value, Op::Resize { input, ys, xs }, &[input]))
    }

    /// Elementwise mean of equally shaped values.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("mean of zero tensors"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut acc = vec![0.0; self.value(*first).len()];
        for v in inputs {
            let t = self.value(*v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("mean shape mismatch {:?} vs {:?}", t.shape(), shape)));
            }
            for (a, x) in acc.iter_mut().zip(t.data()) {
                *a += x;
            }
        }
        let n = inputs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let value = Tensor::new(shape, acc)?;
        Ok(self.push(
            value,
            Op::Mean {
                inputs: inputs.to_vec(),
            },
            inputs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("add shape mismatch {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, &[input])
    }

    /// `sum((pred - target)^2)` over all elements, as a scalar.
    pub fn sum_squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(format!(
                "squared error shape mismatch {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::SumSquaredError { pred, target }, &[pred, target]))
    }

    /// Mean squared error, as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let n = self.value(pred).len().max(1) as f64;
        let sse = self.sum_squared_error(pred, target)?;
        Ok(self.scale(sse, 1.0 / n))
    }

    /// `-scale * ln(max(probs[class], LOG_CLAMP))`, as a scalar.
    pub fn neg_log(&mut self, probs: Var, class: usize, scale: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.ndim() != 1 || class >= p.len() {
            return Err(Error::shape(format!(
                "class {class} out of range for probabilities of shape {:?}",
                p.shape()
            )));
        }
        let v = -scale * p.data()[class].max(LOG_CLAMP).ln();
        Ok(self.push(
            Tensor::scalar(v),
            Op::NegLog {
                probs,
                class,
                scale,
            },
            &[probs],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        match &mut self.nodes[loss.0].grad {
            Some(g) => g[0] += 1.0,
            slot => *slot = Some(vec![1.0]),
        }
        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) || !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(up) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &up);
            self.nodes[idx].grad = Some(up);
            for (var, g) in contributions {
                self.accumulate(var, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, var: Var, g: Vec<f64>) {
        let node = &mut self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, idx: usize, up: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                k,
            } => {
                let (h, w, cin) = self.value(*input).hwc().expect("checked in forward");
                let cout = self.value(*bias).len();
                let dims = ConvDims {
                    h,
                    w,
                    cin,
                    cout,
                    k: *k,
                };
                let mut gi = self.wants(*input).then(|| vec![0.0; self.value(*input).len()]);
                let mut gk = self.wants(*kernel).then(|| vec![0.0; self.value(*kernel).len()]);
                let mut gb = self.wants(*bias).then(|| vec![0.0; cout]);
                kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    up,
                    &dims,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                out.extend(gi.map(|g| (*input, g)));
                out.extend(gk.map(|g| (*kernel, g)));
                out.extend(gb.map(|g| (*bias, g)));
            }
            Op::MaxPool2 { input, argmax } => {
                let mut g = vec![0.0; self.value(*input).len()];
                for (&src, u) in argmax.iter().zip(up) {
                    g[src] += u;
                }
                out.push((*input, g));
            }
            Op::Relu { input } => {
                let g = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
                    .collect();
                out.push((*input, g));
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[2];
                let cb = self.value(*b).shape()[2];
                let pixels = node.value.shape()[0] * node.value.shape()[1];
                let mut ga = Vec::with_capacity(self.value(*a).len());
                let mut gb = Vec::with_capacity(self.value(*b).len());
                for px in 0..pixels {
                    let row = &up[px * (ca + cb)..(px + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                if self.wants(*a) {
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    out.push((*b, gb));
                }
            }
            Op::GlobalAvgPool { input } => {
                let (h, w, _) = self.value(*input).hwc().expect("checked in forward");
                let n = (h * w) as f64;
                let scaled: Vec<f64> = up.iter().map(|u| u / n).collect();
                let mut g = Vec::with_capacity(self.value(*input).len());
                for _ in 0..h * w {
                    g.extend_from_slice(&scaled);
                }
                out.push((*input, g));
            }
            Op::Softmax { input } => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(up).map(|(a, b)| a * b).sum();
                let g = y.iter().zip(up).map(|(yi, ui)| yi * (ui - dot)).collect();
                out.push((*input, g));
            }
            Op::Resize { input, ys, xs } => {
                let (_, w, c) = self.value(*input).hwc().expect("checked in forward");
                let mut g = vec![0.0; self.value(*input).len()];
                kernels::resize_backward(up, w, c, ys, xs, &mut g);
                out.push((*input, g));
            }
            Op::Mean { inputs } => {
                let n = inputs.len() as f64;
                let g: Vec<f64> = up.iter().map(|u| u / n).collect();
                for v in inputs {
                    if self.wants(*v) {
                        out.push((*v, g.clone()));
                    }
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    out.push((*a, up.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, up.to_vec()));
                }
            }
            Op::Scale { input, factor } => {
                out.push((*input, up.iter().map(|u| u * factor).collect()));
            }
            Op::Sum { input } => {
                out.push((*input, vec![up[0]; self.value(*input).len()]));
            }
            Op::SumSquaredError { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let gp: Vec<f64> = p.iter().zip(t).map(|(a, b)| 2.0 * (a - b) * up[0]).collect();
                if self.wants(*target) {
                    out.push((*target, gp.iter().map(|g| -g).collect()));
                }
                if self.wants(*pred) {
                    out.push((*pred, gp));
                }
            }
            Op::NegLog {
                probs,
                class,
                scale,
            } => {
                let p = self.value(*probs).data();
                let mut g = vec![0.0; p.len()];
                if p[*class] > LOG_CLAMP {
                    g[*class] = -scale / p[*class] * up[0];
                }
                out.push((*probs, g));
            }
        }
        out
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
