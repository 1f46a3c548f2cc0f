use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Axis};
use rand::Rng;

use super::params::{ParamSet, Slot};
use super::{check_finite, Dense2D};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one normalization layer during a training
/// forward pass, waiting to be folded into the running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean_slot: Slot,
    pub var_slot: Slot,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Read-only forward context: weights, running statistics, and a sink for
/// the batch statistics produced in training mode.
pub struct Ctx<'a> {
    pub params: &'a [f64],
    pub buffers: &'a [f64],
    pub mode: Mode,
    pub stats: RefCell<Vec<NormStats>>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a [f64], buffers: &'a [f64], mode: Mode) -> Self {
        Self {
            params,
            buffers,
            mode,
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn take_stats(&self) -> Vec<NormStats> {
        std::mem::take(&mut *self.stats.borrow_mut())
    }
}

/// Element-wise mean of several equally shaped stats lists, in the given order.
pub fn average_norm_stats(lists: &[Vec<NormStats>]) -> Vec<NormStats> {
    let Some(first) = lists.first() else {
        return Vec::new();
    };
    let n = lists.len() as f64;
    let mut out = first.clone();
    for (i, s) in out.iter_mut().enumerate() {
        for list in &lists[1..] {
            let o = &list[i];
            assert_eq!(
                o.mean_slot, s.mean_slot,
                "stats lists disagree on layer order"
            );
            s.mean.iter_mut().zip(&o.mean).for_each(|(a, b)| *a += b);
            s.var.iter_mut().zip(&o.var).for_each(|(a, b)| *a += b);
        }
        s.mean.iter_mut().for_each(|a| *a /= n);
        s.var.iter_mut().for_each(|a| *a /= n);
    }
    out
}

/// `running = (1 - momentum) * running + momentum * batch`.
pub fn apply_norm_stats(buffers: &mut ParamSet, stats: &[NormStats]) {
    let data = buffers.values_mut();
    for s in stats {
        for (r, b) in s.mean_slot.slice_mut(data).iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in s.var_slot.slice_mut(data).iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: Slot,
    pub bias: Slot,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: params.add_uniform(format!("{name}.weight"), input, output, bound, rng),
            bias: params.add_uniform(format!("{name}.bias"), 1, output, bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn forward(&self, params: &[f64], x: &Dense2D) -> Dense2D {
        assert_eq!(x.ncols(), self.input_dim(), "linear input width");
        let mut y = x.dot(&self.weight.view(params));
        y += &self.bias.view(params);
        y
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Dense2D,
        dy: &Dense2D,
        grads: &mut [f64],
    ) -> Dense2D {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut self.weight.view_mut(grads));
        let mut db = self.bias.view_mut(grads);
        db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.view(params).t())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: Slot,
    pub beta: Slot,
    pub running_mean: Slot,
    pub running_var: Slot,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Dense2D,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(params: &mut ParamSet, buffers: &mut ParamSet, name: &str, width: usize) -> Self {
        Self {
            gamma: params.add_const(format!("{name}.gamma"), 1, width, 1.0),
            beta: params.add_const(format!("{name}.beta"), 1, width, 0.0),
            running_mean: buffers.add_const(format!("{name}.running_mean"), 1, width, 0.0),
            running_var: buffers.add_const(format!("{name}.running_var"), 1, width, 1.0),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Dense2D) -> (Dense2D, NormCache) {
        let width = self.gamma.cols;
        assert_eq!(x.ncols(), width, "batch norm width");
        let (mean, var) = match ctx.mode {
            Mode::Train if x.nrows() > 0 => {
                let n = x.nrows() as f64;
                let mean = x.sum_axis(Axis(0)) / n;
                let centered = x - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                ctx.stats.borrow_mut().push(NormStats {
                    mean_slot: self.running_mean,
                    var_slot: self.running_var,
                    mean: mean.to_vec(),
                    var: var.to_vec(),
                });
                (mean, var)
            }
            _ => (
                Array1::from(self.running_mean.slice(ctx.buffers).to_vec()),
                Array1::from(self.running_var.slice(ctx.buffers).to_vec()),
            ),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let gamma = self.gamma.view(ctx.params);
        let beta = self.beta.view(ctx.params);
        let y = &xhat * &gamma + beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                mode: ctx.mode,
            },
        )
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &NormCache,
        dy: &Dense2D,
        grads: &mut [f64],
    ) -> Dense2D {
        {
            let mut dg = self.gamma.view_mut(grads);
            dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        {
            let mut dbeta = self.beta.view_mut(grads);
            dbeta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let gamma = self.gamma.view(params).row(0).to_owned();
        let dxhat = dy * &gamma;
        let scaled = &cache.inv_std;
        match cache.mode {
            Mode::Eval => dxhat * scaled,
            Mode::Train => {
                let n = dy.nrows().max(1) as f64;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut dx = &dxhat * n - &sum_d - &(&cache.xhat * &sum_dx);
                dx *= &(scaled / n);
                dx
            }
        }
    }
}

/// Widths and options of a stack of dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    pub dims: Vec<usize>,
    /// Apply the rectifier after the final layer too.
    pub activate_output: bool,
    pub batch_norm: bool,
}

#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub linear: Linear,
    pub relu: bool,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Dense2D,
    pre: Dense2D,
    norm: Option<NormCache>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<LayerCache>,
}

impl Mlp {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        buffers: &mut ParamSet,
        name: &str,
        shape: &MlpShape,
        rng: &mut R,
    ) -> Self {
        assert!(
            shape.dims.len() >= 2,
            "an MLP needs input and output widths"
        );
        let count = shape.dims.len() - 1;
        let layers = (0..count)
            .map(|i| {
                let lname = format!("{name}.{i}");
                let linear = Linear::new(params, &lname, shape.dims[i], shape.dims[i + 1], rng);
                let last = i + 1 == count;
                let activated = !last || shape.activate_output;
                let norm = (shape.batch_norm && activated).then(|| {
                    BatchNorm::new(params, buffers, &format!("{lname}.bn"), shape.dims[i + 1])
                });
                MlpLayer {
                    linear,
                    relu: activated,
                    norm,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.linear.output_dim())
    }

    pub fn forward(&self, ctx: &Ctx, x: &Dense2D) -> (Dense2D, MlpCache) {
        check_finite(x, "mlp input");
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let pre = layer.linear.forward(ctx.params, &h);
            let act = if layer.relu {
                pre.mapv(relu)
            } else {
                pre.clone()
            };
            let (out, norm) = match &layer.norm {
                Some(bn) => {
                    let (y, c) = bn.forward(ctx, &act);
                    (y, Some(c))
                }
                None => (act, None),
            };
            caches.push(LayerCache {
                input: h,
                pre,
                norm,
            });
            h = out;
        }
        check_finite(&h, "mlp output");
        (h, MlpCache { layers: caches })
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        dy: &Dense2D,
        grads: &mut [f64],
    ) -> Dense2D {
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            if let (Some(bn), Some(nc)) = (&layer.norm, &c.norm) {
                d = bn.backward(params, nc, &d, grads);
            }
            if layer.relu {
                d.zip_mut_with(&c.pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            d = layer.linear.backward(params, &c.input, &d, grads);
        }
        d
    }
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}
