//! Reverse-mode differentiation over a recorded tape of tensor ops.
//!
//! Each op appends a node holding its output value and whatever it needs to
//! propagate gradients. [`Tape::backward`] walks the tape from a scalar root
//! back to the leaves and adds into the leaf gradients, so repeated calls
//! accumulate until [`Tape::zero_grad`].

use crate::error::{Error, Result};
use crate::tensor::conv::{conv2d_backward, conv2d_raw};
use crate::tensor::linear::{
    apply_mask, dense_backward, dense_raw, dropout_mask, sigmoid_backward, softmax_backward,
};
use crate::tensor::norm::{batchnorm_backward, batchnorm_forward};
use crate::tensor::pool::{
    adaptive_maxpool_forward, avgpool_backward, avgpool_forward, maxpool_backward,
    maxpool_forward,
};
use crate::tensor::{
    activation, activation_backward, sigmoid, softmax, Activation, BnMode, LayerParams, Padding,
    Pool2d, Tensor,
};
use rand_chacha::ChaCha8Rng;

/// Probability floor used by the log-likelihood losses.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        padding: Padding,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        pool: Pool2d,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
        epsilon: f64,
        mode: BnMode,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Sigmoid {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    CrossEntropy {
        p: Var,
        targets: Tensor,
    },
    Bce {
        p: Var,
        targets: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => acc
            .make_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Hash of every piecewise-linear branch the recorded pass took: the
    /// sign of each activation input and the winner of each max pool. Two
    /// passes with equal fingerprints lie on the same linear piece of those
    /// ops, which finite-difference checks need.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for n in &self.nodes {
            match &n.op {
                Op::Activation { x, .. } => {
                    for v in self.value(*x).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Smallest `|x|` over all activation inputs: how far the recorded point
    /// is from the nearest activation kink.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Activation { x, .. } => Some(self.value(*x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let y = conv2d_raw(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, padding }, rg))
    }

    pub fn maxpool(&mut self, x: Var, pool: Pool2d) -> Result<Var> {
        let out = maxpool_forward(self.value(x), pool)?;
        let rg = self.needs(x);
        Ok(self.push(out.output, Op::MaxPool { x, argmax: out.argmax }, rg))
    }

    pub fn avgpool(&mut self, x: Var, pool: Pool2d) -> Result<Var> {
        let y = avgpool_forward(self.value(x), pool)?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::AvgPool { x, pool }, rg))
    }

    pub fn adaptive_maxpool_time(&mut self, x: Var) -> Result<Var> {
        let out = adaptive_maxpool_forward(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(out.output, Op::MaxPool { x, argmax: out.argmax }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = activation(self.value(x), kind);
        let rg = self.needs(x);
        self.push(y, Op::Activation { x, kind }, rg)
    }

    /// Batch norm with scale/shift leaves; returns the statistics used so the
    /// caller can update running averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &LayerParams,
        mode: BnMode,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let mut p = stats.clone();
        p.weights = self.value(gamma).clone();
        p.bias = self.value(beta).clone();
        let out = batchnorm_forward(self.value(x), &p, mode)?;
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let (mean, var) = (out.mean.clone(), out.var.clone());
        let v = self.push(
            out.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: out.mean,
                var: out.var,
                epsilon: p.epsilon,
                mode,
            },
            rg,
        );
        Ok((v, mean, var))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = dense_raw(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Dense { x, w, b }, rg))
    }

    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        let mask = dropout_mask(self.value(x).numel(), p, rng)?;
        let y = apply_mask(self.value(x), &mask);
        let rg = self.needs(x);
        Ok(self.push(y, Op::Dropout { x, mask }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = softmax(self.value(x), axis)?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Softmax { x, axis }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = sigmoid(self.value(x));
        let rg = self.needs(x);
        self.push(y, Op::Sigmoid { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).flatten_batch()?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    /// Concatenates `(B, F_i)` matrices along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let y = concat_features(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>())?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(y, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, "add")?;
        let y = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect(),
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let rg = self.needs(x);
        self.push(y, Op::Scale { x, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(y, Op::Sum { x }, rg)
    }

    /// `-mean_b sum_k y_bk log p_bk` with one-hot (or soft) targets.
    pub fn cross_entropy(&mut self, p: Var, targets: Tensor) -> Result<Var> {
        let probs = self.value(p);
        probs.same_shape(&targets, "cross_entropy")?;
        let b = probs.shape()[0].max(1) as f64;
        let total: f64 = probs
            .data()
            .iter()
            .zip(targets.data())
            .filter(|(_, &y)| y != 0.0)
            .map(|(&q, &y)| -y * q.max(PROB_CLAMP).ln())
            .sum();
        let rg = self.needs(p);
        Ok(self.push(Tensor::scalar(total / b), Op::CrossEntropy { p, targets }, rg))
    }

    /// Mean over every entry of per-label binary cross-entropy.
    pub fn bce(&mut self, p: Var, targets: Tensor) -> Result<Var> {
        let probs = self.value(p);
        probs.same_shape(&targets, "bce")?;
        let n = probs.numel().max(1) as f64;
        let total: f64 = probs
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&q, &y)| {
                let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        let rg = self.needs(p);
        Ok(self.push(Tensor::scalar(total / n), Op::Bce { p, targets }, rg))
    }

    /// Propagates from a one-element root into every reachable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::ones(self.value(root).shape().to_vec()));
        let mut leaf_grads = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], t);
                }
            };
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv2d { x, w, b, stride, padding } => {
                    let r = conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        *stride,
                        *padding,
                        &g,
                        self.needs(*x),
                    )?;
                    if let Some(dx) = r.input {
                        send(*x, dx, &mut grads);
                    }
                    send(*w, r.weights, &mut grads);
                    send(*b, r.bias, &mut grads);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = maxpool_backward(self.value(*x).shape(), argmax, &g);
                    send(*x, dx, &mut grads);
                }
                Op::AvgPool { x, pool } => {
                    let dx = avgpool_backward(self.value(*x).shape(), *pool, &g);
                    send(*x, dx, &mut grads);
                }
                Op::Activation { x, kind } => {
                    let dx = activation_backward(self.value(*x), *kind, &g);
                    send(*x, dx, &mut grads);
                }
                Op::BatchNorm { x, gamma, beta, mean, var, epsilon, mode } => {
                    let r = batchnorm_backward(
                        self.value(*x),
                        self.value(*gamma),
                        *epsilon,
                        mean,
                        var,
                        *mode,
                        &g,
                    );
                    send(*x, r.input, &mut grads);
                    send(*gamma, r.gamma, &mut grads);
                    send(*beta, r.beta, &mut grads);
                }
                Op::Dense { x, w, b } => {
                    let r = dense_backward(self.value(*x), self.value(*w), &g, self.needs(*x));
                    if let Some(dx) = r.input {
                        send(*x, dx, &mut grads);
                    }
                    send(*w, r.weights, &mut grads);
                    send(*b, r.bias, &mut grads);
                }
                Op::Dropout { x, mask } => send(*x, apply_mask(&g, mask), &mut grads),
                Op::Softmax { x, axis } => {
                    let dx = softmax_backward(&node.value, *axis, &g);
                    send(*x, dx, &mut grads);
                }
                Op::Sigmoid { x } => send(*x, sigmoid_backward(&node.value, &g), &mut grads),
                Op::Reshape { x } => {
                    let dx = g.reshape(self.value(*x).shape().to_vec())?;
                    send(*x, dx, &mut grads);
                }
                Op::Concat { parts } => {
                    let b = g.shape()[0];
                    let total = g.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let [_, f] = self.value(p).dims2("concat")?;
                        let mut d = Vec::with_capacity(b * f);
                        for row in g.data().chunks(total) {
                            d.extend_from_slice(&row[offset..offset + f]);
                        }
                        offset += f;
                        let d = Tensor::from_parts(vec![b, f], d)
                            .reshape(self.value(p).shape().to_vec())?;
                        send(p, d, &mut grads);
                    }
                }
                Op::Add { a, b } => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Scale { x, factor } => send(*x, g.map(|v| v * factor), &mut grads),
                Op::Sum { x } => {
                    let s = g.data()[0];
                    send(*x, Tensor::full(self.value(*x).shape().to_vec(), s), &mut grads);
                }
                Op::CrossEntropy { p, targets } => {
                    let s = g.data()[0];
                    let probs = self.value(*p);
                    let b = probs.shape()[0].max(1) as f64;
                    let d = probs
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&q, &y)| if q > PROB_CLAMP { -s * y / (q * b) } else { 0.0 })
                        .collect();
                    send(*p, Tensor::from_parts(probs.shape().to_vec(), d), &mut grads);
                }
                Op::Bce { p, targets } => {
                    let s = g.data()[0];
                    let probs = self.value(*p);
                    let n = probs.numel().max(1) as f64;
                    let d = probs
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&q, &y)| {
                            if q <= PROB_CLAMP || q >= 1.0 - PROB_CLAMP {
                                0.0
                            } else {
                                s * (-y / q + (1.0 - y) / (1.0 - q)) / n
                            }
                        })
                        .collect();
                    send(*p, Tensor::from_parts(probs.shape().to_vec(), d), &mut grads);
                }
            }
        }
        for (i, g) in leaf_grads {
            accumulate(&mut self.nodes[i].grad, g);
        }
        Ok(())
    }
}

pub(crate) fn concat_features<T: crate::tensor::Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
    let [b, _] = first.dims2("concat")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let [pb, f] = p.dims2("concat")?;
        if pb != b {
            return Err(Error::dim("concat", "batch", format!("{pb} rows vs {b}")));
        }
        widths.push(f);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(b * total);
    for row in 0..b {
        for (p, &f) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[row * f..(row + 1) * f]);
        }
    }
    Ok(Tensor::from_parts(vec![b, total], out))
}
