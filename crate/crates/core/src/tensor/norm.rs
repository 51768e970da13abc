use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Dense,
}

/// Learnable state of one layer.
///
/// Conv weights are `(out_channels, in_channels, kh, kw)`, dense weights
/// `(out_features, in_features)`. Batch-norm layers keep scale in `weights`,
/// shift in `bias`, plus running statistics.
#[derive(Debug, Clone)]
pub struct LayerParams<T: Element = f64> {
    pub name: String,
    pub kind: LayerKind,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub running_mean: Option<Tensor<T>>,
    pub running_var: Option<Tensor<T>>,
    pub epsilon: f64,
}

impl<T: Element> LayerParams<T> {
    pub fn conv2d(name: impl Into<String>, weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [o, _, _, _] = weights.dims4("conv2d params")?;
        if bias.shape() != [o] {
            return Err(Error::dim(
                "conv2d params",
                "out_channels",
                format!("bias {:?} for {o} filters", bias.shape()),
            ));
        }
        Ok(Self::raw(name, LayerKind::Conv2d, weights, bias))
    }

    pub fn dense(name: impl Into<String>, weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let o = match weights.shape() {
            [o, _] => *o,
            s => {
                return Err(Error::dim(
                    "dense params",
                    "rank",
                    format!("weights must be (out, in), got {s:?}"),
                ))
            }
        };
        if bias.shape() != [o] {
            return Err(Error::dim(
                "dense params",
                "out_features",
                format!("bias {:?} for {o} outputs", bias.shape()),
            ));
        }
        Ok(Self::raw(name, LayerKind::Dense, weights, bias))
    }

    /// Scale 1, shift 0, running mean 0, running variance 1.
    pub fn batchnorm(name: impl Into<String>, channels: usize) -> Self {
        let mut p = Self::raw(
            name,
            LayerKind::BatchNorm,
            Tensor::ones(vec![channels]),
            Tensor::zeros(vec![channels]),
        );
        p.running_mean = Some(Tensor::zeros(vec![channels]));
        p.running_var = Some(Tensor::ones(vec![channels]));
        p
    }

    /// Batch norm without running statistics; inference is refused until a
    /// training pass has populated them.
    pub fn batchnorm_uninitialized(name: impl Into<String>, channels: usize) -> Self {
        Self::raw(
            name,
            LayerKind::BatchNorm,
            Tensor::ones(vec![channels]),
            Tensor::zeros(vec![channels]),
        )
    }

    fn raw(name: impl Into<String>, kind: LayerKind, weights: Tensor<T>, bias: Tensor<T>) -> Self {
        LayerParams {
            name: name.into(),
            kind,
            weights,
            bias,
            running_mean: None,
            running_var: None,
            epsilon: BN_EPSILON,
        }
    }

    pub fn learnable_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }

    pub fn channels(&self) -> usize {
        self.bias.numel()
    }

    pub fn cast<U: Element>(&self) -> LayerParams<U> {
        LayerParams {
            name: self.name.clone(),
            kind: self.kind,
            weights: self.weights.cast(),
            bias: self.bias.cast(),
            running_mean: self.running_mean.as_ref().map(Tensor::cast),
            running_var: self.running_var.as_ref().map(Tensor::cast),
            epsilon: self.epsilon,
        }
    }

    /// Exponential update of the running statistics.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        let c = self.channels();
        let rm = self
            .running_mean
            .get_or_insert_with(|| Tensor::zeros(vec![c]))
            .make_mut();
        for (r, &m) in rm.iter_mut().zip(mean) {
            *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * m);
        }
        let rv = self
            .running_var
            .get_or_insert_with(|| Tensor::ones(vec![c]))
            .make_mut();
        for (r, &v) in rv.iter_mut().zip(var) {
            *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by the statistics of the current batch.
    Train,
    /// Normalize by running statistics.
    Infer,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T: Element> {
    pub output: Tensor<T>,
    /// Per-channel mean and biased variance actually used for normalization.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn layout<T: Element>(input: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let s = input.shape();
    if s.len() != 2 && s.len() != 4 {
        return Err(Error::dim(
            "batchnorm",
            "rank",
            format!("expected (B, C) or (B, C, H, W), got {s:?}"),
        ));
    }
    if s[1] != channels {
        return Err(Error::dim(
            "batchnorm",
            "channels",
            format!("input has {} channels, params have {channels}", s[1]),
        ));
    }
    let spatial = s[2..].iter().product();
    Ok((s[0], spatial))
}

/// Pure batch-norm forward; running statistics are not touched.
pub fn batchnorm_forward<T: Element>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    mode: BnMode,
) -> Result<BatchNormOutput<T>> {
    let c = params.channels();
    let (b, s) = layout(input, c)?;
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            let count = b * s;
            if count < 2 {
                return Err(Error::Usage(format!(
                    "batchnorm '{}' in train mode needs at least 2 values per channel, got {count}",
                    params.name
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ch) * s;
                    acc += x[off..off + s].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = acc / count as f64;
                let mut sq = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ch) * s;
                    sq += x[off..off + s]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            (mean, var)
        }
        BnMode::Infer => {
            let (Some(rm), Some(rv)) = (&params.running_mean, &params.running_var) else {
                return Err(Error::State(format!(
                    "batchnorm '{}' has no running statistics",
                    params.name
                )));
            };
            (
                rm.data().iter().map(|v| v.as_f64()).collect(),
                rv.data().iter().map(|v| v.as_f64()).collect(),
            )
        }
    };
    let gamma = params.weights.data();
    let beta = params.bias.data();
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + params.epsilon).sqrt();
        let scale = gamma[ch].as_f64() * inv;
        let shift = beta[ch].as_f64() - mean[ch] * scale;
        let (scale, shift) = (T::from_f64(scale), T::from_f64(shift));
        for bi in 0..b {
            let off = (bi * c + ch) * s;
            for (o, &v) in out[off..off + s].iter_mut().zip(&x[off..off + s]) {
                *o = v * scale + shift;
            }
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_parts(input.shape().to_vec(), out),
        mean,
        var,
    })
}

/// Batch norm; in train mode the running statistics of `params` are updated
/// with the given momentum.
pub fn batchnorm<T: Element>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    mode: BnMode,
    momentum: f64,
) -> Result<Tensor<T>> {
    let out = batchnorm_forward(input, params, mode)?;
    if mode == BnMode::Train {
        params.update_running(&out.mean, &out.var, momentum);
    }
    Ok(out.output)
}

pub struct BatchNormGrads {
    pub input: Tensor<f64>,
    pub gamma: Tensor<f64>,
    pub beta: Tensor<f64>,
}

/// Gradients of batch norm given the statistics used in the forward pass.
pub fn batchnorm_backward(
    input: &Tensor<f64>,
    gamma: &Tensor<f64>,
    epsilon: f64,
    mean: &[f64],
    var: &[f64],
    mode: BnMode,
    grad_out: &Tensor<f64>,
) -> BatchNormGrads {
    let c = gamma.numel();
    let shape = input.shape();
    let b = shape[0];
    let s: usize = shape[2..].iter().product();
    let x = input.data();
    let dy = grad_out.data();
    let g = gamma.data();
    let n = (b * s) as f64;
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + epsilon).sqrt();
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for bi in 0..b {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                let xhat = (x[i] - mean[ch]) * inv;
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat;
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let k = g[ch] * inv;
        for bi in 0..b {
            let off = (bi * c + ch) * s;
            for i in off..off + s {
                dx[i] = match mode {
                    BnMode::Infer => k * dy[i],
                    BnMode::Train => {
                        let xhat = (x[i] - mean[ch]) * inv;
                        k * (dy[i] - sum_dy / n - xhat * sum_dy_xhat / n)
                    }
                };
            }
        }
    }
    BatchNormGrads {
        input: Tensor::from_parts(shape.to_vec(), dx),
        gamma: Tensor::from_parts(vec![c], dgamma),
        beta: Tensor::from_parts(vec![c], dbeta),
    }
}
