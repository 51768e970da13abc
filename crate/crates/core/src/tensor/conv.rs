//! 2D cross-correlation via im2col + GEMM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::{scratch, Element, LayerParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    /// Output extent `ceil(in / stride)`; the extra row or column of padding,
    /// when the total is odd, goes after the data.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn axis_extent(
    axis: &'static str,
    len: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let pad_total = match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let out = len.div_ceil(stride);
            ((out.max(1) - 1) * stride + k).saturating_sub(len)
        }
    };
    if len + pad_total < k {
        return Err(Error::dim(
            "conv2d",
            axis,
            format!("kernel extent {k} exceeds input extent {len} with {pad_total} padding"),
        ));
    }
    Ok(((len + pad_total - k) / stride + 1, pad_total / 2))
}

impl Conv2dGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let [b, c, h, w] = match input {
            &[b, c, h, w] => [b, c, h, w],
            s => return Err(Error::dim("conv2d", "rank", format!("input {s:?}"))),
        };
        let [o, ci, kh, kw] = match weight {
            &[o, ci, kh, kw] => [o, ci, kh, kw],
            s => return Err(Error::dim("conv2d", "rank", format!("weights {s:?}"))),
        };
        if ci != c {
            return Err(Error::dim(
                "conv2d",
                "channels",
                format!("input has {c} channels, kernel expects {ci}"),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Parameter(format!("conv2d stride {stride:?} must be >= 1")));
        }
        let (out_h, pad_top) = axis_extent("height", h, kh, stride.0, padding)?;
        let (out_w, pad_left) = axis_extent("width", w, kw, stride.1, padding)?;
        Ok(Conv2dGeometry {
            batch: b,
            in_channels: c,
            height: h,
            width: w,
            out_channels: o,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn sample_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Pointwise convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.in_channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.sh + i) as isize - self.pad_top as isize;
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy as usize >= self.height {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.sw + j) as isize - self.pad_left as isize;
                            *d = if ix < 0 || ix as usize >= self.width {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.in_channels {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.sh + i) as isize - self.pad_top as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, &g) in row[oy * self.out_w..(oy + 1) * self.out_w].iter().enumerate() {
                            let ix = (ox * self.sw + j) as isize - self.pad_left as isize;
                            if ix >= 0 && (ix as usize) < self.width {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input (B, C, H, W)` with `params.weights (O, C, kh, kw)`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    conv2d_raw(input, &params.weights, &params.bias, stride, padding)
}

pub(crate) fn conv2d_raw<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Conv2dGeometry::new(input.shape(), weights.shape(), stride, padding)?;
    if bias.numel() != g.out_channels {
        return Err(Error::dim(
            "conv2d",
            "out_channels",
            format!("bias has {} entries for {} filters", bias.numel(), g.out_channels),
        ));
    }
    let p = g.positions();
    let o = g.out_channels;
    let mut out = vec![T::zero(); g.batch * o * p];
    let x = input.data();
    let w = weights.data();
    let bias = bias.data();
    out.par_chunks_mut(o * p).enumerate().for_each(|(b, y)| {
        let xs = &x[b * g.sample_len()..(b + 1) * g.sample_len()];
        for (oc, row) in y.chunks_mut(p).enumerate() {
            row.fill(bias[oc]);
        }
        if g.is_pointwise() {
            gemm(o, g.patch(), p, T::one(), w, false, xs, false, T::one(), y);
        } else {
            let mut cols = scratch(g.patch() * p, T::zero());
            g.im2col(xs, &mut cols);
            gemm(o, g.patch(), p, T::one(), w, false, &cols, false, T::one(), y);
        }
    });
    Ok(Tensor::from_parts(g.output_shape(), out))
}

pub struct Conv2dGrads {
    pub input: Option<Tensor<f64>>,
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

/// Samples per partial weight-gradient accumulator. Fixed so the summation
/// order, and therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

pub fn conv2d_backward(
    input: &Tensor<f64>,
    weights: &Tensor<f64>,
    stride: (usize, usize),
    padding: Padding,
    grad_out: &Tensor<f64>,
    need_input: bool,
) -> Result<Conv2dGrads> {
    let g = Conv2dGeometry::new(input.shape(), weights.shape(), stride, padding)?;
    let (o, p, k) = (g.out_channels, g.positions(), g.patch());
    let x = input.data();
    let w = weights.data();
    let dy = grad_out.data();

    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..g.batch.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut dw = vec![0.0; o * k];
            let mut db = vec![0.0; o];
            let lo = chunk * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(g.batch);
            let mut dx = if need_input {
                vec![0.0; (hi - lo) * g.sample_len()]
            } else {
                Vec::new()
            };
            let mut cols = scratch(if g.is_pointwise() { 0 } else { k * p }, 0.0);
            let mut dcols = scratch(if need_input && !g.is_pointwise() { k * p } else { 0 }, 0.0);
            for b in lo..hi {
                let xs = &x[b * g.sample_len()..(b + 1) * g.sample_len()];
                let dys = &dy[b * o * p..(b + 1) * o * p];
                for (oc, row) in dys.chunks(p).enumerate() {
                    db[oc] += row.iter().sum::<f64>();
                }
                let colref: &[f64] = if g.is_pointwise() {
                    xs
                } else {
                    g.im2col(xs, &mut cols);
                    &cols
                };
                gemm(o, p, k, 1.0, dys, false, colref, true, 1.0, &mut dw);
                if need_input {
                    let dxs = &mut dx[(b - lo) * g.sample_len()..(b - lo + 1) * g.sample_len()];
                    if g.is_pointwise() {
                        gemm(k, o, p, 1.0, w, true, dys, false, 0.0, dxs);
                    } else {
                        gemm(k, o, p, 1.0, w, true, dys, false, 0.0, &mut dcols);
                        g.col2im(&dcols, dxs);
                    }
                }
            }
            (dw, db, dx)
        })
        .collect();

    let mut dw = vec![0.0; o * k];
    let mut db = vec![0.0; o];
    let mut dx = Vec::with_capacity(if need_input { x.len() } else { 0 });
    for (pw, pb, px) in partials {
        dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
        dx.extend_from_slice(&px);
    }
    Ok(Conv2dGrads {
        input: need_input.then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        weights: Tensor::from_parts(weights.shape().to_vec(), dw),
        bias: Tensor::from_parts(vec![o], db),
    })
}
