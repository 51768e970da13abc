//! Non-overlapping pooling (stride equals window).

use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool2d {
    pub window: (usize, usize),
    /// Keep a trailing partial window instead of truncating it.
    pub ceil: bool,
}

impl Pool2d {
    pub fn floor(window: (usize, usize)) -> Self {
        Pool2d { window, ceil: false }
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.window;
        if ph == 0 || pw == 0 {
            return Err(Error::Parameter(format!("pool window {:?} must be >= 1", self.window)));
        }
        if ph > h {
            return Err(Error::dim("pool", "height", format!("window {ph} > extent {h}")));
        }
        if pw > w {
            return Err(Error::dim("pool", "width", format!("window {pw} > extent {w}")));
        }
        Ok(if self.ceil {
            (h.div_ceil(ph), w.div_ceil(pw))
        } else {
            (h / ph, w / pw)
        })
    }
}

/// Max pooling output together with the flat input index of each maximum.
pub struct MaxPoolOutput<T: Element> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d<T: Element>(input: &Tensor<T>, window: (usize, usize)) -> Result<Tensor<T>> {
    Ok(maxpool_forward(input, Pool2d::floor(window))?.output)
}

pub fn maxpool_forward<T: Element>(input: &Tensor<T>, pool: Pool2d) -> Result<MaxPoolOutput<T>> {
    let [b, c, h, w] = input.dims4("maxpool2d")?;
    let (oh, ow) = pool.output_extent(h, w)?;
    let (ph, pw) = pool.window;
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut at = base + oy * ph * w + ox * pw;
                for iy in oy * ph..((oy + 1) * ph).min(h) {
                    for ix in ox * pw..((ox + 1) * pw).min(w) {
                        let i = base + iy * w + ix;
                        // strict comparison keeps the first maximum on ties
                        if x[i] > best {
                            best = x[i];
                            at = i;
                        }
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_parts(vec![b, c, oh, ow], out),
        argmax,
    })
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<f64>) -> Tensor<f64> {
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx[i] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

pub fn avgpool2d<T: Element>(input: &Tensor<T>, window: (usize, usize)) -> Result<Tensor<T>> {
    avgpool_forward(input, Pool2d::floor(window))
}

pub fn avgpool_forward<T: Element>(input: &Tensor<T>, pool: Pool2d) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("avgpool2d")?;
    let (oh, ow) = pool.output_extent(h, w)?;
    let (ph, pw) = pool.window;
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let ys = oy * ph..((oy + 1) * ph).min(h);
                let xs = ox * pw..((ox + 1) * pw).min(w);
                let n = ys.len() * xs.len();
                let mut acc = T::zero();
                for iy in ys {
                    for ix in xs.clone() {
                        acc = acc + x[base + iy * w + ix];
                    }
                }
                out.push(acc / T::from_f64(n as f64));
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
}

pub fn avgpool_backward(input_shape: &[usize], pool: Pool2d, grad_out: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let (ph, pw) = pool.window;
    let dy = grad_out.data();
    let mut dx = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let ys = oy * ph..((oy + 1) * ph).min(h);
                let xs = ox * pw..((ox + 1) * pw).min(w);
                let share = dy[(plane * oh + oy) * ow + ox] / (ys.len() * xs.len()) as f64;
                for iy in ys {
                    for ix in xs.clone() {
                        dx[base + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Global max over the time (width) axis: `(B, C, H, W) -> (B, C, H, 1)`.
pub fn adaptive_maxpool_time<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(adaptive_maxpool_forward(input)?.output)
}

pub fn adaptive_maxpool_forward<T: Element>(input: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let [_, _, _, w] = input.dims4("adaptive_maxpool_time")?;
    if w == 0 {
        return Err(Error::dim("adaptive_maxpool_time", "width", "empty time axis"));
    }
    maxpool_forward(input, Pool2d::floor((1, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn max_pairs() {
        assert_eq!(maxpool2d(&row(&[1.0, 5.0, 2.0, 8.0]), (1, 2)).unwrap().data(), &[5.0, 8.0]);
    }

    #[test]
    fn unit_window_is_identity() {
        let x = row(&[3.0, -1.0, 2.0]);
        assert_eq!(maxpool2d(&x, (1, 1)).unwrap(), x);
        assert_eq!(avgpool2d(&x, (1, 1)).unwrap(), x);
    }

    #[test]
    fn floor_chain_over_attianet_factors() {
        let mut t = 5000;
        for f in [2, 2, 4, 2, 2, 4] {
            let (_, w) = Pool2d::floor((1, f)).output_extent(1, t).unwrap();
            t = w;
        }
        assert_eq!(t, 19);
    }

    #[test]
    fn averages() {
        assert_eq!(avgpool2d(&row(&[2.0, 4.0]), (1, 2)).unwrap().data(), &[3.0]);
        assert_eq!(
            avgpool2d(&row(&[1.0, 2.0, 3.0, 4.0]), (1, 2)).unwrap().data(),
            &[1.5, 3.5]
        );
        assert_eq!(avgpool2d(&row(&[7.0; 6]), (1, 3)).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn ceil_mode_keeps_partial_window() {
        let y = avgpool_forward(&row(&[1.0, 3.0, 5.0]), Pool2d { window: (1, 2), ceil: true }).unwrap();
        assert_eq!(y.data(), &[2.0, 5.0]);
    }

    #[test]
    fn window_larger_than_axis() {
        assert!(matches!(
            maxpool2d(&row(&[1.0, 2.0]), (1, 3)),
            Err(Error::Dimension { axis: "width", .. })
        ));
        assert!(avgpool2d(&row(&[1.0]), (2, 1)).is_err());
    }

    #[test]
    fn global_time_max() {
        let y = adaptive_maxpool_time(&row(&[3.0, 7.0, 1.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[7.0]);
        let single = row(&[4.0]);
        assert_eq!(adaptive_maxpool_time(&single).unwrap(), single);
        let wide = Tensor::<f64>::zeros(vec![1, 256, 1, 40]);
        let v = adaptive_maxpool_time(&wide).unwrap();
        assert_eq!(v.shape(), &[1, 256, 1, 1]);
        assert_eq!(v.flatten_batch().unwrap().shape(), &[1, 256]);
        assert!(adaptive_maxpool_time(&Tensor::<f64>::zeros(vec![1, 1, 1, 0])).is_err());
    }

    #[test]
    fn ties_route_to_first_max() {
        let x = row(&[2.0, 2.0]);
        let out = maxpool_forward(&x, Pool2d::floor((1, 2))).unwrap();
        let g = maxpool_backward(x.shape(), &out.argmax, &row(&[1.0]));
        assert_eq!(g.data(), &[1.0, 0.0]);
    }
}
