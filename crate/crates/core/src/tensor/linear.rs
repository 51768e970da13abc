//! Dense layers, dropout and output heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::{BnMode, Element, LayerParams, Tensor};
use crate::error::{Error, Result};

/// `y = x · Wᵀ + b` for each batch row; inputs of rank > 2 are flattened.
pub fn dense<T: Element>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    dense_raw(input, &params.weights, &params.bias)
}

pub(crate) fn dense_raw<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, f] = input.dims2("dense")?;
    let (o, fin) = match weights.shape() {
        &[o, fin] => (o, fin),
        s => return Err(Error::dim("dense", "rank", format!("weights {s:?}"))),
    };
    if f != fin {
        return Err(Error::dim(
            "dense",
            "features",
            format!("input has {f} features, layer expects {fin}"),
        ));
    }
    let mut out = Vec::with_capacity(b * o);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm(b, f, o, T::one(), input.data(), false, weights.data(), true, T::one(), &mut out);
    Ok(Tensor::from_parts(vec![b, o], out))
}

pub struct DenseGrads {
    pub input: Option<Tensor<f64>>,
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

pub fn dense_backward(
    input: &Tensor<f64>,
    weights: &Tensor<f64>,
    grad_out: &Tensor<f64>,
    need_input: bool,
) -> DenseGrads {
    let (b, f) = (input.shape()[0], input.numel() / input.shape()[0].max(1));
    let o = weights.shape()[0];
    let dy = grad_out.data();
    let mut dw = vec![0.0; o * f];
    gemm(o, b, f, 1.0, dy, true, input.data(), false, 0.0, &mut dw);
    let mut db = vec![0.0; o];
    for row in dy.chunks(o) {
        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
    }
    let dx = need_input.then(|| {
        let mut dx = vec![0.0; b * f];
        gemm(b, o, f, 1.0, dy, false, weights.data(), false, 0.0, &mut dx);
        Tensor::from_parts(input.shape().to_vec(), dx)
    });
    DenseGrads {
        input: dx,
        weights: Tensor::from_parts(vec![o, f], dw),
        bias: Tensor::from_parts(vec![o], db),
    }
}

/// Keep-mask scaled by `1 / (1 - p)`; zero where dropped.
pub fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} not in [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout. Identity in inference mode or when `p == 0`.
pub fn dropout<T: Element>(
    input: &Tensor<T>,
    p: f64,
    mode: BnMode,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == BnMode::Infer || p == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.numel(), p, rng)?;
    Ok(apply_mask(input, &mask))
}

pub(crate) fn apply_mask<T: Element>(input: &Tensor<T>, mask: &[f64]) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| v * T::from_f64(m))
        .collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim("softmax", "axis", format!("axis {axis} for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis` using max subtraction.
pub fn softmax<T: Element>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_layout(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..n {
                let e = (x[idx(k)] - max).exp();
                out[idx(k)] = e;
                total = total + e;
            }
            for k in 0..n {
                out[idx(k)] = out[idx(k)] / total;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

pub fn softmax_backward(output: &Tensor<f64>, axis: usize, grad_out: &Tensor<f64>) -> Tensor<f64> {
    let (outer, n, inner) = axis_layout(output.shape(), axis).expect("validated in forward");
    let y = output.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| y[idx(k)] * dy[idx(k)]).sum();
            for k in 0..n {
                dx[idx(k)] = y[idx(k)] * (dy[idx(k)] - dot);
            }
        }
    }
    Tensor::from_parts(output.shape().to_vec(), dx)
}

pub fn sigmoid<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn sigmoid_backward(output: &Tensor<f64>, grad_out: &Tensor<f64>) -> Tensor<f64> {
    let dx = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::from_parts(output.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dense_affine() {
        let p = LayerParams::dense(
            "d",
            Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![1], vec![3.0]).unwrap(),
        )
        .unwrap();
        let y = dense(&Tensor::new(vec![1, 2], vec![4.0, 5.0]).unwrap(), &p).unwrap();
        assert_eq!(y.data(), &[17.0]);
    }

    #[test]
    fn dense_identity_and_batch_rows() {
        let p = LayerParams::dense(
            "d",
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
        )
        .unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.3, -4.0, 0.3, -4.0]).unwrap();
        let y = dense(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.data()[..2], y.data()[2..]);
    }

    #[test]
    fn dense_length_mismatch() {
        let p = LayerParams::dense("d", Tensor::zeros(vec![1, 3]), Tensor::zeros(vec![1])).unwrap();
        assert!(matches!(
            dense(&Tensor::<f64>::zeros(vec![1, 2]), &p),
            Err(Error::Dimension { axis: "features", .. })
        ));
    }

    #[test]
    fn dropout_identities_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout(&x, 0.0, BnMode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, BnMode::Infer, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, BnMode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::<f64>::ones(vec![100_000]);
        let y = dropout(&x, 0.5, BnMode::Train, &mut rng).unwrap();
        let mean = y.sum() / 1e5;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        let same = dropout(&x, 0.5, BnMode::Train, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert!(same.bit_eq(&y));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let y = softmax(&Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(), 1).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&Tensor::new(vec![1, 2], vec![1000.0, 1000.0]).unwrap(), 1).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        assert!(softmax(&Tensor::<f64>::zeros(vec![2]), 1).is_err());
    }

    #[test]
    fn softmax_columns() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 5.0, 0.0, 5.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn sigmoid_center_and_tails() {
        let y = sigmoid(&Tensor::new(vec![3], vec![0.0, -800.0, 800.0]).unwrap());
        assert_eq!(y.data()[0], 0.5);
        assert!(y.all_finite());
        assert_eq!(y.data()[2], 1.0);
    }
}
