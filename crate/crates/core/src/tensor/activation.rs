use serde::{Deserialize, Serialize};

use super::{Element, Tensor};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)
    }

    fn negative_slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }
}

pub fn activation<T: Element>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let slope = T::from_f64(kind.negative_slope());
    input.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Derivative is taken as the negative-side slope at exactly zero.
pub fn activation_backward(input: &Tensor<f64>, kind: Activation, grad_out: &Tensor<f64>) -> Tensor<f64> {
    let slope = kind.negative_slope();
    let dx = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { g * slope })
        .collect();
    Tensor::from_parts(input.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_leaky() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        let y = activation(&Tensor::<f64>::new(vec![1], vec![-2.0]).unwrap(), Activation::leaky());
        assert!((y.data()[0] + 0.02).abs() < 1e-15);
    }

    #[test]
    fn relu_gradient() {
        let x = Tensor::new(vec![2], vec![2.0, -1.0]).unwrap();
        let g = activation_backward(&x, Activation::Relu, &Tensor::ones(vec![2]));
        assert_eq!(g.data(), &[1.0, 0.0]);
    }
}
