use crate::element::Element;
use crate::error::{param_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with the given negative-side slope in `[0, 1)`.
    LeakyRelu(f64),
}

impl Activation {
    fn negative_slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }
}

struct ActivationFn<T: Element> {
    input: Tensor<T>,
    slope: T,
}

impl<T: Element> GradFn<T> for ActivationFn<T> {
    fn name(&self) -> &'static str {
        "activation"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        // x = 0 takes the negative branch, so relu's subgradient there is 0.
        let d = self
            .input
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > T::zero() { g } else { g * self.slope })
            .collect();
        vec![Some(d)]
    }
}

/// Apply `kind` elementwise.
pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let slope = kind.negative_slope();
    if !(0.0..1.0).contains(&slope) {
        return Err(param_err!("leaky relu slope must lie in [0, 1), got {slope}"));
    }
    let slope = T::of(slope);
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), data, ActivationFn { input: x.clone(), slope }))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    activation(x, Activation::Relu).expect("relu has no parameters to reject")
}

pub fn leaky_relu<T: Element>(x: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    activation(x, Activation::LeakyRelu(slope))
}
