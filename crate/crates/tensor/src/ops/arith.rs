//! Elementwise arithmetic and reductions.

use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::{GradFn, Tensor};

fn same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn track<T: Element>(t: &Tensor<T>, g: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    t.requires_grad().then(g)
}

struct AddFn<T: Element> {
    a: Tensor<T>,
    b: Tensor<T>,
    b_sign: T,
}

impl<T: Element> GradFn<T> for AddFn<T> {
    fn name(&self) -> &'static str {
        if self.b_sign > T::zero() {
            "add"
        } else {
            "sub"
        }
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let sign = self.b_sign;
        vec![
            track(&self.a, || g.to_vec()),
            track(&self.b, || g.iter().map(|&v| v * sign).collect()),
        ]
    }
}

/// Elementwise `a + b` for equal shapes.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, AddFn { a: a.clone(), b: b.clone(), b_sign: T::one() }))
}

/// Elementwise `a - b` for equal shapes.
pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, AddFn { a: a.clone(), b: b.clone(), b_sign: -T::one() }))
}

struct MulFn<T: Element> {
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Element> GradFn<T> for MulFn<T> {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![
            track(&self.a, || g.iter().zip(self.b.data()).map(|(&g, &y)| g * y).collect()),
            track(&self.b, || g.iter().zip(self.a.data()).map(|(&g, &x)| g * x).collect()),
        ]
    }
}

/// Elementwise product for equal shapes.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, MulFn { a: a.clone(), b: b.clone() }))
}

struct ScaleFn<T: Element> {
    a: Tensor<T>,
    factor: T,
}

impl<T: Element> GradFn<T> for ScaleFn<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.factor).collect())]
    }
}

/// `factor * a`.
pub fn scale<T: Element>(a: &Tensor<T>, factor: f64) -> Tensor<T> {
    let factor = T::of(factor);
    let data = a.data().iter().map(|&x| x * factor).collect();
    Tensor::from_op(a.shape().to_vec(), data, ScaleFn { a: a.clone(), factor })
}

struct SumFn<T: Element> {
    a: Tensor<T>,
    factor: T,
}

impl<T: Element> GradFn<T> for SumFn<T> {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0] * self.factor; self.a.numel()])]
    }
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let total = a.data().iter().copied().sum();
    Tensor::from_op(vec![1], vec![total], SumFn { a: a.clone(), factor: T::one() })
}

/// Mean of all elements as a one-element tensor.
pub fn mean<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let n = T::of(a.numel() as f64);
    let total: T = a.data().iter().copied().sum();
    Tensor::from_op(vec![1], vec![total / n], SumFn { a: a.clone(), factor: T::one() / n })
}

/// How a pixel-wise loss collapses to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

struct AbsDiffFn<T: Element> {
    a: Tensor<T>,
    b: Tensor<T>,
    factor: T,
}

impl<T: Element> GradFn<T> for AbsDiffFn<T> {
    fn name(&self) -> &'static str {
        "abs_diff"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let scale = g[0] * self.factor;
        // d|a-b|/da = sign(a-b), with sign(0) = 0.
        let sign: Vec<T> = self
            .a
            .data()
            .iter()
            .zip(self.b.data())
            .map(|(&x, &y)| {
                let d = x - y;
                if d > T::zero() {
                    scale
                } else if d < T::zero() {
                    -scale
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![
            track(&self.a, || sign.clone()),
            track(&self.b, || sign.iter().map(|&s| -s).collect()),
        ]
    }
}

/// `sum |a - b|` or its mean, as a one-element tensor.
pub fn abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>, reduction: Reduction) -> Result<Tensor<T>> {
    same_shape("abs_diff", a, b)?;
    let total: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
    let factor = match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::of(a.numel() as f64),
    };
    let value = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / T::of(a.numel() as f64),
    };
    Ok(Tensor::from_op(vec![1], vec![value], AbsDiffFn { a: a.clone(), b: b.clone(), factor }))
}
