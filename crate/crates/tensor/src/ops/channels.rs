use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::{GradFn, Tensor};

struct ConcatFn<T: Element> {
    parts: Vec<Tensor<T>>,
}

impl<T: Element> GradFn<T> for ConcatFn<T> {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        self.parts.iter().collect()
    }

    fn backward(&self, out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, c_total, h, w) = out.dims4().expect("concat output is 4-d");
        let plane = h * w;
        let mut offset = 0;
        self.parts
            .iter()
            .map(|p| {
                let c = p.shape()[1];
                let grad = p.requires_grad().then(|| {
                    let mut d = Vec::with_capacity(p.numel());
                    for b in 0..n {
                        let start = (b * c_total + offset) * plane;
                        d.extend_from_slice(&g[start..start + c * plane]);
                    }
                    d
                });
                offset += c;
                grad
            })
            .collect()
    }
}

/// Concatenate along the channel axis; channels of earlier parts come first.
pub fn concat_channels_many<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat_channels needs at least one tensor"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(dim_err!(
                "concat_channels: batch/spatial dims {:?} and {:?} differ",
                first.shape(),
                p.shape()
            ));
        }
        c_total += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for p in parts {
            let c = p.shape()[1];
            out.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, c_total, h, w],
        out,
        ConcatFn { parts: parts.iter().map(|&p| p.clone()).collect() },
    ))
}

/// `N x Ca x H x W` and `N x Cb x H x W` into `N x (Ca + Cb) x H x W`.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_channels_many(&[a, b])
}

/// Stack `times` copies of `x` along the channel axis.
pub fn repeat_channels<T: Element>(x: &Tensor<T>, times: usize) -> Result<Tensor<T>> {
    if times == 1 {
        return Ok(x.clone());
    }
    let parts = vec![x; times];
    concat_channels_many(&parts)
}

struct SliceFn<T: Element> {
    input: Tensor<T>,
    start: usize,
}

impl<T: Element> GradFn<T> for SliceFn<T> {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, c_in, h, w) = self.input.dims4().expect("slice input is 4-d");
        let c = out.shape()[1];
        let plane = h * w;
        let mut d = vec![T::zero(); self.input.numel()];
        for b in 0..n {
            let dst = (b * c_in + self.start) * plane;
            d[dst..dst + c * plane].copy_from_slice(&g[b * c * plane..(b + 1) * c * plane]);
        }
        vec![Some(d)]
    }
}

/// Channels `start..start + len` of an image tensor.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(dim_err!("channel slice {start}..{} is outside 0..{c}", start + len));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let src = (b * c + start) * plane;
        out.extend_from_slice(&x.data()[src..src + len * plane]);
    }
    Ok(Tensor::from_op(vec![n, len, h, w], out, SliceFn { input: x.clone(), start }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    fn seq(shape: &[usize], offset: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::parameter(shape, (0..n).map(|i| i as f64 + offset).collect()).unwrap()
    }

    #[test]
    fn channels_of_first_part_come_first() {
        let a = seq(&[1, 2, 2, 2], 0.0);
        let b = seq(&[1, 3, 2, 2], 100.0);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 5, 2, 2]);
        assert_eq!(&y.data()[..8], a.data());
        assert_eq!(&y.data()[8..], b.data());
    }

    #[test]
    fn slicing_recovers_the_first_part() {
        let a = seq(&[2, 2, 3, 3], 0.0);
        let z = Tensor::<f64>::zeros(&[2, 3, 3, 3]).unwrap();
        let y = concat_channels(&a, &z).unwrap();
        assert_eq!(slice_channels(&y, 0, 2).unwrap().data(), a.data());
    }

    #[test]
    fn gradient_of_sum_splits_to_ones() {
        let a = seq(&[2, 2, 2, 2], 0.0);
        let b = seq(&[2, 1, 2, 2], 0.0);
        sum(&concat_channels(&a, &b).unwrap()).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; a.numel()]);
        assert_eq!(b.grad().unwrap(), vec![1.0; b.numel()]);
    }

    #[test]
    fn repeated_input_gradient_accumulates() {
        let a = seq(&[1, 1, 2, 2], 0.0);
        sum(&repeat_channels(&a, 3).unwrap()).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let a = seq(&[1, 1, 2, 2], 0.0);
        let b = seq(&[1, 1, 2, 3], 0.0);
        assert!(matches!(concat_channels(&a, &b), Err(crate::TensorError::Dimension(_))));
    }
}
