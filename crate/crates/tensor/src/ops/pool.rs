use crate::element::Element;
use crate::error::{dim_err, param_err, Result};
use crate::tensor::{GradFn, Tensor};

struct MaxPoolFn<T: Element> {
    input: Tensor<T>,
    argmax: Vec<usize>,
}

impl<T: Element> GradFn<T> for MaxPoolFn<T> {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.input.numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] = dx[src] + gv;
        }
        vec![Some(dx)]
    }
}

/// Max pooling over `size x size` windows; ties route the gradient to the
/// first maximum in scan order.
pub fn max_pool2d<T: Element>(x: &Tensor<T>, size: usize, stride: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if size == 0 || stride == 0 {
        return Err(param_err!("pool size and stride must be at least 1"));
    }
    if h < size || w < size {
        return Err(dim_err!("{h}x{w} plane is smaller than the {size}x{size} pool window"));
    }
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        let src = &x.data()[base..base + h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (oy * stride) * w + ox * stride;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = (oy * stride + dy) * w + ox * stride + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(src[best]);
                argmax.push(base + best);
            }
        }
    }
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, MaxPoolFn { input: x.clone(), argmax }))
}
