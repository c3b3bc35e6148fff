use crate::element::Element;
use crate::error::{param_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Source sample positions for one axis under the corner-aligned convention:
/// output index `o` reads input coordinate `o * (in - 1) / (out - 1)`, so the
/// first and last samples of both grids coincide.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if output == 1 || input == 1 {
                0.0
            } else {
                (o as f64) * ((input - 1) as f64) / ((output - 1) as f64)
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

struct ResizeFn<T: Element> {
    input: Tensor<T>,
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

impl<T: Element> GradFn<T> for ResizeFn<T> {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = self.input.dims4().expect("resize input is 4-d");
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut dx = vec![T::zero(); n * c * h * w];
        for plane in 0..n * c {
            let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, fy)) in self.rows.iter().enumerate() {
                let (wy1, wy0) = (T::of(fy), T::of(1.0 - fy));
                for (ox, &(x0, x1, fx)) in self.cols.iter().enumerate() {
                    let (wx1, wx0) = (T::of(fx), T::of(1.0 - fx));
                    let gv = src[oy * ow + ox];
                    dst[y0 * w + x0] = dst[y0 * w + x0] + gv * wy0 * wx0;
                    dst[y0 * w + x1] = dst[y0 * w + x1] + gv * wy0 * wx1;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + gv * wy1 * wx0;
                    dst[y1 * w + x1] = dst[y1 * w + x1] + gv * wy1 * wx1;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Bilinear resampling of every plane of an `N x C x H x W` tensor to
/// `out_h x out_w`, corner-aligned.
///
/// Interpolation is evaluated as `a + (b - a) * t`, which reproduces constant
/// images exactly and returns the input bit-for-bit when the size is unchanged.
pub fn resize_bilinear<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(param_err!("resize target must be at least 1x1, got {out_h}x{out_w}"));
    }
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = T::of(fx);
                let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                let (cc, d) = (src[y1 * w + x0], src[y1 * w + x1]);
                let top = a + (b - a) * fx;
                let bottom = cc + (d - cc) * fx;
                dst[oy * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(Tensor::from_op(vec![n, c, out_h, out_w], out, ResizeFn { input: input.clone(), rows, cols }))
}
