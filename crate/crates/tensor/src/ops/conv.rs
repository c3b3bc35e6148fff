//! 2-D convolution and its adjoint, lowered to GEMM through im2col.

use crate::element::{gemm, Element};
use crate::error::{dim_err, param_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Geometry of a strided, zero-padded 2-D correlation from an `h x w` plane
/// with `channels` channels to an `out_h x out_w` plane.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if kh == 0 || kw == 0 {
            return Err(param_err!("kernel extent must be at least 1, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(param_err!("stride must be at least 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err!(
                "padded input {}x{} is smaller than the {kh}x{kw} kernel",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose tap `k` lands inside `0..extent`.
    fn valid_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        // ox * stride + k - pad in [0, extent)
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if extent + pad > k { (extent + pad - k - 1) / stride + 1 } else { 0 };
        (lo.min(out), hi.min(out).max(lo.min(out)))
    }

    /// Unfold one image (`channels x h x w`) into a `patch x out_plane` matrix.
    fn im2col<T: Element>(&self, image: &[T], col: &mut [T]) {
        let (oh, ow) = (self.out_h, self.out_w);
        let (x_lo, x_hi) = (0..self.kw)
            .map(|kx| Self::valid_range(ow, self.w, kx, self.stride, self.pad))
            .fold((Vec::new(), Vec::new()), |(mut l, mut h), (a, b)| {
                l.push(a);
                h.push(b);
                (l, h)
            });
        for c in 0..self.channels {
            let plane = &image[c * self.plane()..(c + 1) * self.plane()];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = (x_lo[kx], x_hi[kx]);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        for ox in lo..hi {
                            out_row[ox] = src[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-add columns back onto an image.
    fn col2im<T: Element>(&self, col: &[T], image: &mut [T]) {
        let (oh, ow) = (self.out_h, self.out_w);
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    let (lo, hi) = Self::valid_range(ow, self.w, kx, self.stride, self.pad);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src_row = &src[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            let ix = ox * self.stride + kx - self.pad;
                            dst[ix] = dst[ix] + src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(dim_err!("bias shape {:?} does not match {channels} output channels", b.shape()));
        }
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut [T], bias: Option<&Tensor<T>>, batch: usize, channels: usize, plane: usize) {
    let Some(bias) = bias else { return };
    for n in 0..batch {
        for (c, &b) in bias.data().iter().enumerate() {
            let start = (n * channels + c) * plane;
            for v in &mut out[start..start + plane] {
                *v = *v + b;
            }
        }
    }
}

fn bias_grad<T: Element>(g: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *acc = *acc + g[start..start + plane].iter().copied().sum();
        }
    }
    db
}

struct Conv2dFn<T: Element> {
    input: Tensor<T>,
    kernel: Tensor<T>,
    bias: Option<Tensor<T>>,
    geom: Geometry,
    batch: usize,
    out_channels: usize,
}

impl<T: Element> GradFn<T> for Conv2dFn<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.input, &self.kernel];
        v.extend(self.bias.as_ref());
        v
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geom = &self.geom;
        let (patch, out_plane, cout) = (geom.patch(), geom.out_plane(), self.out_channels);
        let in_size = geom.channels * geom.plane();
        let want_input = self.input.requires_grad();
        let want_kernel = self.kernel.requires_grad();

        let mut d_input = want_input.then(|| vec![T::zero(); self.input.numel()]);
        let mut d_kernel = want_kernel.then(|| vec![T::zero(); self.kernel.numel()]);
        let mut col = vec![T::zero(); if geom.is_pointwise() { 0 } else { patch * out_plane }];
        let mut d_col = vec![T::zero(); if want_input && !geom.is_pointwise() { patch * out_plane } else { 0 }];

        for n in 0..self.batch {
            let g_n = &g[n * cout * out_plane..(n + 1) * cout * out_plane];
            let image = &self.input.data()[n * in_size..(n + 1) * in_size];
            if let Some(dk) = d_kernel.as_mut() {
                let cols: &[T] = if geom.is_pointwise() {
                    image
                } else {
                    geom.im2col(image, &mut col);
                    &col
                };
                // dK += g_n (cout x P) * cols^T (P x patch)
                gemm(false, true, cout, out_plane, patch, g_n, cols, T::one(), dk);
            }
            if let Some(dx) = d_input.as_mut() {
                let dx_n = &mut dx[n * in_size..(n + 1) * in_size];
                if geom.is_pointwise() {
                    gemm(true, false, patch, cout, out_plane, self.kernel.data(), g_n, T::zero(), dx_n);
                } else {
                    gemm(true, false, patch, cout, out_plane, self.kernel.data(), g_n, T::zero(), &mut d_col);
                    geom.col2im(&d_col, dx_n);
                }
            }
        }
        let mut grads = vec![d_input, d_kernel];
        if let Some(b) = &self.bias {
            grads.push(b.requires_grad().then(|| bias_grad(g, self.batch, cout, out_plane)));
        }
        grads
    }
}

/// Strided, zero-padded 2-D convolution (cross-correlation).
///
/// `input` is `N x Cin x H x W`, `kernel` is `Cout x Cin x kh x kw` and the
/// optional `bias` has `Cout` entries. The output is `N x Cout x H' x W'`
/// with `H' = (H + 2 pad - kh) / stride + 1`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (batch, cin, h, w) = input.dims4()?;
    let (cout, k_cin, kh, kw) = kernel
        .dims4()
        .map_err(|_| dim_err!("conv2d kernel must be Cout x Cin x kh x kw, got {:?}", kernel.shape()))?;
    if k_cin != cin {
        return Err(dim_err!("conv2d: input has {cin} channels but kernel expects {k_cin}"));
    }
    check_bias(bias, cout)?;
    let geom = Geometry::new(cin, h, w, kh, kw, stride, pad)?;
    let (patch, out_plane, in_size) = (geom.patch(), geom.out_plane(), cin * h * w);

    let mut out = vec![T::zero(); batch * cout * out_plane];
    let mut col = vec![T::zero(); if geom.is_pointwise() { 0 } else { patch * out_plane }];
    for n in 0..batch {
        let image = &input.data()[n * in_size..(n + 1) * in_size];
        let cols: &[T] = if geom.is_pointwise() {
            image
        } else {
            geom.im2col(image, &mut col);
            &col
        };
        let out_n = &mut out[n * cout * out_plane..(n + 1) * cout * out_plane];
        gemm(false, false, cout, patch, out_plane, kernel.data(), cols, T::zero(), out_n);
    }
    add_bias(&mut out, bias, batch, cout, out_plane);

    Ok(Tensor::from_op(
        vec![batch, cout, geom.out_h, geom.out_w],
        out,
        Conv2dFn {
            input: input.clone(),
            kernel: kernel.clone(),
            bias: bias.cloned(),
            geom,
            batch,
            out_channels: cout,
        },
    ))
}

struct ConvTransposeFn<T: Element> {
    input: Tensor<T>,
    kernel: Tensor<T>,
    bias: Option<Tensor<T>>,
    // Geometry of the forward convolution whose adjoint this is: it maps the
    // transposed-conv output (Cout channels) onto the transposed-conv input.
    geom: Geometry,
    batch: usize,
    in_channels: usize,
}

impl<T: Element> GradFn<T> for ConvTransposeFn<T> {
    fn name(&self) -> &'static str {
        "conv2d_transpose"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.input, &self.kernel];
        v.extend(self.bias.as_ref());
        v
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geom = &self.geom;
        let cin = self.in_channels;
        let (patch, small_plane, big_size) = (geom.patch(), geom.out_plane(), geom.channels * geom.plane());
        let mut d_input = self.input.requires_grad().then(|| vec![T::zero(); self.input.numel()]);
        let mut d_kernel = self.kernel.requires_grad().then(|| vec![T::zero(); self.kernel.numel()]);
        let mut g_col = vec![T::zero(); patch * small_plane];
        for n in 0..self.batch {
            let g_n = &g[n * big_size..(n + 1) * big_size];
            geom.im2col(g_n, &mut g_col);
            if let Some(dx) = d_input.as_mut() {
                let dx_n = &mut dx[n * cin * small_plane..(n + 1) * cin * small_plane];
                // dx_n (cin x P) = K (cin x patch) * g_col (patch x P)
                gemm(false, false, cin, patch, small_plane, self.kernel.data(), &g_col, T::zero(), dx_n);
            }
            if let Some(dk) = d_kernel.as_mut() {
                let x_n = &self.input.data()[n * cin * small_plane..(n + 1) * cin * small_plane];
                // dK (cin x patch) += x_n (cin x P) * g_col^T (P x patch)
                gemm(false, true, cin, small_plane, patch, x_n, &g_col, T::one(), dk);
            }
        }
        let mut grads = vec![d_input, d_kernel];
        if let Some(b) = &self.bias {
            grads.push(b.requires_grad().then(|| bias_grad(g, self.batch, geom.channels, geom.plane())));
        }
        grads
    }
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same geometry.
///
/// `input` is `N x Cin x H x W`, `kernel` is `Cin x Cout x kh x kw` and the
/// output has spatial size `(H - 1) stride - 2 pad + kh + out_pad`.
/// `out_pad` must be smaller than `stride`.
pub fn conv2d_transpose<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor<T>> {
    let (batch, cin, h, w) = input.dims4()?;
    let (k_cin, cout, kh, kw) = kernel
        .dims4()
        .map_err(|_| dim_err!("conv2d_transpose kernel must be Cin x Cout x kh x kw, got {:?}", kernel.shape()))?;
    if stride == 0 {
        return Err(param_err!("stride must be at least 1"));
    }
    if out_pad >= stride {
        return Err(param_err!("out_pad ({out_pad}) must be smaller than stride ({stride})"));
    }
    if k_cin != cin {
        return Err(dim_err!("conv2d_transpose: input has {cin} channels but kernel expects {k_cin}"));
    }
    check_bias(bias, cout)?;
    let big = |n: usize, k: usize| ((n - 1) * stride + k + out_pad).checked_sub(2 * pad).filter(|&v| v > 0);
    let (Some(out_h), Some(out_w)) = (big(h, kh), big(w, kw)) else {
        return Err(dim_err!("conv2d_transpose: padding {pad} leaves an empty output for a {h}x{w} input"));
    };
    let geom = Geometry::new(cout, out_h, out_w, kh, kw, stride, pad)?;
    debug_assert_eq!((geom.out_h, geom.out_w), (h, w));

    let (patch, small_plane, big_size) = (geom.patch(), h * w, cout * out_h * out_w);
    let mut out = vec![T::zero(); batch * big_size];
    let mut col = vec![T::zero(); patch * small_plane];
    for n in 0..batch {
        let x_n = &input.data()[n * cin * small_plane..(n + 1) * cin * small_plane];
        // col (patch x P) = K^T (patch x cin) * x_n (cin x P)
        gemm(true, false, patch, cin, small_plane, kernel.data(), x_n, T::zero(), &mut col);
        geom.col2im(&col, &mut out[n * big_size..(n + 1) * big_size]);
    }
    add_bias(&mut out, bias, batch, cout, out_h * out_w);

    Ok(Tensor::from_op(
        vec![batch, cout, out_h, out_w],
        out,
        ConvTransposeFn {
            input: input.clone(),
            kernel: kernel.clone(),
            bias: bias.cloned(),
            geom,
            batch,
            in_channels: cin,
        },
    ))
}
