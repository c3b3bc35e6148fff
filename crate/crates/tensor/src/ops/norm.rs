use crate::element::Element;
use crate::error::{dim_err, param_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Which elements share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// One mean/variance per sample and channel (over H x W).
    Instance,
    /// One mean/variance per sample (over C x H x W).
    Layer,
}

struct StandardizeFn<T: Element> {
    input: Tensor<T>,
    group: usize,
    inv_std: Vec<T>,
}

impl<T: Element> GradFn<T> for StandardizeFn<T> {
    fn name(&self) -> &'static str {
        "standardize"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)) per group
        let m = T::of(self.group as f64);
        let mut dx = vec![T::zero(); g.len()];
        for (k, &inv_std) in self.inv_std.iter().enumerate() {
            let range = k * self.group..(k + 1) * self.group;
            let xhat = &out.data()[range.clone()];
            let gk = &g[range.clone()];
            let mean_g = gk.iter().copied().sum::<T>() / m;
            let mean_gx = gk.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / m;
            for ((d, &gv), &xh) in dx[range].iter_mut().zip(gk).zip(xhat) {
                *d = inv_std * (gv - mean_g - xh * mean_gx);
            }
        }
        vec![Some(dx)]
    }
}

/// Zero-mean, unit-variance standardization with biased variance and `eps`
/// added under the square root.
pub fn standardize<T: Element>(x: &Tensor<T>, mode: NormMode, eps: f64) -> Result<Tensor<T>> {
    if !(eps > 0.0) {
        return Err(param_err!("normalization eps must be positive, got {eps}"));
    }
    let (n, c, h, w) = x.dims4()?;
    let group = match mode {
        NormMode::Instance => h * w,
        NormMode::Layer => c * h * w,
    };
    let groups = x.numel() / group;
    debug_assert_eq!(groups, if mode == NormMode::Instance { n * c } else { n });

    let mut out = vec![T::zero(); x.numel()];
    let mut inv_stds = Vec::with_capacity(groups);
    for k in 0..groups {
        let src = &x.data()[k * group..(k + 1) * group];
        let first = src[0];
        // Constant groups take their mean exactly so they standardize to 0.
        let (mean, var) = if src.iter().all(|&v| v == first) {
            (first.as_f64(), 0.0)
        } else {
            let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / group as f64;
            let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / group as f64;
            (mean, var)
        };
        let inv_std = 1.0 / (var + eps).sqrt();
        for (o, &v) in out[k * group..(k + 1) * group].iter_mut().zip(src) {
            *o = T::of((v.as_f64() - mean) * inv_std);
        }
        inv_stds.push(T::of(inv_std));
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        StandardizeFn { input: x.clone(), group, inv_std: inv_stds },
    ))
}

struct AffineFn<T: Element> {
    input: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
}

impl<T: Element> GradFn<T> for AffineFn<T> {
    fn name(&self) -> &'static str {
        "channel_affine"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input, &self.gamma, &self.beta]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = self.input.dims4().expect("affine input is 4-d");
        let plane = h * w;
        let gamma = self.gamma.data();
        let x = self.input.data();
        let dx = self.input.requires_grad().then(|| {
            let mut d = vec![T::zero(); g.len()];
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * plane;
                    for i in s..s + plane {
                        d[i] = g[i] * gamma[ch];
                    }
                }
            }
            d
        });
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let s = (b * c + ch) * plane;
                for i in s..s + plane {
                    dgamma[ch] = dgamma[ch] + g[i] * x[i];
                    dbeta[ch] = dbeta[ch] + g[i];
                }
            }
        }
        vec![
            dx,
            self.gamma.requires_grad().then_some(dgamma),
            self.beta.requires_grad().then_some(dbeta),
        ]
    }
}

/// Per-channel `gamma[c] * x + beta[c]`.
pub fn channel_affine<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(dim_err!(
            "affine parameters {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            let s = (b * c + ch) * plane;
            for i in s..s + plane {
                out[i] = gm * x.data()[i] + bt;
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        AffineFn { input: x.clone(), gamma: gamma.clone(), beta: beta.clone() },
    ))
}

/// Instance or layer normalization followed by an optional per-channel affine.
pub fn normalize<T: Element>(
    x: &Tensor<T>,
    mode: NormMode,
    eps: f64,
    affine: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<Tensor<T>> {
    let y = standardize(x, mode, eps)?;
    match affine {
        Some((gamma, beta)) => channel_affine(&y, gamma, beta),
        None => Ok(y),
    }
}
