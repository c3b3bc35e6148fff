//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side only ever evaluates the function forward on constant
//! tensors, so it shares no code path with the backward rules it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Perturbation applied to one coordinate at a time.
    pub step: f64,
    /// Coordinates sampled per input; inputs smaller than this are checked exhaustively.
    pub samples_per_input: usize,
    pub seed: u64,
    /// Relative disagreement between forward and backward one-sided
    /// differences above which a coordinate is treated as sitting on a kink
    /// (relu, |x|) and skipped.
    pub kink_tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Additional lower bound on that denominator, as a fraction of the
    /// largest analytic gradient magnitude of the same input. Finite
    /// differences in 32-bit carry absolute rounding noise, so tiny entries
    /// are compared on the scale of the whole gradient.
    pub scale_floor: f64,
    /// Like `scale_floor`, but relative to the largest analytic gradient
    /// over all inputs. Entries whose exact gradient vanishes (a bias
    /// followed by normalization) are then judged on the scale of the
    /// whole gradient rather than their own rounding noise.
    pub global_scale_floor: f64,
}

impl GradCheckOptions {
    pub fn f64_default() -> Self {
        Self { step: 1e-3, samples_per_input: 24, seed: 0, kink_tolerance: 1e-2, floor: 1e-6, scale_floor: 0.0, global_scale_floor: 0.0 }
    }

    pub fn f32_default() -> Self {
        Self { step: 2e-2, samples_per_input: 24, seed: 0, kink_tolerance: 5e-2, floor: 1e-3, scale_floor: 0.05, global_scale_floor: 0.0 }
    }

    pub fn for_element<T: Element>() -> Self {
        if T::NAME == "f64" {
            Self::f64_default()
        } else {
            Self::f32_default()
        }
    }
}

/// One compared coordinate.
#[derive(Debug, Clone, Copy)]
pub struct GradSample {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: Option<GradSample>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_error)
    }
}

/// Compare the autodiff gradient of the scalar `f(inputs)` against central
/// finite differences at randomly sampled coordinates of every input.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    numeric_comparison(inputs, &f, &analytic, opts)
}

/// Like [`check_gradients`], but the finite differences are taken on
/// `reference`, the same function evaluated in precision `U`, at the same
/// point. Deep compositions in 32-bit accumulate enough rounding that
/// their own finite differences are noisier than the gradient under test;
/// differencing a 64-bit twin isolates the error of the 32-bit backward pass.
pub fn check_gradients_against<T, U, F, G>(
    inputs: &[Tensor<T>],
    f: F,
    reference: G,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Element,
    U: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    G: Fn(&[Tensor<U>]) -> Result<Tensor<U>>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let promoted: Vec<Tensor<U>> = inputs.iter().map(Tensor::cast::<U>).collect();
    numeric_comparison(&promoted, &reference, &analytic, opts)
}

fn analytic_gradients<T, F>(inputs: &[Tensor<T>], f: &F) -> Result<Vec<Vec<f64>>>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let leaves: Vec<Tensor<T>> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    f(&leaves)?.backward()?;
    Ok(leaves
        .iter()
        .map(|l| l.grad().map_or_else(|| vec![0.0; l.numel()], |g| g.iter().map(|v| v.as_f64()).collect()))
        .collect())
}

fn numeric_comparison<T, F>(inputs: &[Tensor<T>], f: &F, analytic: &[Vec<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let constants: Vec<Tensor<T>> = inputs.iter().map(Tensor::detach).collect();
    let base = f(&constants)?.item()?.as_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let max_abs = |g: &[f64]| g.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let global_scale = analytic.iter().map(|g| max_abs(g)).fold(0.0, f64::max);
    for (which, input) in constants.iter().enumerate() {
        let n = input.numel();
        let floor = opts.floor.max(opts.scale_floor * max_abs(&analytic[which])).max(opts.global_scale_floor * global_scale);
        let positions: Vec<usize> = if n <= opts.samples_per_input {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_input).into_vec()
        };
        for index in positions {
            let x = input.data()[index];
            let up = x + T::of(opts.step);
            let down = x - T::of(opts.step);
            let eval = |v: T| -> Result<f64> {
                let mut data = input.data().to_vec();
                data[index] = v;
                let mut args = constants.clone();
                args[which] = Tensor::from_vec(input.shape(), data)?;
                Ok(f(&args)?.item()?.as_f64())
            };
            let (plus, minus) = (eval(up)?, eval(down)?);
            let (h_up, h_down) = ((up - x).as_f64(), (x - down).as_f64());

            let forward = (plus - base) / h_up;
            let backward = (base - minus) / h_down;
            let scale = forward.abs().max(backward.abs()).max(floor);
            if (forward - backward).abs() > opts.kink_tolerance * scale {
                report.skipped_kinks += 1;
                continue;
            }

            let numeric = (plus - minus) / (h_up + h_down);
            let a = analytic[which][index];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.is_none_or(|w| rel_error > w.rel_error) {
                report.worst = Some(GradSample { input: which, index, analytic: a, numeric, rel_error });
            }
        }
    }
    Ok(report)
}
