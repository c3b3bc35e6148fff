//! Autodiff versus central finite differences for every differentiable op,
//! in both precisions.

use projsynth_tensor::gradcheck::{check_gradients, GradCheckOptions};
use projsynth_tensor::ops::{self, NormMode, Reduction};
use projsynth_tensor::{Element, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F64_TOL: f64 = 1e-5;
const F32_TOL: f64 = 1e-3;

fn random<T: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

/// Contract the output with a fixed random tensor to get a smooth scalar.
fn project<T: Element>(y: Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random::<T>(y.shape(), &mut rng);
    Ok(ops::sum(&ops::mul(&y, &r)?))
}

fn assert_grads<T: Element>(
    name: &str,
    inputs: &[Tensor<T>],
    f: impl Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    tol: f64,
) {
    assert_grads_with(name, inputs, f, tol, GradCheckOptions::for_element::<T>());
}

fn assert_grads_with<T: Element>(
    name: &str,
    inputs: &[Tensor<T>],
    f: impl Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    tol: f64,
    opts: GradCheckOptions,
) {
    let report = check_gradients(inputs, f, &opts).unwrap();
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(
        report.skipped_kinks * 4 <= report.checked + report.skipped_kinks,
        "{name}: too many kink skips ({} of {})",
        report.skipped_kinks,
        report.checked + report.skipped_kinks
    );
    assert!(
        report.max_rel_error() < tol,
        "{name} ({}): max relative error {:.3e} at {:?}",
        T::NAME,
        report.max_rel_error(),
        report.worst
    );
}

fn suite<T: Element>(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut r = |shape: &[usize]| random::<T>(shape, &mut rng);

    assert_grads(
        "conv2d",
        &[r(&[2, 2, 5, 5]), r(&[3, 2, 3, 3]), r(&[3])],
        |v| project(ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)?, 1),
        tol,
    );
    assert_grads(
        "conv2d stride 2",
        &[r(&[1, 2, 6, 6]), r(&[2, 2, 3, 3]), r(&[2])],
        |v| project(ops::conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)?, 2),
        tol,
    );
    assert_grads(
        "conv2d pointwise",
        &[r(&[2, 3, 4, 4]), r(&[2, 3, 1, 1]), r(&[2])],
        |v| project(ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, 0)?, 3),
        tol,
    );
    assert_grads(
        "conv2d_transpose",
        &[r(&[2, 2, 3, 3]), r(&[2, 3, 3, 3]), r(&[3])],
        |v| project(ops::conv2d_transpose(&v[0], &v[1], Some(&v[2]), 2, 1, 1)?, 4),
        tol,
    );
    assert_grads(
        "resize up",
        &[r(&[1, 2, 3, 4])],
        |v| project(ops::resize_bilinear(&v[0], 7, 5)?, 5),
        tol,
    );
    assert_grads(
        "resize down",
        &[r(&[1, 1, 8, 8])],
        |v| project(ops::resize_bilinear(&v[0], 3, 5)?, 6),
        tol,
    );
    assert_grads(
        "concat + slice",
        &[r(&[2, 2, 3, 3]), r(&[2, 1, 3, 3])],
        |v| {
            let c = ops::concat_channels(&v[0], &v[1])?;
            project(ops::slice_channels(&c, 1, 2)?, 7)
        },
        tol,
    );
    assert_grads("relu", &[r(&[1, 2, 4, 4])], |v| project(ops::relu(&v[0]), 8), tol);
    assert_grads("leaky relu", &[r(&[1, 2, 4, 4])], |v| project(ops::leaky_relu(&v[0], 0.2)?, 9), tol);
    assert_grads(
        "dropout",
        &[r(&[1, 2, 4, 4])],
        |v| project(ops::dropout(&v[0], 0.5, true, 77)?, 10),
        tol,
    );
    for (mode, seed) in [(NormMode::Instance, 11), (NormMode::Layer, 12)] {
        assert_grads(
            &format!("normalize {mode:?}"),
            &[r(&[2, 3, 4, 4]), r(&[3]), r(&[3])],
            |v| project(ops::normalize(&v[0], mode, 1e-5, Some((&v[1], &v[2])))?, seed),
            tol,
        );
    }
    assert_grads("max_pool2d", &[r(&[1, 2, 4, 6])], |v| project(ops::max_pool2d(&v[0], 2, 2)?, 13), tol);
    assert_grads(
        "add/sub/mul/scale",
        &[r(&[3, 4]), r(&[3, 4])],
        |v| {
            let s = ops::add(&v[0], &ops::scale(&v[1], 0.5))?;
            let d = ops::sub(&s, &ops::mul(&v[0], &v[1])?)?;
            project(d, 14)
        },
        tol,
    );
    // Inputs kept away from the minimum of x^2, where curvature would be
    // indistinguishable from a kink at the 32-bit step size.
    let shifted = Tensor::from_vec(&[5, 3], r(&[5, 3]).data().iter().map(|&v| v.abs() + T::of(0.5)).collect()).unwrap();
    assert_grads("mean", &[shifted], |v| Ok(ops::mean(&ops::mul(&v[0], &v[0])?)), tol);
    assert_grads(
        "abs_diff",
        &[r(&[1, 1, 4, 4]), r(&[1, 1, 4, 4])],
        |v| ops::abs_diff(&v[0], &v[1], Reduction::Mean),
        tol,
    );
    assert_grads(
        "repeat_channels",
        &[r(&[1, 1, 3, 3])],
        |v| project(ops::repeat_channels(&v[0], 3)?, 15),
        tol,
    );

    // conv2d -> leaky relu -> l1 against a fixed target. Perturbing a bias
    // moves a whole channel, so |target - y| kinks are crossed often; a
    // tight kink tolerance keeps such samples out of the comparison.
    let target = r(&[1, 2, 6, 6]);
    let opts = GradCheckOptions { kink_tolerance: 1e-3, ..GradCheckOptions::for_element::<T>() };
    assert_grads_with(
        "conv2d -> lrelu -> l1",
        &[r(&[1, 1, 6, 6]), r(&[2, 1, 3, 3]), r(&[2])],
        |v| {
            let y = ops::leaky_relu(&ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)?, 0.2)?;
            ops::abs_diff(&target, &y, Reduction::Sum)
        },
        tol,
        opts,
    );
}

#[test]
fn every_op_passes_gradient_check_in_f64() {
    suite::<f64>(F64_TOL);
}

#[test]
fn every_op_passes_gradient_check_in_f32() {
    suite::<f32>(F32_TOL);
}

#[test]
fn relu_sum_of_positive_inputs_has_unit_gradient() {
    let x = Tensor::<f32>::parameter(&[2, 3], vec![0.5, 1.0, 2.0, 3.0, 0.1, 9.0]).unwrap();
    ops::sum(&ops::relu(&x)).backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn parameter_off_the_loss_path_keeps_zero_gradient() {
    let used = Tensor::<f32>::parameter(&[2], vec![1.0, 2.0]).unwrap();
    let unused = Tensor::<f32>::parameter(&[2], vec![3.0, 4.0]).unwrap();
    used.zero_grad();
    unused.zero_grad();
    ops::sum(&used).backward().unwrap();
    assert_eq!(used.grad().unwrap(), vec![1.0, 1.0]);
    assert_eq!(unused.grad().unwrap(), vec![0.0, 0.0]);
}
