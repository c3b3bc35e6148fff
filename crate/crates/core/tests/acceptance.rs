//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so that the long
//! end-to-end criteria run once, in order, with their timings reported.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use projsynth_core::experiment::{run_desk, DeskConfig};
use projsynth_core::generators::{ArchConfig, CrnConfig, Mode, Model, ParamStore, ResNetGenConfig, UNetConfig};
use projsynth_core::metrics::{mse, psnr, ssim, PsnrVariant, SsimConfig};
use projsynth_core::objectives::{l1_loss, perceptual_loss, EvalNetConfig, EvaluationNetwork, L1Reduction, LossConfig};
use projsynth_core::phantom::{default_spacing, generate_head_phantom, Ellipsoid, Material, PhantomSpec};
use projsynth_core::projector::{
    forward_project, forward_project_views, make_circular_trajectory, ray_integral, DetectorSpec, Modality, ProjectionImage,
    TrajectorySpec, Volume3D,
};
use projsynth_core::training::{AdamConfig, AdamState, EpochRecord};
use projsynth_tensor::gradcheck::{check_gradients, check_gradients_against, GradCheckOptions, GradCheckReport};
use projsynth_tensor::ops::{self, NormMode, Reduction};
use projsynth_tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

fn assert_report(name: &str, report: &GradCheckReport, tol: f64) -> f64 {
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(
        report.skipped_kinks * 4 <= report.checked + report.skipped_kinks,
        "{name}: {} kink skips of {}",
        report.skipped_kinks,
        report.checked + report.skipped_kinks
    );
    assert!(report.max_rel_error() < tol, "{name}: max relative error {:.3e} at {:?}", report.max_rel_error(), report.worst);
    report.max_rel_error()
}

// ---------------------------------------------------------------- 1

/// `<y, r>` for a fixed random `r`: a smooth scalar probe of any output.
fn contract<T: Element>(y: Tensor<T>, seed: u64) -> projsynth_tensor::Result<Tensor<T>> {
    let r = random::<T>(y.shape(), seed);
    Ok(ops::sum(&ops::mul(&y, &r)?))
}

type OpCase<T> = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&[Tensor<T>]) -> projsynth_tensor::Result<Tensor<T>>>);

fn op_cases<T: Element>() -> Vec<OpCase<T>> {
    vec![
        ("conv2d", vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]], Box::new(|v| contract(ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)?, 1))),
        ("conv2d/2", vec![vec![1, 2, 6, 6], vec![2, 2, 3, 3], vec![2]], Box::new(|v| contract(ops::conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)?, 2))),
        (
            "conv2d_transpose",
            vec![vec![2, 2, 3, 3], vec![2, 3, 3, 3], vec![3]],
            Box::new(|v| contract(ops::conv2d_transpose(&v[0], &v[1], Some(&v[2]), 2, 1, 1)?, 3)),
        ),
        ("resize", vec![vec![1, 2, 3, 4]], Box::new(|v| contract(ops::resize_bilinear(&v[0], 7, 5)?, 4))),
        (
            "concat/slice",
            vec![vec![2, 2, 3, 3], vec![2, 1, 3, 3]],
            Box::new(|v| contract(ops::slice_channels(&ops::concat_channels(&v[0], &v[1])?, 1, 2)?, 5)),
        ),
        ("relu", vec![vec![1, 2, 4, 4]], Box::new(|v| contract(ops::relu(&v[0]), 6))),
        ("leaky_relu", vec![vec![1, 2, 4, 4]], Box::new(|v| contract(ops::leaky_relu(&v[0], 0.2)?, 7))),
        ("dropout", vec![vec![1, 2, 4, 4]], Box::new(|v| contract(ops::dropout(&v[0], 0.5, true, 77)?, 8))),
        (
            "instance_norm",
            vec![vec![2, 3, 4, 4], vec![3], vec![3]],
            Box::new(|v| contract(ops::normalize(&v[0], NormMode::Instance, 1e-5, Some((&v[1], &v[2])))?, 9)),
        ),
        (
            "layer_norm",
            vec![vec![2, 3, 4, 4], vec![3], vec![3]],
            Box::new(|v| contract(ops::normalize(&v[0], NormMode::Layer, 1e-5, Some((&v[1], &v[2])))?, 10)),
        ),
        ("max_pool2d", vec![vec![1, 2, 4, 6]], Box::new(|v| contract(ops::max_pool2d(&v[0], 2, 2)?, 11))),
        (
            "add/sub/mul/scale",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|v| contract(ops::sub(&ops::add(&v[0], &ops::scale(&v[1], 0.5))?, &ops::mul(&v[0], &v[1])?)?, 12)),
        ),
        ("mean", vec![vec![5, 3]], Box::new(|v| Ok(ops::mean(&ops::mul(&v[0], &v[0])?)))),
        ("abs_diff", vec![vec![1, 1, 4, 4], vec![1, 1, 4, 4]], Box::new(|v| ops::abs_diff(&v[0], &v[1], Reduction::Mean))),
        ("repeat_channels", vec![vec![1, 1, 3, 3]], Box::new(|v| contract(ops::repeat_channels(&v[0], 3)?, 13))),
    ]
}

fn op_inputs<T: Element>(name: &str, shapes: &[Vec<usize>], seed: u64) -> Vec<Tensor<T>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = random::<T>(s, seed * 31 + i as u64);
            if name == "mean" {
                // Away from the minimum of x², where curvature looks like a kink at 32-bit steps.
                Tensor::from_vec(s, t.data().iter().map(|&v| v.abs() + T::of(0.5)).collect()).unwrap()
            } else {
                t
            }
        })
        .collect()
}

fn tiny_generators() -> Vec<ArchConfig> {
    vec![
        ArchConfig::Unet(UNetConfig { depth: 3, base_channels: 2, kernel: 3, dropout_keep: 0.5, dropout_levels: 2 }),
        ArchConfig::Resnet(ResNetGenConfig {
            n_residual_blocks: 2,
            stem_channels: 2,
            down_channels: [3, 4],
            stem_kernel: 3,
            kernel: 3,
            norm_eps: 1e-5,
        }),
        ArchConfig::Crn(CrnConfig::for_input(16, 16, 3, 4).unwrap()),
    ]
}

fn network_opts() -> GradCheckOptions {
    GradCheckOptions { step: 1e-6, samples_per_input: 6, kink_tolerance: 1e-4, global_scale_floor: 1e-3, ..GradCheckOptions::f64_default() }
}

fn probe<T: Element>(model: &Model<T>, r: &Tensor<T>, args: &[Tensor<T>]) -> projsynth_tensor::Result<Tensor<T>> {
    let mut m = model.clone();
    let names: Vec<String> = model.params().names().map(str::to_owned).collect();
    for (name, t) in names.iter().zip(&args[1..]) {
        m.params_mut().replace(name, t.clone()).unwrap();
    }
    let y = m.forward(&args[0], Mode::train(9)).unwrap();
    Ok(ops::sum(&ops::mul(&y, r)?))
}

fn probe_inputs<T: Element>(model: &Model<T>) -> Vec<Tensor<T>> {
    let mut inputs = vec![random::<T>(&[1, 1, 16, 16], 1)];
    inputs.extend(model.params().iter().map(|(_, t)| t.detach()));
    inputs
}

fn gradient_checks() -> String {
    let start = Instant::now();
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    let mut checks = 0;
    let cases64 = op_cases::<f64>();
    let cases32 = op_cases::<f32>();
    for (seed, ((name, shapes, f64_fn), (_, _, f32_fn))) in cases64.iter().zip(&cases32).enumerate() {
        let r = check_gradients(&op_inputs::<f64>(name, shapes, seed as u64), f64_fn, &GradCheckOptions::f64_default()).unwrap();
        worst64 = worst64.max(assert_report(name, &r, 1e-5));
        let r = check_gradients(&op_inputs::<f32>(name, shapes, seed as u64), f32_fn, &GradCheckOptions::f32_default()).unwrap();
        worst32 = worst32.max(assert_report(name, &r, 1e-3));
        checks += 2;
    }

    for cfg in tiny_generators() {
        let model = Model::<f64>::build(cfg.clone(), 5).unwrap();
        let r = random::<f64>(&[1, 1, 16, 16], 2);
        let rep = check_gradients(&probe_inputs(&model), |a| probe(&model, &r, a), &network_opts()).unwrap();
        worst64 = worst64.max(assert_report(cfg.name(), &rep, 1e-5));

        let model = Model::<f32>::build(cfg.clone(), 5).unwrap();
        let wide = model.cast::<f64>();
        let r = random::<f32>(&[1, 1, 16, 16], 2);
        let r_wide = r.cast::<f64>();
        let rep = check_gradients_against(&probe_inputs(&model), |a| probe(&model, &r, a), |a| probe(&wide, &r_wide, a), &network_opts()).unwrap();
        worst32 = worst32.max(assert_report(cfg.name(), &rep, 1e-3));
        checks += 2;
    }

    let l = random::<f64>(&[1, 1, 8, 8], 4);
    let rep = check_gradients(&[random::<f64>(&[1, 1, 8, 8], 5)], |a| Ok(l1_loss(&l, &a[0], L1Reduction::Sum).unwrap()), &GradCheckOptions::f64_default()).unwrap();
    worst64 = worst64.max(assert_report("l1", &rep, 1e-5));
    let net = EvaluationNetwork::<f32>::random(EvalNetConfig::vgg19(16), 3).unwrap().cast::<f64>();
    let cfg = LossConfig::perceptual();
    let l = random::<f64>(&[1, 1, 16, 16], 6);
    let opts = GradCheckOptions { samples_per_input: 24, ..network_opts() };
    let rep = check_gradients(&[random::<f64>(&[1, 1, 16, 16], 7)], |a| Ok(perceptual_loss(&l, &a[0], &net, &cfg).unwrap()), &opts).unwrap();
    worst64 = worst64.max(assert_report("perceptual", &rep, 1e-5));
    checks += 2;

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "gradient checks took {elapsed:?}");
    format!("{checks} checks, worst rel err f64 {worst64:.1e} / f32 {worst32:.1e}, {:.1}s", elapsed.as_secs_f64())
}

// ---------------------------------------------------------------- 2

fn conv_reference(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, _, kh, kw) = k.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn convolution_oracle() -> String {
    let mut seed = 0;
    let (mut cases, mut worst) = (0, 0.0f64);
    for h in 1..=7 {
        for w in 1..=7 {
            for kh in 1..=3 {
                for kw in 1..=3 {
                    for stride in [1, 2] {
                        for pad in [0, 1] {
                            if h + 2 * pad < kh || w + 2 * pad < kw {
                                continue;
                            }
                            seed += 3;
                            let x = random::<f64>(&[2, 2, h, w], seed);
                            let k = random::<f64>(&[3, 2, kh, kw], seed + 1);
                            let b = random::<f64>(&[3], seed + 2);
                            let y = ops::conv2d(&x, &k, Some(&b), stride, pad).unwrap();
                            let want = conv_reference(&x, &k, b.data(), stride, pad);
                            assert_eq!(y.data().len(), want.len());
                            let err = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                            assert!(err < 1e-6, "h={h} w={w} k={kh}x{kw} s={stride} p={pad}: {err}");
                            worst = worst.max(err);
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    format!("{cases} shapes, max |Δ| {worst:.1e}")
}

// ---------------------------------------------------------------- 3

fn random_image(n: usize, rng: &mut ChaCha8Rng) -> ProjectionImage {
    ProjectionImage::from_rows(n, n, (0..n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn naive_ssim(x: &ProjectionImage, y: &ProjectionImage, cfg: &SsimConfig) -> f64 {
    let n = cfg.window.size();
    let p = cfg.window.profile();
    let (c1, c2) = ((cfg.k1 * cfg.dynamic_range).powi(2), (cfg.k2 * cfg.dynamic_range).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for oy in 0..=x.nv() - n {
        for ox in 0..=x.nu() - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    mx += p[j] * p[i] * x.get(ox + i, oy + j) as f64;
                    my += p[j] * p[i] * y.get(ox + i, oy + j) as f64;
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    let (a, b) = (x.get(ox + i, oy + j) as f64 - mx, y.get(ox + i, oy + j) as f64 - my);
                    vx += p[j] * p[i] * a * a;
                    vy += p[j] * p[i] * b * b;
                    cxy += p[j] * p[i] * a * b;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn ssim_oracle() -> String {
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_image(32, &mut rng);
        let a: f32 = rng.random_range(-1.0..1.0);
        let noise: f32 = rng.random_range(0.0..1.0);
        let y = x.with_data(x.data().iter().map(|v| a * v + noise * rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let d = (ssim(&x, &y, &cfg).unwrap() - naive_ssim(&x, &y, &cfg)).abs();
        assert!(d < 1e-6, "|Δ| = {d}");
        worst = worst.max(d);
        assert_eq!(ssim(&x, &x, &cfg).unwrap(), 1.0);
    }
    format!("50 pairs, max |Δ| {worst:.1e}, ssim(x,x) = 1")
}

// ---------------------------------------------------------------- 4

fn psnr_identity() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = random_image(16, &mut rng);
        let g = random_image(16, &mut rng);
        let peak_mse = psnr(&l, &g, PsnrVariant::PeakOverMse).unwrap();
        let standard = psnr(&l, &g, PsnrVariant::Standard).unwrap();
        let d = (standard - (peak_mse + 10.0 * mse(&l, &g).unwrap().log10())).abs();
        assert!(d < 1e-9, "|Δ| = {d}");
        worst = worst.max(d);
    }
    format!("100 pairs, max |Δ| {worst:.1e}")
}

// ---------------------------------------------------------------- 5

const MU: f64 = 0.02;

fn single_ellipsoid(semi_axes: [f64; 3], rotation_deg: [f64; 3]) -> PhantomSpec {
    let mut materials = std::collections::BTreeMap::new();
    materials.insert("water".to_string(), Material { mr_intensity: 1.0, xray_mu: MU });
    PhantomSpec {
        ellipsoids: vec![Ellipsoid { center_mm: [0.0; 3], semi_axes_mm: semi_axes, rotation_deg, material: "water".into(), priority: 0 }],
        materials,
        seed: 0,
        inclusions: None,
        supersample: 4,
    }
}

/// Rz(c)·Ry(b)·Rx(a), written out.
fn rotation(deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = deg.map(f64::to_radians);
    let (sa, ca, sb, cb, sc, cc) = (a.sin(), a.cos(), b.sin(), b.cos(), c.sin(), c.cos());
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

fn chord_length(p: [f64; 3], d: [f64; 3], semi_axes: [f64; 3], r: [[f64; 3]; 3]) -> f64 {
    let body = |v: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| (r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2]) / semi_axes[i]) };
    let (q0, q1) = (body(p), body(d));
    let a: f64 = q1.iter().map(|v| v * v).sum();
    let b: f64 = 2.0 * q0.iter().zip(&q1).map(|(x, y)| x * y).sum::<f64>();
    let c: f64 = q0.iter().map(|v| v * v).sum::<f64>() - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return 0.0;
    }
    disc.sqrt() / a * d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn projector_accuracy() -> String {
    let semi = [60.0, 45.0, 35.0];
    let rot = [15.0, -10.0, 30.0];
    let (_, xray) = generate_head_phantom([128; 3], [1.0; 3], &single_ellipsoid(semi, rot)).unwrap();
    let r = rotation(rot);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = xray.spacing()[0] / 2.0;
    let mut worst_chord: f64 = 0.0;
    for _ in 0..100 {
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let source = [750.0 * phi.cos(), 750.0 * phi.sin(), rng.random_range(-100.0..100.0)];
        let target_body: [f64; 3] = loop {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.7..0.7));
            if p.iter().map(|v| v * v).sum::<f64>() <= 0.49 {
                break std::array::from_fn(|i| p[i] * semi[i]);
            }
        };
        let target: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| r[i][j] * target_body[j]).sum());
        let dir: [f64; 3] = std::array::from_fn(|i| target[i] - source[i]);
        let pixel: [f64; 3] = std::array::from_fn(|i| source[i] + 1.6 * dir[i]);
        let want = chord_length(source, dir, semi, r) * MU;
        worst_chord = worst_chord.max((ray_integral(&xray, source, pixel, step) - want).abs() / want);
    }
    assert!(worst_chord < 0.01, "worst chord error {worst_chord:.4}");

    let (mr, xray) = generate_head_phantom([32; 3], default_spacing(32), &PhantomSpec::head(3)).unwrap();
    let combo =
        Volume3D::centered(mr.dims(), mr.spacing(), mr.data().iter().zip(xray.data()).map(|(a, b)| 0.5 * a + 3.0 * b).collect(), Modality::Mr)
            .unwrap();
    let mut worst_lin: f64 = 0.0;
    for g in make_circular_trajectory(4, 360.0, 750.0, 1200.0, DetectorSpec { nu: 24, nv: 24, du: 13.0, dv: 13.0 }).unwrap() {
        let step = mr.default_step();
        let (pm, px, pc) = (forward_project(&mr, &g, step).unwrap(), forward_project(&xray, &g, step).unwrap(), forward_project(&combo, &g, step).unwrap());
        let scale = pc.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        for i in 0..pm.len() {
            let lin = 0.5 * pm.data()[i] as f64 + 3.0 * px.data()[i] as f64;
            worst_lin = worst_lin.max((pc.data()[i] as f64 - lin).abs() / scale);
        }
    }
    assert!(worst_lin < 1e-5, "linearity error {worst_lin:.2e}");

    let (_, head) = generate_head_phantom([64; 3], default_spacing(64), &PhantomSpec::head(1)).unwrap();
    let trajectory = TrajectorySpec { n_views: 16, detector: DetectorSpec::square_covering_default(64), ..TrajectorySpec::default() };
    let start = Instant::now();
    let views = forward_project_views(&head, &trajectory.geometries().unwrap(), head.default_step(), 1).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(views.len(), 16);
    assert!(elapsed < Duration::from_secs(30), "projection took {elapsed:?}");
    format!("chord err {:.3}%, linearity {worst_lin:.1e}, 64³→16×64² in {:.2}s", 100.0 * worst_chord, elapsed.as_secs_f64())
}

// ---------------------------------------------------------------- 6

fn architecture_contracts() -> String {
    let x = random::<f32>(&[1, 1, 64, 64], 3);
    for cfg in [
        ArchConfig::Unet(UNetConfig::default()),
        ArchConfig::Resnet(ResNetGenConfig::default()),
        ArchConfig::Crn(CrnConfig::for_input(64, 64, 7, 64).unwrap()),
    ] {
        let model = Model::<f32>::build(cfg, 0).unwrap();
        let y = model.forward(&x, Mode::eval()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64], "{}", model.arch_name());
    }
    let resnet = Model::<f32>::build_resnet_generator(ResNetGenConfig::default(), 0).unwrap();
    assert_eq!(resnet.residual_block_count(), Some(9));
    let crn = Model::<f32>::build_crn(CrnConfig::default(), 0).unwrap();
    assert_eq!(crn.refinement_module_count(), Some(8));
    assert_eq!(crn.output_channels(), 1);

    let mut zeroed = resnet.clone();
    zeroed.zero_residual_branches().unwrap();
    let (_, trace) = zeroed.forward_traced(&x, Mode::eval()).unwrap();
    let get = |name: &str| trace.iter().find(|(n, _)| n == name).unwrap().1.data().to_vec();
    let before = get("down2");
    for i in 0..9 {
        assert_eq!(get(&format!("block{i}")), before, "block{i} is not an identity");
    }
    "1×1×64×64 → 1×1×64×64 for unet/resnet/crn(7 modules from 1×1); resnet 9 blocks; crn default 8 modules, 1 channel; zero-residual identity exact".into()
}

// ---------------------------------------------------------------- 7

fn adam_trace() -> String {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.004);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0, 0.0);
    let mut reference = Vec::new();
    for t in 1..=5 {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        reference.push(theta);
    }

    let mut params = ParamStore::<f64>::new();
    params.insert("theta", Tensor::parameter(&[1], vec![1.0]).unwrap()).unwrap();
    let mut adam = AdamState::new(AdamConfig::default(), &params).unwrap();
    let mut worst = 0.0f64;
    for (i, want) in reference.iter().enumerate() {
        let theta = params.get("theta").unwrap().clone();
        ops::sum(&ops::mul(&theta, &theta).unwrap()).backward().unwrap();
        adam.step(&mut params).unwrap();
        let got = params.get("theta").unwrap().data()[0];
        assert!((got - want).abs() < 1e-10, "step {}: {got} vs {want}", i + 1);
        worst = worst.max((got - want).abs());
    }
    let first = 1.0 - reference[0];
    assert!((first - lr).abs() < 1e-9, "first step {first}");
    format!("5 steps, max |Δ| {worst:.1e}, first step {first:.6}")
}

// ---------------------------------------------------------------- 8, 10

fn bits(history: &[EpochRecord]) -> Vec<u64> {
    history.iter().map(|r| r.mean_loss.to_bits()).collect()
}

fn desk_run(first: &mut Option<Vec<EpochRecord>>) -> String {
    let cfg = DeskConfig::default();
    let start = Instant::now();
    let out = run_desk(&cfg).unwrap();
    let elapsed = start.elapsed();
    let (l0, ln) = (out.history[0].mean_loss, out.history.last().unwrap().mean_loss);
    *first = Some(out.history.clone());
    assert_eq!(out.history.len(), cfg.train.epochs);
    assert!(ln < 0.5 * l0, "loss {l0:.3} → {ln:.3}");
    let (s, b) = (out.synthesis.ssim.mean, out.baseline.ssim.mean);
    assert!(s > b, "synthesis SSIM {s:.4} does not beat the MR baseline {b:.4}");
    assert!(elapsed < Duration::from_secs(600), "desk run took {elapsed:?}");
    format!(
        "loss {l0:.2} → {ln:.2} (×{:.2}), test SSIM {s:.4} vs MR baseline {b:.4}, {:.0}s",
        ln / l0,
        elapsed.as_secs_f64()
    )
}

fn reproducibility(first: &Option<Vec<EpochRecord>>) -> String {
    let first = first.as_ref().expect("criterion 8 did not produce a history");
    let again = run_desk(&DeskConfig::default()).unwrap();
    assert_eq!(bits(first), bits(&again.history), "loss histories differ");
    format!("{} epochs bit-identical", first.len())
}

// ---------------------------------------------------------------- 9

fn perceptual_properties() -> String {
    let net = EvaluationNetwork::<f32>::random(EvalNetConfig::vgg19(16), 3).unwrap();
    let cfg = LossConfig::perceptual();
    let l = random::<f32>(&[1, 1, 32, 32], 9);
    assert_eq!(perceptual_loss(&l, &l, &net, &cfg).unwrap().item().unwrap(), 0.0);

    let noisy = |sigma: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = l.data().iter().map(|&v| v + (sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)) as f32).collect();
        Tensor::from_vec(l.shape(), data).unwrap()
    };
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..20 {
        small += perceptual_loss(&l, &noisy(0.1, seed), &net, &cfg).unwrap().item().unwrap() as f64 / 20.0;
        large += perceptual_loss(&l, &noisy(1.0, seed), &net, &cfg).unwrap().item().unwrap() as f64 / 20.0;
    }
    assert!(small < large, "{small} vs {large}");

    let identity = EvaluationNetwork::<f32>::identity();
    let id_cfg = LossConfig { layers: vec!["identity".into()], ..LossConfig::perceptual() };
    for seed in 0..10 {
        let a = random::<f32>(&[1, 1, 16, 16], seed);
        let b = random::<f32>(&[1, 1, 16, 16], seed + 50);
        let got = perceptual_loss(&a, &b, &identity, &id_cfg).unwrap().item().unwrap();
        let want = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f32>() / 256.0;
        let direct = l1_loss(&a, &b, L1Reduction::Mean).unwrap().item().unwrap();
        assert_eq!(got, direct);
        assert!((got - want).abs() <= 1e-6 * want);
    }
    format!("E(L,L) = 0; mean E at σ=0.1 {small:.4} < σ=1 {large:.4}; identity net = mean |L−G|")
}

// ----------------------------------------------------------------

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() -> ExitCode {
    // libtest passes filters and flags; this target takes none, and
    // `--list` must report nothing rather than run the suite.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    panic::set_hook(Box::new(|_| {}));

    let mut desk_history = None;
    let mut failures = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> String| {
        let start = Instant::now();
        match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(e) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {} (after {:.1}s)", panic_message(e.as_ref()), start.elapsed().as_secs_f64());
            }
        }
    };
    run(1, "gradient checks", &mut gradient_checks);
    run(2, "convolution oracle", &mut convolution_oracle);
    run(3, "SSIM oracle", &mut ssim_oracle);
    run(4, "PSNR identity", &mut psnr_identity);
    run(5, "projector accuracy", &mut projector_accuracy);
    run(6, "architecture contracts", &mut architecture_contracts);
    run(7, "ADAM trace", &mut adam_trace);
    run(8, "desk-scale run", &mut || desk_run(&mut desk_history));
    run(9, "perceptual loss", &mut perceptual_properties);
    run(10, "reproducibility", &mut || reproducibility(&desk_history));

    if failures == 0 {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 10 criteria FAIL");
        ExitCode::FAILURE
    }
}
