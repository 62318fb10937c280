mod common;

use common::ssim_scalar;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfikit::losses::{
    perceptual_loss, psnr, psnr_u8, reconstruction_loss, smoothness_loss, ssim, total_loss, warping_loss,
    FeatureExtractor, LossParts, LossWeights, Phase, PSNR_CAP,
};
use vfikit::motion::backward_warp;
use vfikit::synth::{make_quad, Observation, SceneObject, SceneSpec, Shape};
use vfikit::tensor::{gradcheck, Graph, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn img(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 0.0, 1.0, &mut rng(seed))
}

/// Runs a two-input loss on constants and returns its value.
fn eval2(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var, Var) -> vfikit::Result<Var>) -> f64 {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = f(&mut g, x, y).unwrap();
    g.value(l).item()
}

#[test]
fn reconstruction_examples() {
    let a = img(&[2, 3, 5, 4], 1);
    assert_eq!(eval2(&a, &a, reconstruction_loss), 0.0);
    let b = a.map(|v| v + 0.5);
    assert!((eval2(&b, &a, reconstruction_loss) - 0.5).abs() < 1e-12);
    let c = img(&[2, 3, 5, 4], 2);
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - c.data()[i]).abs();
    }
    assert!((eval2(&a, &c, reconstruction_loss) - s / a.len() as f64).abs() < 1e-12);
}

#[test]
fn perceptual_examples() {
    let phi = FeatureExtractor::<f64>::new(3);
    let a = img(&[1, 3, 16, 16], 4);
    let p = |x: &Tensor<f64>, y: &Tensor<f64>| eval2(x, y, |g, u, v| perceptual_loss(g, u, v, &phi));
    assert_eq!(p(&a, &a), 0.0);
    // Spot check on this seed: a larger perturbation costs more.
    let noise = Tensor::randn(&[1, 3, 16, 16], 1.0, &mut rng(5));
    let mut last = 0.0;
    for s in [0.01, 0.05, 0.2] {
        let b = a.zip_map(&noise, |x, n| x + s * n).unwrap();
        let l = p(&b, &a);
        assert!(l > last, "{s}: {l} <= {last}");
        last = l;
    }
}

#[test]
fn warping_examples() {
    let a = img(&[1, 3, 6, 6], 6);
    let zero = Tensor::zeros(&[1, 2, 6, 6]);
    let mut g = Graph::new();
    let v = [a.clone(), a.clone(), a.clone(), zero.clone(), zero.clone()].map(|t| g.constant(t));
    let l = warping_loss(&mut g, v[0], v[1], v[2], v[3], v[4]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    // Direct evaluation on a random case.
    let (it, i0, i1) = (img(&[1, 3, 6, 6], 7), img(&[1, 3, 6, 6], 8), img(&[1, 3, 6, 6], 9));
    let f0 = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng(10));
    let f1 = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng(11));
    let mut g = Graph::new();
    let v = [&it, &i0, &i1, &f0, &f1].map(|t| g.constant(t.clone()));
    let l = warping_loss(&mut g, v[0], v[1], v[2], v[3], v[4]).unwrap();
    let squeeze = |t: &Tensor<f64>| t.clone().reshape(&t.shape()[1..]).unwrap();
    let field = |t: &Tensor<f64>| vfikit::motion::FlowField::from_tensor(t, 0).unwrap();
    let w0 = backward_warp(&squeeze(&i0), &field(&f0)).unwrap();
    let w1 = backward_warp(&squeeze(&i1), &field(&f1)).unwrap();
    let t = squeeze(&it);
    let l1 = |w: &Tensor<f64>| {
        w.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64
    };
    assert!((g.value(l).item() - (l1(&w0) + l1(&w1))).abs() < 1e-12);
}

#[test]
fn warping_with_true_flows_on_translation_is_small() {
    let o = SceneObject {
        shape: Shape::Rect { width: 14.0, height: 11.0 },
        texture_seed: 2,
        z: 0,
        x0: [28.0, 30.0],
        v: [1.5, -1.0],
        a: [0.0, 0.0],
    };
    let spec = SceneSpec::new(64, 64, 4, vec![o]).unwrap();
    let q = make_quad(&spec, 0.5, Observation::Exact).unwrap();
    let (ft0, ft1) = q.gt_intermediate.clone().unwrap();
    let w0 = backward_warp(&q.frames[1], &ft0).unwrap();
    let w1 = backward_warp(&q.frames[2], &ft1).unwrap();
    let (mut s, mut n) = (0.0, 0usize);
    for y in 0..64 {
        for x in 0..64 {
            let p = [x as f64, y as f64];
            // Interior: away from the outline at every time involved.
            if [0.0, 0.5, 1.0].iter().all(|&t| spec.edge_distance(p, t) >= 3.0) {
                for c in 0..3 {
                    let gt = q.target().unwrap().at(&[c, y, x]) as f64;
                    s += (w0.at(&[c, y, x]) as f64 - gt).abs() + (w1.at(&[c, y, x]) as f64 - gt).abs();
                }
                n += 3;
            }
        }
    }
    let loss = s / n as f64;
    assert!(loss < 1e-3, "{loss}");
}

fn smooth(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    eval2(a, b, smoothness_loss)
}

#[test]
fn smoothness_examples() {
    let c = Tensor::full(&[1, 2, 5, 7], 0.7);
    assert_eq!(smooth(&c, &c), 0.0);
    let ramp = Tensor::from_fn(&[1, 2, 5, 7], |i| (i % 7) as f64);
    assert!((smooth(&ramp, &c) - 6.0 / 7.0).abs() < 1e-12);
    assert!((smooth(&ramp, &ramp) - 12.0 / 7.0).abs() < 1e-12);

    let (a, b) = (
        Tensor::randn(&[2, 2, 4, 5], 1.0, &mut rng(12)),
        Tensor::randn(&[2, 2, 4, 5], 1.0, &mut rng(13)),
    );
    let tv = |f: &Tensor<f64>| {
        let mut s = 0.0;
        for n in 0..2 {
            for c in 0..2 {
                for y in 0..4 {
                    for x in 0..5 {
                        let v = f.at(&[n, c, y, x]);
                        if x + 1 < 5 {
                            s += (f.at(&[n, c, y, x + 1]) - v).abs();
                        }
                        if y + 1 < 4 {
                            s += (f.at(&[n, c, y + 1, x]) - v).abs();
                        }
                    }
                }
            }
        }
        s / f.len() as f64
    };
    assert!((smooth(&a, &b) - (tv(&a) + tv(&b))).abs() < 1e-12);
}

fn total_of(parts: [f64; 4], w: &LossWeights) -> f64 {
    let mut g = Graph::new();
    let v = parts.map(|p| g.constant(Tensor::scalar(p)));
    let p = LossParts {
        reconstruction: v[0],
        perceptual: v[1],
        warping: v[2],
        smoothness: v[3],
    };
    let l = total_loss(&mut g, &p, w).unwrap();
    g.value(l).item()
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!(total_of([0.0; 4], &w), 0.0);
    assert!((total_of([1.0; 4], &w) - 307.005).abs() < 1e-9);
    let late = w.in_phase(Phase::Late);
    let a = total_of([0.3, 2.0, 5.0, 7.0], &late);
    let b = total_of([0.3, 2.0, f64::NAN, f64::INFINITY], &late);
    assert_eq!(a, b);
    assert!((a - (204.0 * 0.3 + 0.005 * 2.0)).abs() < 1e-9);
    assert_eq!(late.effective(), [204.0, 0.005, 0.0, 0.0]);
    let plain = LossParts {
        reconstruction: 0.3,
        perceptual: 2.0,
        warping: f64::NAN,
        smoothness: 1.0,
    };
    assert_eq!(late.combine(&plain), a);
}

#[test]
fn negative_weight_is_config_error() {
    let w = LossWeights {
        lambda_s: -1.0,
        ..LossWeights::default()
    };
    assert_eq!(w.validate().unwrap_err().class(), "config");
}

#[test]
fn psnr_examples() {
    let a = img(&[3, 8, 8], 14);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    let x: Vec<u8> = (0..300).map(|i| (i % 200) as u8).collect();
    let y: Vec<u8> = x.iter().map(|v| v + 16).collect();
    let p = psnr_u8(&x, &y).unwrap();
    assert!((p - 24.05).abs() < 0.01, "{p}");
    assert!((p - 10.0 * (65025.0f64 / 256.0).log10()).abs() < 1e-12);

    let b = img(&[3, 8, 8], 15);
    let mse: f64 = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.len() as f64;
    assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
}

#[test]
fn ssim_matches_scalar_reference() {
    // Fixed patterns: a ramp, a checkerboard and a smooth blob.
    let n = 16;
    let ramp: Vec<f64> = (0..n * n).map(|i| (i % n) as f64 / 15.0).collect();
    let checker: Vec<f64> = (0..n * n).map(|i| ((i % n + i / n) % 2) as f64 * 0.8 + 0.1).collect();
    let blob: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - 7.5, (i / n) as f64 - 7.5);
            (-(x * x + y * y) / 30.0).exp()
        })
        .collect();
    let fixtures = [(&ramp, &blob), (&checker, &ramp), (&blob, &checker), (&ramp, &ramp)];
    for (a, b) in fixtures {
        let ta = Tensor::new(&[1, n, n], a.clone()).unwrap();
        let tb = Tensor::new(&[1, n, n], b.clone()).unwrap();
        let got = ssim(&ta, &tb, 1.0).unwrap();
        let want = ssim_scalar(a, b, n, n, 1.0);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    // Channels are averaged.
    let mut both = ramp.clone();
    both.extend(&checker);
    let mut other = blob.clone();
    other.extend(&ramp);
    let got = ssim(
        &Tensor::new(&[2, n, n], both).unwrap(),
        &Tensor::new(&[2, n, n], other).unwrap(),
        1.0,
    )
    .unwrap();
    let want = 0.5 * (ssim_scalar(&ramp, &blob, n, n, 1.0) + ssim_scalar(&checker, &ramp, n, n, 1.0));
    assert!((got - want).abs() < 1e-6);
}

#[test]
fn ssim_examples() {
    let a = img(&[3, 16, 20], 16);
    assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let inv = a.map(|v| 1.0 - v);
    assert!(ssim(&inv, &a, 1.0).unwrap() < 1.0);
    let small = img(&[3, 8, 8], 17);
    assert_eq!(ssim(&small, &small, 1.0).unwrap_err().class(), "dimension");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_of_self_is_one(seed: u64, scale in 0.0f64..3.0) {
        let a = img(&[2, 12, 13], seed).map(|v| v * scale);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_error(e1 in 1e-4f64..0.5, de in 1e-4f64..0.5) {
        let a = Tensor::<f64>::full(&[3, 4, 4], 0.25);
        let p1 = psnr(&a.map(|v| v + e1), &a, 1.0).unwrap();
        let p2 = psnr(&a.map(|v| v + e1 + de), &a, 1.0).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn losses_are_nonnegative_and_zero_on_match(seed: u64) {
        let mut r = rng(seed);
        let shape = [1, 3, 8, 8];
        let a = Tensor::<f64>::uniform(&shape, 0.0, 1.0, &mut r);
        let b = Tensor::<f64>::uniform(&shape, 0.0, 1.0, &mut r);
        let phi = FeatureExtractor::new(seed);
        prop_assert!(eval2(&a, &b, reconstruction_loss) >= 0.0);
        prop_assert!(eval2(&a, &b, |g, x, y| perceptual_loss(g, x, y, &phi)) >= 0.0);
        prop_assert_eq!(eval2(&a, &a, |g, x, y| perceptual_loss(g, x, y, &phi)), 0.0);
        let f = Tensor::<f64>::randn(&[1, 2, 8, 8], 1.0, &mut r);
        prop_assert!(smooth(&f, &f) >= 0.0);
    }

    #[test]
    fn total_is_linear_in_each_part(p in prop::array::uniform4(0.0f64..10.0), k in 0usize..4, d in 0.0f64..5.0) {
        let w = LossWeights::default();
        let mut q = p;
        q[k] += d;
        let lam = w.effective()[k];
        prop_assert!((total_of(q, &w) - total_of(p, &w) - lam * d).abs() < 1e-9);
    }
}

/// Pairs whose differences stay away from zero, where |.| has a kink.
fn separated(shape: &[usize], seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let a = Tensor::uniform(shape, 0.0, 1.0, &mut r);
    let d: Vec<f64> = (0..a.len())
        .map(|_| {
            let s = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            s * r.random_range(0.05..0.5)
        })
        .collect();
    let b = Tensor::new(shape, a.data().iter().zip(&d).map(|(v, e)| v + e).collect()).unwrap();
    (a, b)
}

#[test]
fn gradcheck_all_losses() {
    let (a, b) = separated(&[1, 3, 6, 6], 20);
    let r = gradcheck(|g, v| reconstruction_loss(g, v[0], v[1]), &[a.clone(), b.clone()], 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-4, "reconstruction {r:?}");

    let phi = FeatureExtractor::<f64>::new(21);
    let (p, q) = (img(&[1, 3, 8, 8], 22), img(&[1, 3, 8, 8], 23));
    let r = gradcheck(|g, v| perceptual_loss(g, v[0], v[1], &phi), &[p, q], 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-4, "perceptual {r:?}");

    // Flows stay off the integer lattice; frames are far apart so the L1
    // terms stay on one side of their kink.
    let off = |seed: u64| {
        let mut r = rng(seed);
        Tensor::from_fn(&[1, 2, 5, 5], |_| r.random_range(-1i32..=1) as f64 + r.random_range(0.2..0.8))
    };
    let it = img(&[1, 3, 5, 5], 24).map(|v| v + 2.0);
    let (i0, i1) = (img(&[1, 3, 5, 5], 25), img(&[1, 3, 5, 5], 26));
    let r = gradcheck(
        |g, v| warping_loss(g, v[0], v[1], v[2], v[3], v[4]),
        &[it, i0, i1, off(27), off(28)],
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "warping {r:?}");

    // TV is piecewise linear, so a coarse step is exact off the kinks.
    let ramp = |seed: u64| {
        let mut r = rng(seed);
        // Strictly increasing along x and y so no difference is near zero.
        Tensor::from_fn(&[1, 2, 4, 5], |i| {
            let (y, x) = ((i / 5) % 4, i % 5);
            x as f64 * 0.7 + y as f64 * 1.9 + r.random_range(0.0..0.3)
        })
    };
    let r = gradcheck(|g, v| smoothness_loss(g, v[0], v[1]), &[ramp(29), ramp(30)], 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-4, "smoothness {r:?}");

    let parts = [0.4, 1.3, 0.2, 0.9].map(Tensor::scalar);
    let w = LossWeights::default();
    let r = gradcheck(
        |g, v| {
            let p = LossParts {
                reconstruction: v[0],
                perceptual: v[1],
                warping: v[2],
                smoothness: v[3],
            };
            total_loss(g, &p, &w)
        },
        &parts,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "total {r:?}");
}
