use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfikit::motion::{apply_refinement, synthesize_frame, FlowField, OcclusionMap};
use vfikit::nets::{
    nme_pack_input, nme_pack_quad, param_count, BmeHead, Bound, Conv, GridNet2D, GridNet3D, Module, MrOutput, NetConfig, Params,
};
use vfikit::synth::{make_quad, Observation, SceneObject, SceneSpec, Shape};
use vfikit::tensor::{Graph, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Narrow networks that keep the full topology but run fast.
fn toy() -> NetConfig {
    NetConfig {
        nme_widths: vec![4, 6, 8],
        mr_widths: vec![4, 6, 8],
        bme_widths: [6, 4],
        head_gain: 1.0,
        seed: 3,
        ..NetConfig::default()
    }
}

#[test]
fn single_conv_count() {
    let mut p = Params::<f32>::new();
    Conv::same(&mut p, "c", 3, 8, true, &mut rng(0));
    assert_eq!(p.count(), 224);
}

#[test]
fn default_parameter_counts() {
    let cfg = NetConfig::default();
    let nme = GridNet3D::<f32>::new(&cfg).unwrap();
    let mr = GridNet2D::<f32>::new(&cfg).unwrap();
    let bme = BmeHead::<f32>::new(&cfg).unwrap();
    let (a, b, c) = (param_count(&nme), param_count(&mr), param_count(&bme));
    println!("gridnet3d {a}, gridnet2d {b}, bme {c}");
    assert!(a < 5_000_000);
    assert_eq!(a, 1_975_380);
    assert_eq!(b, 1_880_776);
    assert_eq!(c, 40_705);
}

#[test]
fn zero_weights_give_zero_coefficients() {
    let mut net = GridNet3D::<f32>::new(&toy()).unwrap();
    net.params_mut().zero();
    let x = Tensor::uniform(&[1, 6, 3, 8, 8], -2.0, 2.0, &mut rng(1));
    let c = &net.predict(&x).unwrap()[0];
    for f in [&c.alpha0, &c.beta0, &c.alpha1, &c.beta1] {
        assert!(f.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn coefficient_shapes_at_default_widths() {
    let net = GridNet3D::<f32>::new(&NetConfig::default()).unwrap();
    for s in [32, 64] {
        let x = Tensor::uniform(&[1, 6, 3, s, s], -1.0, 1.0, &mut rng(2));
        let c = net.predict(&x).unwrap();
        assert_eq!(c.len(), 1);
        for f in [&c[0].alpha0, &c[0].beta0, &c[0].alpha1, &c[0].beta1] {
            assert_eq!((f.width(), f.height()), (s, s));
        }
        assert!(c[0].all_finite());
    }
}

#[test]
fn indivisible_size_is_dimension_error() {
    let net = GridNet3D::<f32>::new(&toy()).unwrap();
    let x = Tensor::zeros(&[1, 6, 3, 10, 12]);
    assert_eq!(net.predict(&x).unwrap_err().class(), "dimension");
    let x = Tensor::zeros(&[1, 6, 2, 8, 8]);
    assert_eq!(net.predict(&x).unwrap_err().class(), "dimension");
}

#[test]
fn rectangular_and_batched_inputs() {
    let net = GridNet3D::<f32>::new(&toy()).unwrap();
    let x = Tensor::uniform(&[2, 6, 3, 8, 12], -1.0, 1.0, &mut rng(4));
    let c = net.predict(&x).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!((c[1].width(), c[1].height()), (12, 8));
    // Batch items are independent.
    let one = Tensor::new(&[1, 6, 3, 8, 12], x.data()[x.len() / 2..].to_vec()).unwrap();
    let c1 = net.predict(&one).unwrap();
    assert!(c1[0].alpha0.max_abs_diff(&c[1].alpha0) < 1e-5);
}

struct MrInputs {
    vals: [Tensor<f64>; 6],
}

fn mr_inputs(s: usize, seed: u64) -> MrInputs {
    let mut r = rng(seed);
    let img = |r: &mut ChaCha8Rng| Tensor::uniform(&[1, 3, s, s], 0.0, 1.0, r);
    let flow = |r: &mut ChaCha8Rng| Tensor::uniform(&[1, 2, s, s], -2.0, 2.0, r);
    MrInputs {
        vals: [img(&mut r), img(&mut r), img(&mut r), img(&mut r), flow(&mut r), flow(&mut r)],
    }
}

fn mr_run(net: &GridNet2D<f64>, g: &mut Graph<f64>, inp: &MrInputs, trainable: bool) -> (Bound, Vec<Var>, MrOutput) {
    let p = net.params().bind(g, trainable);
    let v: Vec<Var> = inp.vals.iter().map(|t| g.param(t.clone())).collect();
    let out = net.forward(g, &p, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
    (p, v, out)
}

#[test]
fn zero_refinement_is_identity() {
    let mut net = GridNet2D::<f64>::new(&toy()).unwrap();
    net.params_mut().zero();
    let inp = mr_inputs(8, 5);
    let mut g = Graph::new();
    let (_, _, out) = mr_run(&net, &mut g, &inp, false);
    let field = |v: Var| FlowField::from_tensor(g.value(v), 0).unwrap();
    let flow = FlowField::from_tensor(&inp.vals[4], 0).unwrap();
    let refined = apply_refinement(&flow, &field(out.offsets0), &field(out.residuals0)).unwrap();
    assert!(refined.max_abs_diff(&flow) == 0.0);
    assert_eq!(g.value(out.offsets1).max_abs(), 0.0);
    assert_eq!(g.value(out.residuals1).max_abs(), 0.0);
}

#[test]
fn refinement_preserves_size_and_reaches_all_inputs() {
    let net = GridNet2D::<f64>::new(&toy()).unwrap();
    let inp = mr_inputs(48, 6);
    let mut g = Graph::new();
    let (_, v, out) = mr_run(&net, &mut g, &inp, false);
    for o in [out.offsets0, out.residuals0, out.offsets1, out.residuals1] {
        assert_eq!(g.value(o).shape(), &[1, 2, 48, 48]);
    }
    assert_eq!(g.value(out.features).shape(), &[1, net.feature_width(), 48, 48]);
    // Random projection of all outputs as the loss.
    let parts = g.concat(&[out.offsets0, out.residuals0, out.offsets1, out.residuals1], 1).unwrap();
    let proj = g.constant(Tensor::randn(&[1, 8, 48, 48], 1.0, &mut rng(7)));
    let loss = g.mul(parts, proj).unwrap();
    let loss = g.sum(loss);
    g.backward(loss).unwrap();
    let mut channels = 0;
    for &x in &v {
        let gr = g.grad(x).unwrap();
        let (c, n) = (gr.shape()[1], 48 * 48);
        for k in 0..c {
            let nz = gr.data()[k * n..(k + 1) * n].iter().any(|&d| d != 0.0);
            assert!(nz, "input channel {} gets no gradient", channels + k);
        }
        channels += c;
    }
    assert_eq!(channels, 16);
}

#[test]
fn every_parameter_gets_gradient() {
    let cfg = toy();
    let nme = GridNet3D::<f64>::new(&cfg).unwrap();
    let mr = GridNet2D::<f64>::new(&cfg).unwrap();
    let bme = BmeHead::<f64>::new(&cfg).unwrap();
    let mut g = Graph::new();
    let pn = nme.params().bind(&mut g, true);
    let x = g.constant(Tensor::uniform(&[1, 6, 3, 8, 8], -1.0, 1.0, &mut rng(8)));
    let c = nme.forward(&mut g, &pn, x).unwrap();
    let inp = mr_inputs(8, 9);
    let (pm, _, out) = mr_run(&mr, &mut g, &inp, true);
    let pb = bme.params().bind(&mut g, true);
    let (w0, w1) = (g.constant(inp.vals[2].clone()), g.constant(inp.vals[3].clone()));
    let m = bme.forward(&mut g, &pb, w0, w1, out.features).unwrap();
    let all = g.concat(&[c.alpha0, c.beta0, c.alpha1, c.beta1, out.offsets0, out.residuals1], 1).unwrap();
    let proj = g.constant(Tensor::randn(&[1, 12, 8, 8], 1.0, &mut rng(10)));
    let l = g.mul(all, proj).unwrap();
    let l = g.sum(l);
    let mp = g.constant(Tensor::randn(&[1, 1, 8, 8], 1.0, &mut rng(11)));
    let lm = g.mul(m, mp).unwrap();
    let lm = g.sum(lm);
    let loss = g.add(l, lm).unwrap();
    g.backward(loss).unwrap();

    let mut dead = Vec::new();
    for (params, bound) in [(nme.params(), &pn), (mr.params(), &pm), (bme.params(), &pb)] {
        for (name, &v) in params.names().iter().zip(&bound.vars) {
            if g.grad(v).is_none_or(|gr| gr.max_abs() == 0.0) {
                dead.push(name.clone());
            }
        }
    }
    assert!(dead.is_empty(), "dead parameters: {dead:?}");
}

#[test]
fn zero_mask_head_gives_half_and_mean_synthesis() {
    let cfg = toy();
    let mut bme = BmeHead::<f64>::new(&cfg).unwrap();
    bme.params_mut().zero();
    let inp = mr_inputs(8, 12);
    let mut g = Graph::new();
    let p = bme.params().bind(&mut g, false);
    let (w0, w1) = (g.constant(inp.vals[2].clone()), g.constant(inp.vals[3].clone()));
    let feats = g.constant(Tensor::uniform(&[1, cfg.mr_widths[0], 8, 8], -1.0, 1.0, &mut rng(13)));
    let m = bme.forward(&mut g, &p, w0, w1, feats).unwrap();
    assert!(g.value(m).data().iter().all(|&v| v == 0.5));

    let sq = |t: &Tensor<f64>| t.clone().reshape(&t.shape()[1..]).unwrap();
    let zero = FlowField::<f64>::zeros(8, 8);
    let mask = sq(g.value(m));
    let out = synthesize_frame(&sq(&inp.vals[2]), &sq(&inp.vals[3]), &zero, &zero, &mask, 0.5).unwrap();
    let mean = inp.vals[2].zip_map(&inp.vals[3], |a, b| 0.5 * (a + b)).unwrap();
    assert!(out.max_abs_diff(&sq(&mean)) <= 1e-9);
}

#[test]
fn mask_range_under_random_weights() {
    for seed in 0..4 {
        let cfg = NetConfig { seed, ..toy() };
        let bme = BmeHead::<f32>::new(&cfg).unwrap();
        let mut g = Graph::new();
        let p = bme.params().bind(&mut g, false);
        let mut r = rng(seed + 20);
        let w0 = g.constant(Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r));
        let w1 = g.constant(Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r));
        let f = g.constant(Tensor::uniform(&[2, cfg.mr_widths[0], 8, 8], -3.0, 3.0, &mut r));
        let m = bme.forward(&mut g, &p, w0, w1, f).unwrap();
        let d = g.value(m).data();
        assert!(d.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_is_finite_and_size_independent() {
    let net = GridNet3D::<f32>::new(&toy()).unwrap();
    let before = param_count(&net);
    for (s, seed) in [(8, 14), (16, 15)] {
        let x = Tensor::uniform(&[1, 6, 3, s, s], -50.0, 50.0, &mut rng(seed));
        assert!(net.predict(&x).unwrap()[0].all_finite());
    }
    assert_eq!(param_count(&net), before);
    let mr = GridNet2D::<f64>::new(&toy()).unwrap();
    let mut g = Graph::new();
    let (_, _, out) = mr_run(&mr, &mut g, &mr_inputs(16, 16), false);
    assert!(g.value(out.features).all_finite());
}

#[test]
fn deterministic_init() {
    let a = GridNet3D::<f32>::new(&toy()).unwrap();
    let b = GridNet3D::<f32>::new(&toy()).unwrap();
    assert_eq!(a.params(), b.params());
    let c = GridNet3D::<f32>::new(&NetConfig { seed: 4, ..toy() }).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn pack_zero_and_roundtrip() {
    let z = FlowField::zeros(5, 4);
    let o = OcclusionMap::zeros(5, 4);
    let t: Tensor<f32> = nme_pack_input([[&z, &z]; 3], [[&o, &o]; 3]).unwrap();
    assert_eq!(t.shape(), &[1, 6, 3, 4, 5]);
    assert!(t.data().iter().all(|&v| v == 0.0));

    let mut r = rng(17);
    let rf = |r: &mut ChaCha8Rng| FlowField::from_tensor(&Tensor::randn(&[1, 2, 4, 5], 3.0, r), 0).unwrap();
    let flows: Vec<FlowField> = (0..6).map(|_| rf(&mut r)).collect();
    let occ = OcclusionMap::from_vec(5, 4, (0..20).map(|i| (i % 3) as f32 / 2.0).collect()).unwrap();
    let t: Tensor<f32> = nme_pack_input(
        [[&flows[0], &flows[1]], [&flows[2], &flows[3]], [&flows[4], &flows[5]]],
        [[&o, &o], [&occ, &o], [&o, &o]],
    )
    .unwrap();
    for y in 0..4 {
        for x in 0..5 {
            let d = flows[2].get(x, y);
            assert_eq!(t.at(&[0, 0, 1, y, x]).to_bits(), d[0].to_bits());
            assert_eq!(t.at(&[0, 1, 1, y, x]).to_bits(), d[1].to_bits());
            assert_eq!(t.at(&[0, 2, 1, y, x]), flows[3].get(x, y)[0]);
            assert_eq!(t.at(&[0, 4, 1, y, x]), occ.get(x, y));
        }
    }
    let small = FlowField::zeros(4, 4);
    let err = nme_pack_input::<f32>([[&z, &z], [&z, &small], [&z, &z]], [[&o, &o]; 3]).unwrap_err();
    assert_eq!(err.class(), "dimension");
}

#[test]
fn pack_synthetic_slot_means() {
    // One large object on a static background; slot means of the forward
    // flow follow the object's mean displacement per pair.
    let o = SceneObject {
        shape: Shape::Rect { width: 20.0, height: 16.0 },
        texture_seed: 1,
        z: 0,
        x0: [30.0, 32.0],
        v: [1.0, 0.5],
        a: [0.5, -0.25],
    };
    let spec = SceneSpec::new(64, 64, 2, vec![o]).unwrap();
    let q = make_quad(&spec, 0.5, Observation::Exact).unwrap();
    let t: Tensor<f64> = nme_pack_quad(&q).unwrap();
    let n = 64 * 64;
    for (k, &(a, b)) in vfikit::nets::NME_PAIRS.iter().enumerate() {
        let f = q.flow(a, b).unwrap();
        for axis in 0..2 {
            let want: f64 = f.data().iter().skip(axis).step_by(2).map(|&v| v as f64).sum::<f64>() / n as f64;
            let got: f64 = (0..n).map(|i| t.data()[(axis * 3 + k) * n + i]).sum::<f64>() / n as f64;
            assert!((got - want).abs() < 1e-9);
        }
        // The object moves and the background does not, so the mean is a
        // nonzero fraction of the object's displacement.
        let d = q.scene().unwrap().objects()[0].displacement_between::<f64>(a as f64, b as f64);
        let got: f64 = (0..n).map(|i| t.data()[k * n + i]).sum::<f64>() / n as f64;
        assert!(got * d[0] > 0.0 && got.abs() < d[0].abs());
    }
}
