use vfikit::io::{load_quad, read_manifest, save_quads, Checkpoint};
use vfikit::losses::{psnr, Phase};
use vfikit::motion::synthesize_frame;
use vfikit::nets::{Module, NetConfig};
use vfikit::pipeline::{
    evaluate_frames, load_dataset, train_on, DataSpec, Mode, Pipeline, PipelineConfig, TrainConfig,
};
use vfikit::synth::{
    make_dataset, make_quad, render_scene, Difficulty, Observation, Quad, SceneObject, SceneSpec, Shape,
};
use vfikit::tensor::{AdamConfig, Tensor};

fn pipeline(mode: Mode) -> Pipeline {
    Pipeline::new(PipelineConfig {
        mode,
        model: toy_net(),
        ..PipelineConfig::default()
    })
    .unwrap()
}

fn toy_net() -> NetConfig {
    NetConfig {
        nme_widths: vec![4, 6, 8],
        mr_widths: vec![6, 8, 10],
        bme_widths: [8, 6],
        seed: 5,
        ..NetConfig::default()
    }
}

fn mover(v: [f64; 2], a: [f64; 2]) -> SceneSpec {
    let o = SceneObject {
        shape: Shape::Disk { radius: 9.0 },
        texture_seed: 3,
        z: 0,
        x0: [28.0, 32.0],
        v,
        a,
    };
    SceneSpec::new(64, 64, 8, vec![o]).unwrap()
}

#[test]
fn gt_coeffs_interpolation_is_accurate() {
    let q = make_quad(&mover([2.0, 1.0], [0.5, -0.5]), 0.5, Observation::OccludedNoise(1.0)).unwrap();
    let out = pipeline(Mode::GtCoeffs).interpolate(&q, 0.5).unwrap();
    let p = psnr(&out.frame, q.target().unwrap(), 1.0).unwrap();
    assert!(p > 35.0, "{p}");
    assert!(out.diagnostics.mask.data().iter().all(|&m| m == 0.5));
    assert_eq!(out.diagnostics.refined_t0, out.diagnostics.flow_t0);
}

#[test]
fn analytic_matches_gt_on_exact_flows() {
    let d = Difficulty::quadratic().with_observation(Observation::Exact);
    for q in make_dataset(4, 11, 32, &d).unwrap() {
        let a = pipeline(Mode::AnalyticBaseline).interpolate(&q, 0.5).unwrap();
        let g = pipeline(Mode::GtCoeffs).interpolate(&q, 0.5).unwrap();
        let (ca, cg) = (&a.diagnostics.coeffs, &g.diagnostics.coeffs);
        for (x, y) in [(&ca.alpha0, &cg.alpha0), (&ca.beta0, &cg.beta0), (&ca.alpha1, &cg.alpha1), (&ca.beta1, &cg.beta1)] {
            assert!(x.max_abs_diff(y) <= 1e-6);
        }
        assert!(a.frame.max_abs_diff(&g.frame) <= 1e-5);
    }
}

fn static_quad() -> Quad {
    let o = SceneObject {
        shape: Shape::Rect { width: 10.0, height: 8.0 },
        texture_seed: 1,
        z: 0,
        x0: [16.0, 16.0],
        v: [0.0, 0.0],
        a: [0.0, 0.0],
    };
    make_quad(&SceneSpec::new(32, 32, 2, vec![o]).unwrap(), 0.5, Observation::Exact).unwrap()
}

#[test]
fn static_scene_reproduces_key_frame() {
    let q = static_quad();
    let i0 = q.frame(0).unwrap();
    assert_eq!(i0, q.frame(1).unwrap());
    let mut learned = pipeline(Mode::Learned);
    // Zero refinement weights; the coefficient net sees all-zero input and
    // has zero biases, so it predicts zero motion on its own.
    let mut model = learned.model().unwrap().clone();
    model.mr.params_mut().zero();
    learned = Pipeline::with_model(learned.config().clone(), model).unwrap();
    for p in [pipeline(Mode::AnalyticBaseline), pipeline(Mode::GtCoeffs), learned] {
        let out = p.interpolate(&q, 0.5).unwrap();
        assert!(out.frame.max_abs_diff(i0) <= 1e-6, "{:?}", p.mode());
    }
}

#[test]
fn diagnostics_reproduce_the_frame_exactly() {
    let q = make_quad(&mover([1.5, -1.0], [0.25, 0.5]), 0.3, Observation::OccludedNoise(1.0)).unwrap();
    for mode in [Mode::Learned, Mode::AnalyticBaseline, Mode::GtCoeffs] {
        let out = pipeline(mode).interpolate(&q, 0.3).unwrap();
        let d = &out.diagnostics;
        let again = synthesize_frame(q.frame(0).unwrap(), q.frame(1).unwrap(), &d.refined_t0, &d.refined_t1, &d.mask, 0.3).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&out.frame), "{mode:?}");
    }
}

#[test]
fn gt_coeffs_on_file_quads_is_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let quads = make_dataset(1, 2, 16, &Difficulty::linear()).unwrap();
    let m = save_quads(&quads, dir.path()).unwrap();
    let q = load_quad(&read_manifest(&m).unwrap()[0]).unwrap();
    let e = pipeline(Mode::GtCoeffs).interpolate(&q, 0.5).unwrap_err();
    assert_eq!(e.class(), "contract");
    assert!(pipeline(Mode::AnalyticBaseline).interpolate(&q, 0.5).is_ok());
    let spec = DataSpec::Manifest { path: m };
    assert_eq!(load_dataset(&spec).unwrap().len(), 1);
}

#[test]
fn multi_frame_interpolation() {
    let spec = mover([2.0, 0.0], [0.5, 0.0]);
    let q = make_quad(&spec, 0.5, Observation::OccludedNoise(1.0)).unwrap();
    let p = pipeline(Mode::GtCoeffs);
    let frames = p.interpolate_multi(&q, &[0.75, 0.25, 0.5]).unwrap();
    assert_eq!(frames.iter().map(|f| f.0).collect::<Vec<_>>(), vec![0.25, 0.5, 0.75]);
    let bg = SceneSpec::new(64, 64, 8, vec![]).unwrap();
    let mut last = f64::NEG_INFINITY;
    for (t, f) in &frames {
        let gt = render_scene(&spec, *t);
        let v = psnr(f, &gt, 1.0).unwrap();
        assert!(v > 33.0, "t = {t}: {v}");
        // Centroid of the difference from the empty background.
        let b = render_scene(&bg, *t);
        let (mut sx, mut sw) = (0.0, 0.0);
        for c in 0..3 {
            for y in 0..64 {
                for x in 0..64 {
                    let d = (f.at(&[c, y, x]) - b.at(&[c, y, x])).abs() as f64;
                    sx += d * x as f64;
                    sw += d;
                }
            }
        }
        let cx = sx / sw;
        assert!(cx > last, "centroid {cx} at t = {t} after {last}");
        last = cx;
    }
    let single = p.interpolate_multi(&q, &[0.5]).unwrap();
    assert_eq!(single[0].1, p.interpolate(&q, 0.5).unwrap().frame);
}

fn toy_train(steps: u64, lr: f64, late: Option<u64>) -> PipelineConfig {
    PipelineConfig {
        mode: Mode::Learned,
        seed: 4,
        model: toy_net(),
        train: TrainConfig {
            steps,
            batch_size: 2,
            late_phase_step: late,
            adam: AdamConfig { lr, ..AdamConfig::default() },
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let quads = make_dataset(2, 3, 16, &Difficulty::linear()).unwrap();
    let cfg = toy_train(3, 0.0, None);
    let out = train_on(&cfg, &quads, |_| {}).unwrap();
    let fresh = Pipeline::new(cfg).unwrap();
    assert_eq!(out.pipeline.model().unwrap().named_tensors(), fresh.model().unwrap().named_tensors());
    // The batch is the whole set, so only the shuffle order changes.
    let first = out.log[0].total;
    assert!(out.log.iter().all(|r| (r.total - first).abs() <= 1e-6 * first));
    assert_eq!(out.adam.step, 3);
}

#[test]
fn training_is_deterministic_and_switches_phase() {
    let quads = make_dataset(3, 3, 16, &Difficulty::linear()).unwrap();
    let cfg = toy_train(4, 1e-3, Some(3));
    let mut seen = Vec::new();
    let a = train_on(&cfg, &quads, |r| seen.push(r.step)).unwrap();
    let b = train_on(&cfg, &quads, |_| {}).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(a.log, b.log);
    for r in &a.log {
        let late = r.step >= 3;
        assert_eq!(r.phase, if late { Phase::Late } else { Phase::Early });
        let w = if late { [204.0, 0.005, 0.0, 0.0] } else { [204.0, 0.005, 102.0, 1.0] };
        assert_eq!(r.weights, w);
        let sum: f64 = r.parts.iter().zip(&r.weights).map(|(p, w)| p * w).sum();
        assert!((sum - r.total).abs() < 1e-4 * r.total.max(1.0));
    }
    assert_ne!(a.pipeline.model().unwrap().named_tensors(), Pipeline::new(cfg).unwrap().model().unwrap().named_tensors());
}

#[test]
fn nan_loss_aborts_with_step() {
    let mut quads = make_dataset(2, 3, 16, &Difficulty::linear()).unwrap();
    quads[1].target.as_mut().unwrap().data_mut()[5] = f32::NAN;
    let e = train_on(&toy_train(3, 1e-3, None), &quads, |_| {}).unwrap_err();
    assert_eq!(e.class(), "numeric");
    assert!(e.to_string().contains("step 1"), "{e}");
}

#[test]
fn training_needs_learned_mode() {
    let quads = make_dataset(1, 3, 16, &Difficulty::linear()).unwrap();
    let cfg = PipelineConfig {
        mode: Mode::AnalyticBaseline,
        ..toy_train(1, 1e-3, None)
    };
    assert_eq!(train_on(&cfg, &quads, |_| {}).unwrap_err().class(), "config");
}

#[test]
fn checkpoint_restores_forward_exactly() {
    let quads = make_dataset(2, 3, 16, &Difficulty::moderate()).unwrap();
    let out = train_on(&toy_train(2, 1e-3, None), &quads, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = out.checkpoint().unwrap();
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.step, 2);
    let p = Pipeline::from_checkpoint(&back).unwrap();
    let a = out.pipeline.interpolate(&quads[0], 0.5).unwrap().frame;
    let b = p.interpolate(&quads[0], 0.5).unwrap().frame;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn evaluation_rows_and_self_scores() {
    let quads = make_dataset(5, 9, 32, &Difficulty::moderate()).unwrap();
    let r = pipeline(Mode::GtCoeffs).evaluate(&quads).unwrap();
    assert_eq!(r.rows.len(), 5);
    assert_eq!(r.rows.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    for (row, q) in r.rows.iter().zip(&quads) {
        let single = pipeline(Mode::GtCoeffs).interpolate(q, q.t).unwrap().frame;
        assert_eq!(row.psnr, psnr(&single, q.target().unwrap(), 1.0).unwrap());
    }
    let pairs: Vec<_> = quads.iter().map(|q| (q.target().unwrap(), q.target().unwrap())).collect();
    let s = evaluate_frames(&pairs, 0.5).unwrap();
    assert!(s.rows.iter().all(|x| x.psnr == 99.0 && (x.ssim - 1.0).abs() < 1e-12));
}
