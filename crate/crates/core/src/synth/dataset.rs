use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{check_t, FlowField, MotionCoeffs, OcclusionMap};
use crate::synth::scene::{analytic_flow_detailed, gt_coeffs, intermediate_flows, render_scene, SceneObject, SceneSpec, Shape};
use crate::tensor::Tensor;

/// The six directed links between consecutive frames of a quad, as
/// `(from, to)` frame times.
pub const LINKS: [(i32, i32); 6] = [(-1, 0), (0, -1), (0, 1), (1, 0), (1, 2), (2, 1)];

fn link_index(from: i32, to: i32) -> Result<usize> {
    LINKS
        .iter()
        .position(|&l| l == (from, to))
        .ok_or_else(|| Error::contract(format!("no flow from frame {from} to frame {to} in a quad")))
}

/// How the flows handed to the interpolator relate to the true motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observation {
    /// Flows equal the analytic motion everywhere.
    Exact,
    /// Occluded pixels carry zero flow.
    OccludedZero,
    /// Occluded pixels report the motion of the surface hiding their
    /// landing point, the way a matching-based estimator latches onto
    /// whatever is visible in the target frame. Pixels that leave the
    /// canvas keep their true flow.
    OccluderMotion,
    /// Occluded pixels carry their true flow plus seeded Gaussian noise of
    /// this standard deviation (px per axis): the images do not constrain
    /// an estimator there.
    OccludedNoise(f64),
}

/// Where a quad came from.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadSource {
    Synthetic(SceneSpec),
    Files(Vec<PathBuf>),
}

/// Four consecutive frames at `t = -1, 0, 1, 2` with the flows between
/// neighbours and a target frame at `t` in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Quad {
    /// `I(-1), I(0), I(1), I(2)`, each `[3, H, W]` in `[0, 1]`.
    pub frames: [Tensor<f32>; 4],
    /// Flows in [`LINKS`] order.
    pub flows: [FlowField<f32>; 6],
    /// Occlusion maps in [`LINKS`] order.
    pub occlusions: [OcclusionMap; 6],
    pub t: f64,
    /// Ground-truth frame at `t`; file quads may omit it.
    pub target: Option<Tensor<f32>>,
    /// Exact coefficients, known for synthetic quads only.
    pub gt_coeffs: Option<MotionCoeffs<f32>>,
    /// Exact `F(t -> 0)` and `F(t -> 1)`, synthetic quads only.
    pub gt_intermediate: Option<(FlowField<f32>, FlowField<f32>)>,
    pub source: QuadSource,
}

impl Quad {
    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    /// Frame at integer time `k` in `-1..=2`.
    pub fn frame(&self, k: i32) -> Result<&Tensor<f32>> {
        usize::try_from(k + 1)
            .ok()
            .and_then(|i| self.frames.get(i))
            .ok_or_else(|| Error::contract(format!("quad has no frame at t = {k}")))
    }

    pub fn flow(&self, from: i32, to: i32) -> Result<&FlowField<f32>> {
        Ok(&self.flows[link_index(from, to)?])
    }

    pub fn occlusion(&self, from: i32, to: i32) -> Result<&OcclusionMap> {
        Ok(&self.occlusions[link_index(from, to)?])
    }

    /// The ground-truth frame, required by training and evaluation.
    pub fn target(&self) -> Result<&Tensor<f32>> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::contract("quad has no ground-truth target frame"))
    }

    /// The scene this quad was rendered from, if synthetic.
    pub fn scene(&self) -> Option<&SceneSpec> {
        match &self.source {
            QuadSource::Synthetic(s) => Some(s),
            QuadSource::Files(_) => None,
        }
    }

    /// Checks raster shapes and the target time.
    pub fn validate(&self) -> Result<()> {
        check_t(self.t)?;
        let (w, h) = (self.width(), self.height());
        let img = [3, h, w];
        for f in self.frames.iter().chain(self.target.as_ref()) {
            if f.shape() != img {
                return Err(Error::dim("quad", format!("frame {:?} vs {img:?}", f.shape())));
            }
        }
        let flows_ok = self.flows.iter().all(|f| f.width() == w && f.height() == h);
        let occ_ok = self.occlusions.iter().all(|o| o.width() == w && o.height() == h);
        if !flows_ok || !occ_ok {
            return Err(Error::dim("quad", "flow or occlusion size differs from frames"));
        }
        Ok(())
    }
}

/// Renders a quad from a scene.
pub fn make_quad(spec: &SceneSpec, t: f64, observation: Observation) -> Result<Quad> {
    check_t(t)?;
    let frames = [-1.0, 0.0, 1.0, 2.0].map(|k| render_scene(spec, k));
    let pairs = LINKS.map(|(a, b)| {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.background_seed() ^ splitmix((a + 2) as u64 * 8 + (b + 2) as u64)));
        let (mut f, o, occluders) = analytic_flow_detailed::<f32>(spec, a as f64, b as f64);
        for ((d, &occ), by) in f.data_mut().chunks_exact_mut(2).zip(o.data()).zip(&occluders) {
            if occ == 0.0 {
                continue;
            }
            match (observation, by) {
                (Observation::OccludedZero, _) => d.fill(0.0),
                (Observation::OccluderMotion, Some(i)) => {
                    d.copy_from_slice(&spec.objects()[*i].displacement_between::<f32>(a as f64, b as f64));
                }
                (Observation::OccludedNoise(sigma), _) => {
                    for v in d.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += (z * sigma) as f32;
                    }
                }
                _ => {}
            }
        }
        (f, o)
    });
    let [p0, p1, p2, p3, p4, p5] = pairs;
    Ok(Quad {
        frames,
        flows: [p0.0, p1.0, p2.0, p3.0, p4.0, p5.0],
        occlusions: [p0.1, p1.1, p2.1, p3.1, p4.1, p5.1],
        t,
        target: Some(render_scene(spec, t)),
        gt_coeffs: Some(gt_coeffs(spec)),
        gt_intermediate: Some(intermediate_flows(spec, t)),
        source: QuadSource::Synthetic(spec.clone()),
    })
}

/// Spatial relation required between objects of one scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overlap {
    /// Objects never come within 2 px of each other over the whole span.
    Avoid,
    Allow,
    /// Every later object overlaps an earlier one at the target time.
    Require,
}

/// Parameters for random scene generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    pub name: String,
    /// Per-axis velocity bound, px per frame interval.
    pub max_speed: f64,
    /// Per-axis acceleration bound, px per interval squared.
    pub max_accel: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object extent range as a fraction of the canvas side.
    pub min_size: f64,
    pub max_size: f64,
    pub overlap: Overlap,
    pub observation: Observation,
    pub t: f64,
}

impl Difficulty {
    /// Constant-velocity motion.
    pub fn linear() -> Self {
        Difficulty {
            name: "linear".into(),
            max_speed: 2.0,
            max_accel: 0.0,
            min_objects: 1,
            max_objects: 2,
            min_size: 0.18,
            max_size: 0.3,
            overlap: Overlap::Allow,
            observation: Observation::OccludedNoise(1.0),
            t: 0.5,
        }
    }

    /// Small accelerated motion of separated objects.
    pub fn moderate() -> Self {
        Difficulty {
            name: "moderate".into(),
            max_speed: 1.5,
            max_accel: 0.5,
            min_objects: 1,
            max_objects: 2,
            min_size: 0.16,
            max_size: 0.28,
            overlap: Overlap::Avoid,
            ..Self::linear()
        }
    }

    /// Objects that cross each other, so flows around them are occluded.
    pub fn occlusion() -> Self {
        Difficulty {
            name: "occlusion".into(),
            max_speed: 2.0,
            max_accel: 0.5,
            min_objects: 2,
            max_objects: 3,
            min_size: 0.18,
            max_size: 0.3,
            overlap: Overlap::Require,
            ..Self::linear()
        }
    }

    /// Strong acceleration.
    pub fn quadratic() -> Self {
        Difficulty {
            name: "quadratic".into(),
            max_speed: 2.0,
            max_accel: 1.0,
            min_objects: 1,
            max_objects: 2,
            overlap: Overlap::Allow,
            ..Self::linear()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear()),
            "moderate" => Ok(Self::moderate()),
            "occlusion" => Ok(Self::occlusion()),
            "quadratic" => Ok(Self::quadratic()),
            _ => Err(Error::Config(format!(
                "unknown difficulty {name:?} (expected linear, moderate, occlusion or quadratic)"
            ))),
        }
    }

    pub fn with_observation(mut self, observation: Observation) -> Self {
        self.observation = observation;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = self.max_speed >= 0.0
            && self.max_accel >= 0.0
            && self.min_objects <= self.max_objects
            && self.min_size > 0.0
            && self.min_size <= self.max_size
            && self.max_size < 0.5;
        if !ok {
            return Err(Error::Config(format!("inconsistent difficulty {:?}", self.name)));
        }
        check_t(self.t)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..bound)
    } else {
        0.0
    }
}

/// Axis-aligned box `[min, max]` per axis.
type Bounds = [[f64; 2]; 2];

fn bounds_at(o: &SceneObject, t: f64) -> Bounds {
    let c = o.position(t);
    let he = match o.shape {
        Shape::Rect { width, height } => [width / 2.0, height / 2.0],
        Shape::Disk { radius } => [radius, radius],
    };
    [0, 1].map(|k| [c[k] - he[k], c[k] + he[k]])
}

fn intersects(a: &Bounds, b: &Bounds, margin: f64) -> bool {
    (0..2).all(|k| a[k][0] - margin < b[k][1] && b[k][0] - margin < a[k][1])
}

fn sample_object(rng: &mut ChaCha8Rng, d: &Difficulty, size: usize, z: i32) -> Option<SceneObject> {
    let side = size as f64;
    let extent = rng.random_range(d.min_size..=d.max_size) * side;
    let shape = if rng.random_bool(0.5) {
        let aspect = rng.random_range(0.7..1.0);
        if rng.random_bool(0.5) {
            Shape::Rect { width: extent, height: extent * aspect }
        } else {
            Shape::Rect { width: extent * aspect, height: extent }
        }
    } else {
        Shape::Disk { radius: extent / 2.0 }
    };
    let v = [0; 2].map(|_| symmetric(rng, d.max_speed));
    let a = [0; 2].map(|_| symmetric(rng, d.max_accel));
    let probe = SceneObject {
        shape,
        texture_seed: rng.random(),
        z,
        x0: [0.0, 0.0],
        v,
        a,
    };
    // Choose x0 so the swept box stays one pixel inside the canvas, with a
    // small extra margin against rounding.
    let mut x0 = [0.0; 2];
    for k in 0..2 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in [-1.0, 2.0, -v[k] / a[k]] {
            if (-1.0..=2.0).contains(&t) {
                let b = bounds_at(&probe, t)[k];
                lo = lo.min(b[0]);
                hi = hi.max(b[1]);
            }
        }
        let (min, max) = (1.25 - lo, side - 1.25 - hi);
        if !(min < max) {
            return None;
        }
        x0[k] = rng.random_range(min..max);
    }
    Some(SceneObject { x0, ..probe })
}

fn sample_scene(rng: &mut ChaCha8Rng, d: &Difficulty, size: usize) -> Result<SceneSpec> {
    let n_obj = rng.random_range(d.min_objects..=d.max_objects);
    let background_seed = rng.random();
    'scene: for _ in 0..200 {
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n_obj);
        while objects.len() < n_obj {
            let mut placed = false;
            for _ in 0..100 {
                let Some(o) = sample_object(rng, d, size, objects.len() as i32) else {
                    continue;
                };
                let ok = match d.overlap {
                    Overlap::Allow => true,
                    Overlap::Avoid => objects.iter().all(|p| {
                        (0..=12).all(|i| {
                            let t = -1.0 + 0.25 * i as f64;
                            !intersects(&bounds_at(p, t), &bounds_at(&o, t), 2.0)
                        })
                    }),
                    Overlap::Require => {
                        objects.is_empty()
                            || objects
                                .iter()
                                .any(|p| intersects(&bounds_at(p, d.t), &bounds_at(&o, d.t), -2.0))
                    }
                };
                if ok {
                    objects.push(o);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'scene;
            }
        }
        if let Ok(spec) = SceneSpec::new(size, size, background_seed, objects) {
            return Ok(spec);
        }
    }
    Err(Error::contract(format!(
        "could not place {n_obj} objects for difficulty {:?} on a {size}x{size} canvas",
        d.name
    )))
}

/// Random scene number `index` of the dataset `(seed, size, difficulty)`.
/// Each scene depends only on these arguments.
pub fn make_scene(seed: u64, index: usize, size: usize, difficulty: &Difficulty) -> Result<SceneSpec> {
    difficulty.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)));
    sample_scene(&mut rng, difficulty, size)
}

/// `n` synthetic quads on a `size x size` canvas. Deterministic in all
/// arguments.
pub fn make_dataset(n: usize, seed: u64, size: usize, difficulty: &Difficulty) -> Result<Vec<Quad>> {
    (0..n)
        .map(|i| {
            let spec = make_scene(seed, i, size, difficulty)?;
            make_quad(&spec, difficulty.t, difficulty.observation)
        })
        .collect()
}
