use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motion::{FlowField, MotionCoeffs, OcclusionMap};
use crate::tensor::{Real, Tensor};

/// Number of subsamples per pixel axis when rasterising.
pub const SUPERSAMPLE: usize = 4;

/// Outline of a scene object, centred on its position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Rect { width: f64, height: f64 },
    Disk { radius: f64 },
}

impl Shape {
    fn half_extent(&self) -> [f64; 2] {
        match *self {
            Shape::Rect { width, height } => [width / 2.0, height / 2.0],
            Shape::Disk { radius } => [radius, radius],
        }
    }

    /// Whether the offset `d` from the centre lies inside.
    pub fn contains(&self, d: [f64; 2]) -> bool {
        match *self {
            Shape::Rect { width, height } => d[0].abs() < width / 2.0 && d[1].abs() < height / 2.0,
            Shape::Disk { radius } => d[0] * d[0] + d[1] * d[1] < radius * radius,
        }
    }

    /// Unsigned distance from offset `d` to the outline.
    pub fn edge_distance(&self, d: [f64; 2]) -> f64 {
        match *self {
            Shape::Rect { width, height } => {
                let ox = d[0].abs() - width / 2.0;
                let oy = d[1].abs() - height / 2.0;
                if ox < 0.0 && oy < 0.0 {
                    -ox.max(oy)
                } else {
                    (ox.max(0.0).powi(2) + oy.max(0.0).powi(2)).sqrt()
                }
            }
            Shape::Disk { radius } => ((d[0] * d[0] + d[1] * d[1]).sqrt() - radius).abs(),
        }
    }
}

/// One moving object. Position follows `x0 + v t + (a / 2) t^2`, with time
/// measured in frame intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub texture_seed: u64,
    /// Painting order; larger values are drawn on top. Must be unique.
    pub z: i32,
    pub x0: [f64; 2],
    pub v: [f64; 2],
    pub a: [f64; 2],
}

impl SceneObject {
    pub fn position(&self, t: f64) -> [f64; 2] {
        [0, 1].map(|k| self.x0[k] + self.v[k] * t + 0.5 * self.a[k] * t * t)
    }

    /// Coefficients `(alpha, beta)` of the displacement from time `from`:
    /// `d(s) = alpha s + beta s^2` for elapsed time `s`.
    fn terms<T: Real>(&self, from: T) -> ([T; 2], [T; 2]) {
        let alpha = [0, 1].map(|k| T::of(self.v[k]) + T::of(self.a[k]) * from);
        let beta = [0, 1].map(|k| T::of(self.a[k]) * T::of(0.5));
        (alpha, beta)
    }

    fn displacement<T: Real>(&self, from: T, to: T) -> [T; 2] {
        let (alpha, beta) = self.terms(from);
        let s = to - from;
        [0, 1].map(|k| alpha[k] * s + beta[k] * s * s)
    }

    /// Range of each position coordinate over `t` in `[t0, t1]`.
    fn sweep(&self, t0: f64, t1: f64) -> [[f64; 2]; 2] {
        [0, 1].map(|k| {
            let mut ts = vec![t0, t1];
            if self.a[k] != 0.0 {
                let tv = -self.v[k] / self.a[k];
                if tv > t0 && tv < t1 {
                    ts.push(tv);
                }
            }
            let xs: Vec<f64> = ts.iter().map(|&t| self.position(t)[k]).collect();
            [
                xs.iter().copied().fold(f64::INFINITY, f64::min),
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ]
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    k: [f64; 2],
    phase: f64,
    amp: [f64; 3],
}

/// Smooth procedural colour field: a base colour plus a few long-period
/// sinusoids, so bilinear resampling stays accurate.
#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    fn seeded(seed: u64, waves: usize, amp: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [0; 3].map(|_| rng.random_range(0.25..0.75));
        let waves = (0..waves)
            .map(|_| {
                let period: f64 = rng.random_range(16.0..40.0);
                let theta: f64 = rng.random_range(0.0..TAU);
                Wave {
                    k: [theta.cos() * TAU / period, theta.sin() * TAU / period],
                    phase: rng.random_range(0.0..TAU),
                    amp: [0; 3].map(|_| rng.random_range(-amp..amp)),
                }
            })
            .collect();
        Texture { base, waves }
    }

    fn color(&self, u: [f64; 2]) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (w.k[0] * u[0] + w.k[1] * u[1] + w.phase).sin();
            for (ch, a) in c.iter_mut().zip(w.amp) {
                *ch += a * s;
            }
        }
        c
    }
}

/// Static textured background with moving textured objects on top.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    width: usize,
    height: usize,
    background_seed: u64,
    objects: Vec<SceneObject>,
}

/// Time interval over which objects must stay inside the canvas.
pub const SPAN: (f64, f64) = (-1.0, 2.0);

impl SceneSpec {
    /// Validates that z values are unique and that every object stays at
    /// least one pixel inside the canvas for `t` in [`SPAN`].
    pub fn new(width: usize, height: usize, background_seed: u64, objects: Vec<SceneObject>) -> Result<Self> {
        if width < 4 || height < 4 {
            return Err(Error::contract(format!("canvas {width}x{height} is too small")));
        }
        for (i, o) in objects.iter().enumerate() {
            if objects[..i].iter().any(|p| p.z == o.z) {
                return Err(Error::contract(format!("duplicate z order {}", o.z)));
            }
            let finite = o.x0.iter().chain(&o.v).chain(&o.a).all(|v| v.is_finite());
            let he = o.shape.half_extent();
            if !finite || he.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::contract(format!("object {i} has invalid geometry")));
            }
            let sweep = o.sweep(SPAN.0, SPAN.1);
            let dims = [width as f64, height as f64];
            for k in 0..2 {
                if sweep[k][0] - he[k] < 1.0 || sweep[k][1] + he[k] > dims[k] - 1.0 {
                    return Err(Error::contract(format!(
                        "object {i} leaves the canvas along axis {k} for t in [{}, {}]",
                        SPAN.0, SPAN.1
                    )));
                }
            }
        }
        Ok(SceneSpec {
            width,
            height,
            background_seed,
            objects,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn background_seed(&self) -> u64 {
        self.background_seed
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    /// Whether no object moves.
    pub fn is_static(&self) -> bool {
        self.objects
            .iter()
            .all(|o| o.v == [0.0, 0.0] && o.a == [0.0, 0.0])
    }

    /// Index of the topmost object covering point `p` at time `t`.
    pub fn owner(&self, p: [f64; 2], t: f64) -> Option<usize> {
        self.owner_above(p, t, i64::MIN)
    }

    fn owner_above(&self, p: [f64; 2], t: f64, z_min: i64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.objects.iter().enumerate() {
            if (o.z as i64) <= z_min {
                continue;
            }
            let c = o.position(t);
            if o.shape.contains([p[0] - c[0], p[1] - c[1]])
                && best.is_none_or(|b| self.objects[b].z < o.z)
            {
                best = Some(i);
            }
        }
        best
    }

    /// Distance from `p` to the nearest object outline at time `t`.
    pub fn edge_distance(&self, p: [f64; 2], t: f64) -> f64 {
        self.objects
            .iter()
            .map(|o| {
                let c = o.position(t);
                o.shape.edge_distance([p[0] - c[0], p[1] - c[1]])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

struct Painter<'a> {
    spec: &'a SceneSpec,
    background: Texture,
    textures: Vec<Texture>,
}

impl<'a> Painter<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        Painter {
            spec,
            background: Texture::seeded(spec.background_seed, 2, 0.08),
            textures: spec
                .objects
                .iter()
                .map(|o| Texture::seeded(o.texture_seed, 1, 0.1))
                .collect(),
        }
    }

    fn color(&self, p: [f64; 2], t: f64) -> [f64; 3] {
        match self.spec.owner(p, t) {
            None => self.background.color(p),
            Some(i) => {
                let c = self.spec.objects[i].position(t);
                self.textures[i].color([p[0] - c[0], p[1] - c[1]])
            }
        }
    }
}

fn subsample_offsets() -> impl Iterator<Item = [f64; 2]> {
    let step = 1.0 / SUPERSAMPLE as f64;
    (0..SUPERSAMPLE * SUPERSAMPLE).map(move |i| {
        let (sy, sx) = (i / SUPERSAMPLE, i % SUPERSAMPLE);
        [
            (sx as f64 + 0.5) * step - 0.5,
            (sy as f64 + 0.5) * step - 0.5,
        ]
    })
}

/// Rasterises the scene at time `t` into a `[3, H, W]` image in `[0, 1]`.
/// Pixel `(x, y)` is centred on integer coordinates and averages a 4x4 grid
/// of subsamples.
pub fn render_scene(spec: &SceneSpec, t: f64) -> Tensor<f32> {
    let painter = Painter::new(spec);
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut out = vec![0f32; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for d in subsample_offsets() {
                let c = painter.color([x as f64 + d[0], y as f64 + d[1]], t);
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
            for (k, a) in acc.iter().enumerate() {
                out[k * n + y * w + x] = (a * norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, h, w], out).expect("render shape")
}

/// Fraction of each pixel covered by object `index` at time `t`, ignoring
/// other objects.
pub fn render_coverage(spec: &SceneSpec, index: usize, t: f64) -> Vec<f64> {
    let o = &spec.objects[index];
    let c = o.position(t);
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let hits = subsample_offsets()
                .filter(|d| o.shape.contains([x as f64 + d[0] - c[0], y as f64 + d[1] - c[1]]))
                .count();
            out.push(hits as f64 * norm);
        }
    }
    out
}

/// Coverage-weighted centroid of a `width`-wide mask.
pub fn centroid(coverage: &[f64], width: usize) -> [f64; 2] {
    let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
    for (i, &c) in coverage.iter().enumerate() {
        sx += c * (i % width) as f64;
        sy += c * (i / width) as f64;
        s += c;
    }
    [sx / s, sy / s]
}

/// Exact displacement from `from_t` to `to_t` of whatever owns each pixel
/// centre at `from_t` (background is static), with occlusion set where the
/// landing point is covered by a higher object at `to_t` or leaves the
/// canvas.
pub fn analytic_flow<T: Real>(spec: &SceneSpec, from_t: f64, to_t: f64) -> (FlowField<T>, OcclusionMap) {
    let (flow, occ, _) = analytic_flow_detailed(spec, from_t, to_t);
    (flow, occ)
}

/// [`analytic_flow`] plus, per pixel, the object hiding its landing point.
pub(crate) fn analytic_flow_detailed<T: Real>(
    spec: &SceneSpec,
    from_t: f64,
    to_t: f64,
) -> (FlowField<T>, OcclusionMap, Vec<Option<usize>>) {
    let (w, h) = (spec.width, spec.height);
    let mut occ = vec![0f32; w * h];
    let mut occluders = vec![None; w * h];
    let flow = FlowField::from_fn(w, h, |x, y| {
        let p = [x as f64, y as f64];
        let owner = spec.owner(p, from_t);
        let d = match owner {
            None => [T::zero(); 2],
            Some(i) => spec.objects[i].displacement(T::of(from_t), T::of(to_t)),
        };
        let q = [p[0] + d[0].f64(), p[1] + d[1].f64()];
        let z = owner.map_or(i64::MIN, |i| spec.objects[i].z as i64);
        let outside = q[0] < -0.5 || q[1] < -0.5 || q[0] >= w as f64 - 0.5 || q[1] >= h as f64 - 0.5;
        let above = spec.owner_above(q, to_t, z);
        if outside || above.is_some() {
            occ[y * w + x] = 1.0;
        }
        occluders[y * w + x] = above;
        d
    });
    let occ = OcclusionMap::from_vec(w, h, occ).expect("occlusion shape");
    (flow, occ, occluders)
}

impl SceneObject {
    /// Displacement this object undergoes between two times.
    pub fn displacement_between<T: Real>(&self, from_t: f64, to_t: f64) -> [T; 2] {
        self.displacement(T::of(from_t), T::of(to_t))
    }
}

/// Exact quadratic coefficients per pixel: frame-0 maps from the owner at
/// `t = 0`, frame-1 maps from the owner at `t = 1`.
pub fn gt_coeffs<T: Real>(spec: &SceneSpec) -> MotionCoeffs<T> {
    let (w, h) = (spec.width, spec.height);
    let maps = |anchor: f64| {
        let mut alpha = FlowField::zeros(w, h);
        let mut beta = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                if let Some(i) = spec.owner([x as f64, y as f64], anchor) {
                    let (a, b) = spec.objects[i].terms(T::of(anchor));
                    // From frame 1 time runs backwards, so the linear term flips.
                    let a = if anchor == 0.0 { a } else { a.map(|v| -v) };
                    alpha.set(x, y, a);
                    beta.set(x, y, b);
                }
            }
        }
        (alpha, beta)
    };
    let (alpha0, beta0) = maps(0.0);
    let (alpha1, beta1) = maps(1.0);
    MotionCoeffs::new(alpha0, beta0, alpha1, beta1).expect("coefficient shapes")
}

/// Ground-truth backward flows from time `t` to each key frame, with
/// ownership decided at `t`.
pub fn intermediate_flows<T: Real>(spec: &SceneSpec, t: f64) -> (FlowField<T>, FlowField<T>) {
    (analytic_flow(spec, t, 0.0).0, analytic_flow(spec, t, 1.0).0)
}
