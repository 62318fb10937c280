//! Motion arithmetic for quadratic frame interpolation.
//!
//! Flows follow one sign convention throughout: a pixel at `x` in the
//! source frame lands at `x + F(x)` in the target frame. [`FlowField`]
//! stores displacements interleaved per pixel (`H x W x 2`, x first), the
//! same order as `.flo` files. Graph-level forms in [`diff`] work on
//! channel-first batches `[B, 2, H, W]` instead.
//!
//! The free functions here evaluate one example at a time and are thin
//! wrappers over [`diff`], so both paths produce identical numbers.

pub mod diff;
mod reversal;

pub use reversal::{splat_reverse, splat_reverse_backward, Splat};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor};

/// Dense per-pixel displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T = f32> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![T::zero(); width * height * 2],
        }
    }

    /// Builds a field from interleaved `(dx, dy)` pairs in row-major order.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 2 {
            return Err(Error::dim(
                "flow",
                format!("{width}x{height} flow needs {} values, got {}", width * height * 2, data.len()),
            ));
        }
        Ok(FlowField { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 2]) -> Self {
        let mut data = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        FlowField { width, height, data }
    }

    /// The same displacement everywhere.
    pub fn constant(width: usize, height: usize, d: [T; 2]) -> Self {
        Self::from_fn(width, height, |_, _| d)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [T; 2] {
        let i = 2 * (y * self.width + x);
        [self.data[i], self.data[i + 1]]
    }

    pub fn set(&mut self, x: usize, y: usize, d: [T; 2]) {
        let i = 2 * (y * self.width + x);
        self.data[i] = d[0];
        self.data[i + 1] = d[1];
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FlowField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(op, other)?;
        Ok(FlowField {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert!(self.same_shape(other), "max_abs_diff: shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Largest displacement length.
    pub fn max_magnitude(&self) -> T {
        self.data
            .chunks_exact(2)
            .fold(T::zero(), |m, d| m.max((d[0] * d[0] + d[1] * d[1]).sqrt()))
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Channel-first `[1, 2, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut out = vec![T::zero(); 2 * n];
        for (i, d) in self.data.chunks_exact(2).enumerate() {
            out[i] = d[0];
            out[n + i] = d[1];
        }
        Tensor::new(&[1, 2, self.height, self.width], out).expect("flow tensor shape")
    }

    /// Reads batch element `b` of a `[B, 2, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<T>, b: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 2 || b >= s[0] {
            return Err(Error::dim(
                "flow",
                format!("expected [B,2,H,W] with B > {b}, got {s:?}"),
            ));
        }
        let (h, w) = (s[2], s[3]);
        let n = h * w;
        let src = &t.data()[b * 2 * n..(b + 1) * 2 * n];
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            data.push(src[i]);
            data.push(src[n + i]);
        }
        Ok(FlowField {
            width: w,
            height: h,
            data,
        })
    }

    fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dim(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(())
    }
}

/// Stacks fields into a `[B, 2, H, W]` tensor.
pub fn stack_flows<T: Real>(flows: &[&FlowField<T>]) -> Result<Tensor<T>> {
    let first = flows
        .first()
        .ok_or_else(|| Error::contract("stack_flows needs at least one flow"))?;
    let mut data = Vec::with_capacity(flows.len() * first.data.len());
    for f in flows {
        first.expect_same_shape("stack_flows", f)?;
        data.extend_from_slice(f.to_tensor().data());
    }
    Tensor::new(&[flows.len(), 2, first.height, first.width], data)
}

/// Per-pixel occlusion values in `[0, 1]`; 1 means the source pixel has no
/// counterpart in the target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl OcclusionMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        OcclusionMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Values are clamped into `[0, 1]`; NaN becomes 1.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim(
                "occlusion",
                format!("{width}x{height} map needs {} values, got {}", width * height, data.len()),
            ));
        }
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 1.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(OcclusionMap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Pixels that received no splat weight during flow reversal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoleMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl HoleMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("holes", format!("{width}x{height} vs {}", data.len())));
        }
        Ok(HoleMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&h| h).count()
    }
}

/// Per-pixel quadratic motion coefficients for both anchor frames.
/// `alpha` is in pixels per unit time, `beta` in pixels per unit time squared.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionCoeffs<T = f32> {
    pub alpha0: FlowField<T>,
    pub beta0: FlowField<T>,
    pub alpha1: FlowField<T>,
    pub beta1: FlowField<T>,
}

impl<T: Real> MotionCoeffs<T> {
    pub fn new(
        alpha0: FlowField<T>,
        beta0: FlowField<T>,
        alpha1: FlowField<T>,
        beta1: FlowField<T>,
    ) -> Result<Self> {
        for f in [&beta0, &alpha1, &beta1] {
            alpha0.expect_same_shape("motion_coeffs", f)?;
        }
        Ok(MotionCoeffs {
            alpha0,
            beta0,
            alpha1,
            beta1,
        })
    }

    /// Coefficients from the four flows around the interval:
    /// `f01`, `f0m1` for frame 0 and `f10`, `f12` for frame 1.
    pub fn analytic(
        f01: &FlowField<T>,
        f0m1: &FlowField<T>,
        f10: &FlowField<T>,
        f12: &FlowField<T>,
    ) -> Result<Self> {
        let (alpha0, beta0) = analytic_coeffs(f01, f0m1)?;
        let (alpha1, beta1) = analytic_coeffs(f10, f12)?;
        Self::new(alpha0, beta0, alpha1, beta1)
    }

    pub fn width(&self) -> usize {
        self.alpha0.width
    }

    pub fn height(&self) -> usize {
        self.alpha0.height
    }

    pub fn all_finite(&self) -> bool {
        [&self.alpha0, &self.beta0, &self.alpha1, &self.beta1]
            .iter()
            .all(|f| f.all_finite())
    }
}

/// Which end of the interval a flow starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    Frame0,
    Frame1,
}

impl Anchor {
    /// Elapsed time from this anchor to `t`: `t` for frame 0, `1 - t` for
    /// frame 1.
    pub fn elapsed(self, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(match self {
            Anchor::Frame0 => t,
            Anchor::Frame1 => 1.0 - t,
        })
    }
}

pub(crate) fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("t must lie in (0, 1), got {t}")))
    }
}

/// Flow from the anchor frame to time `t`: `alpha * s + beta * s^2`, where
/// `s` is the elapsed time from the anchor.
pub fn eval_quadratic_flow<T: Real>(coeffs: &MotionCoeffs<T>, t: f64, anchor: Anchor) -> Result<FlowField<T>> {
    quadratic_at(coeffs, T::of(anchor.elapsed(t)?), anchor)
}

/// [`eval_quadratic_flow`] by elapsed time `s` from the anchor, without
/// restricting `s` to the open interval. Useful for checks at the key frames.
pub fn quadratic_at<T: Real>(coeffs: &MotionCoeffs<T>, s: T, anchor: Anchor) -> Result<FlowField<T>> {
    let (a, b) = match anchor {
        Anchor::Frame0 => (&coeffs.alpha0, &coeffs.beta0),
        Anchor::Frame1 => (&coeffs.alpha1, &coeffs.beta1),
    };
    a.zip_map(b, "eval_quadratic_flow", |a, b| a * s + b * s * s)
}

/// Coefficients of the parabola through `f_fwd` at `+1` and `f_bwd_time`
/// at `-1`, both measured from the same anchor.
pub fn analytic_coeffs<T: Real>(
    f_fwd: &FlowField<T>,
    f_bwd_time: &FlowField<T>,
) -> Result<(FlowField<T>, FlowField<T>)> {
    let half = T::of(0.5);
    let alpha = f_fwd.zip_map(f_bwd_time, "analytic_coeffs", |f, b| (f - b) * half)?;
    let beta = f_fwd.zip_map(f_bwd_time, "analytic_coeffs", |f, b| (f + b) * half)?;
    Ok((alpha, beta))
}

/// Reverses a flow by splatting: each source pixel deposits its negated
/// displacement on the four pixels around its landing point, weighted by
/// `exp(-d^2)`. Pixels that receive nothing get zero flow and are marked.
pub fn reverse_flow<T: Real>(flow: &FlowField<T>) -> (FlowField<T>, HoleMask) {
    let t = flow.to_tensor();
    let s = splat_reverse(t.data(), flow.height, flow.width);
    let out = Tensor::new(t.shape(), s.out).expect("splat output shape");
    let holes = s.den.iter().map(|&d| d <= T::zero()).collect();
    (
        FlowField::from_tensor(&out, 0).expect("splat output shape"),
        HoleMask::new(flow.width, flow.height, holes).expect("hole shape"),
    )
}

fn field_tensor<T: Real>(f: &FlowField<T>, op: &'static str, w: usize, h: usize) -> Result<Tensor<T>> {
    if f.width != w || f.height != h {
        return Err(Error::dim(
            op,
            format!("expected {w}x{h}, got {}x{}", f.width, f.height),
        ));
    }
    Ok(f.to_tensor())
}

/// Resamples `flow` at `x + offsets(x)` (bilinear, border clamp) and adds
/// `residuals`. Offsets and residuals use the same interleaved layout as
/// [`FlowField`].
pub fn apply_refinement<T: Real>(
    flow: &FlowField<T>,
    offsets: &FlowField<T>,
    residuals: &FlowField<T>,
) -> Result<FlowField<T>> {
    let (w, h) = (flow.width, flow.height);
    let mut g = Graph::new();
    let f = g.constant(flow.to_tensor());
    let o = g.constant(field_tensor(offsets, "apply_refinement", w, h)?);
    let r = g.constant(field_tensor(residuals, "apply_refinement", w, h)?);
    let out = diff::apply_refinement(&mut g, f, o, r)?;
    FlowField::from_tensor(g.value(out), 0)
}

fn image_batch<T: Real>(img: &Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(op, format!("image must be [C,H,W], got {s:?}")));
    }
    img.clone().reshape(&[1, s[0], s[1], s[2]])
}

/// `out(x) = image(x + flow(x))`, bilinear with border clamp.
/// `image` is `[C, H, W]`.
pub fn backward_warp<T: Real>(image: &Tensor<T>, flow: &FlowField<T>) -> Result<Tensor<T>> {
    let img = image_batch(image, "backward_warp")?;
    let s = img.shape().to_vec();
    let mut g = Graph::new();
    let i = g.constant(img);
    let f = g.constant(field_tensor(flow, "backward_warp", s[3], s[2])?);
    let out = diff::backward_warp(&mut g, i, f)?;
    g.value(out).clone().reshape(&s[1..])
}

/// Warps both key frames toward `t` and blends them with mask `m`
/// (`[1, H, W]` or `[H, W]`, weight of frame 0). Images are `[C, H, W]`.
pub fn synthesize_frame<T: Real>(
    i0: &Tensor<T>,
    i1: &Tensor<T>,
    fr_t0: &FlowField<T>,
    fr_t1: &FlowField<T>,
    m: &Tensor<T>,
    t: f64,
) -> Result<Tensor<T>> {
    check_t(t)?;
    let w0 = backward_warp(i0, fr_t0)?;
    let w1 = backward_warp(i1, fr_t1)?;
    blend_frames(&w0, &w1, m, t)
}

/// Mask-weighted blend of two already-warped frames.
pub fn blend_frames<T: Real>(w0: &Tensor<T>, w1: &Tensor<T>, m: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    check_t(t)?;
    w0.expect_same_shape("synthesize_frame", w1)?;
    let s = w0.shape().to_vec();
    let a = image_batch(w0, "synthesize_frame")?;
    let b = image_batch(w1, "synthesize_frame")?;
    if m.len() != s[1] * s[2] || !(m.ndim() == 2 || (m.ndim() == 3 && m.shape()[0] == 1)) {
        return Err(Error::dim(
            "synthesize_frame",
            format!("mask must be [1,H,W] or [H,W] for frames {s:?}, got {:?}", m.shape()),
        ));
    }
    if m.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::contract("blending mask must lie in [0, 1]"));
    }
    let mut g = Graph::new();
    let a = g.constant(a);
    let b = g.constant(b);
    let mv = g.constant(m.clone().reshape(&[1, 1, s[1], s[2]])?);
    let out = diff::blend(&mut g, a, b, mv, t)?;
    g.value(out).clone().reshape(&s)
}
