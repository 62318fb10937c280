//! Differentiable, batched forms of the motion operations.
//!
//! Flows are `[B, 2, H, W]` (channel 0 = dx), images `[B, C, H, W]`,
//! blending masks `[B, 1, H, W]`.

use crate::error::{Error, Result};
use crate::motion::reversal::{splat_reverse, splat_reverse_backward};
use crate::motion::{check_t, HoleMask};
use crate::tensor::{CustomOp, Graph, Real, Tensor, Var};

/// Synthesis denominator guard.
pub const BLEND_EPS: f64 = 1e-12;

fn flow_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() != 4 || s[1] != 2 {
        return Err(Error::dim(op, format!("flow must be [B,2,H,W], got {s:?}")));
    }
    Ok((s[0], s[2], s[3]))
}

/// Absolute pixel coordinates `[B, 2, H, W]`: channel 0 holds x, 1 holds y.
pub fn pixel_grid<T: Real>(b: usize, h: usize, w: usize) -> Tensor<T> {
    let n = h * w;
    Tensor::from_fn(&[b, 2, h, w], |i| {
        let r = i % (2 * n);
        let (ch, p) = (r / n, r % n);
        T::of(if ch == 0 { p % w } else { p / w } as f64)
    })
}

/// `alpha * s + beta * s^2` for elapsed time `s`.
pub fn quadratic_flow<T: Real>(g: &mut Graph<T>, alpha: Var, beta: Var, s: T) -> Result<Var> {
    let a = g.scale(alpha, s);
    let b = g.scale(beta, s * s);
    g.add(a, b)
}

struct ReverseFlowOp<T> {
    den: Vec<T>,
    dims: (usize, usize, usize),
}

impl<T: Real> CustomOp<T> for ReverseFlowOp<T> {
    fn name(&self) -> &'static str {
        "reverse_flow"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (b, h, w) = self.dims;
        let n = h * w;
        let mut grad = Vec::with_capacity(b * 2 * n);
        for bi in 0..b {
            let r = bi * 2 * n..(bi + 1) * 2 * n;
            grad.extend(splat_reverse_backward(
                &inputs[0].data()[r.clone()],
                &output.data()[r.clone()],
                &self.den[bi * n..(bi + 1) * n],
                &grad_out.data()[r],
                h,
                w,
            ));
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape(), grad)?)])
    }
}

/// Splat-based flow reversal for each batch element, plus hole masks.
pub fn reverse_flow<T: Real>(g: &mut Graph<T>, flow: Var) -> Result<(Var, Vec<HoleMask>)> {
    let x = g.value(flow);
    let (b, h, w) = flow_dims("reverse_flow", x.shape())?;
    let n = h * w;
    let mut out = Vec::with_capacity(x.len());
    let mut den = Vec::with_capacity(b * n);
    let mut holes = Vec::with_capacity(b);
    for bi in 0..b {
        let s = splat_reverse(&x.data()[bi * 2 * n..(bi + 1) * 2 * n], h, w);
        holes.push(HoleMask::new(
            w,
            h,
            s.den.iter().map(|&d| d <= T::zero()).collect(),
        )?);
        out.extend(s.out);
        den.extend(s.den);
    }
    let out = Tensor::new(x.shape(), out)?;
    let op = ReverseFlowOp {
        den,
        dims: (b, h, w),
    };
    Ok((g.custom(Box::new(op), &[flow], out), holes))
}

/// `image(x + flow(x))` with bilinear sampling and border clamp.
pub fn backward_warp<T: Real>(g: &mut Graph<T>, image: Var, flow: Var) -> Result<Var> {
    let (b, h, w) = flow_dims("backward_warp", g.value(flow).shape())?;
    let s = g.value(image).shape();
    if s.len() != 4 || s[0] != b || s[2] != h || s[3] != w {
        return Err(Error::dim(
            "backward_warp",
            format!("image {s:?} does not match flow [{b},2,{h},{w}]"),
        ));
    }
    let base = g.constant(pixel_grid(b, h, w));
    let coords = g.add(base, flow)?;
    g.grid_sample(image, coords)
}

/// Resamples `flow` at `x + offsets(x)` and adds `residuals`.
pub fn apply_refinement<T: Real>(g: &mut Graph<T>, flow: Var, offsets: Var, residuals: Var) -> Result<Var> {
    let sampled = backward_warp(g, flow, offsets)?;
    g.add(sampled, residuals)
}

/// `[(1-t) m w0 + t (1-m) w1] / [(1-t) m + t (1-m) + eps]`, with the mask
/// broadcast over channels.
pub fn blend<T: Real>(g: &mut Graph<T>, w0: Var, w1: Var, mask: Var, t: f64) -> Result<Var> {
    check_t(t)?;
    let s = g.value(w0).shape().to_vec();
    let ms = g.value(mask).shape();
    if s.len() != 4 || ms.len() != 4 || ms[1] != 1 || ms[0] != s[0] || ms[2..] != s[2..] {
        return Err(Error::dim(
            "synthesize_frame",
            format!("mask {ms:?} does not match frames {s:?}"),
        ));
    }
    let m = g.repeat(mask, 1, s[1])?;
    let a = g.scale(m, T::of(1.0 - t));
    let inv = g.scale(m, -T::one());
    let inv = g.add_scalar(inv, T::one());
    let b = g.scale(inv, T::of(t));
    let n0 = g.mul(a, w0)?;
    let n1 = g.mul(b, w1)?;
    let num = g.add(n0, n1)?;
    let den = g.add(a, b)?;
    let den = g.add_scalar(den, T::of(BLEND_EPS));
    g.div(num, den)
}
