//! Kernels acting on the two trailing (height, width) axes of a tensor:
//! 2x2 max pooling, 2x bilinear upsampling and bilinear grid sampling.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn planes(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::dim(op, format!("need at least 3 axes, got {shape:?}")));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

/// 2x2 stride-2 max pooling over H and W. Returns the output and, per
/// output element, the flat input index of the winning element (first
/// occurrence in row-major window order on ties).
pub fn maxpool2x2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (p, h, w) = planes("maxpool_spatial", x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "maxpool_spatial",
            format!("H and W must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(p * oh * ow);
    let mut arg = Vec::with_capacity(p * oh * ow);
    let src = x.data();
    for plane in 0..p {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                arg.push(best);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = oh;
    shape[n - 1] = ow;
    Ok((Tensor::new(&shape, out)?, arg))
}

pub fn maxpool2x2_backward<T: Real>(
    in_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut g = Tensor::zeros(in_shape);
    let d = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        d[i] += v;
    }
    g
}

/// Source taps for one output coordinate of a half-pixel-centred resize.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: T::of(src - lo as f64),
            }
        })
        .collect()
}

/// Bilinear 2x upsampling of H and W with half-pixel centres
/// (`align_corners = false`); source coordinates below 0 clamp to 0.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, h, w) = planes("resize_bilinear", x.shape())?;
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let src = x.data();
    let mut out = Vec::with_capacity(p * oh * ow);
    for plane in 0..p {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for y in &ty {
            let r0 = &s[y.lo * w..(y.lo + 1) * w];
            let r1 = &s[y.hi * w..(y.hi + 1) * w];
            for xt in &tx {
                let top = r0[xt.lo] + (r0[xt.hi] - r0[xt.lo]) * xt.frac;
                let bot = r1[xt.lo] + (r1[xt.hi] - r1[xt.lo]) * xt.frac;
                out.push(top + (bot - top) * y.frac);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = oh;
    shape[n - 1] = ow;
    Tensor::new(&shape, out)
}

pub fn upsample2x_backward<T: Real>(in_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, h, w) = planes("resize_bilinear", in_shape)?;
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut g = Tensor::zeros(in_shape);
    let gd = g.data_mut();
    let go = grad_out.data();
    let one = T::one();
    for plane in 0..p {
        let dst = &mut gd[plane * h * w..(plane + 1) * h * w];
        let src = &go[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xt) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                let wy = [(y.lo, one - y.frac), (y.hi, y.frac)];
                let wx = [(xt.lo, one - xt.frac), (xt.hi, xt.frac)];
                for &(iy, fy) in &wy {
                    for &(ix, fx) in &wx {
                        dst[iy * w + ix] += v * fy * fx;
                    }
                }
            }
        }
    }
    Ok(g)
}

fn sample_dims(img: &[usize], coords: &[usize]) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if img.len() != 4 || coords.len() != 4 || coords[1] != 2 || coords[0] != img[0] {
        return Err(Error::dim(
            "grid_sample_bilinear",
            format!("image must be [B,C,H,W] and coords [B,2,H',W'], got {img:?} and {coords:?}"),
        ));
    }
    Ok((img[0], img[1], img[2], img[3], coords[2], coords[3]))
}

/// Clamped bilinear footprint of one absolute sample position.
#[derive(Clone, Copy)]
struct Footprint<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the coordinate moved the sample (false once clamped).
    live_x: bool,
    live_y: bool,
}

#[inline]
fn footprint<T: Real>(x: T, y: T, w: usize, h: usize) -> Footprint<T> {
    let axis = |v: T, n: usize| -> (usize, usize, T, bool) {
        let max = T::of((n - 1) as f64);
        let live = v > T::zero() && v < max;
        let c = v.max(T::zero()).min(max);
        let i0 = (c.floor().f64() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - T::of(i0 as f64), live)
    };
    let (x0, x1, fx, live_x) = axis(x, w);
    let (y0, y1, fy, live_y) = axis(y, h);
    Footprint {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        live_x,
        live_y,
    }
}

/// Bilinear sampling of `img: [B,C,H,W]` at absolute pixel positions
/// `coords: [B,2,H',W']` (channel 0 = x, channel 1 = y). Coordinates outside
/// the image clamp to the border.
pub fn grid_sample<T: Real>(img: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w, oh, ow) = sample_dims(img.shape(), coords.shape())?;
    let n = oh * ow;
    let mut out = vec![T::zero(); b * c * n];
    let one = T::one();
    for bi in 0..b {
        let cx = &coords.data()[bi * 2 * n..bi * 2 * n + n];
        let cy = &coords.data()[bi * 2 * n + n..(bi + 1) * 2 * n];
        for i in 0..n {
            let f = footprint(cx[i], cy[i], w, h);
            let w00 = (one - f.fx) * (one - f.fy);
            let w01 = f.fx * (one - f.fy);
            let w10 = (one - f.fx) * f.fy;
            let w11 = f.fx * f.fy;
            for ci in 0..c {
                let plane = &img.data()[(bi * c + ci) * h * w..][..h * w];
                out[(bi * c + ci) * n + i] = w00 * plane[f.y0 * w + f.x0]
                    + w01 * plane[f.y0 * w + f.x1]
                    + w10 * plane[f.y1 * w + f.x0]
                    + w11 * plane[f.y1 * w + f.x1];
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

/// Gradients of [`grid_sample`] with respect to the image and the
/// coordinates. Coordinate gradients vanish wherever clamping is active.
pub fn grid_sample_backward<T: Real>(
    img: &Tensor<T>,
    coords: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, h, w, oh, ow) = sample_dims(img.shape(), coords.shape())?;
    let n = oh * ow;
    let mut dimg = vec![T::zero(); img.len()];
    let mut dcoords = vec![T::zero(); coords.len()];
    let one = T::one();
    for bi in 0..b {
        let off = bi * 2 * n;
        for i in 0..n {
            let f = footprint(coords.data()[off + i], coords.data()[off + n + i], w, h);
            let w00 = (one - f.fx) * (one - f.fy);
            let w01 = f.fx * (one - f.fy);
            let w10 = (one - f.fx) * f.fy;
            let w11 = f.fx * f.fy;
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let g = grad_out.data()[(bi * c + ci) * n + i];
                if g == T::zero() {
                    continue;
                }
                let plane = &img.data()[base..base + h * w];
                let (p00, p01) = (plane[f.y0 * w + f.x0], plane[f.y0 * w + f.x1]);
                let (p10, p11) = (plane[f.y1 * w + f.x0], plane[f.y1 * w + f.x1]);
                let d = &mut dimg[base..base + h * w];
                d[f.y0 * w + f.x0] += g * w00;
                d[f.y0 * w + f.x1] += g * w01;
                d[f.y1 * w + f.x0] += g * w10;
                d[f.y1 * w + f.x1] += g * w11;
                if f.live_x {
                    gx += g * ((one - f.fy) * (p01 - p00) + f.fy * (p11 - p10));
                }
                if f.live_y {
                    gy += g * ((one - f.fx) * (p10 - p00) + f.fx * (p11 - p01));
                }
            }
            dcoords[off + i] = gx;
            dcoords[off + n + i] = gy;
        }
    }
    Ok((
        Tensor::new(img.shape(), dimg)?,
        Tensor::new(coords.shape(), dcoords)?,
    ))
}
