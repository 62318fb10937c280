//! im2col + GEMM cross-correlation over 5-D `[B, C, D, H, W]` inputs.
//! Two-dimensional convolution is the `D = 1`, `kd = 1` special case.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-axis stride and zero padding, ordered `[depth, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn uniform(stride: usize, padding: usize) -> Self {
        ConvGeom {
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    /// Stride and padding apply to height/width only; depth is untouched.
    pub fn spatial(stride: usize, padding: usize) -> Self {
        ConvGeom {
            stride: [1, stride, stride],
            padding: [0, padding, padding],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    batch: usize,
    cin: usize,
    input: [usize; 3],
    cout: usize,
    kernel: [usize; 3],
    output: [usize; 3],
}

impl Dims {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self, geom: &ConvGeom) -> bool {
        self.kernel == [1, 1, 1] && geom.stride == [1, 1, 1] && geom.padding == [0, 0, 0]
    }
}

fn dims(
    op: &'static str,
    x: &[usize],
    w: &[usize],
    bias: usize,
    geom: &ConvGeom,
) -> Result<Dims> {
    if x.len() != 5 || w.len() != 5 {
        return Err(Error::dim(
            op,
            format!("expected 5-D input and weight, got {x:?} and {w:?}"),
        ));
    }
    if w[1] != x[1] {
        return Err(Error::dim(
            op,
            format!("weight expects {} input channels, input has {}", w[1], x[1]),
        ));
    }
    if bias != w[0] {
        return Err(Error::dim(
            op,
            format!("bias has {bias} entries for {} output channels", w[0]),
        ));
    }
    let mut output = [0; 3];
    for a in 0..3 {
        let padded = x[2 + a] + 2 * geom.padding[a];
        if geom.stride[a] == 0 || padded < w[2 + a] {
            return Err(Error::dim(
                op,
                format!(
                    "kernel {:?} does not fit padded input {:?}",
                    &w[2..],
                    &x[2..]
                ),
            ));
        }
        output[a] = (padded - w[2 + a]) / geom.stride[a] + 1;
    }
    Ok(Dims {
        batch: x[0],
        cin: x[1],
        input: [x[2], x[3], x[4]],
        cout: w[0],
        kernel: [w[2], w[3], w[4]],
        output,
    })
}

/// Output index range `[lo, hi)` whose input coordinate
/// `o * stride + k - pad` lands inside `[0, size)`.
fn valid_range(size: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if size + pad > k {
        ((size - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Real>(x: &[T], d: &Dims, g: &ConvGeom, cols: &mut [T]) {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let n = d.out_plane();
    let mut row = 0;
    for c in 0..d.cin {
        let xc = &x[c * d.in_plane()..(c + 1) * d.in_plane()];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let (xlo, xhi) = valid_range(iw, ow, kx, g.stride[2], g.padding[2]);
                    for oz in 0..od {
                        let iz = (oz * g.stride[0] + kz) as isize - g.padding[0] as isize;
                        for oy in 0..oh {
                            let iy = (oy * g.stride[1] + ky) as isize - g.padding[1] as isize;
                            let out = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                                out.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                            out[..xlo].fill(T::zero());
                            out[xhi..].fill(T::zero());
                            let s = g.stride[2];
                            for ox in xlo..xhi {
                                out[ox] = src[ox * s + kx - g.padding[2]];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], d: &Dims, g: &ConvGeom, dx: &mut [T]) {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let n = d.out_plane();
    let mut row = 0;
    for c in 0..d.cin {
        let plane = d.in_plane();
        let xc = &mut dx[c * plane..(c + 1) * plane];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * n..(row + 1) * n];
                    let (xlo, xhi) = valid_range(iw, ow, kx, g.stride[2], g.padding[2]);
                    for oz in 0..od {
                        let iz = (oz * g.stride[0] + kz) as isize - g.padding[0] as isize;
                        if iz < 0 || iz >= id as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.stride[1] + ky) as isize - g.padding[1] as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let col = &src[(oz * oh + oy) * ow..][..ow];
                            let dst = &mut xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                            let s = g.stride[2];
                            for ox in xlo..xhi {
                                dst[ox * s + kx - g.padding[2]] += col[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn unfold<'a, T: Real>(xb: &'a [T], d: &Dims, g: &ConvGeom, scratch: &'a mut Vec<T>) -> Cow<'a, [T]> {
    if d.is_pointwise(g) {
        Cow::Borrowed(xb)
    } else {
        scratch.resize(d.patch() * d.out_plane(), T::zero());
        im2col(xb, d, g, scratch);
        Cow::Borrowed(&scratch[..])
    }
}

/// Output spatial shape of a 5-D convolution, validating operand shapes.
pub fn conv3d_output_shape(
    x: &[usize],
    w: &[usize],
    bias_len: usize,
    geom: &ConvGeom,
) -> Result<Vec<usize>> {
    let d = dims("conv3d", x, w, bias_len, geom)?;
    Ok(vec![d.batch, d.cout, d.output[0], d.output[1], d.output[2]])
}

/// Cross-correlation of `x: [B,C,D,H,W]` with `w: [K,C,kd,kh,kw]` plus `bias: [K]`.
pub fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let (shape, out) = forward_raw("conv3d", x, x.shape(), w, w.shape(), bias, geom)?;
    Tensor::new(&shape, out)
}

/// 2-D cross-correlation: `x: [B,C,H,W]`, `w: [K,C,kh,kw]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_2d(x.shape(), w.shape())?;
    let geom = ConvGeom::spatial(stride, padding);
    let (shape, out) = forward_raw(
        "conv2d",
        x,
        &lift_2d(x.shape()),
        w,
        &lift_2d(w.shape()),
        bias,
        &geom,
    )?;
    Tensor::new(&[shape[0], shape[1], shape[3], shape[4]], out)
}

pub(crate) fn check_2d(x: &[usize], w: &[usize]) -> Result<()> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("expected 4-D input and weight, got {x:?} and {w:?}"),
        ));
    }
    Ok(())
}

pub(crate) fn forward_raw<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    x_shape: &[usize],
    w: &Tensor<T>,
    w_shape: &[usize],
    bias: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<(Vec<usize>, Vec<T>)> {
    let d = dims(op, x_shape, w_shape, bias.len(), geom)?;
    let n = d.out_plane();
    let patch = d.patch();
    let mut out = vec![T::zero(); d.batch * d.cout * n];
    let mut scratch = Vec::new();
    for b in 0..d.batch {
        let xb = &x.data()[b * d.cin * d.in_plane()..(b + 1) * d.cin * d.in_plane()];
        let cols = unfold(xb, &d, geom, &mut scratch);
        let ob = &mut out[b * d.cout * n..(b + 1) * d.cout * n];
        for (k, row) in ob.chunks_exact_mut(n).enumerate() {
            row.fill(bias.data()[k]);
        }
        T::gemm(
            d.cout,
            patch,
            n,
            w.data(),
            (patch as isize, 1),
            &cols,
            (n as isize, 1),
            T::one(),
            ob,
            (n as isize, 1),
        );
    }
    Ok((
        vec![d.batch, d.cout, d.output[0], d.output[1], d.output[2]],
        out,
    ))
}

/// Gradients of a convolution: input (when requested), weight, bias.
pub type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Gradients of a convolution. `need_input` skips the input gradient when
/// the caller does not require it (first layers, constant inputs).
pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeom,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (dx, dw, db) = backward_raw(x, x.shape(), w, w.shape(), geom, grad_out, need_input)?;
    Ok((
        dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
        Tensor::new(w.shape(), dw)?,
        Tensor::new(&[w.shape()[0]], db)?,
    ))
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    check_2d(x.shape(), w.shape())?;
    let geom = ConvGeom::spatial(stride, padding);
    let (dx, dw, db) = backward_raw(
        x,
        &lift_2d(x.shape()),
        w,
        &lift_2d(w.shape()),
        &geom,
        grad_out,
        need_input,
    )?;
    Ok((
        dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
        Tensor::new(w.shape(), dw)?,
        Tensor::new(&[w.shape()[0]], db)?,
    ))
}

#[allow(clippy::type_complexity)]
pub(crate) fn backward_raw<T: Real>(
    x: &Tensor<T>,
    x_shape: &[usize],
    w: &Tensor<T>,
    w_shape: &[usize],
    geom: &ConvGeom,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>)> {
    let d = dims("conv3d", x_shape, w_shape, w_shape[0], geom)?;
    let n = d.out_plane();
    let patch = d.patch();
    let in_len = d.cin * d.in_plane();
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); d.cout];
    let mut scratch = Vec::new();
    let mut dcols = Vec::new();
    for b in 0..d.batch {
        let gb = &grad_out.data()[b * d.cout * n..(b + 1) * d.cout * n];
        for (k, row) in gb.chunks_exact(n).enumerate() {
            db[k] += row.iter().copied().sum::<T>();
        }
        let xb = &x.data()[b * in_len..(b + 1) * in_len];
        {
            let cols = unfold(xb, &d, geom, &mut scratch);
            T::gemm(
                d.cout,
                n,
                patch,
                gb,
                (n as isize, 1),
                &cols,
                (1, n as isize),
                T::one(),
                &mut dw,
                (patch as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if d.is_pointwise(geom) {
                T::gemm(
                    patch,
                    d.cout,
                    n,
                    w.data(),
                    (1, patch as isize),
                    gb,
                    (n as isize, 1),
                    T::zero(),
                    dxb,
                    (n as isize, 1),
                );
            } else {
                dcols.resize(patch * n, T::zero());
                T::gemm(
                    patch,
                    d.cout,
                    n,
                    w.data(),
                    (1, patch as isize),
                    gb,
                    (n as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (n as isize, 1),
                );
                col2im(&dcols, &d, geom, dxb);
            }
        }
    }
    Ok((dx, dw, db))
}

/// Lifts `[B,C,H,W]` to `[B,C,1,H,W]` (and kernels likewise).
pub(crate) fn lift_2d(shape: &[usize]) -> Vec<usize> {
    vec![shape[0], shape[1], 1, shape[2], shape[3]]
}
