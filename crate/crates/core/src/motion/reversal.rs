//! Splatting kernel for flow reversal and its vector-Jacobian product.
//!
//! Arrays are channel-first planes: `flow[0..n]` holds dx, `flow[n..2n]`
//! holds dy, with `n = h * w`.

use crate::tensor::Real;

/// Result of splatting one flow plane pair.
pub struct Splat<T> {
    /// Reversed flow, channel-first.
    pub out: Vec<T>,
    /// Total weight received per pixel; zero marks a hole.
    pub den: Vec<T>,
}

/// Calls `f(target_index, dx_weight_term, dy_weight_term, weight)` for each
/// in-bounds corner of the unit cell containing `(qx, qy)`. The two middle
/// arguments are `cx - qx` and `cy - qy`.
#[inline]
fn for_corners<T: Real>(qx: T, qy: T, w: usize, h: usize, mut f: impl FnMut(usize, T, T, T)) {
    if !qx.is_finite() || !qy.is_finite() {
        return;
    }
    let x0 = qx.floor();
    let y0 = qy.floor();
    for dy in 0..2 {
        let cy = y0 + T::of(dy as f64);
        if cy < T::zero() || cy >= T::of(h as f64) {
            continue;
        }
        for dx in 0..2 {
            let cx = x0 + T::of(dx as f64);
            if cx < T::zero() || cx >= T::of(w as f64) {
                continue;
            }
            let (ex, ey) = (cx - qx, cy - qy);
            let wt = (-(ex * ex + ey * ey)).exp();
            let idx = cy.f64() as usize * w + cx.f64() as usize;
            f(idx, ex, ey, wt);
        }
    }
}

/// Reverses `flow` (`[2, h, w]`, channel-first).
pub fn splat_reverse<T: Real>(flow: &[T], h: usize, w: usize) -> Splat<T> {
    let n = h * w;
    assert_eq!(flow.len(), 2 * n, "splat_reverse: flow length");
    let mut num = vec![T::zero(); 2 * n];
    let mut den = vec![T::zero(); n];
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let (fx, fy) = (flow[p], flow[n + p]);
            let qx = T::of(px as f64) + fx;
            let qy = T::of(py as f64) + fy;
            for_corners(qx, qy, w, h, |c, _, _, wt| {
                num[c] -= wt * fx;
                num[n + c] -= wt * fy;
                den[c] += wt;
            });
        }
    }
    for c in 0..n {
        if den[c] > T::zero() {
            num[c] /= den[c];
            num[n + c] /= den[c];
        } else {
            num[c] = T::zero();
            num[n + c] = T::zero();
        }
    }
    Splat { out: num, den }
}

/// Gradient of the reversed flow with respect to the input flow, with
/// corner membership held fixed.
pub fn splat_reverse_backward<T: Real>(
    flow: &[T],
    out: &[T],
    den: &[T],
    grad_out: &[T],
    h: usize,
    w: usize,
) -> Vec<T> {
    let n = h * w;
    let two = T::of(2.0);
    let mut grad = vec![T::zero(); 2 * n];
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let (fx, fy) = (flow[p], flow[n + p]);
            let qx = T::of(px as f64) + fx;
            let qy = T::of(py as f64) + fy;
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for_corners(qx, qy, w, h, |c, ex, ey, wt| {
                let d = den[c];
                if d <= T::zero() {
                    return;
                }
                let (g0, g1) = (grad_out[c], grad_out[n + c]);
                // Direct dependence of the numerator on -F(p).
                gx -= g0 * wt / d;
                gy -= g1 * wt / d;
                // Dependence through the weight: d out / d wt.
                let s = (g0 * (-fx - out[c]) + g1 * (-fy - out[n + c])) / d;
                gx += s * two * wt * ex;
                gy += s * two * wt * ey;
            });
            grad[p] = gx;
            grad[n + p] = gy;
        }
    }
    grad
}
