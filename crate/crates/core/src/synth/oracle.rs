use crate::motion::{FlowField, HoleMask};

/// Flow reversal evaluated literally: for every output pixel `x`, sum over
/// all source pixels `p` whose landing point `p + F(p)` falls in
/// `[x - 1, x + 1)` on both axes, weighting `-F(p)` by
/// `exp(-|x - (p + F(p))|^2)`. Quadratic in the pixel count; for tests.
pub fn brute_force_reverse(flow: &FlowField<f64>) -> (FlowField<f64>, HoleMask) {
    let (w, h) = (flow.width(), flow.height());
    let mut holes = Vec::with_capacity(w * h);
    let out = FlowField::from_fn(w, h, |ox, oy| {
        let (x, y) = (ox as f64, oy as f64);
        let (mut nx, mut ny, mut den) = (0.0, 0.0, 0.0);
        for py in 0..h {
            for px in 0..w {
                let [fx, fy] = flow.get(px, py);
                let (qx, qy) = (px as f64 + fx, py as f64 + fy);
                if x - 1.0 <= qx && qx < x + 1.0 && y - 1.0 <= qy && qy < y + 1.0 {
                    let wt = (-((x - qx).powi(2) + (y - qy).powi(2))).exp();
                    nx -= wt * fx;
                    ny -= wt * fy;
                    den += wt;
                }
            }
        }
        holes.push(den == 0.0);
        if den > 0.0 {
            [nx / den, ny / den]
        } else {
            [0.0, 0.0]
        }
    });
    (out, HoleMask::new(w, h, holes).expect("hole shape"))
}
