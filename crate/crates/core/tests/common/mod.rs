//! Helpers shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfikit::motion::FlowField;
use vfikit::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random projection to a scalar so a tensor-valued op can be gradchecked.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> vfikit::Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let r = g.constant(Tensor::randn(&shape, 1.0, &mut rng(seed)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Flow whose landing points sit at least 0.2 px from every integer line.
pub fn off_lattice_flow(w: usize, h: usize, seed: u64) -> FlowField<f64> {
    let mut r = rng(seed);
    FlowField::from_fn(w, h, |_, _| {
        [0; 2].map(|_| r.random_range(-1i32..=1) as f64 + r.random_range(0.2..0.8))
    })
}

/// Mean SSIM over all valid 11x11 windows of one channel, straight from
/// the definition with a Gaussian window of sigma 1.5.
pub fn ssim_scalar(x: &[f64], y: &[f64], w: usize, h: usize, l: f64) -> f64 {
    let sigma: f64 = 1.5;
    let mut k = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            s += *v;
        }
    }
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let p = (oy + i) * w + ox + j;
                    mx += k[i][j] / s * x[p];
                    my += k[i][j] / s * y[p];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let p = (oy + i) * w + ox + j;
                    let q = k[i][j] / s;
                    vx += q * (x[p] - mx).powi(2);
                    vy += q * (y[p] - my).powi(2);
                    cxy += q * (x[p] - mx) * (y[p] - my);
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
