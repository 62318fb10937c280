//! Learnable components: a 3D grid network estimating quadratic motion
//! coefficients from packed flows and occlusions, a 2D grid network
//! refining the reversed flows, and a small head predicting the blending
//! mask.
//!
//! Every network owns a [`Params`] set. A forward pass binds the set to a
//! [`Graph`] with [`Params::bind`] and then runs on graph handles, so the
//! same code serves inference and training.

mod grid;
mod params;

pub use params::{Bound, Conv, Params};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{FlowField, MotionCoeffs, OcclusionMap};
use crate::synth::{Quad, LINKS};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Graph, Real, Tensor, Var};
use grid::Grid;

/// Consecutive frame pairs packed into the estimator's temporal slots.
pub const NME_PAIRS: [(i32, i32); 3] = [(-1, 0), (0, 1), (1, 2)];
/// Channels per temporal slot: forward flow, backward flow, forward and
/// backward occlusion.
pub const NME_CHANNELS: usize = 6;
/// Input channels of the refinement network: two frames, two warped
/// frames and two flows.
pub const MR_CHANNELS: usize = 16;

/// Architecture hyper-parameters shared by all three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Stream widths of the coefficient estimator, top row first.
    pub nme_widths: Vec<usize>,
    /// Stream widths of the refinement network.
    pub mr_widths: Vec<usize>,
    /// Grid columns; each row has `columns - 1` residual blocks.
    pub columns: usize,
    /// Hidden widths of the mask head.
    pub bme_widths: [usize; 2],
    pub slope: f64,
    /// Extra factor on the He scale of the two output convolutions, so the
    /// untrained networks start close to zero motion and zero correction.
    pub head_gain: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            nme_widths: vec![16, 32, 64],
            mr_widths: vec![32, 64, 96],
            columns: 6,
            bme_widths: [64, 32],
            slope: 0.2,
            head_gain: 0.1,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.nme_widths.is_empty() || self.mr_widths.is_empty() {
            return bad("stream widths must not be empty");
        }
        if self.nme_widths.iter().chain(&self.mr_widths).chain(&self.bme_widths).any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        if self.columns < 2 || !self.columns.is_multiple_of(2) {
            return bad("columns must be even and at least 2");
        }
        if !(self.slope.is_finite() && self.head_gain.is_finite() && self.head_gain >= 0.0) {
            return bad("slope and head_gain must be finite, head_gain non-negative");
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream)
    }
}

/// Anything that owns learnable parameters.
pub trait Module<T: Real> {
    fn params(&self) -> &Params<T>;
    fn params_mut(&mut self) -> &mut Params<T>;
}

/// Exact number of learnable scalars.
pub fn param_count<T: Real>(net: &impl Module<T>) -> usize {
    net.params().count()
}

/// Graph handles of the four coefficient maps, each `[B, 2, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct CoeffVars {
    pub alpha0: Var,
    pub beta0: Var,
    pub alpha1: Var,
    pub beta1: Var,
}

impl CoeffVars {
    /// Reads sample `b` back as plain coefficient maps.
    pub fn to_coeffs<T: Real>(&self, g: &Graph<T>, b: usize) -> Result<MotionCoeffs<T>> {
        let f = |v: Var| FlowField::from_tensor(g.value(v), b);
        MotionCoeffs::new(f(self.alpha0)?, f(self.beta0)?, f(self.alpha1)?, f(self.beta1)?)
    }
}

/// Coefficient estimator: 3D grid over `[B, 6, 3, H, W]` packed flows and
/// occlusions. A `(2, 3, 3)` convolution without temporal padding
/// collapses the three pair slots into two anchor slices of four channels
/// each: `(alpha, beta)` for frame 0, then for frame 1.
#[derive(Clone, Debug)]
pub struct GridNet3D<T> {
    params: Params<T>,
    head: Conv,
    grid: Grid,
    tail: Conv,
    slope: f64,
}

impl<T: Real> GridNet3D<T> {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = cfg.rng(1);
        let mut params = Params::new();
        let w = &cfg.nme_widths;
        let head = Conv::same(&mut params, "nme.head", NME_CHANNELS, w[0], false, &mut rng);
        let grid = Grid::new(&mut params, "nme", w, cfg.columns, cfg.slope, false, &mut rng);
        let geom = ConvGeom {
            stride: [1, 1, 1],
            padding: [0, 1, 1],
        };
        let tail = Conv::new(&mut params, "nme.tail", w[0], 4, &[2, 3, 3], geom, cfg.head_gain, &mut rng);
        Ok(GridNet3D {
            params,
            head,
            grid,
            tail,
            slope: cfg.slope,
        })
    }

    /// Spatial sizes must be divisible by this.
    pub fn divisor(&self) -> usize {
        self.grid.divisor()
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<CoeffVars> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 5 || s[1] != NME_CHANNELS || s[2] != NME_PAIRS.len() {
            return Err(Error::dim("gridnet3d", format!("expected [B,6,3,H,W], got {s:?}")));
        }
        let (b, h, w) = (s[0], s[3], s[4]);
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::dim("gridnet3d", format!("H and W must be divisible by {d}, got {h}x{w}")));
        }
        let y = self.head.forward(g, p, x)?;
        let y = self.grid.forward(g, p, y)?;
        let y = g.leaky_relu(y, T::of(self.slope));
        let y = self.tail.forward(g, p, y)?;
        let mut slot = |anchor: usize, ch: usize| -> Result<Var> {
            let v = g.narrow(y, 2, anchor, 1)?;
            let v = g.narrow(v, 1, ch, 2)?;
            g.reshape(v, &[b, 2, h, w])
        };
        Ok(CoeffVars {
            alpha0: slot(0, 0)?,
            beta0: slot(0, 2)?,
            alpha1: slot(1, 0)?,
            beta1: slot(1, 2)?,
        })
    }

    /// Inference on a plain `[B, 6, 3, H, W]` tensor, one set of
    /// coefficients per batch item.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<MotionCoeffs<T>>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let c = self.forward(&mut g, &p, xv)?;
        (0..x.shape()[0]).map(|b| c.to_coeffs(&g, b)).collect()
    }
}

impl<T: Real> Module<T> for GridNet3D<T> {
    fn params(&self) -> &Params<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }
}

/// Refinement outputs, each `[B, 2, H, W]`, plus the final feature map.
#[derive(Clone, Copy, Debug)]
pub struct MrOutput {
    pub offsets0: Var,
    pub residuals0: Var,
    pub offsets1: Var,
    pub residuals1: Var,
    /// Activated top-row features `[B, mr_widths[0], H, W]`.
    pub features: Var,
}

/// Motion refinement: 2D grid over the 16-channel stack of both frames,
/// both warped frames and both reversed flows. The 8-channel head gives,
/// per flow, a sampling offset and an additive residual.
#[derive(Clone, Debug)]
pub struct GridNet2D<T> {
    params: Params<T>,
    head: Conv,
    grid: Grid,
    tail: Conv,
    slope: f64,
    feature_width: usize,
}

impl<T: Real> GridNet2D<T> {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = cfg.rng(2);
        let mut params = Params::new();
        let w = &cfg.mr_widths;
        let head = Conv::same(&mut params, "mr.head", MR_CHANNELS, w[0], true, &mut rng);
        let grid = Grid::new(&mut params, "mr", w, cfg.columns, cfg.slope, true, &mut rng);
        let geom = ConvGeom::spatial(1, 1);
        let tail = Conv::new(&mut params, "mr.tail", w[0], 8, &[3, 3], geom, cfg.head_gain, &mut rng);
        Ok(GridNet2D {
            params,
            head,
            grid,
            tail,
            slope: cfg.slope,
            feature_width: w[0],
        })
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Frames are `[B, 3, H, W]`, flows `[B, 2, H, W]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        i0: Var,
        i1: Var,
        warped0: Var,
        warped1: Var,
        flow0: Var,
        flow1: Var,
    ) -> Result<MrOutput> {
        let x = g.concat(&[i0, i1, warped0, warped1, flow0, flow1], 1)?;
        let c = g.value(x).shape()[1];
        if c != MR_CHANNELS {
            return Err(Error::dim("gridnet2d", format!("expected {MR_CHANNELS} input channels, got {c}")));
        }
        let y = self.head.forward(g, p, x)?;
        let y = self.grid.forward(g, p, y)?;
        let features = g.leaky_relu(y, T::of(self.slope));
        let out = self.tail.forward(g, p, features)?;
        let mut part = |k: usize| g.narrow(out, 1, 2 * k, 2);
        Ok(MrOutput {
            offsets0: part(0)?,
            residuals0: part(1)?,
            offsets1: part(2)?,
            residuals1: part(3)?,
            features,
        })
    }
}

impl<T: Real> Module<T> for GridNet2D<T> {
    fn params(&self) -> &Params<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }
}

/// Blending-mask head: three 3x3 convolutions and a sigmoid over the two
/// warped frames stacked with the refinement features.
#[derive(Clone, Debug)]
pub struct BmeHead<T> {
    params: Params<T>,
    convs: [Conv; 3],
    slope: f64,
}

impl<T: Real> BmeHead<T> {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = cfg.rng(3);
        let mut params = Params::new();
        let cin = 6 + cfg.mr_widths[0];
        let [a, b] = cfg.bme_widths;
        let geom = ConvGeom::spatial(1, 1);
        let convs = [
            Conv::same(&mut params, "bme.c0", cin, a, true, &mut rng),
            Conv::same(&mut params, "bme.c1", a, b, true, &mut rng),
            Conv::new(&mut params, "bme.c2", b, 1, &[3, 3], geom, cfg.head_gain, &mut rng),
        ];
        Ok(BmeHead {
            params,
            convs,
            slope: cfg.slope,
        })
    }

    /// Mask `[B, 1, H, W]` in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, warped0: Var, warped1: Var, features: Var) -> Result<Var> {
        let mut h = g.concat(&[warped0, warped1, features], 1)?;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(g, p, h)?;
            if i < 2 {
                h = g.leaky_relu(h, T::of(self.slope));
            }
        }
        Ok(g.sigmoid(h))
    }
}

impl<T: Real> Module<T> for BmeHead<T> {
    fn params(&self) -> &Params<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }
}

/// Packs the flows and occlusion maps of the three consecutive pairs into
/// a `[1, 6, 3, H, W]` tensor. Slot `k` holds pair `NME_PAIRS[k]` with
/// channels: forward flow (x, y), backward flow (x, y), forward occlusion,
/// backward occlusion. `flows[k]` and `occs[k]` are `[forward, backward]`.
pub fn nme_pack_input<T: Real>(
    flows: [[&FlowField<f32>; 2]; 3],
    occs: [[&OcclusionMap; 2]; 3],
) -> Result<Tensor<T>> {
    let (w, h) = (flows[0][0].width(), flows[0][0].height());
    let ok = |fw: usize, fh: usize| fw == w && fh == h;
    for k in 0..3 {
        for d in 0..2 {
            if !ok(flows[k][d].width(), flows[k][d].height()) || !ok(occs[k][d].width(), occs[k][d].height()) {
                return Err(Error::dim("nme_pack_input", format!("pair {k} is not {w}x{h}")));
            }
        }
    }
    let n = w * h;
    let mut out = Tensor::zeros(&[1, NME_CHANNELS, 3, h, w]);
    let data = out.data_mut();
    for k in 0..3 {
        let mut plane = |c: usize, src: &mut dyn Iterator<Item = f32>| {
            let base = (c * 3 + k) * n;
            for (i, v) in src.enumerate() {
                data[base + i] = T::of(v as f64);
            }
        };
        for d in 0..2 {
            for axis in 0..2 {
                plane(2 * d + axis, &mut flows[k][d].data().iter().skip(axis).step_by(2).copied());
            }
            plane(4 + d, &mut occs[k][d].data().iter().copied());
        }
    }
    Ok(out)
}

/// [`nme_pack_input`] applied to a quad's observed flows and occlusions.
pub fn nme_pack_quad<T: Real>(q: &Quad) -> Result<Tensor<T>> {
    debug_assert!(NME_PAIRS.iter().all(|&(a, b)| LINKS.contains(&(a, b)) && LINKS.contains(&(b, a))));
    let f = |k: usize, rev: bool| {
        let (a, b) = NME_PAIRS[k];
        if rev { q.flow(b, a) } else { q.flow(a, b) }
    };
    let o = |k: usize, rev: bool| {
        let (a, b) = NME_PAIRS[k];
        if rev { q.occlusion(b, a) } else { q.occlusion(a, b) }
    };
    nme_pack_input(
        [[f(0, false)?, f(0, true)?], [f(1, false)?, f(1, true)?], [f(2, false)?, f(2, true)?]],
        [[o(0, false)?, o(0, true)?], [o(1, false)?, o(1, true)?], [o(2, false)?, o(2, true)?]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        let odd = NetConfig {
            columns: 5,
            ..NetConfig::default()
        };
        assert_eq!(odd.validate().unwrap_err().class(), "config");
        let zero = NetConfig {
            mr_widths: vec![8, 0],
            ..NetConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = GridNet3D::<f32>::new(&NetConfig::default()).unwrap();
        let mut names = net.params().names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), net.params().len());
    }
}
