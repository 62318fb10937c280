use crate::error::{Error, Result};
use crate::motion::{diff, stack_flows, HoleMask, MotionCoeffs};
use crate::nets::{nme_pack_quad, BmeHead, Bound, CoeffVars, GridNet2D, GridNet3D, Module, NetConfig, Params};
use crate::synth::Quad;
use crate::tensor::{Graph, Real, Tensor, Var};

use super::config::Mode;

/// The three learnable components.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub nme: GridNet3D<T>,
    pub mr: GridNet2D<T>,
    pub bme: BmeHead<T>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        Ok(Model {
            nme: GridNet3D::new(cfg)?,
            mr: GridNet2D::new(cfg)?,
            bme: BmeHead::new(cfg)?,
        })
    }

    pub fn parts(&self) -> [&Params<T>; 3] {
        [self.nme.params(), self.mr.params(), self.bme.params()]
    }

    pub fn parts_mut(&mut self) -> [&mut Params<T>; 3] {
        [self.nme.params_mut(), self.mr.params_mut(), self.bme.params_mut()]
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|p| p.count()).sum()
    }

    /// All tensors with their names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.parts()
            .iter()
            .flat_map(|p| p.names().iter().cloned().zip(p.tensors().iter().cloned()))
            .collect()
    }

    /// Inverse of [`Model::named_tensors`].
    pub fn load_tensors(&mut self, mut pairs: Vec<(String, Tensor<T>)>) -> Result<()> {
        let total: usize = self.parts().iter().map(|p| p.len()).sum();
        if pairs.len() != total {
            return Err(Error::Config(format!("expected {total} tensors, got {}", pairs.len())));
        }
        for p in self.parts_mut() {
            let rest = pairs.split_off(p.len());
            p.load(std::mem::replace(&mut pairs, rest))?;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ModelBound {
        let [a, b, c] = self.parts().map(|p| p.bind(g, trainable));
        ModelBound { nme: a, mr: b, bme: c }
    }
}

/// Graph handles for a bound [`Model`].
#[derive(Clone, Debug)]
pub struct ModelBound {
    pub nme: Bound,
    pub mr: Bound,
    pub bme: Bound,
}

impl ModelBound {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.nme.vars.iter().chain(&self.mr.vars).chain(&self.bme.vars).copied()
    }
}

/// Graph handles of one forward pass over a batch, all `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub coeffs: CoeffVars,
    /// `F(0 -> t)`, `F(1 -> t)`.
    pub forward: [Var; 2],
    /// Reversed flows `F(t -> 0)`, `F(t -> 1)`, before refinement.
    pub backward: [Var; 2],
    pub holes: [Vec<HoleMask>; 2],
    pub refined: [Var; 2],
    /// Key frames warped with the refined flows.
    pub warped: [Var; 2],
    pub mask: Var,
    pub frame: Var,
    pub i0: Var,
    pub i1: Var,
}

fn frames_batch<T: Real>(quads: &[&Quad], k: i32) -> Result<Tensor<T>> {
    let parts = quads
        .iter()
        .map(|q| {
            let f = q.frame(k)?;
            let s = f.shape();
            f.cast::<T>().reshape(&[1, s[0], s[1], s[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::cat_batch(&parts.iter().collect::<Vec<_>>())
}

/// Coefficients that do not come from the network, per quad.
pub(crate) fn fixed_coeffs(q: &Quad, mode: Mode) -> Result<MotionCoeffs<f32>> {
    match mode {
        Mode::AnalyticBaseline => MotionCoeffs::analytic(q.flow(0, 1)?, q.flow(0, -1)?, q.flow(1, 0)?, q.flow(1, 2)?),
        Mode::GtCoeffs => q
            .gt_coeffs
            .clone()
            .ok_or_else(|| Error::contract("gt-coeffs mode needs a synthetic quad with known coefficients")),
        Mode::Learned => Err(Error::contract("learned coefficients come from the network")),
    }
}

fn coeff_consts<T: Real>(g: &mut Graph<T>, quads: &[&Quad], mode: Mode) -> Result<CoeffVars> {
    let cs = quads.iter().map(|q| fixed_coeffs(q, mode)).collect::<Result<Vec<_>>>()?;
    let mut stack = |pick: fn(&MotionCoeffs<f32>) -> &crate::motion::FlowField<f32>| -> Result<Var> {
        let t = stack_flows(&cs.iter().map(pick).collect::<Vec<_>>())?;
        Ok(g.constant(t.cast::<T>()))
    };
    Ok(CoeffVars {
        alpha0: stack(|c| &c.alpha0)?,
        beta0: stack(|c| &c.beta0)?,
        alpha1: stack(|c| &c.alpha1)?,
        beta1: stack(|c| &c.beta1)?,
    })
}

/// Coefficients, quadratic flows, reversal, refinement, warping, mask and
/// blend for a batch of quads at a shared `t`. `model` is required in
/// learned mode and ignored otherwise.
pub fn forward_pass<T: Real>(
    g: &mut Graph<T>,
    mode: Mode,
    model: Option<(&Model<T>, &ModelBound)>,
    quads: &[&Quad],
    t: f64,
) -> Result<ForwardPass> {
    crate::motion::check_t(t)?;
    let first = quads.first().ok_or_else(|| Error::contract("empty batch"))?;
    let (w, h) = (first.width(), first.height());
    for q in quads {
        q.validate()?;
        if (q.width(), q.height()) != (w, h) {
            return Err(Error::dim("batch", format!("quad {}x{} vs {w}x{h}", q.width(), q.height())));
        }
    }
    let b = quads.len();
    let i0 = g.constant(frames_batch(quads, 0)?);
    let i1 = g.constant(frames_batch(quads, 1)?);
    let learned = match (mode, model) {
        (Mode::Learned, Some(m)) => Some(m),
        (Mode::Learned, None) => return Err(Error::contract("learned mode needs a model")),
        _ => None,
    };
    let coeffs = match learned {
        Some((m, p)) => {
            let parts = quads.iter().map(|q| nme_pack_quad::<T>(q)).collect::<Result<Vec<_>>>()?;
            let x = g.constant(Tensor::cat_batch(&parts.iter().collect::<Vec<_>>())?);
            m.nme.forward(g, &p.nme, x)?
        }
        None => coeff_consts(g, quads, mode)?,
    };
    let f0t = diff::quadratic_flow(g, coeffs.alpha0, coeffs.beta0, T::of(t))?;
    let f1t = diff::quadratic_flow(g, coeffs.alpha1, coeffs.beta1, T::of(1.0 - t))?;
    let (ft0, holes0) = diff::reverse_flow(g, f0t)?;
    let (ft1, holes1) = diff::reverse_flow(g, f1t)?;
    let (refined, warped, mask) = match learned {
        Some((m, p)) => {
            let c0 = diff::backward_warp(g, i0, ft0)?;
            let c1 = diff::backward_warp(g, i1, ft1)?;
            let r = m.mr.forward(g, &p.mr, i0, i1, c0, c1, ft0, ft1)?;
            let fr0 = diff::apply_refinement(g, ft0, r.offsets0, r.residuals0)?;
            let fr1 = diff::apply_refinement(g, ft1, r.offsets1, r.residuals1)?;
            let w0 = diff::backward_warp(g, i0, fr0)?;
            let w1 = diff::backward_warp(g, i1, fr1)?;
            let mask = m.bme.forward(g, &p.bme, w0, w1, r.features)?;
            ([fr0, fr1], [w0, w1], mask)
        }
        None => {
            let w0 = diff::backward_warp(g, i0, ft0)?;
            let w1 = diff::backward_warp(g, i1, ft1)?;
            let mask = g.constant(Tensor::full(&[b, 1, h, w], T::of(0.5)));
            ([ft0, ft1], [w0, w1], mask)
        }
    };
    let frame = diff::blend(g, warped[0], warped[1], mask, t)?;
    Ok(ForwardPass {
        coeffs,
        forward: [f0t, f1t],
        backward: [ft0, ft1],
        holes: [holes0, holes1],
        refined,
        warped,
        mask,
        frame,
        i0,
        i1,
    })
}
