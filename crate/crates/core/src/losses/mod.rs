//! Training objectives and image quality metrics.
//!
//! Every norm in the objectives is normalised by element count (a mean,
//! not a sum), so the loss weights keep their meaning across resolutions.
//! The perceptual term uses the root of the mean squared feature
//! difference, an L2 norm rather than its square.

mod features;
mod metrics;

pub use features::FeatureExtractor;
pub use metrics::{psnr, psnr_u8, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::diff;
use crate::tensor::{Graph, Real, Var};

/// Mean absolute difference.
pub fn reconstruction_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Root mean squared difference of extracted features. The gradient at an
/// exact match is taken as zero.
pub fn perceptual_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var, phi: &FeatureExtractor<T>) -> Result<Var> {
    let a = phi.features(g, pred)?;
    let b = phi.features(g, gt)?;
    let d = g.sub(a, b)?;
    let d = g.square(d);
    let m = g.mean(d);
    Ok(g.sqrt(m))
}

/// Mean absolute error of both warped key frames against the target.
pub fn warping_loss<T: Real>(
    g: &mut Graph<T>,
    target: Var,
    i0: Var,
    i1: Var,
    fr_t0: Var,
    fr_t1: Var,
) -> Result<Var> {
    let w0 = diff::backward_warp(g, i0, fr_t0)?;
    let w1 = diff::backward_warp(g, i1, fr_t1)?;
    warping_loss_warped(g, target, w0, w1)
}

/// [`warping_loss`] for frames that are already warped.
pub fn warping_loss_warped<T: Real>(g: &mut Graph<T>, target: Var, w0: Var, w1: Var) -> Result<Var> {
    let a = reconstruction_loss(g, w0, target)?;
    let b = reconstruction_loss(g, w1, target)?;
    g.add(a, b)
}

fn total_variation<T: Real>(g: &mut Graph<T>, flow: Var) -> Result<Var> {
    let s = g.value(flow).shape().to_vec();
    if s.len() != 4 || s[1] != 2 {
        return Err(Error::dim("smoothness_loss", format!("flow must be [B,2,H,W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let n = s.iter().product::<usize>() as f64;
    let mut parts = Vec::new();
    for (axis, len) in [(3, w), (2, h)] {
        if len < 2 {
            continue;
        }
        let hi = g.narrow(flow, axis, 1, len - 1)?;
        let lo = g.narrow(flow, axis, 0, len - 1)?;
        let d = g.sub(hi, lo)?;
        let d = g.abs(d);
        parts.push(g.sum(d));
    }
    let total = match parts[..] {
        [] => return Err(Error::dim("smoothness_loss", "flow has a single pixel")),
        [a] => a,
        [a, b] => g.add(a, b)?,
        _ => unreachable!(),
    };
    Ok(g.scale(total, T::of(1.0 / n)))
}

/// Anisotropic total variation of both flows: the sum of absolute forward
/// differences along x and y over both channels, divided by the number of
/// flow elements, added over the two flows. A unit x-ramp in both channels
/// scores `(W - 1) / W` per flow.
pub fn smoothness_loss<T: Real>(g: &mut Graph<T>, fr_t0: Var, fr_t1: Var) -> Result<Var> {
    let a = total_variation(g, fr_t0)?;
    let b = total_variation(g, fr_t1)?;
    g.add(a, b)
}

/// Training phase. The late phase drops the warping and smoothness terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Early,
    Late,
}

/// Coefficients of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_w: f64,
    pub lambda_s: f64,
    pub phase: Phase,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 204.0,
            lambda_p: 0.005,
            lambda_w: 102.0,
            lambda_s: 1.0,
            phase: Phase::Early,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_p, self.lambda_w, self.lambda_s];
        if all.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }

    pub fn in_phase(self, phase: Phase) -> Self {
        LossWeights { phase, ..self }
    }

    /// Weights actually applied, `[r, p, w, s]`, after the phase rule.
    pub fn effective(&self) -> [f64; 4] {
        match self.phase {
            Phase::Early => [self.lambda_r, self.lambda_p, self.lambda_w, self.lambda_s],
            Phase::Late => [self.lambda_r, self.lambda_p, 0.0, 0.0],
        }
    }

    /// Weighted sum of plain values; terms with zero weight are skipped, so
    /// their values never matter.
    pub fn combine(&self, parts: &LossParts<f64>) -> f64 {
        self.effective()
            .iter()
            .zip(parts.as_array())
            .filter(|(l, _)| **l != 0.0)
            .map(|(l, p)| l * p)
            .sum()
    }
}

/// The four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossParts<V> {
    pub reconstruction: V,
    pub perceptual: V,
    pub warping: V,
    pub smoothness: V,
}

impl<V: Copy> LossParts<V> {
    pub fn as_array(&self) -> [V; 4] {
        [self.reconstruction, self.perceptual, self.warping, self.smoothness]
    }
}

/// Weighted sum of the loss terms on the graph, skipping zero-weight terms.
pub fn total_loss<T: Real>(g: &mut Graph<T>, parts: &LossParts<Var>, w: &LossWeights) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (l, p) in w.effective().iter().zip(parts.as_array()) {
        if *l == 0.0 {
            continue;
        }
        let term = g.scale(p, T::of(*l));
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(match acc {
        Some(a) => a,
        None => {
            let z = g.scale(parts.reconstruction, T::zero());
            g.sum(z)
        }
    })
}
