//! End-to-end interpolation: motion coefficients, quadratic flows, flow
//! reversal, refinement, warping, mask estimation and blending; plus the
//! training loop, the evaluation harness and dataset loading.
//!
//! In the analytic-baseline and gt-coeffs modes the refinement is the
//! identity and the mask is 0.5 everywhere, so those modes need no weights.

mod config;
mod eval;
mod model;
mod train;

pub use config::{DataSpec, Mode, PipelineConfig, TrainConfig};
pub use eval::{evaluate_frames, thread_count, EvalReport, EvalRow};
pub use model::{forward_pass, ForwardPass, Model, ModelBound};
pub use train::{train, train_on, LossRecord, TrainOutput};

use crate::error::{Error, Result};
use crate::io::{load_quad, read_manifest, Checkpoint};
use crate::motion::{FlowField, HoleMask, MotionCoeffs};
use crate::synth::{make_dataset, Quad};
use crate::tensor::{Graph, Tensor, Var};

/// Intermediate results of one interpolation. The output frame equals
/// `synthesize_frame(I0, I1, refined_t0, refined_t1, mask, t)` bit for bit.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub coeffs: MotionCoeffs<f32>,
    /// Reversed flows before refinement.
    pub flow_t0: FlowField<f32>,
    pub flow_t1: FlowField<f32>,
    pub refined_t0: FlowField<f32>,
    pub refined_t1: FlowField<f32>,
    /// `[1, H, W]`, weight of frame 0.
    pub mask: Tensor<f32>,
    /// Reversal holes of `F(0 -> t)` and `F(1 -> t)`.
    pub holes: [HoleMask; 2],
}

#[derive(Clone, Debug)]
pub struct Interpolation {
    /// `[3, H, W]`.
    pub frame: Tensor<f32>,
    pub diagnostics: Diagnostics,
}

/// A configured interpolator, with weights in learned mode.
#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    model: Option<Model<f32>>,
}

fn squeeze(t: &Tensor<f32>, b: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let n: usize = s[1..].iter().product();
    Tensor::new(&s[1..], t.data()[b * n..(b + 1) * n].to_vec())
}

impl Pipeline {
    /// Validates the config and, in learned mode, initialises fresh
    /// weights from `config.model.seed`.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let model = match config.mode {
            Mode::Learned => Some(Model::new(&config.model)?),
            _ => None,
        };
        Ok(Pipeline { config, model })
    }

    pub fn with_model(config: PipelineConfig, model: Model<f32>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            model: Some(model),
        })
    }

    /// Restores the config and weights saved in a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = PipelineConfig::from_toml(&ckpt.config)?;
        let mut model = Model::new(&config.model)?;
        model.load_tensors(ckpt.params.clone())?;
        Self::with_model(config, model)
    }

    /// Same weights, different coefficient source.
    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        if mode == Mode::Learned && self.model.is_none() {
            self.model = Some(Model::new(&self.config.model)?);
        }
        self.config.mode = mode;
        Ok(self)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn model(&self) -> Option<&Model<f32>> {
        self.model.as_ref()
    }

    /// Config, weights and optional optimiser state as a checkpoint.
    pub fn checkpoint(&self, step: u64, adam: Option<crate::tensor::AdamState<f32>>) -> Result<Checkpoint> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::contract("only learned pipelines have weights to save"))?;
        Ok(Checkpoint {
            step,
            config: self.config.to_toml()?,
            params: model.named_tensors(),
            adam,
        })
    }

    fn run(&self, quads: &[&Quad], t: f64) -> Result<(Graph<f32>, ForwardPass)> {
        let mut g = Graph::new();
        let bound = self.model.as_ref().map(|m| m.bind(&mut g, false));
        let model = self.model.as_ref().zip(bound.as_ref());
        let fp = forward_pass(&mut g, self.config.mode, model, quads, t)?;
        Ok((g, fp))
    }

    /// Interpolates the frame at `t` with diagnostics.
    pub fn interpolate(&self, quad: &Quad, t: f64) -> Result<Interpolation> {
        if self.config.mode == Mode::GtCoeffs && quad.gt_coeffs.is_none() {
            return Err(Error::contract("gt-coeffs mode is only available for synthetic quads"));
        }
        let (g, fp) = self.run(&[quad], t)?;
        let field = |v: Var| FlowField::from_tensor(g.value(v), 0);
        let c = &fp.coeffs;
        let diagnostics = Diagnostics {
            coeffs: c.to_coeffs(&g, 0)?,
            flow_t0: field(fp.backward[0])?,
            flow_t1: field(fp.backward[1])?,
            refined_t0: field(fp.refined[0])?,
            refined_t1: field(fp.refined[1])?,
            mask: squeeze(g.value(fp.mask), 0)?,
            holes: [fp.holes[0][0].clone(), fp.holes[1][0].clone()],
        };
        Ok(Interpolation {
            frame: squeeze(g.value(fp.frame), 0)?,
            diagnostics,
        })
    }

    /// Direct evaluation at each time, returned sorted by time.
    pub fn interpolate_multi(&self, quad: &Quad, ts: &[f64]) -> Result<Vec<(f64, Tensor<f32>)>> {
        let mut ts = ts.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.iter().map(|&t| Ok((t, self.interpolate(quad, t)?.frame))).collect()
    }

    /// PSNR and SSIM of every quad's interpolation at its own `t` against
    /// its target. Quads are spread over [`thread_count`] threads; rows keep
    /// dataset order.
    pub fn evaluate(&self, quads: &[Quad]) -> Result<EvalReport> {
        let rows = eval::par_map(quads, thread_count(), |i, q| {
            let out = self.interpolate(q, q.t)?.frame;
            EvalRow::score(i, q.t, &out, q.target()?)
        })?;
        Ok(EvalReport::new(rows))
    }
}

/// Generates or loads the quads a [`DataSpec`] describes.
pub fn load_dataset(spec: &DataSpec) -> Result<Vec<Quad>> {
    match spec {
        DataSpec::Synth { n, seed, size, .. } => {
            let d = spec.difficulty()?.expect("synthetic specs have a difficulty");
            make_dataset(*n, *seed, *size, &d)
        }
        DataSpec::Manifest { path } => read_manifest(path)?.iter().map(load_quad).collect(),
    }
}
