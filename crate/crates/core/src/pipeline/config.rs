use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::motion::check_t;
use crate::nets::NetConfig;
use crate::synth::{Difficulty, Observation};
use crate::tensor::AdamConfig;

/// Where the motion coefficients come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Estimated by the 3D grid network, then refined and mask-blended by
    /// the learned refinement and mask heads.
    Learned,
    /// Closed form from the observed flows; identity refinement, `M = 0.5`.
    AnalyticBaseline,
    /// Exact coefficients of a synthetic scene; identity refinement,
    /// `M = 0.5`.
    GtCoeffs,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Mode::Learned),
            "analytic-baseline" => Ok(Mode::AnalyticBaseline),
            "gt-coeffs" => Ok(Mode::GtCoeffs),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (learned, analytic-baseline, gt-coeffs)"
            ))),
        }
    }
}

/// A dataset: generated scenes or a manifest on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Synth {
        difficulty: String,
        n: usize,
        seed: u64,
        size: usize,
        /// Overrides the preset's observation model.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observation: Option<Observation>,
    },
    Manifest {
        path: PathBuf,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synth {
            difficulty: "linear".into(),
            n: 32,
            seed: 0,
            size: 64,
            observation: None,
        }
    }
}

impl DataSpec {
    /// Parses `synth:<difficulty>:<n>:<seed>:<size>`; anything else is a
    /// manifest path.
    pub fn parse(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(DataSpec::Manifest { path: s.into() });
        };
        let f: Vec<&str> = rest.split(':').collect();
        let bad = || Error::Config(format!("dataset {s:?}: expected synth:<difficulty>:<n>:<seed>:<size>"));
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(DataSpec::Synth {
            difficulty: f[0].to_string(),
            n: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            size: f[3].parse().map_err(|_| bad())?,
            observation: None,
        })
    }

    pub fn difficulty(&self) -> Result<Option<Difficulty>> {
        match self {
            DataSpec::Synth {
                difficulty,
                observation,
                ..
            } => {
                let d = Difficulty::preset(difficulty)?;
                Ok(Some(match observation {
                    Some(o) => d.with_observation(*o),
                    None => d,
                }))
            }
            DataSpec::Manifest { .. } => Ok(None),
        }
    }

    fn validate(&self) -> Result<()> {
        if let DataSpec::Synth { n, size, .. } = self {
            if *n == 0 || *size == 0 {
                return Err(Error::Config("synthetic dataset needs n > 0 and size > 0".into()));
            }
        }
        self.difficulty().map(|_| ())
    }
}

/// Optimisation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// First step (1-based) of the late phase, where the warping and
    /// smoothness weights drop to zero. `None` keeps the early phase.
    pub late_phase_step: Option<u64>,
    /// Seed of the fixed perceptual feature extractor.
    pub feature_seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 4,
            late_phase_step: None,
            feature_seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Everything a run needs, loadable from TOML.
///
/// ```toml
/// mode = "learned"
/// seed = 0
/// ts = [0.5]
///
/// [model]        # network widths and init, see NetConfig
/// [loss]         # lambda_r, lambda_p, lambda_w, lambda_s, phase
/// [train]        # steps, batch_size, late_phase_step, feature_seed
/// [train.adam]   # lr, beta1, beta2, eps
/// [data]         # kind = "synth" (difficulty, n, seed, size) or
///                # kind = "manifest" (path)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Seed for batch order; network init uses `model.seed`.
    pub seed: u64,
    /// Target times for multi-frame interpolation.
    pub ts: Vec<f64>,
    pub model: NetConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Learned,
            seed: 0,
            ts: vec![0.5],
            model: NetConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            data: DataSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ts.is_empty() {
            return Err(Error::Config("ts must not be empty".into()));
        }
        for &t in &self.ts {
            check_t(t).map_err(|_| Error::Config(format!("t = {t} is outside (0, 1)")))?;
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.data.validate()?;
        let a = &self.train.adam;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(a.lr >= 0.0 && a.lr.is_finite() && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("adam needs lr >= 0, betas in [0, 1), eps > 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
