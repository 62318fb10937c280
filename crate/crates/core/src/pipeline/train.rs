use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, PipelineConfig};
use super::model::{forward_pass, Model};
use super::{load_dataset, Pipeline};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::losses::{
    perceptual_loss, reconstruction_loss, smoothness_loss, total_loss, warping_loss_warped, FeatureExtractor,
    LossParts, Phase,
};
use crate::synth::Quad;
use crate::tensor::{adam_step, AdamState, Graph, Tensor};

/// One optimisation step as logged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    /// 1-based.
    pub step: u64,
    pub phase: Phase,
    pub total: f64,
    /// Reconstruction, perceptual, warping, smoothness.
    pub parts: [f64; 4],
    /// Effective weights used at this step.
    pub weights: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub pipeline: Pipeline,
    pub adam: AdamState<f32>,
    pub log: Vec<LossRecord>,
}

impl TrainOutput {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.pipeline.checkpoint(self.adam.step, Some(self.adam.clone()))
    }
}

/// Trains on the dataset the config names.
pub fn train(config: &PipelineConfig) -> Result<TrainOutput> {
    let quads = load_dataset(&config.data)?;
    train_on(config, &quads, |_| {})
}

/// Repeats each index once per epoch in a seeded shuffled order.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Batches {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Mini-batch Adam on `quads`, calling `on_step` after every update. The
/// loss trajectory is a pure function of the config and the data.
pub fn train_on(config: &PipelineConfig, quads: &[Quad], mut on_step: impl FnMut(&LossRecord)) -> Result<TrainOutput> {
    config.validate()?;
    if config.mode != Mode::Learned {
        return Err(Error::Config("training needs mode = \"learned\"".into()));
    }
    if quads.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let t = quads[0].t;
    if quads.iter().any(|q| q.t != t) {
        return Err(Error::contract("all training quads must share one target time"));
    }
    let targets = quads
        .iter()
        .map(|q| {
            let f = q.target()?;
            let s = f.shape();
            f.clone().reshape(&[1, s[0], s[1], s[2]])
        })
        .collect::<Result<Vec<Tensor<f32>>>>()?;

    let tc = &config.train;
    let mut model = Model::<f32>::new(&config.model)?;
    let mut adam = AdamState::new(model.parts().iter().flat_map(|p| p.tensors().iter()));
    let phi = FeatureExtractor::<f32>::new(tc.feature_seed);
    let mut batches = Batches::new(quads.len(), config.seed);
    let mut log = Vec::with_capacity(tc.steps as usize);

    for step in 1..=tc.steps {
        let phase = match tc.late_phase_step {
            Some(s) if step >= s => Phase::Late,
            _ => Phase::Early,
        };
        let weights = config.loss.in_phase(phase);
        let idx = batches.next(tc.batch_size);
        let batch: Vec<&Quad> = idx.iter().map(|&i| &quads[i]).collect();
        let tb = Tensor::cat_batch(&idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let fp = forward_pass(&mut g, Mode::Learned, Some((&model, &bound)), &batch, t)?;
        let target = g.constant(tb);
        let parts = LossParts {
            reconstruction: reconstruction_loss(&mut g, fp.frame, target)?,
            perceptual: perceptual_loss(&mut g, fp.frame, target, &phi)?,
            warping: warping_loss_warped(&mut g, target, fp.warped[0], fp.warped[1])?,
            smoothness: smoothness_loss(&mut g, fp.refined[0], fp.refined[1])?,
        };
        let loss = total_loss(&mut g, &parts, &weights)?;
        let record = LossRecord {
            step,
            phase,
            total: g.value(loss).item() as f64,
            parts: parts.as_array().map(|v| g.value(v).item() as f64),
            weights: weights.effective(),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "total loss {} at step {step} (phase {phase:?}; reconstruction, perceptual, warping, smoothness = {:?})",
                record.total, record.parts
            )));
        }
        g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = bound
            .all()
            .map(|v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        drop(g);
        let mut params: Vec<&mut Tensor<f32>> = model.parts_mut().into_iter().flat_map(|p| p.tensors_mut().iter_mut()).collect();
        adam_step(&mut params, &grads.iter().collect::<Vec<_>>(), &mut adam, &tc.adam)?;
        on_step(&record);
        log.push(record);
    }
    Ok(TrainOutput {
        pipeline: Pipeline::with_model(config.clone(), model)?,
        adam,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch() {
        let mut b = Batches::new(5, 1);
        let mut first: Vec<usize> = b.next(5);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        let mut wrap = b.next(3);
        wrap.extend(b.next(2));
        wrap.sort();
        assert_eq!(wrap, vec![0, 1, 2, 3, 4]);
        let mut again = Batches::new(5, 1);
        assert_eq!(again.next(7)[..5], Batches::new(5, 1).next(5)[..]);
    }
}
