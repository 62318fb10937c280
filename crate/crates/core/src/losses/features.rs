use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Real, Tensor, Var};

const WIDTHS: [usize; 4] = [3, 16, 32, 64];

/// Fixed random convolutional features for the perceptual loss: three
/// stride-2 3x3 convolutions (3 -> 16 -> 32 -> 64) with leaky ReLU. Weights
/// are drawn once from the seed and never trained; gradients still flow
/// through to the input.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = WIDTHS
            .windows(2)
            .map(|w| {
                let fan_in = w[0] * 9;
                let weight = Tensor::randn(&[w[1], w[0], 3, 3], (2.0 / fan_in as f64).sqrt(), &mut rng);
                (weight, Tensor::zeros(&[w[1]]))
            })
            .collect();
        FeatureExtractor { layers }
    }

    /// Features of a `[B, 3, H, W]` image batch, `[B, 64, H/8, W/8]`
    /// (rounded up).
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (w, b) in &self.layers {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            h = g.conv2d(h, w, b, 2, 1)?;
            h = g.leaky_relu(h, T::of(0.2));
        }
        Ok(h)
    }
}
