use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replaces every tensor from `(name, tensor)` pairs. Names and shapes
    /// must match the registered layout exactly.
    pub fn load(&mut self, pairs: Vec<(String, Tensor<T>)>) -> Result<()> {
        if pairs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                pairs.len()
            )));
        }
        for (i, (name, t)) in pairs.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Config(format!(
                    "parameter {i}: expected {} {:?}, got {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
        }
        self.tensors = pairs.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    /// Puts every tensor on the graph, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Sets every tensor to zero.
    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(T::zero());
        }
    }
}

/// Graph handles for a [`Params`] set, index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// One 2D (`kernel.len() == 2`) or 3D (`kernel.len() == 3`) convolution
/// with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    w: usize,
    b: usize,
    geom: ConvGeom,
    planar: bool,
}

impl Conv {
    /// Registers `name.w` and `name.b`. Weights are He-normal with
    /// `std = gain * sqrt(2 / fan_in)`; biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        geom: ConvGeom,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(kernel.len() == 2 || kernel.len() == 3, "kernel must be 2D or 3D");
        let fan_in = cin * kernel.iter().product::<usize>();
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(kernel);
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let w = params.add(format!("{name}.w"), Tensor::randn(&shape, std, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv {
            w,
            b,
            geom,
            planar: kernel.len() == 2,
        }
    }

    /// Same-size 3x3 (or 3x3x3) convolution.
    pub fn same<T: Real, R: Rng + ?Sized>(
        params: &mut Params<T>,
        name: &str,
        cin: usize,
        cout: usize,
        planar: bool,
        rng: &mut R,
    ) -> Self {
        let kernel: &[usize] = if planar { &[3, 3] } else { &[3, 3, 3] };
        let geom = if planar { ConvGeom::spatial(1, 1) } else { ConvGeom::uniform(1, 1) };
        Self::new(params, name, cin, cout, kernel, geom, 1.0, rng)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (p.vars[self.w], p.vars[self.b]);
        if self.planar {
            g.conv2d(x, w, b, self.geom.stride[1], self.geom.padding[1])
        } else {
            g.conv3d(x, w, b, self.geom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_rejects_wrong_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::<f32>::new();
        Conv::same(&mut p, "c", 2, 3, true, &mut rng);
        let mut wrong: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        wrong[1].0 = "other.b".into();
        assert_eq!(p.clone().load(wrong).unwrap_err().class(), "config");
        let good: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        p.load(good).unwrap();
    }
}
