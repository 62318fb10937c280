use crate::error::{Error, Result};
use crate::tensor::kernels::{self, conv, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation implemented outside this module that still participates in
/// reverse-mode differentiation.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one gradient per input, `None` for inputs
    /// that are not differentiable.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Repeat {
        x: Var,
        axis: usize,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        planar: bool,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    GridSample {
        img: Var,
        coords: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Operation record for reverse-mode differentiation.
///
/// Records are appended in execution order, so every record's inputs precede
/// it. [`Graph::backward`] walks the record in reverse.
///
/// Gradients accumulate on leaves created with [`Graph::param`]: calling
/// `backward` twice without [`Graph::zero_grad`] doubles them.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            x.expect_same_shape(name, y)?;
            x.zip_map(y, f)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    /// Square root; its gradient at exactly zero is defined as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("axis {axis} range {start}..{} of {shape:?}", start + len),
            ));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Narrow { x, axis, start }, rg))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*xs.first().ok_or_else(|| Error::contract("concat of nothing"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let same_rank = s.len() == first.len();
            if !same_rank || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::dim("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let d = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Tile a size-1 axis `times` times, e.g. a `[B,1,H,W]` mask to `[B,3,H,W]`.
    pub fn repeat(&mut self, x: Var, axis: usize, times: usize) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        if axis >= shape.len() || shape[axis] != 1 {
            return Err(Error::dim(
                "repeat",
                format!("axis {axis} of {shape:?} must have size 1"),
            ));
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            for _ in 0..times {
                data.extend_from_slice(&src.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = times;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Repeat { x, axis }, rg))
    }

    /// Planar cross-correlation, `x: [B,C,H,W]`, `w: [K,C,kh,kw]`, `b: [K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        conv::check_2d(xv.shape(), wv.shape())?;
        let geom = ConvGeom::spatial(stride, padding);
        let (shape, data) = conv::forward_raw(
            "conv2d",
            xv,
            &conv::lift_2d(xv.shape()),
            wv,
            &conv::lift_2d(wv.shape()),
            bv,
            &geom,
        )?;
        let value = Tensor::new(&[shape[0], shape[1], shape[3], shape[4]], data)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                planar: true,
            },
            rg,
        ))
    }

    /// Volumetric cross-correlation, `x: [B,C,D,H,W]`, `w: [K,C,kd,kh,kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv3d_forward(self.value(x), self.value(w), self.value(b), &geom)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                planar: false,
            },
            rg,
        ))
    }

    /// 2x2 stride-2 max pooling over the two trailing axes only.
    pub fn maxpool_spatial(&mut self, x: Var) -> Result<Var> {
        let (value, argmax) = kernels::maxpool2x2(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Bilinear resize of the two trailing axes. Only `scale = 2` is supported.
    pub fn resize_bilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        if scale != 2 {
            return Err(Error::contract(format!("resize scale {scale} unsupported (only 2)")));
        }
        let value = kernels::upsample2x(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample(x), rg))
    }

    /// Bilinear, border-clamped sampling; see [`kernels::grid_sample`].
    pub fn grid_sample(&mut self, img: Var, coords: Var) -> Result<Var> {
        let value = kernels::grid_sample(self.value(img), self.value(coords))?;
        let rg = self.rg(img) || self.rg(coords);
        Ok(self.push(value, Op::GridSample { img, coords }, rg))
    }

    /// Record an externally computed `output = op(inputs)`.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], output: Tensor<T>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`, accumulating into the gradients of
    /// every [`Graph::param`] leaf the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss is not recorded on this graph"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
                continue;
            }
            for (v, gi) in self.vjp(i, &g)? {
                if !self.rg(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                out.push((*a, g.zip_map(val(*b), |g, y| g * y)?));
                out.push((*b, g.zip_map(val(*a), |g, x| g * x)?));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                out.push((*a, g.zip_map(bv, |g, y| g / y)?));
                let q = g.zip_map(&node.value, |g, q| g * q)?;
                out.push((*b, q.zip_map(bv, |gq, y| -gq / y)?));
            }
            Op::Scale(x, s) => out.push((*x, g.map(|v| v * *s))),
            Op::AddScalar(x) | Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                out.push((*x, g.clone().reshape(&shape)?));
            }
            Op::LeakyRelu(x, slope) => {
                out.push((
                    *x,
                    g.zip_map(val(*x), |g, v| if v > T::zero() { g } else { g * *slope })?,
                ));
            }
            Op::Sigmoid(x) => {
                out.push((*x, g.zip_map(&node.value, |g, s| g * s * (T::one() - s))?));
            }
            Op::Abs(x) => {
                out.push((*x, g.zip_map(val(*x), |g, v| g * v.signum_or_zero())?));
            }
            Op::Sqrt(x) => {
                let two = T::of(2.0);
                out.push((
                    *x,
                    g.zip_map(&node.value, |g, r| if r > T::zero() { g / (two * r) } else { T::zero() })?,
                ));
            }
            Op::Square(x) => {
                let two = T::of(2.0);
                out.push((*x, g.zip_map(val(*x), |g, v| two * g * v)?));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), g.item()))),
            Op::Mean(x) => {
                let xv = val(*x);
                out.push((*x, Tensor::full(xv.shape(), g.item() / T::of(xv.len() as f64))));
            }
            Op::Narrow { x, axis, start } => {
                let shape = val(*x).shape().to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    d[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, Tensor::new(&shape, d)?));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let shape = val(v).shape().to_vec();
                    let d = shape[*axis];
                    let mut data = Vec::with_capacity(val(v).len());
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[src..src + d * inner]);
                    }
                    offset += d;
                    out.push((v, Tensor::new(&shape, data)?));
                }
            }
            Op::Repeat { x, axis } => {
                let shape = val(*x).shape().to_vec();
                let (outer, times, inner) = split_axis(g.shape(), *axis);
                let mut d = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    for r in 0..times {
                        let src = &g.data()[(o * times + r) * inner..][..inner];
                        for (a, &b) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                out.push((*x, Tensor::new(&shape, d)?));
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                planar,
            } => {
                let (xv, wv) = (val(*x), val(*w));
                let (xs, ws) = if *planar {
                    (conv::lift_2d(xv.shape()), conv::lift_2d(wv.shape()))
                } else {
                    (xv.shape().to_vec(), wv.shape().to_vec())
                };
                let (dx, dw, db) =
                    conv::backward_raw(xv, &xs, wv, &ws, geom, g, self.rg(*x))?;
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(xv.shape(), dx)?));
                }
                out.push((*w, Tensor::new(wv.shape(), dw)?));
                out.push((*b, Tensor::new(&[wv.shape()[0]], db)?));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, kernels::maxpool2x2_backward(val(*x).shape(), argmax, g)));
            }
            Op::Upsample(x) => {
                out.push((*x, kernels::upsample2x_backward(val(*x).shape(), g)?));
            }
            Op::GridSample { img, coords } => {
                let (di, dc) = kernels::grid_sample_backward(val(*img), val(*coords), g)?;
                out.push((*img, di));
                out.push((*coords, dc));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&ins, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        out.push((v, gi));
                    }
                }
            }
        }
        Ok(out)
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Real> SignumOrZero for T {
    fn signum_or_zero(self) -> Self {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}
