use rand::Rng;

use super::{gemm, join, MatRef, Mode, Param, ParamVisitor, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Relu<S> {
    output: Option<Tensor<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, mut x: Tensor<S>, mode: Mode) -> Tensor<S> {
        x.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
        if mode == Mode::Train {
            self.output = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut dy: Tensor<S>) -> Result<Tensor<S>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::InvalidInput("relu backward without a training forward".into()))?;
        for (d, v) in dy.data_mut().iter_mut().zip(y.data()) {
            if *v <= S::zero() {
                *d = S::zero();
            }
        }
        Ok(dy)
    }
}

/// Averages everything after the channel axis: `[B, C, ...] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { input_shape: None }
    }

    pub fn forward<S: Scalar>(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() < 3 {
            return Err(Error::Shape(format!("global pooling needs [B, C, ...], got {shape:?}")));
        }
        let inner: usize = shape[2..].iter().product();
        let n = S::of_f64(inner as f64);
        let data = x.data().chunks_exact(inner).map(|c| c.iter().copied().sum::<S>() / n).collect();
        if mode == Mode::Train {
            self.input_shape = Some(shape.to_vec());
        }
        Tensor::from_vec(&shape[..2], data)
    }

    pub fn backward<S: Scalar>(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::InvalidInput("pool backward without a training forward".into()))?;
        let inner: usize = shape[2..].iter().product();
        let n = S::of_f64(inner as f64);
        let mut dx = Vec::with_capacity(dy.len() * inner);
        for &g in dy.data() {
            dx.extend(std::iter::repeat_n(g / n, inner));
        }
        Tensor::from_vec(&shape, dx)
    }
}

/// Fully connected layer, `y = x W^T + b` with `W` of shape `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::fan_in_uniform(&[outputs, inputs], inputs, rng),
            bias: Param::fan_in_uniform(&[outputs], inputs, rng),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let (i, o) = (self.inputs(), self.outputs());
        if x.shape().len() != 2 || x.shape()[1] != i {
            return Err(Error::Shape(format!("linear layer expects [B, {i}], got {:?}", x.shape())));
        }
        let b = x.shape()[0];
        let mut y = Tensor::zeros(&[b, o]);
        for row in y.data_mut().chunks_exact_mut(o) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            S::one(),
            MatRef::row_major(x.data(), b, i),
            MatRef::transposed(&self.weight.value, o, i),
            S::one(),
            y.data_mut(),
            o,
        );
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::InvalidInput("linear backward without a training forward".into()))?;
        let (i, o) = (self.inputs(), self.outputs());
        let b = x.shape()[0];
        if dy.shape() != [b, o] {
            return Err(Error::Shape(format!("linear output gradient {:?}", dy.shape())));
        }
        gemm(
            S::one(),
            MatRef::transposed(dy.data(), b, o),
            MatRef::row_major(x.data(), b, i),
            S::one(),
            &mut self.weight.grad,
            i,
        );
        for row in dy.data().chunks_exact(o) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += *d;
            }
        }
        let mut dx = Tensor::zeros(&[b, i]);
        gemm(
            S::one(),
            MatRef::row_major(dy.data(), b, o),
            MatRef::row_major(&self.weight.value, o, i),
            S::zero(),
            dx.data_mut(),
            i,
        );
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
