use super::{join, Mode, Param, ParamVisitor, Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch normalization over `[B, C, ...]` activations.
#[derive(Debug, Clone)]
pub struct BatchNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
    pub momentum: f64,
    pub eps: f64,
    /// Normalize with running statistics even while training.
    pub frozen: bool,
    cache: Option<Cache<S>>,
}

#[derive(Debug, Clone)]
struct Cache<S> {
    x_hat: Tensor<S>,
    inv_std: Vec<S>,
    batch_stats: bool,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], S::one()),
            beta: Param::filled(&[channels], S::zero()),
            running_mean: Param::buffer(&[channels], S::zero()),
            running_var: Param::buffer(&[channels], S::one()),
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() < 2 || shape[1] != self.channels() {
            return Err(Error::Shape(format!("batch norm over {} channels got {shape:?}", self.channels())));
        }
        Ok((shape[0], shape[2..].iter().product()))
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let (batch, inner) = self.layout(x.shape())?;
        let c = self.channels();
        let use_batch = mode == Mode::Train && !self.frozen;
        let eps = S::of_f64(self.eps);
        let mut mean = self.running_mean.value.clone();
        let mut var = self.running_var.value.clone();
        if use_batch {
            let n = batch * inner;
            if n < 2 {
                return Err(Error::Shape("batch norm needs at least two values per channel to train".into()));
            }
            let nf = S::of_f64(n as f64);
            let m = S::of_f64(self.momentum);
            for ch in 0..c {
                let chunks = (0..batch).map(|b| &x.data()[(b * c + ch) * inner..][..inner]);
                let mu = chunks.clone().flat_map(|s| s.iter().copied()).sum::<S>() / nf;
                let v = chunks.flat_map(|s| s.iter()).map(|&v| (v - mu) * (v - mu)).sum::<S>() / nf;
                mean[ch] = mu;
                var[ch] = v;
                let unbiased = v * nf / S::of_f64((n - 1) as f64);
                let rm = &mut self.running_mean.value[ch];
                *rm = (S::one() - m) * *rm + m * mu;
                let rv = &mut self.running_var.value[ch];
                *rv = (S::one() - m) * *rv + m * unbiased;
            }
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut x_hat = x.clone();
        for b in 0..batch {
            for ch in 0..c {
                let seg = &mut x_hat.data_mut()[(b * c + ch) * inner..][..inner];
                seg.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv_std[ch]);
            }
        }
        let mut y = x_hat.clone();
        for b in 0..batch {
            for ch in 0..c {
                let (g, be) = (self.gamma.value[ch], self.beta.value[ch]);
                let seg = &mut y.data_mut()[(b * c + ch) * inner..][..inner];
                seg.iter_mut().for_each(|v| *v = *v * g + be);
            }
        }
        self.cache = (mode == Mode::Train).then_some(Cache { x_hat, inv_std, batch_stats: use_batch });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput("batch norm backward without a training forward".into()))?;
        if dy.shape() != cache.x_hat.shape() {
            return Err(Error::Shape(format!("batch norm gradient {:?}", dy.shape())));
        }
        let (batch, inner) = self.layout(dy.shape())?;
        let c = self.channels();
        let nf = S::of_f64((batch * inner) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let idx = |b: usize| (b * c + ch) * inner;
            let mut sum_dy = S::zero();
            let mut sum_dy_xhat = S::zero();
            for b in 0..batch {
                let d = &dy.data()[idx(b)..][..inner];
                let xh = &cache.x_hat.data()[idx(b)..][..inner];
                for (dv, xv) in d.iter().zip(xh) {
                    sum_dy += *dv;
                    sum_dy_xhat += *dv * *xv;
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for b in 0..batch {
                let d = &dy.data()[idx(b)..][..inner];
                let xh = &cache.x_hat.data()[idx(b)..][..inner];
                let out = &mut dx.data_mut()[idx(b)..][..inner];
                if cache.batch_stats {
                    let k = scale / nf;
                    for ((o, dv), xv) in out.iter_mut().zip(d).zip(xh) {
                        *o = k * (nf * *dv - sum_dy - *xv * sum_dy_xhat);
                    }
                } else {
                    for (o, dv) in out.iter_mut().zip(d) {
                        *o = scale * *dv;
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
