use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::keypoints::{KeypointTensor, COORDS_PER_POSE, DEFAULT_MAX_PERSONS};
use crate::error::{Error, Result};
use crate::nn::{Conv3d, Conv3dSpec, GlobalAvgPool, Linear, Mode, ParamVisitor, Relu, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub num_classes: usize,
    pub max_persons: usize,
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { num_classes: 8, max_persons: DEFAULT_MAX_PERSONS, hidden: 64, init_seed: 0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.max_persons == 0 || self.hidden == 0 {
            return Err(Error::Config("max_persons and hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Batched keypoint input: coordinates `[B, N, 34, T]` and mask `[B, N, T]`.
#[derive(Debug, Clone)]
pub struct KeypointBatch<S> {
    pub coords: Tensor<S>,
    pub mask: Vec<S>,
    pub batch: usize,
    pub persons: usize,
    pub frames: usize,
}

impl<S: Scalar> KeypointBatch<S> {
    pub fn stack(items: &[KeypointTensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidInput("empty keypoint batch".into()))?;
        let (persons, frames) = (first.max_persons, first.frames);
        if items.iter().any(|k| k.max_persons != persons || k.frames != frames) {
            return Err(Error::Shape("keypoint tensors in a batch must share N_max and T".into()));
        }
        let coords: Vec<S> = items.iter().flat_map(|k| k.coords.iter().map(|&v| S::of_f64(v as f64))).collect();
        let mask = items.iter().flat_map(|k| k.mask.iter().map(|&v| S::of_f64(v as f64))).collect();
        Ok(Self {
            coords: Tensor::from_vec(&[items.len(), persons, COORDS_PER_POSE, frames], coords)?,
            mask,
            batch: items.len(),
            persons,
            frames,
        })
    }

    /// Coordinates as a `[B*N, 34, T, 1, 1]` volume so per-person layers can
    /// reuse the 3D convolution.
    fn per_person(&self) -> Result<Tensor<S>> {
        self.coords.clone().reshape(&[self.batch * self.persons, COORDS_PER_POSE, self.frames, 1, 1])
    }
}

fn temporal<S: Scalar>(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Conv3d<S> {
    Conv3d::new(Conv3dSpec::new(inputs, outputs, [3, 1, 1]).padding([1, 0, 0]).with_bias(), rng)
}

/// Joint-level early fusion: every person's pose is embedded with a shared
/// per-frame MLP, embeddings of present persons are summed into one group
/// feature per frame, and temporal convolutions classify the sequence.
#[derive(Debug, Clone)]
pub struct EarlyFusionNet<S> {
    config: BaselineConfig,
    embed1: Conv3d<S>,
    relu1: Relu<S>,
    embed2: Conv3d<S>,
    relu2: Relu<S>,
    temporal1: Conv3d<S>,
    relu3: Relu<S>,
    temporal2: Conv3d<S>,
    relu4: Relu<S>,
    pool: GlobalAvgPool,
    fc: Linear<S>,
    mask: Vec<S>,
    dims: (usize, usize, usize),
}

impl<S: Scalar> EarlyFusionNet<S> {
    pub fn new(config: &BaselineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let e = config.hidden;
        let point = |i, o, rng: &mut ChaCha8Rng| Conv3d::new(Conv3dSpec::new(i, o, [1, 1, 1]).with_bias(), rng);
        let mut embed1 = point(COORDS_PER_POSE, e, &mut rng);
        embed1.input_grad = false;
        Ok(Self {
            config: config.clone(),
            embed2: point(e, e, &mut rng),
            embed1,
            relu1: Relu::new(),
            relu2: Relu::new(),
            temporal1: temporal(e, e, &mut rng),
            relu3: Relu::new(),
            temporal2: temporal(e, e, &mut rng),
            relu4: Relu::new(),
            pool: GlobalAvgPool::new(),
            fc: Linear::new(e, config.num_classes, &mut rng),
            mask: Vec::new(),
            dims: (0, 0, 0),
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &KeypointBatch<S>, mode: Mode) -> Result<Tensor<S>> {
        let (b, n, t, e) = (x.batch, x.persons, x.frames, self.config.hidden);
        let h = self.embed1.forward(&x.per_person()?, mode)?;
        let h = self.relu1.forward(h, mode);
        let h = self.embed2.forward(&h, mode)?;
        let h = self.relu2.forward(h, mode);
        // masked sum over persons: [B*N, E, T] -> [B, E, T]
        let mut group = vec![S::zero(); b * e * t];
        for bi in 0..b {
            for p in 0..n {
                let m = &x.mask[(bi * n + p) * t..][..t];
                let src = &h.data()[(bi * n + p) * e * t..][..e * t];
                let dst = &mut group[bi * e * t..][..e * t];
                for (d, s) in dst.chunks_exact_mut(t).zip(src.chunks_exact(t)) {
                    for ((d, &s), &m) in d.iter_mut().zip(s).zip(m) {
                        *d += s * m;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.mask = x.mask.clone();
            self.dims = (b, n, t);
        }
        let g = Tensor::from_vec(&[b, e, t, 1, 1], group)?;
        let g = self.temporal1.forward(&g, mode)?;
        let g = self.relu3.forward(g, mode);
        let g = self.temporal2.forward(&g, mode)?;
        let g = self.relu4.forward(g, mode);
        let pooled = self.pool.forward(&g, mode)?;
        self.fc.forward(&pooled, mode)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<S>) -> Result<()> {
        let (b, n, t) = self.dims;
        let e = self.config.hidden;
        let d = self.fc.backward(grad_logits)?;
        let d = self.pool.backward(&d)?;
        let d = self.relu4.backward(d)?;
        let d = self.temporal2.backward(&d)?.expect("temporal conv keeps input gradients");
        let d = self.relu3.backward(d)?;
        let dg = self.temporal1.backward(&d)?.expect("temporal conv keeps input gradients");
        let mut dh = vec![S::zero(); b * n * e * t];
        for bi in 0..b {
            let src = &dg.data()[bi * e * t..][..e * t];
            for p in 0..n {
                let m = &self.mask[(bi * n + p) * t..][..t];
                let dst = &mut dh[(bi * n + p) * e * t..][..e * t];
                for (d, s) in dst.chunks_exact_mut(t).zip(src.chunks_exact(t)) {
                    for ((d, &s), &m) in d.iter_mut().zip(s).zip(m) {
                        *d = s * m;
                    }
                }
            }
        }
        let d = self.relu2.backward(Tensor::from_vec(&[b * n, e, t, 1, 1], dh)?)?;
        let d = self.embed2.backward(&d)?.expect("embedding keeps input gradients");
        let d = self.relu1.backward(d)?;
        self.embed1.backward(&d)?;
        Ok(())
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_, S>) {
        self.embed1.visit_params("embed1", f);
        self.embed2.visit_params("embed2", f);
        self.temporal1.visit_params("temporal1", f);
        self.temporal2.visit_params("temporal2", f);
        self.fc.visit_params("fc", f);
    }
}

/// Person-level late fusion: each person's keypoint sequence is encoded
/// independently (temporal convolutions, a masked mean over the frames it is
/// present in, then a per-person dense layer); person features are averaged
/// into the group feature. A fragmented or switched track therefore becomes
/// two partial persons.
#[derive(Debug, Clone)]
pub struct LateFusionNet<S> {
    config: BaselineConfig,
    enc1: Conv3d<S>,
    relu1: Relu<S>,
    enc2: Conv3d<S>,
    relu2: Relu<S>,
    person: Linear<S>,
    relu3: Relu<S>,
    fc: Linear<S>,
    /// Per-(batch, person, frame) temporal pooling weight: mask / present frames.
    weights: Vec<S>,
    /// Per-(batch, person) fusion weight: 1 / present persons, 0 if absent.
    person_weights: Vec<S>,
    dims: (usize, usize, usize),
}

impl<S: Scalar> LateFusionNet<S> {
    pub fn new(config: &BaselineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let e = config.hidden;
        let mut enc1 = temporal(COORDS_PER_POSE, e, &mut rng);
        enc1.input_grad = false;
        Ok(Self {
            config: config.clone(),
            enc1,
            relu1: Relu::new(),
            enc2: temporal(e, e, &mut rng),
            relu2: Relu::new(),
            person: Linear::new(e, e, &mut rng),
            relu3: Relu::new(),
            fc: Linear::new(e, config.num_classes, &mut rng),
            weights: Vec::new(),
            person_weights: Vec::new(),
            dims: (0, 0, 0),
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    fn pooling_weights(x: &KeypointBatch<S>) -> (Vec<S>, Vec<S>) {
        let (b, n, t) = (x.batch, x.persons, x.frames);
        let mut w = vec![S::zero(); b * n * t];
        let mut pw = vec![S::zero(); b * n];
        for bi in 0..b {
            let rows = &x.mask[bi * n * t..][..n * t];
            let present = rows.chunks_exact(t).filter(|r| r.iter().any(|&m| m > S::zero())).count();
            if present == 0 {
                continue;
            }
            for (p, row) in rows.chunks_exact(t).enumerate() {
                let frames: S = row.iter().copied().sum();
                if frames > S::zero() {
                    pw[bi * n + p] = S::one() / S::of_f64(present as f64);
                    for (tt, &m) in row.iter().enumerate() {
                        w[(bi * n + p) * t + tt] = m / frames;
                    }
                }
            }
        }
        (w, pw)
    }

    pub fn forward(&mut self, x: &KeypointBatch<S>, mode: Mode) -> Result<Tensor<S>> {
        let (b, n, t, e) = (x.batch, x.persons, x.frames, self.config.hidden);
        let h = self.enc1.forward(&x.per_person()?, mode)?;
        let h = self.relu1.forward(h, mode);
        let h = self.enc2.forward(&h, mode)?;
        let h = self.relu2.forward(h, mode);
        let (weights, person_weights) = Self::pooling_weights(x);
        let mut pooled = vec![S::zero(); b * n * e];
        for (row, (src, w)) in pooled
            .chunks_exact_mut(e)
            .zip(h.data().chunks_exact(e * t).zip(weights.chunks_exact(t)))
        {
            for (dst, feat) in row.iter_mut().zip(src.chunks_exact(t)) {
                *dst = feat.iter().zip(w).map(|(&v, &w)| v * w).sum::<S>();
            }
        }
        let ph = self.person.forward(&Tensor::from_vec(&[b * n, e], pooled)?, mode)?;
        let ph = self.relu3.forward(ph, mode);
        let mut group = vec![S::zero(); b * e];
        for (i, (feat, &pw)) in ph.data().chunks_exact(e).zip(&person_weights).enumerate() {
            if pw == S::zero() {
                continue;
            }
            let g = &mut group[(i / n) * e..][..e];
            for (g, &v) in g.iter_mut().zip(feat) {
                *g += v * pw;
            }
        }
        if mode == Mode::Train {
            self.weights = weights;
            self.person_weights = person_weights;
            self.dims = (b, n, t);
        }
        self.fc.forward(&Tensor::from_vec(&[b, e], group)?, mode)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<S>) -> Result<()> {
        let (b, n, t) = self.dims;
        let e = self.config.hidden;
        let dg = self.fc.backward(grad_logits)?;
        let mut dph = vec![S::zero(); b * n * e];
        for (i, (row, &pw)) in dph.chunks_exact_mut(e).zip(&self.person_weights).enumerate() {
            for (d, &g) in row.iter_mut().zip(&dg.data()[(i / n) * e..][..e]) {
                *d = g * pw;
            }
        }
        let dph = self.relu3.backward(Tensor::from_vec(&[b * n, e], dph)?)?;
        let dpooled = self.person.backward(&dph)?;
        let mut dh = vec![S::zero(); b * n * e * t];
        for ((dst, w), dp) in dh
            .chunks_exact_mut(e * t)
            .zip(self.weights.chunks_exact(t))
            .zip(dpooled.data().chunks_exact(e))
        {
            for (row, &g) in dst.chunks_exact_mut(t).zip(dp) {
                for (d, &w) in row.iter_mut().zip(w) {
                    *d = g * w;
                }
            }
        }
        let d = self.relu2.backward(Tensor::from_vec(&[b * n, e, t, 1, 1], dh)?)?;
        let d = self.enc2.backward(&d)?.expect("encoder keeps input gradients");
        let d = self.relu1.backward(d)?;
        self.enc1.backward(&d)?;
        Ok(())
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_, S>) {
        self.enc1.visit_params("enc1", f);
        self.enc2.visit_params("enc2", f);
        self.person.visit_params("person", f);
        self.fc.visit_params("fc", f);
    }
}
