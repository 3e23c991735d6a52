use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, Conv3d, Conv3dSpec, GlobalAvgPool, Linear, Mode, Param, ParamVisitor, Relu, Scalar,
    Tensor,
};

/// 3D residual classifier configuration. `stage_blocks` defaults to the
/// 18-layer recipe (two basic blocks in each of four stages); shallower
/// layouts with the same block type are allowed for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub stage_blocks: Vec<usize>,
    /// `(T, H, W)` the model is built for.
    pub input_size: [usize; 3],
    pub pretrained_weights: Option<PathBuf>,
    /// Normalize with running statistics during training too.
    pub freeze_bn_stats: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            in_channels: 6,
            depth: 18,
            base_width: 64,
            stage_blocks: vec![2, 2, 2, 2],
            input_size: [20, 128, 224],
            pretrained_weights: None,
            freeze_bn_stats: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width 8, one block per stage: trains on a CPU in minutes.
    pub fn tiny(num_classes: usize, in_channels: usize, input_size: [usize; 3]) -> Self {
        Self { num_classes, in_channels, base_width: 8, stage_blocks: vec![1, 1, 1, 1], input_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != 18 {
            return Err(Error::Config(format!("unsupported backbone depth {} (only 18 is available)", self.depth)));
        }
        if self.in_channels != 3 && self.in_channels != 6 {
            return Err(Error::Config(format!("in_channels must be 3 or 6, got {}", self.in_channels)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.stage_blocks.is_empty()
            || self.stage_blocks.len() > 4
            || self.stage_blocks.iter().any(|&b| b == 0 || b > 2)
        {
            return Err(Error::Config(format!(
                "stage_blocks {:?} is not a 4-stage-or-fewer basic-block layout",
                self.stage_blocks
            )));
        }
        if self.base_width == 0 || self.input_size.contains(&0) {
            return Err(Error::Config("base width and input size must be positive".into()));
        }
        Ok(())
    }

    pub fn stem_spec(&self) -> Conv3dSpec {
        Conv3dSpec::new(self.in_channels, self.base_width, [3, 7, 7]).stride([1, 2, 2]).padding([1, 3, 3])
    }
}

#[derive(Debug, Clone)]
pub struct BasicBlock<S> {
    conv1: Conv3d<S>,
    bn1: BatchNorm<S>,
    relu1: Relu<S>,
    conv2: Conv3d<S>,
    bn2: BatchNorm<S>,
    shortcut: Option<(Conv3d<S>, BatchNorm<S>)>,
    relu_out: Relu<S>,
}

impl<S: Scalar> BasicBlock<S> {
    fn new(inputs: usize, outputs: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv3 = |i, o, s| Conv3dSpec::new(i, o, [3, 3, 3]).stride([s; 3]).padding([1; 3]);
        let shortcut = (stride != 1 || inputs != outputs).then(|| {
            (Conv3d::new(Conv3dSpec::new(inputs, outputs, [1, 1, 1]).stride([stride; 3]), rng), BatchNorm::new(outputs))
        });
        Self {
            conv1: Conv3d::new(conv3(inputs, outputs, stride), rng),
            bn1: BatchNorm::new(outputs),
            relu1: Relu::new(),
            conv2: Conv3d::new(conv3(outputs, outputs, 1), rng),
            bn2: BatchNorm::new(outputs),
            shortcut,
            relu_out: Relu::new(),
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.bn1.frozen = frozen;
        self.bn2.frozen = frozen;
        if let Some((_, bn)) = self.shortcut.as_mut() {
            bn.frozen = frozen;
        }
    }

    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let h = self.conv1.forward(x, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(h, mode);
        let h = self.conv2.forward(&h, mode)?;
        let mut h = self.bn2.forward(&h, mode)?;
        match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(x, mode)?;
                h.add_assign(&bn.forward(&s, mode)?);
            }
            None => h.add_assign(x),
        }
        Ok(self.relu_out.forward(h, mode))
    }

    fn backward(&mut self, dy: Tensor<S>) -> Result<Tensor<S>> {
        let d_sum = self.relu_out.backward(dy)?;
        let d = self.bn2.backward(&d_sum)?;
        let d = self.conv2.backward(&d)?.expect("inner conv keeps input gradients");
        let d = self.relu1.backward(d)?;
        let d = self.bn1.backward(&d)?;
        let mut dx = self.conv1.backward(&d)?.expect("inner conv keeps input gradients");
        match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let ds = bn.backward(&d_sum)?;
                dx.add_assign(&conv.backward(&ds)?.expect("shortcut conv keeps input gradients"));
            }
            None => dx.add_assign(&d_sum),
        }
        Ok(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = self.shortcut.as_mut() {
            conv.visit_params(&format!("{prefix}.downsample.conv"), f);
            bn.visit_params(&format!("{prefix}.downsample.bn"), f);
        }
    }
}

/// 3D residual network: `3x7x7` stem (stride `1x2x2`), basic-block stages
/// doubling in width and halving resolution after the first, global
/// spatio-temporal average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct ResNet3d<S> {
    config: ModelConfig,
    stem: Conv3d<S>,
    stem_bn: BatchNorm<S>,
    stem_relu: Relu<S>,
    stages: Vec<Vec<BasicBlock<S>>>,
    pool: GlobalAvgPool,
    fc: Linear<S>,
}

/// Builds the backbone with seeded He-normal initialization.
pub fn build_backbone<S: Scalar>(config: &ModelConfig) -> Result<ResNet3d<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut stem = Conv3d::new(config.stem_spec(), &mut rng);
    stem.input_grad = false;
    let mut stages = Vec::new();
    let mut width = config.base_width;
    let mut inputs = config.base_width;
    for (i, &blocks) in config.stage_blocks.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        let mut stage = Vec::new();
        for b in 0..blocks {
            stage.push(BasicBlock::new(inputs, width, if b == 0 { stride } else { 1 }, &mut rng));
            inputs = width;
        }
        stages.push(stage);
        width *= 2;
    }
    let fc = Linear::new(inputs, config.num_classes, &mut rng);
    let mut net = ResNet3d {
        config: config.clone(),
        stem,
        stem_bn: BatchNorm::new(config.base_width),
        stem_relu: Relu::new(),
        stages,
        pool: GlobalAvgPool::new(),
        fc,
    };
    net.set_frozen_bn(config.freeze_bn_stats);
    Ok(net)
}

impl<S: Scalar> ResNet3d<S> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stem(&self) -> &Conv3d<S> {
        &self.stem
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        self.config.freeze_bn_stats = frozen;
        self.stem_bn.frozen = frozen;
        self.stages.iter_mut().flatten().for_each(|b| b.set_frozen(frozen));
    }

    /// Swaps in a new stem convolution (e.g. one produced by [`adapt_stem`]).
    pub fn replace_stem(&mut self, stem: Conv3d<S>) -> Result<()> {
        if stem.spec.out_channels != self.config.base_width || stem.spec.kernel != [3, 7, 7] {
            return Err(Error::Shape(format!("stem {:?} does not fit this backbone", stem.spec)));
        }
        self.config.in_channels = stem.spec.in_channels;
        self.stem = stem;
        self.stem.input_grad = false;
        Ok(())
    }

    /// `[B, C, T, H, W]` to `[B, G]` logits.
    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let h = self.stem_features(x, mode)?;
        let mut h = self.stem_relu.forward(h, mode);
        for block in self.stages.iter_mut().flatten() {
            h = block.forward(&h, mode)?;
        }
        let pooled = self.pool.forward(&h, mode)?;
        self.fc.forward(&pooled, mode)
    }

    /// Stem convolution followed by its normalization, before the activation.
    pub fn stem_features(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let h = self.stem.forward(x, mode)?;
        self.stem_bn.forward(&h, mode)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<S>) -> Result<()> {
        let d = self.fc.backward(grad_logits)?;
        let mut d = self.pool.backward(&d)?;
        for block in self.stages.iter_mut().flatten().rev() {
            d = block.backward(d)?;
        }
        let d = self.stem_relu.backward(d)?;
        let d = self.stem_bn.backward(&d)?;
        self.stem.backward(&d)?;
        Ok(())
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_, S>) {
        self.stem.visit_params("stem.conv", f);
        self.stem_bn.visit_params("stem.bn", f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit_params(&format!("layer{}.{j}", i + 1), f);
            }
        }
        self.fc.visit_params("fc", f);
    }
}

/// Widens a pretrained 3-channel stem to 6 input channels by copying its
/// filters onto the new channels: `W' = [W | W]` along the input axis.
pub fn adapt_stem<S: Scalar>(stem: &Conv3d<S>) -> Result<Conv3d<S>> {
    let spec = stem.spec;
    if spec.in_channels != 3 {
        return Err(Error::Shape(format!("stem adaptation needs a 3-channel stem, got {}", spec.in_channels)));
    }
    let per_out = spec.fan_in();
    let mut value = Vec::with_capacity(2 * stem.weight.value.len());
    for filter in stem.weight.value.chunks_exact(per_out) {
        value.extend_from_slice(filter);
        value.extend_from_slice(filter);
    }
    let new_spec = Conv3dSpec { in_channels: 6, ..spec };
    let [kt, kh, kw] = spec.kernel;
    let mut weight = Param::new(&[spec.out_channels, 6, kt, kh, kw], value);
    weight.trainable = stem.weight.trainable;
    Conv3d::from_weights(new_spec, weight, stem.bias.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_cross_entropy;
    use rand::Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn head_emits_one_logit_per_class() {
        let cfg = ModelConfig::tiny(8, 6, [4, 32, 48]);
        let mut net = build_backbone::<f32>(&cfg).unwrap();
        let y = net.forward(&random_input(&[2, 6, 4, 32, 48], 1), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 8]);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn full_width_layout_builds() {
        let net = build_backbone::<f32>(&ModelConfig::default()).unwrap();
        let mut n = 0usize;
        let mut net = net;
        net.visit_params(&mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        // the 18-layer 3D residual network with a 6-channel stem and 8 classes
        assert!(n > 33_000_000 && n < 34_000_000, "{n}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(build_backbone::<f32>(&ModelConfig { num_classes: 1, ..ModelConfig::default() }).is_err());
        assert!(build_backbone::<f32>(&ModelConfig { depth: 34, ..ModelConfig::default() }).is_err());
        assert!(build_backbone::<f32>(&ModelConfig { in_channels: 4, ..ModelConfig::default() }).is_err());
    }

    #[test]
    fn adapted_stem_duplicates_filters() {
        let cfg = ModelConfig::tiny(3, 3, [4, 16, 16]);
        let net = build_backbone::<f32>(&cfg).unwrap();
        let adapted = adapt_stem(net.stem()).unwrap();
        let w = &adapted.weight.value;
        let per = 3 * 3 * 7 * 7;
        for o in 0..cfg.base_width {
            let f = &w[o * 2 * per..(o + 1) * 2 * per];
            assert_eq!(&f[..per], &f[per..]);
            assert_eq!(&f[..per], &net.stem().weight.value[o * per..(o + 1) * per]);
        }
        assert_eq!(adapt_stem(net.stem()).unwrap().weight, adapted.weight);
        assert!(adapt_stem(&adapted).is_err());
    }

    #[test]
    fn training_step_reduces_loss_on_a_fixed_batch() {
        let cfg = ModelConfig { stage_blocks: vec![1, 1], base_width: 4, ..ModelConfig::tiny(3, 6, [4, 16, 16]) };
        let mut net = build_backbone::<f32>(&cfg).unwrap();
        let x = random_input(&[3, 6, 4, 16, 16], 9);
        let labels = [0, 1, 2];
        let mut adam = crate::nn::Adam::new(Default::default());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..30 {
            let logits = net.forward(&x, Mode::Train).unwrap();
            let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
            first.get_or_insert(loss);
            last = loss;
            net.backward(&grad).unwrap();
            adam.step(1e-2, |f| net.visit_params(f));
        }
        assert!(last < 0.5 * first.unwrap(), "{first:?} -> {last}");
    }

    #[test]
    fn zero_pose_channels_reproduce_the_rgb_stem() {
        let cfg = ModelConfig::tiny(3, 3, [4, 16, 24]);
        let mut rgb = build_backbone::<f32>(&cfg).unwrap();
        let mut fused = rgb.clone();
        fused.replace_stem(adapt_stem(rgb.stem()).unwrap()).unwrap();
        let x3 = random_input(&[2, 3, 4, 16, 24], 4);
        let mut x6 = vec![0.0f32; 2 * 6 * 4 * 16 * 24];
        let per = 3 * 4 * 16 * 24;
        for b in 0..2 {
            x6[b * 2 * per..b * 2 * per + per].copy_from_slice(&x3.data()[b * per..(b + 1) * per]);
        }
        let x6 = Tensor::from_vec(&[2, 6, 4, 16, 24], x6).unwrap();
        let a = rgb.stem_features(&x3, Mode::Eval).unwrap();
        let b = fused.stem_features(&x6, Mode::Eval).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5, "{diff}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        use crate::nn::testutil::rel_err;
        let base = ModelConfig { base_width: 4, stage_blocks: vec![1, 1], ..ModelConfig::tiny(3, 6, [8, 16, 16]) };
        let x: Tensor<f64> = random_input(&[2, 6, 8, 16, 16], 5).cast();
        let labels = [0, 2];
        for frozen in [true, false] {
            let mut net = build_backbone::<f64>(&ModelConfig { freeze_bn_stats: frozen, ..base.clone() }).unwrap();
            let loss = |net: &mut ResNet3d<f64>| {
                let logits = net.forward(&x, Mode::Train).unwrap();
                softmax_cross_entropy(&logits, &labels).unwrap()
            };
            let (_, grad) = loss(&mut net);
            net.backward(&grad).unwrap();
            let mut params = Vec::new();
            net.visit_params(&mut |name, p| {
                if p.trainable {
                    params.push((name.to_string(), p.value.len()))
                }
            });
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..24 {
                let (name, len) = params[rng.random_range(0..params.len())].clone();
                let idx = rng.random_range(0..len);
                let mut analytic = 0.0;
                net.visit_params(&mut |n, p| {
                    if n == name {
                        analytic = p.grad[idx]
                    }
                });
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    probe.visit_params(&mut |n, p| {
                        if n == name {
                            p.value[idx] += delta
                        }
                    });
                    loss(&mut probe).0
                };
                // small enough that no ReLU changes state
                let numeric = (eval(1e-6) - eval(-1e-6)) / 2e-6;
                assert!(
                    rel_err(analytic, numeric) <= 1e-4 || (analytic - numeric).abs() < 1e-9,
                    "frozen={frozen} {name}[{idx}]: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }
}
