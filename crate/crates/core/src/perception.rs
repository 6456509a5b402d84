//! Activation model and saliency model.
//!
//! The activation model is a four-block CNN mapping a `[1×64×64]` image to a
//! `[64×8×8]` volume (3×3 kernels, stride 2 on the first three blocks). The
//! saliency map is the per-location sum of squared activations, normalized to
//! `[0, 1]`.

use rand::Rng;

use crate::data::{batch_iter, Scene};
use crate::error::{Error, Result};
use crate::ndgrad::{Adam, AdamConfig, GradBuffer, ParamId, ParamSet, Session, Tensor, Var};
use crate::parallel;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub in_channels: usize,
    pub input_size: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            in_channels: 1,
            input_size: 64,
            widths: vec![16, 32, 64, 64],
            strides: vec![2, 2, 2, 1],
        }
    }
}

impl ExtractorConfig {
    pub fn out_channels(&self) -> usize {
        *self.widths.last().expect("at least one block")
    }

    /// Spatial side of the output volume.
    pub fn grid(&self) -> usize {
        self.strides
            .iter()
            .fold(self.input_size, |s, &st| (s + 2 - 3) / st + 1)
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    kernels: ParamId,
    bias: ParamId,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct Extractor {
    pub config: ExtractorConfig,
    blocks: Vec<ConvBlock>,
}

impl Extractor {
    pub fn new(config: ExtractorConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.widths.len() != config.strides.len() {
            return Err(Error::Config("extractor widths and strides must pair up".into()));
        }
        let mut c_in = config.in_channels;
        let mut blocks = Vec::new();
        for (i, (&w, &stride)) in config.widths.iter().zip(&config.strides).enumerate() {
            let fan_in = c_in * 9;
            let kernels = params.insert_scaled(
                format!("extractor.conv{i}.kernels"),
                &[w, c_in, 3, 3],
                fan_in,
                2f64.sqrt(),
                rng,
            );
            let bias = params.insert_zeros(format!("extractor.conv{i}.bias"), &[w]);
            blocks.push(ConvBlock {
                kernels,
                bias,
                stride,
            });
            c_in = w;
        }
        Ok(Extractor { config, blocks })
    }

    /// Parameters owned by the extractor, in creation order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| [b.kernels, b.bias]).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        let want = [c.in_channels, c.input_size, c.input_size];
        if shape != want {
            return Err(Error::dim("activation_forward", shape, &want));
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, image: Var) -> Result<Var> {
        self.check_input(s.graph.shape(image))?;
        let mut x = image;
        for b in &self.blocks {
            let k = s.param(b.kernels);
            let bias = s.param(b.bias);
            let y = s.graph.conv2d(x, k, b.stride, 1)?;
            let y = s.graph.channel_bias(y, bias)?;
            x = s.graph.relu(y);
        }
        Ok(x)
    }
}

/// Activation volume of one image under frozen weights.
pub fn activation_forward(extractor: &Extractor, params: &ParamSet, image: &Tensor) -> Result<Tensor> {
    extractor.check_input(image.shape())?;
    let mut s = Session::inference(params);
    let x = s.graph.constant(image.clone());
    let v = extractor.forward(&mut s, x)?;
    Ok(s.graph.value(v).clone())
}

/// `S[i,j] = Σ_c V[c,i,j]²`, before normalization.
pub fn saliency_energy(volume: &Tensor) -> Result<Tensor> {
    let s = volume.shape();
    if s.len() != 3 {
        return Err(Error::dim("saliency_reduce", s, &[0, 0, 0]));
    }
    let plane = s[1] * s[2];
    let mut out = vec![0.0; plane];
    for chunk in volume.data().chunks(plane) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v * v;
        }
    }
    Tensor::new(vec![s[1], s[2]], out)
}

/// Min-max normalization to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_map(map: &Tensor) -> Tensor {
    let (lo, hi) = (map.min(), map.max());
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        map.map(|v| (v - lo) / range)
    } else {
        Tensor::zeros(map.shape())
    }
}

pub fn saliency_reduce(volume: &Tensor) -> Result<Tensor> {
    Ok(normalize_map(&saliency_energy(volume)?))
}

/// Global-average-pool plus linear classifier, used only while pretraining.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    weight: ParamId,
    bias: ParamId,
}

impl ClassifierHead {
    pub fn new(params: &mut ParamSet, channels: usize, classes: usize, rng: &mut impl Rng) -> Self {
        ClassifierHead {
            weight: params.insert_scaled("pretrain_head.weight", &[classes, channels], channels, 1.0, rng),
            bias: params.insert_zeros("pretrain_head.bias", &[classes]),
        }
    }

    /// Class logits for a `[C×h×w]` volume.
    pub fn forward(&self, s: &mut Session, volume: Var) -> Result<Var> {
        let shape = s.graph.shape(volume).to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let flat = s.graph.reshape(volume, &[c, hw])?;
        let avg = s.graph.constant(Tensor::full(&[hw, 1], 1.0 / hw as f64));
        let pooled = s.graph.matmul(flat, avg)?;
        let pooled = s.graph.reshape(pooled, &[c])?;
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.linear(w, pooled, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub classes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// Held-out single-object accuracy after the last epoch.
    pub accuracy: f64,
    pub epoch_losses: Vec<f64>,
    /// Held-out predictions, aligned with the held-out scenes.
    pub predictions: Vec<usize>,
}

fn example_grad(
    extractor: &Extractor,
    head: &ClassifierHead,
    params: &ParamSet,
    scene: &Scene,
) -> Result<(GradBuffer, f64)> {
    let mut s = Session::train(params);
    let x = s.graph.constant(scene.image.clone());
    let v = extractor.forward(&mut s, x)?;
    let logits = head.forward(&mut s, v)?;
    let logp = s.graph.log_softmax(logits)?;
    let target = s.graph.pick(logp, scene.labels[0])?;
    let loss = s.graph.scale(target, -1.0);
    let value = s.graph.value(loss).item();
    Ok((s.backward(loss)?, value))
}

/// Predicted class of each scene under the pretraining head.
pub fn classify_single(
    extractor: &Extractor,
    head: &ClassifierHead,
    params: &ParamSet,
    scenes: &[Scene],
) -> Result<Vec<usize>> {
    parallel::map(scenes, |scene| {
        let mut s = Session::inference(params);
        let x = s.graph.constant(scene.image.clone());
        let v = extractor.forward(&mut s, x)?;
        let logits = head.forward(&mut s, v)?;
        Ok(s.graph.value(logits).argmax())
    })
    .into_iter()
    .collect()
}

/// Trains the extractor on single-object scenes through a throwaway
/// pooled-linear head. Only extractor weights in `params` are updated.
pub fn pretrain_extractor(
    extractor: &Extractor,
    params: &mut ParamSet,
    train: &[Scene],
    held_out: &[Scene],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(Error::usage("pretraining needs at least one scene"));
    }
    if let Some(bad) = train.iter().chain(held_out).find(|s| s.labels.len() != 1) {
        return Err(Error::usage(format!(
            "pretraining scenes must hold one object, found {}",
            bad.labels.len()
        )));
    }
    let mut work = params.clone();
    let mut init_rng = rng::keyed(&[rng::domain::INIT, cfg.seed, 0xEAD]);
    let head = ClassifierHead::new(&mut work, extractor.config.out_channels(), cfg.classes, &mut init_rng);
    let mut opt = Adam::new(
        &work,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::keyed(&[rng::domain::SHUFFLE, cfg.seed, epoch as u64, 0xEAD]);
        let mut total = 0.0;
        for batch in batch_iter(train.len(), cfg.batch_size, &mut shuffle)? {
            let results = parallel::map(&batch, |&i| example_grad(extractor, &head, &work, &train[i]));
            let mut acc = GradBuffer::new(&work);
            for r in results {
                let (g, loss) = r?;
                acc.accumulate(&g);
                total += loss;
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(&mut work, &acc)?;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    let predictions = classify_single(extractor, &head, &work, held_out)?;
    let correct = predictions
        .iter()
        .zip(held_out)
        .filter(|(p, s)| **p == s.labels[0])
        .count();
    params.copy_prefix_from(&work);
    Ok(PretrainReport {
        accuracy: if held_out.is_empty() {
            0.0
        } else {
            correct as f64 / held_out.len() as f64
        },
        epoch_losses,
        predictions,
    })
}
