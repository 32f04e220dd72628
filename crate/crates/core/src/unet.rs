//! Same-padding U-Net for binary tile segmentation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, load_mask, ImageBuffer, MaskBuffer};
use crate::manifest::{resolve, DatasetManifest};
use crate::nn::{bce_loss, epoch_batches, stack_images, AdamHyper, LayerSpec, ModelParams, Tensor4, Trainer};
use crate::tiling::{crop, stitch, TileGrid, TileId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub input: usize,
    pub depth: usize,
    /// Channels of the first stage; each further stage doubles them.
    pub base_channels: usize,
    pub threshold: f32,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input: 128,
            depth: 4,
            base_channels: 16,
            threshold: 0.5,
        }
    }
}

/// Layer list plus the index of the last bottleneck layer.
pub fn unet_layers(config: &UNetConfig) -> Result<(Vec<LayerSpec>, usize)> {
    let UNetConfig {
        input,
        depth,
        base_channels: base,
        ..
    } = *config;
    if depth == 0 || base == 0 {
        return Err(Error::InvalidInput("depth and base channels must be positive".into()));
    }
    if input == 0 || input % (1 << depth) != 0 {
        return Err(Error::InvalidInput(format!(
            "input {input} is not divisible by 2^{depth}"
        )));
    }
    let mut layers = Vec::new();
    let double_conv = |layers: &mut Vec<LayerSpec>, cin: usize, cout: usize| {
        layers.push(LayerSpec::conv3x3(cin, cout));
        layers.push(LayerSpec::relu(cout));
        layers.push(LayerSpec::conv3x3(cout, cout));
        layers.push(LayerSpec::relu(cout));
    };
    let mut skips = Vec::with_capacity(depth);
    let mut ch = 1;
    for s in 0..depth {
        let c = base << s;
        double_conv(&mut layers, ch, c);
        skips.push((layers.len() - 1, c));
        layers.push(LayerSpec::maxpool2(c));
        ch = c;
    }
    double_conv(&mut layers, ch, ch * 2);
    let bottleneck = layers.len() - 1;
    ch *= 2;
    for &(skip, c) in skips.iter().rev() {
        layers.push(LayerSpec::upconv2(ch, ch / 2));
        layers.push(LayerSpec::concat(ch / 2, skip, c));
        double_conv(&mut layers, ch / 2 + c, c);
        ch = c;
    }
    layers.push(LayerSpec::conv1x1(ch, 1));
    layers.push(LayerSpec::sigmoid(1));
    Ok((layers, bottleneck))
}

pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<ModelParams<f32>> {
    let (layers, _) = unet_layers(config)?;
    let model = ModelParams::init(layers, seed)?;
    model.infer_shapes(config.input, config.input)?;
    Ok(model)
}

/// One training pair; the mask is stored as 0/1 floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageBuffer,
    pub target: ImageBuffer,
}

impl Sample {
    pub fn new(image: ImageBuffer, mask: &MaskBuffer) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::Dimension(format!(
                "image {}x{} vs mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        let target = ImageBuffer::new(
            mask.width(),
            mask.height(),
            mask.labels().iter().map(|&v| f32::from(v)).collect(),
        )?;
        Ok(Self { image, target })
    }
}

/// Loads every image/mask pair of a manifest, resolving paths against `base_dir`.
pub fn load_samples(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<Sample>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = load_image(resolve(base_dir, &e.image_path))?;
            let mask = load_mask(resolve(base_dir, &e.mask_path))?;
            Sample::new(image, &mask)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub threshold: f32,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            seed: 0,
            lr: 1e-3,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub train_loss: Vec<f32>,
    /// `None` for epochs without a validation set.
    pub val_loss: Vec<Option<f32>>,
    pub threshold: f32,
}

fn check_samples(samples: &[Sample], side: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        for img in [&s.image, &s.target] {
            if img.width() != side || img.height() != side {
                return Err(Error::Dimension(format!(
                    "sample {i} is {}x{}, expected {side}x{side}",
                    img.width(),
                    img.height()
                )));
            }
        }
    }
    Ok(())
}

fn check_threshold(t: f32) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold {t} outside (0, 1)")))
    }
}

fn batch_tensors(samples: &[Sample], idx: &[usize]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let x: Vec<&ImageBuffer> = idx.iter().map(|&i| &samples[i].image).collect();
    let y: Vec<&ImageBuffer> = idx.iter().map(|&i| &samples[i].target).collect();
    Ok((stack_images(&x)?, stack_images(&y)?))
}

/// Mean per-pixel BCE of the model over `samples`.
pub fn evaluate_loss(model: &ModelParams<f32>, samples: &[Sample], batch: usize) -> Result<f32> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let parts: Vec<Result<f64>> = idx
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let (x, y) = batch_tensors(samples, chunk)?;
            let p = model.forward(&x)?;
            Ok(f64::from(bce_loss(&p, &y)?) * chunk.len() as f64)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok((total / samples.len() as f64) as f32)
}

pub fn train_unet(
    model: ModelParams<f32>,
    train: &[Sample],
    val: &[Sample],
    params: &TrainParams,
) -> Result<(ModelParams<f32>, TrainRun)> {
    train_unet_with(model, train, val, params, |_, _, _| {})
}

/// As [`train_unet`], calling `on_epoch(epoch, train_loss, val_loss)` after each epoch.
pub fn train_unet_with(
    model: ModelParams<f32>,
    train: &[Sample],
    val: &[Sample],
    params: &TrainParams,
    mut on_epoch: impl FnMut(usize, f32, Option<f32>),
) -> Result<(ModelParams<f32>, TrainRun)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    check_threshold(params.threshold)?;
    let side = train[0].image.width();
    check_samples(train, side)?;
    check_samples(val, side)?;
    model.infer_shapes(side, side)?;
    let hyper = AdamHyper {
        lr: params.lr,
        ..AdamHyper::default()
    };
    let mut trainer = Trainer::new(model, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut run = TrainRun {
        epochs: params.epochs,
        batch_size: params.batch_size,
        seed: params.seed,
        lr: params.lr,
        train_loss: Vec::with_capacity(params.epochs),
        val_loss: Vec::with_capacity(params.epochs),
        threshold: params.threshold,
    };
    for epoch in 0..params.epochs {
        let mut total = 0.0f64;
        for batch in epoch_batches(train.len(), params.batch_size, &mut rng) {
            let (x, y) = batch_tensors(train, &batch)?;
            total += f64::from(trainer.step(&x, &y)?) * batch.len() as f64;
        }
        let tl = (total / train.len() as f64) as f32;
        let vl = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(trainer.model(), val, params.batch_size)?)
        };
        on_epoch(epoch + 1, tl, vl);
        run.train_loss.push(tl);
        run.val_loss.push(vl);
    }
    Ok((trainer.into_model(), run))
}

/// Loads both manifests relative to `base_dir` and trains.
pub fn train_unet_manifest(
    model: ModelParams<f32>,
    train: &DatasetManifest,
    val: &DatasetManifest,
    base_dir: &Path,
    params: &TrainParams,
) -> Result<(ModelParams<f32>, TrainRun)> {
    let t = load_samples(train, base_dir)?;
    let v = load_samples(val, base_dir)?;
    train_unet(model, &t, &v, params)
}

/// `mask = probability ≥ threshold`, elementwise.
pub fn binarize(prob: &ImageBuffer, threshold: f32) -> MaskBuffer {
    let labels = prob.pixels().iter().map(|&p| u8::from(p >= threshold)).collect();
    MaskBuffer::new(prob.width(), prob.height(), labels).expect("dims taken from a valid image")
}

pub fn predict_tile(
    model: &ModelParams<f32>,
    tile: &ImageBuffer,
    threshold: f32,
) -> Result<(ImageBuffer, MaskBuffer)> {
    check_threshold(threshold)?;
    let side = model_input_side(model, tile)?;
    let p = model.forward(&stack_images(&[tile])?)?;
    p.ensure_finite("prediction")?;
    let prob = ImageBuffer::new(side, side, p.into_values())?;
    let mask = binarize(&prob, threshold);
    Ok((prob, mask))
}

fn model_input_side(model: &ModelParams<f32>, tile: &ImageBuffer) -> Result<usize> {
    if tile.width() != tile.height() {
        return Err(Error::Dimension(format!(
            "tile is {}x{}, expected a square",
            tile.width(),
            tile.height()
        )));
    }
    let shapes = model.infer_shapes(tile.height(), tile.width())?;
    match shapes.last() {
        Some(&[h, w, 1]) if h == tile.height() && w == tile.width() => Ok(h),
        other => Err(Error::Shape(format!("model output {other:?} for a {}px tile", tile.width()))),
    }
}

/// Probability maps for many tiles, batched; identical to per-tile calls.
pub fn predict_tiles(
    model: &ModelParams<f32>,
    tiles: &BTreeMap<TileId, ImageBuffer>,
    batch: usize,
) -> Result<BTreeMap<TileId, ImageBuffer>> {
    let Some(first) = tiles.values().next() else {
        return Ok(BTreeMap::new());
    };
    let side = model_input_side(model, first)?;
    let items: Vec<(&TileId, &ImageBuffer)> = tiles.iter().collect();
    let parts: Vec<Result<Vec<(TileId, ImageBuffer)>>> = items
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let imgs: Vec<&ImageBuffer> = chunk.iter().map(|(_, t)| *t).collect();
            for t in &imgs {
                if t.width() != side || t.height() != side {
                    return Err(Error::Dimension("tiles differ in size".into()));
                }
            }
            let p = model.forward(&stack_images(&imgs)?)?;
            p.ensure_finite("prediction")?;
            chunk
                .iter()
                .enumerate()
                .map(|(b, (id, _))| Ok((**id, ImageBuffer::new(side, side, p.sample(b).to_vec())?)))
                .collect()
        })
        .collect();
    let mut out = BTreeMap::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Crop, predict every tile, binarize, stitch.
pub fn predict_full(
    model: &ModelParams<f32>,
    source: &ImageBuffer,
    grid: &TileGrid,
    threshold: f32,
) -> Result<MaskBuffer> {
    check_threshold(threshold)?;
    let tiles = crop(source, grid)?;
    let probs = predict_tiles(model, &tiles, 8)?;
    let masks: BTreeMap<TileId, MaskBuffer> =
        probs.iter().map(|(id, p)| (*id, binarize(p, threshold))).collect();
    stitch(&masks, grid)
}
