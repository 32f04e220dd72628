use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{epoch_batches, stack_images, AdamHyper, LayerKind, LayerSpec, ModelParams, Tensor4, Trainer};
use crate::tiling::TileId;

/// Convolutional autoencoder layout and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub input: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            input: 128,
            encoder_channels: vec![16, 8, 8],
            decoder_channels: vec![8, 8, 16],
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

impl AutoencoderConfig {
    /// Code dims `(side, side, channels)` for this layout.
    pub fn code_dims(&self) -> [usize; 3] {
        let side = self.input >> self.encoder_channels.len();
        [side, side, self.encoder_channels.last().copied().unwrap_or(1)]
    }

    pub fn code_len(&self) -> usize {
        self.code_dims().iter().product()
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let stages = self.encoder_channels.len();
        if stages == 0 || self.decoder_channels.len() != stages {
            return Err(Error::InvalidInput(format!(
                "encoder has {} stages, decoder {}",
                stages,
                self.decoder_channels.len()
            )));
        }
        if self.input == 0 || self.input % (1 << stages) != 0 {
            return Err(Error::InvalidInput(format!(
                "input {} not divisible by {}",
                self.input,
                1 << stages
            )));
        }
        let mut layers = Vec::new();
        let mut ch = 1;
        for &c in &self.encoder_channels {
            layers.push(LayerSpec::conv3x3(ch, c));
            layers.push(LayerSpec::relu(c));
            layers.push(LayerSpec::maxpool2(c));
            ch = c;
        }
        for &c in &self.decoder_channels {
            layers.push(LayerSpec::conv3x3(ch, c));
            layers.push(LayerSpec::relu(c));
            layers.push(LayerSpec::upsample2(c));
            ch = c;
        }
        layers.push(LayerSpec::conv3x3(ch, 1));
        layers.push(LayerSpec::sigmoid(1));
        Ok(layers)
    }
}

/// Flattened encoder output for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub tile_id: TileId,
    pub code: Vec<f32>,
}

/// Trained autoencoder plus its per-epoch mean reconstruction loss.
#[derive(Debug, Clone)]
pub struct AutoencoderRun {
    pub model: ModelParams<f32>,
    pub history: Vec<f32>,
}

/// Number of leading layers forming the encoder: everything up to and
/// including the last pooling layer.
pub fn encoder_len(model: &ModelParams<f32>) -> Result<usize> {
    model
        .layers
        .iter()
        .rposition(|l| l.kind == LayerKind::MaxPool2)
        .map(|i| i + 1)
        .ok_or_else(|| Error::InvalidInput("model has no pooling layer".into()))
}

fn check_tile(tile: &ImageBuffer, side: usize) -> Result<()> {
    if tile.width() != side || tile.height() != side {
        return Err(Error::Dimension(format!(
            "tile is {}x{}, expected {side}x{side}",
            tile.width(),
            tile.height()
        )));
    }
    Ok(())
}

pub fn train_autoencoder(
    tiles: &[ImageBuffer],
    config: &AutoencoderConfig,
    seed: u64,
) -> Result<AutoencoderRun> {
    train_autoencoder_with(tiles, config, seed, |_, _| {})
}

/// As [`train_autoencoder`], calling `on_epoch(epoch, loss)` after each epoch.
pub fn train_autoencoder_with(
    tiles: &[ImageBuffer],
    config: &AutoencoderConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f32),
) -> Result<AutoencoderRun> {
    if tiles.is_empty() {
        return Err(Error::InvalidInput("autoencoder dataset is empty".into()));
    }
    for t in tiles {
        check_tile(t, config.input)?;
    }
    let model = ModelParams::init(config.layers()?, seed)?;
    let hyper = AdamHyper {
        lr: config.lr,
        ..AdamHyper::default()
    };
    let mut trainer = Trainer::new(model, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ae00);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0f64;
        for batch in epoch_batches(tiles.len(), config.batch_size, &mut rng) {
            let imgs: Vec<&ImageBuffer> = batch.iter().map(|&i| &tiles[i]).collect();
            let x = stack_images(&imgs)?;
            let loss = trainer.step(&x, &x)?;
            total += f64::from(loss) * batch.len() as f64;
        }
        let mean = (total / tiles.len() as f64) as f32;
        on_epoch(epoch + 1, mean);
        history.push(mean);
    }
    Ok(AutoencoderRun {
        model: trainer.into_model(),
        history,
    })
}

/// Full reconstruction of one tile.
pub fn reconstruct(model: &ModelParams<f32>, tile: &ImageBuffer) -> Result<ImageBuffer> {
    let x = stack_images(&[tile])?;
    let y = model.forward(&x)?;
    if y.height() != tile.height() || y.width() != tile.width() || y.channels() != 1 {
        return Err(Error::Shape(format!("reconstruction dims {:?}", y.dims())));
    }
    ImageBuffer::new(tile.width(), tile.height(), y.into_values())
}

/// Encoder output of one tile, flattened in `(y, x, channel)` order.
pub fn encode(model: &ModelParams<f32>, tile: &ImageBuffer) -> Result<Vec<f32>> {
    let n = encoder_len(model)?;
    let side = tile.width();
    check_tile(tile, side)?;
    let code = model.forward_prefix(&stack_images(&[tile])?, n)?;
    code.ensure_finite("encode")?;
    Ok(code.into_values())
}

/// Encodes many tiles, in parallel chunks. Results follow input order and are
/// identical to per-tile [`encode`] calls.
pub fn encode_tiles(
    model: &ModelParams<f32>,
    tiles: &[(TileId, ImageBuffer)],
) -> Result<Vec<LatentCode>> {
    let n = encoder_len(model)?;
    if let Some((_, first)) = tiles.first() {
        for (_, t) in tiles {
            check_tile(t, first.width())?;
        }
    }
    let chunks: Vec<Result<Vec<LatentCode>>> = tiles
        .par_chunks(16)
        .map(|chunk| {
            let imgs: Vec<&ImageBuffer> = chunk.iter().map(|(_, t)| t).collect();
            let out: Tensor4<f32> = model.forward_prefix(&stack_images(&imgs)?, n)?;
            out.ensure_finite("encode")?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(b, (id, _))| LatentCode {
                    tile_id: *id,
                    code: out.sample(b).to_vec(),
                })
                .collect())
        })
        .collect();
    let mut codes = Vec::with_capacity(tiles.len());
    for c in chunks {
        codes.extend(c?);
    }
    Ok(codes)
}
