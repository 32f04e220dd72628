use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::network::{ModelParams, Network};
use super::tensor::Tensor4;

/// A network paired with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: Network<f32>,
    adam: AdamState<f32>,
}

impl Trainer {
    pub fn new(model: ModelParams<f32>, hyper: AdamHyper) -> Self {
        let adam = AdamState::new(&model, hyper);
        Self {
            net: Network::new(model),
            adam,
        }
    }

    /// One optimizer step on a batch; returns the loss before the update.
    pub fn step(&mut self, input: &Tensor4<f32>, target: &Tensor4<f32>) -> Result<f32> {
        let (loss, grads) = self.net.loss_and_gradients(input, target)?;
        adam_step(&mut self.net.model, &grads, &mut self.adam)?;
        self.net.model.ensure_finite()?;
        Ok(loss)
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.step
    }

    pub fn model(&self) -> &ModelParams<f32> {
        &self.net.model
    }

    pub fn into_model(self) -> ModelParams<f32> {
        self.net.into_model()
    }
}

/// Stacks single-channel images of equal size into an `(n, h, w, 1)` batch.
pub fn stack_images(images: &[&ImageBuffer]) -> Result<Tensor4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let planes: Vec<&[f32]> = images.iter().map(|i| i.pixels()).collect();
    Tensor4::from_planes(first.height(), first.width(), &planes)
}

/// Index batches of one epoch after a seeded shuffle. The last batch may be short.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}
