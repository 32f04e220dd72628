//! Small training runs shared by the contract tests and the acceptance suite.

use cfos_core::nn::{stack_images, AdamHyper, Trainer};
use cfos_core::unet::{build_unet, UNetConfig};
use cfos_core::ImageBuffer;
use rand::Rng;

use super::oracles::rng;

/// `n` tiles with one or two bright discs each, and the matching masks as
/// 0/1 targets.
pub fn disc_pairs(n: usize, side: usize, seed: u64) -> Vec<(ImageBuffer, ImageBuffer)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let discs: Vec<(f64, f64, f64)> = (0..r.random_range(1..=2))
                .map(|_| {
                    let rad = r.random_range(side as f64 * 0.08..side as f64 * 0.2);
                    let cx = r.random_range(rad..side as f64 - rad);
                    let cy = r.random_range(rad..side as f64 - rad);
                    (cx, cy, rad)
                })
                .collect();
            let mut img = vec![0.0f32; side * side];
            let mut mask = vec![0.0f32; side * side];
            for y in 0..side {
                for x in 0..side {
                    let inside = discs.iter().any(|&(cx, cy, rad)| {
                        (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= rad * rad
                    });
                    let noise = r.random_range(0.0..0.15f32);
                    img[y * side + x] = if inside { 0.8 + noise } else { noise };
                    mask[y * side + x] = f32::from(u8::from(inside));
                }
            }
            (
                ImageBuffer::new(side, side, img).unwrap(),
                ImageBuffer::new(side, side, mask).unwrap(),
            )
        })
        .collect()
}

/// Full-batch training on four disc tiles. Returns the loss trace, stopping
/// once it falls below `target` or after `max_steps`.
pub fn overfit_four(config: &UNetConfig, lr: f64, max_steps: usize, target: f32) -> Vec<f32> {
    let pairs = disc_pairs(4, config.input, 404);
    let x = stack_images(&pairs.iter().map(|p| &p.0).collect::<Vec<_>>()).unwrap();
    let y = stack_images(&pairs.iter().map(|p| &p.1).collect::<Vec<_>>()).unwrap();
    let model = build_unet(config, 5).unwrap();
    let mut trainer = Trainer::new(model, AdamHyper { lr, ..AdamHyper::default() });
    let mut trace = Vec::new();
    for _ in 0..max_steps {
        let loss = trainer.step(&x, &y).unwrap();
        trace.push(loss);
        if loss < target {
            break;
        }
    }
    trace
}
