#![allow(dead_code)]

use std::path::Path;

use cfos_core::features::AutoencoderConfig;
use cfos_core::UNetConfig;
use cfos_pipeline::config::{ClusterConfig, TrainConfig};
use cfos_pipeline::synth::{corpus_config_path, generate, SynthConfig};
use cfos_pipeline::PipelineConfig;

/// A corpus of 32-px tiles small enough for plumbing tests.
pub fn tiny_corpus(dir: &Path, cols: usize, rows: usize) -> PipelineConfig {
    let synth = SynthConfig {
        seed: 11,
        pool_cols: cols,
        pool_rows: rows,
        source_width: 150,
        source_height: 100,
        window: 32,
        margin: 2,
        ..SynthConfig::default()
    };
    generate(dir, &synth).unwrap();
    let mut cfg = PipelineConfig::load(corpus_config_path(dir)).unwrap();
    cfg.autoencoder = AutoencoderConfig {
        input: 32,
        encoder_channels: vec![4, 4, 4],
        decoder_channels: vec![4, 4, 4],
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
    };
    cfg.unet = UNetConfig {
        input: 32,
        depth: 2,
        base_channels: 4,
        threshold: 0.5,
    };
    cfg.train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-3,
    };
    cfg.cluster = ClusterConfig {
        k: 3,
        quotas: None,
        label_budget: 8,
        val_fraction: 0.25,
    };
    cfg.experiments.batch_size = None;
    cfg.experiments.epochs = None;
    cfg.save(corpus_config_path(dir)).unwrap();
    PipelineConfig::load(corpus_config_path(dir)).unwrap()
}
