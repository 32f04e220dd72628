//! Tiled segmentation of large grayscale micrographs.
//!
//! The crate covers the whole numeric side of the workflow: overlap-window
//! tiling and stitching, a small differentiable core, a convolutional
//! autoencoder with k-means and t-SNE for training-set curation, a same-padding
//! U-Net, mask generation from polygon annotations or mask proposals, and
//! segmentation metrics.

pub mod error;
pub mod features;
pub mod image;
pub mod labeling;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod tiling;
pub mod unet;

pub use error::{Error, Result};
pub use image::{load_image, load_mask, save_image, save_mask, ImageBuffer, MaskBuffer, Raster};
pub use manifest::{manifest_load, manifest_save, DatasetManifest, ManifestEntry, Provenance, Split};
pub use tiling::{compute_grid, crop, parse_tile_name, stitch, tile_name, GridMode, TileGrid, TileId};
pub use unet::{build_unet, predict_full, predict_tile, train_unet, Sample, TrainParams, TrainRun, UNetConfig};
