//! Tile curation: autoencoder codes, k-means over them, a t-SNE view, and
//! per-cluster sampling of the training set.

pub mod autoencoder;
pub mod codes;
pub mod kmeans;
pub mod select;
pub mod tsne;

pub use autoencoder::{
    encode, encode_tiles, encoder_len, reconstruct, train_autoencoder, train_autoencoder_with,
    AutoencoderConfig, AutoencoderRun, LatentCode,
};
pub use codes::{load_codes, save_codes};
pub use kmeans::{kmeans, kmeans_from, kmeans_vectors, purity, ClusterModel, KMeansFit};
pub use select::{cluster_report, entry_tile_id, stratified_select, ClusterReport};
pub use tsne::{tsne, tsne_with, Embedding2D, TsneConfig};
