use std::fs;
use std::path::{Path, PathBuf};

use cfos_core::features::AutoencoderConfig;
use cfos_core::labeling::ProposalFilter;
use cfos_core::{GridMode, TrainParams, UNetConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

/// Everything a pipeline run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub tiling: TilingConfig,
    pub autoencoder: AutoencoderConfig,
    pub cluster: ClusterConfig,
    pub labeling: LabelingConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub iterate: IterateConfig,
    pub experiments: ExperimentConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Slide whose tiles form the labeling pool.
    pub pool_image: PathBuf,
    /// Image segmented end to end.
    pub source_image: PathBuf,
    /// Ground truth for `source_image`; evaluation is skipped without it.
    pub source_mask: Option<PathBuf>,
    /// Polygon annotations, one `<tile>.json` per pool tile.
    pub annotations_dir: Option<PathBuf>,
    /// Mask-proposal files, one `<tile>.json` per pool tile.
    pub proposals_dir: Option<PathBuf>,
    /// Exact pool tile masks, used only by the simulated reviewer.
    pub truth_dir: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            pool_image: "pool.png".into(),
            source_image: "source.png".into(),
            source_mask: None,
            annotations_dir: None,
            proposals_dir: None,
            truth_dir: None,
            work_dir: "work".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingConfig {
    pub window: usize,
    pub margin: usize,
    pub pool_mode: GridMode,
    pub source_mode: GridMode,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            window: 128,
            margin: 4,
            pool_mode: GridMode::Paper,
            source_mode: GridMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    /// Tiles to draw per cluster. When absent, `label_budget` is spread as
    /// evenly as the cluster populations allow.
    pub quotas: Option<Vec<usize>>,
    pub label_budget: usize,
    /// Share of the selected tiles held back for validation loss.
    pub val_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 5,
            quotas: None,
            label_budget: 150,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Rasterized polygon annotations.
    Polygon,
    /// Filtered and merged mask proposals.
    Proposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    pub mode: LabelSource,
    pub label: String,
    pub filter: ProposalFilter,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            mode: LabelSource::Polygon,
            label: "cfos".into(),
            filter: ProposalFilter::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 8,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateConfig {
    /// Predictions queued for review per round.
    pub batch: usize,
    /// Accept a queued prediction when its IoU against the exact tile mask
    /// reaches this value. Only usable with `paths.truth_dir`.
    pub simulated_reviewer_iou: Option<f64>,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            batch: 25,
            simulated_reviewer_iou: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    /// Training-set size of every trained arm in the methods comparison.
    pub methods_budget: usize,
    /// Overrides `train.batch_size` for experiment arms.
    pub batch_size: Option<usize>,
    /// Overrides `train.epochs` for experiment arms.
    pub epochs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: vec![0, 5, 30, 80, 150, 250],
            methods_budget: 50,
            batch_size: None,
            epochs: None,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            tiling: TilingConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            cluster: ClusterConfig::default(),
            labeling: LabelingConfig::default(),
            unet: UNetConfig::default(),
            train: TrainConfig::default(),
            iterate: IterateConfig::default(),
            experiments: ExperimentConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        cfos_core::manifest::resolve(&self.base_dir, p)
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.paths.work_dir)
    }

    /// Checks that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        let required = [&self.paths.pool_image, &self.paths.source_image];
        let optional = [
            &self.paths.source_mask,
            &self.paths.annotations_dir,
            &self.paths.proposals_dir,
            &self.paths.truth_dir,
        ];
        for p in required.into_iter().chain(optional.into_iter().flatten()) {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", full.display())));
            }
        }
        match self.labeling.mode {
            LabelSource::Polygon if self.paths.annotations_dir.is_none() => {
                return Err(PipelineError::Config("polygon labeling needs paths.annotations_dir".into()))
            }
            LabelSource::Proposal if self.paths.proposals_dir.is_none() => {
                return Err(PipelineError::Config("proposal labeling needs paths.proposals_dir".into()))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.cluster.val_fraction) {
            return Err(PipelineError::Config(format!(
                "val_fraction {} outside [0, 1)",
                self.cluster.val_fraction
            )));
        }
        if self.iterate.simulated_reviewer_iou.is_some() && self.paths.truth_dir.is_none() {
            return Err(PipelineError::Config("simulated reviewer needs paths.truth_dir".into()));
        }
        self.labeling.filter.validate()?;
        Ok(())
    }

    /// Independent seed for one stochastic stage, derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn train_params(&self, stage: &str) -> TrainParams {
        TrainParams {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.stage_seed(stage),
            lr: self.train.lr,
            threshold: self.unet.threshold,
        }
    }
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg = PipelineConfig {
            seed: 9,
            ..PipelineConfig::default()
        };
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig = toml::from_str("seed = 3\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(partial.train.epochs, 2);
        assert_eq!(partial.train.batch_size, 8);
        assert_eq!(partial.tiling.window, 128);
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig::default();
        assert_ne!(cfg.stage_seed("autoencoder"), cfg.stage_seed("train"));
        assert_eq!(cfg.stage_seed("train"), derive_seed(0, "train"));
    }

    #[test]
    fn validate_reports_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        PipelineConfig::default().save(&path).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.base_dir, dir.path());
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
