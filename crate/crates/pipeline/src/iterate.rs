//! Review loop: predictions on unreviewed pool tiles are queued for a human
//! (or simulated) reviewer, accepted tile/mask pairs join the training set,
//! and the next round's model is retrained from scratch on the grown set.
//!
//! Layout under `work/iteration/`:
//!
//! - `state.json`: current round, model lineage, base manifest location
//! - `items.json`: every queued item, as enqueued
//! - `decisions.jsonl`: append-only decision log, the source of truth for item status
//! - `round-<r>/`: `model.cfosnn`, the `manifest.json` it was trained on, `masks/`

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use cfos_core::metrics::{confusion, iou_foreground};
use cfos_core::nn::{load_params, save_params, ModelParams};
use cfos_core::unet::predict_tiles;
use cfos_core::unet::binarize;
use cfos_core::{
    load_image, load_mask, manifest_load, manifest_save, parse_tile_name, save_mask, tile_name, DatasetManifest,
    ImageBuffer, ManifestEntry, Provenance, Split,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::run::{create_dir, read_json, relative_to, stage_dir, train_on_manifest, write_json, Stage, FINAL_MODEL};

pub const ITERATION_DIR: &str = "iteration";
const STATE: &str = "state.json";
const ITEMS: &str = "items.json";
const DECISIONS: &str = "decisions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    /// Round whose model produced the mask.
    pub round: usize,
    pub tile: String,
    /// Relative to the iteration directory.
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub status: ReviewStatus,
    pub decided_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub decision: Decision,
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationState {
    pub round: usize,
    /// Model file of every round, relative to the iteration directory.
    pub lineage: Vec<PathBuf>,
    /// Initial labeled manifest, relative to the iteration directory.
    pub base_manifest: PathBuf,
    /// Directory of the pool tiles, relative to the iteration directory.
    pub tiles_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStatus {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub round: usize,
}

/// Collapses `dir/..` pairs so stored paths stay readable.
fn normalize(p: &Path) -> PathBuf {
    let mut out: Vec<Component> = Vec::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out.iter().collect()
}

fn round_dir(r: usize) -> PathBuf {
    PathBuf::from(format!("round-{r}"))
}

/// Everything needed to train the next round outside the store's lock.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub round: usize,
    /// Entries relative to `round-<round>/`.
    pub manifest: DatasetManifest,
    dir: PathBuf,
}

impl TrainingJob {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<ModelParams<f32>> {
        let round_dir = self.dir.join(round_dir(self.round));
        create_dir(&round_dir)?;
        manifest_save(&self.manifest, round_dir.join("manifest.json"))?;
        let (model, _) = train_on_manifest(cfg, &self.manifest, &round_dir, "train")?;
        Ok(model)
    }
}

#[derive(Debug)]
pub struct ReviewStore {
    dir: PathBuf,
    state: IterationState,
    items: Vec<ReviewItem>,
    index: HashMap<String, usize>,
    log: File,
}

impl ReviewStore {
    pub fn dir_in(work: &Path) -> PathBuf {
        work.join(ITERATION_DIR)
    }

    pub fn exists(work: &Path) -> bool {
        Self::dir_in(work).join(STATE).exists()
    }

    /// Starts round 0 from a completed pipeline run and queues its predictions.
    pub fn init(cfg: &PipelineConfig) -> Result<Self> {
        let work = cfg.work_dir();
        let dir = Self::dir_in(&work);
        if dir.join(STATE).exists() {
            return Err(PipelineError::Config(format!("{} already holds a review loop", dir.display())));
        }
        let label = stage_dir(&work, Stage::Label)?;
        let crop = stage_dir(&work, Stage::Crop)?;
        let rel = |p: &Path| normalize(&relative_to(Path::new(ITERATION_DIR), p.strip_prefix(&work).expect("under work")));
        let state = IterationState {
            round: 0,
            lineage: vec![round_dir(0).join(FINAL_MODEL)],
            base_manifest: rel(&label.join("manifest.json")),
            tiles_dir: rel(&crop.join("tiles")),
        };
        let r0 = dir.join(round_dir(0));
        create_dir(&r0)?;
        let model_src = work.join(FINAL_MODEL);
        fs::copy(&model_src, r0.join(FINAL_MODEL)).map_err(|e| PipelineError::io(&model_src, e))?;
        let mut store = Self::create(dir, state)?;
        let base = store.training_manifest(0)?;
        manifest_save(&base, r0.join("manifest.json"))?;
        store.enqueue(cfg)?;
        Ok(store)
    }

    fn create(dir: PathBuf, state: IterationState) -> Result<Self> {
        create_dir(&dir)?;
        write_json(&state, &dir.join(STATE))?;
        write_json(&Vec::<ReviewItem>::new(), &dir.join(ITEMS))?;
        let log_path = dir.join(DECISIONS);
        let log = File::create(&log_path).map_err(|e| PipelineError::io(&log_path, e))?;
        Ok(Self {
            dir,
            state,
            items: Vec::new(),
            index: HashMap::new(),
            log,
        })
    }

    /// Loads state and items, then replays the decision log.
    pub fn open(work: &Path) -> Result<Self> {
        let dir = Self::dir_in(work);
        if !dir.join(STATE).exists() {
            return Err(PipelineError::NoQueue(dir));
        }
        let state: IterationState = read_json(&dir.join(STATE))?;
        let items: Vec<ReviewItem> = read_json(&dir.join(ITEMS))?;
        let index = items.iter().enumerate().map(|(i, it)| (it.id.clone(), i)).collect();
        let log_path = dir.join(DECISIONS);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| PipelineError::io(&log_path, e))?;
        let mut store = Self {
            dir,
            state,
            items,
            index,
            log,
        };
        for rec in read_decisions(&log_path)? {
            store.apply(&rec)?;
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &IterationState {
        &self.state
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn round(&self) -> usize {
        self.state.round
    }

    pub fn status(&self) -> QueueStatus {
        let count = |s| self.items.iter().filter(|i| i.status == s).count();
        QueueStatus {
            pending: count(ReviewStatus::Pending),
            accepted: count(ReviewStatus::Accepted),
            rejected: count(ReviewStatus::Rejected),
            round: self.state.round,
        }
    }

    pub fn next_pending(&self) -> Option<&ReviewItem> {
        self.items.iter().find(|i| i.status == ReviewStatus::Pending)
    }

    pub fn item(&self, id: &str) -> Result<&ReviewItem> {
        self.index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| PipelineError::UnknownItem(id.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }

    fn apply(&mut self, rec: &DecisionRecord) -> Result<()> {
        let i = *self
            .index
            .get(&rec.id)
            .ok_or_else(|| PipelineError::UnknownItem(rec.id.clone()))?;
        let item = &mut self.items[i];
        if item.status != ReviewStatus::Pending {
            return Err(PipelineError::AlreadyDecided(rec.id.clone()));
        }
        item.status = match rec.decision {
            Decision::Accept => ReviewStatus::Accepted,
            Decision::Reject => ReviewStatus::Rejected,
        };
        item.decided_at = Some(rec.at.clone());
        Ok(())
    }

    /// Records a decision durably. A second decision on one item is refused.
    pub fn decide(&mut self, id: &str, decision: Decision) -> Result<ReviewItem> {
        if self.item(id)?.status != ReviewStatus::Pending {
            return Err(PipelineError::AlreadyDecided(id.to_string()));
        }
        let rec = DecisionRecord {
            id: id.to_string(),
            decision,
            at: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_string(&rec).map_err(|e| PipelineError::format("decision", e))?;
        line.push('\n');
        let path = self.dir.join(DECISIONS);
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| PipelineError::io(&path, e))?;
        self.apply(&rec)?;
        Ok(self.item(id)?.clone())
    }

    fn accepted(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.iter().filter(|i| i.status == ReviewStatus::Accepted)
    }

    /// Base manifest plus every accepted item, with paths relative to
    /// `round-<round>/`. Built from the replayed log alone.
    pub fn training_manifest(&self, round: usize) -> Result<DatasetManifest> {
        let base_path = self.dir.join(&self.state.base_manifest);
        let base = manifest_load(&base_path)?;
        let base_dir = self.state.base_manifest.parent().unwrap_or(Path::new(""));
        let here = round_dir(round);
        let mut manifest = DatasetManifest::new(base.seed);
        for e in base.entries {
            manifest.entries.push(ManifestEntry {
                image_path: normalize(&relative_to(&here, &base_dir.join(&e.image_path))),
                mask_path: normalize(&relative_to(&here, &base_dir.join(&e.mask_path))),
                ..e
            });
        }
        let known: BTreeSet<String> = manifest
            .entries
            .iter()
            .filter_map(|e| e.image_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        for it in self.accepted() {
            if known.contains(&it.tile) {
                continue;
            }
            manifest.entries.push(ManifestEntry {
                image_path: normalize(&relative_to(&here, &it.image_path)),
                mask_path: normalize(&relative_to(&here, &it.mask_path)),
                cluster_index: None,
                split: Split::Train,
                provenance: Provenance::Iteration,
            });
        }
        Ok(manifest)
    }

    /// Tiles already used for training or queued in any round.
    fn seen_tiles(&self) -> Result<BTreeSet<String>> {
        let mut seen: BTreeSet<String> = self.items.iter().map(|i| i.tile.clone()).collect();
        for e in manifest_load(self.dir.join(&self.state.base_manifest))?.entries {
            if let Some(s) = e.image_path.file_stem() {
                seen.insert(s.to_string_lossy().into_owned());
            }
        }
        Ok(seen)
    }

    pub fn model(&self) -> Result<ModelParams<f32>> {
        let path = self.dir.join(self.state.lineage.last().expect("round 0 always exists"));
        Ok(load_params(path)?)
    }

    /// Predicts masks for up to `iterate.batch` unseen pool tiles with the
    /// current model and queues them. Returns the number queued.
    pub fn enqueue(&mut self, cfg: &PipelineConfig) -> Result<usize> {
        let round = self.state.round;
        let tiles_dir = self.dir.join(&self.state.tiles_dir);
        let seen = self.seen_tiles()?;
        let mut names: Vec<String> = fs::read_dir(&tiles_dir)
            .map_err(|e| PipelineError::io(&tiles_dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.path().file_stem().map(|s| s.to_string_lossy().into_owned()))
            .filter(|n| parse_tile_name(n).is_ok() && !seen.contains(n))
            .collect();
        names.sort();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stage_seed(&format!("iterate-{round}"))));
        names.truncate(cfg.iterate.batch);
        if names.is_empty() {
            return Ok(0);
        }
        let model = self.model()?;
        let tiles = names
            .iter()
            .map(|n| Ok((parse_tile_name(n)?, load_image(tiles_dir.join(format!("{n}.png")))?)))
            .collect::<Result<_>>()?;
        let probs = predict_tiles(&model, &tiles, 8)?;
        let masks_rel = round_dir(round).join("masks");
        create_dir(&self.dir.join(&masks_rel))?;
        for (id, prob) in &probs {
            let name = tile_name(*id);
            let mask_path = masks_rel.join(format!("{name}.png"));
            save_mask(&binarize(prob, cfg.unet.threshold), self.dir.join(&mask_path))?;
            let item = ReviewItem {
                id: format!("r{round}-{name}"),
                round,
                tile: name.clone(),
                image_path: normalize(&self.state.tiles_dir.join(format!("{name}.png"))),
                mask_path,
                status: ReviewStatus::Pending,
                decided_at: None,
            };
            self.index.insert(item.id.clone(), self.items.len());
            self.items.push(item);
        }
        self.save_items()?;
        Ok(probs.len())
    }

    fn save_items(&self) -> Result<()> {
        let as_queued: Vec<ReviewItem> = self
            .items
            .iter()
            .map(|i| ReviewItem {
                status: ReviewStatus::Pending,
                decided_at: None,
                ..i.clone()
            })
            .collect();
        write_json(&as_queued, &self.dir.join(ITEMS))
    }

    /// Snapshot of the next round's training set.
    pub fn training_job(&self) -> Result<TrainingJob> {
        let round = self.state.round + 1;
        Ok(TrainingJob {
            round,
            manifest: self.training_manifest(round)?,
            dir: self.dir.clone(),
        })
    }

    /// Installs a trained model as the next round and queues its predictions.
    pub fn commit(&mut self, cfg: &PipelineConfig, job: &TrainingJob, model: &ModelParams<f32>) -> Result<()> {
        if job.round != self.state.round + 1 {
            return Err(PipelineError::Config(format!(
                "training job for round {} does not follow round {}",
                job.round, self.state.round
            )));
        }
        let model_rel = round_dir(job.round).join(FINAL_MODEL);
        save_params(model, self.dir.join(&model_rel))?;
        self.state.round = job.round;
        self.state.lineage.push(model_rel);
        write_json(&self.state, &self.dir.join(STATE))?;
        self.enqueue(cfg)?;
        Ok(())
    }

    /// Trains and installs the next round in one blocking call.
    pub fn train_next(&mut self, cfg: &PipelineConfig) -> Result<usize> {
        let job = self.training_job()?;
        let model = job.run(cfg)?;
        self.commit(cfg, &job, &model)?;
        Ok(self.state.round)
    }

    /// Manifest stored with a round's model.
    pub fn round_manifest(&self, round: usize) -> Result<DatasetManifest> {
        Ok(manifest_load(self.dir.join(round_dir(round)).join("manifest.json"))?)
    }

    /// Image paths of a round's training set, normalised relative to the iteration directory.
    pub fn round_training_images(&self, round: usize) -> Result<BTreeSet<PathBuf>> {
        let here = round_dir(round);
        Ok(self
            .round_manifest(round)?
            .entries
            .iter()
            .map(|e| normalize(&here.join(&e.image_path)))
            .collect())
    }
}

fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let complete = text.ends_with('\n') || text.is_empty();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(rec) => out.push(rec),
            // A crash mid-append leaves at most one torn final line.
            Err(_) if n + 1 == lines.len() && !complete => {
                log::warn!("ignoring torn final line of {}", path.display());
            }
            Err(e) => return Err(PipelineError::format(format!("{} line {}", path.display(), n + 1), e)),
        }
    }
    Ok(out)
}

/// Accepts every pending item whose mask reaches `min_iou` against the exact
/// tile mask in `truth_dir`, rejects the rest. Returns (accepted, rejected).
pub fn simulate_review(store: &mut ReviewStore, truth_dir: &Path, min_iou: f64) -> Result<(usize, usize)> {
    let pending: Vec<ReviewItem> = store
        .items()
        .iter()
        .filter(|i| i.status == ReviewStatus::Pending)
        .cloned()
        .collect();
    let (mut acc, mut rej) = (0, 0);
    for it in pending {
        let pred = load_mask(store.resolve(&it.mask_path))?;
        let truth = load_mask(truth_dir.join(format!("{}.png", it.tile)))?;
        let iou = iou_foreground(&confusion(&pred, &truth)?);
        if iou >= min_iou {
            store.decide(&it.id, Decision::Accept)?;
            acc += 1;
        } else {
            store.decide(&it.id, Decision::Reject)?;
            rej += 1;
        }
    }
    Ok((acc, rej))
}

/// RGB rendering of `mask` over `image`, highlighted at `opacity` in [0, 1].
pub fn overlay_rgb(image: &ImageBuffer, mask: &cfos_core::MaskBuffer, opacity: f32) -> Result<Vec<u8>> {
    if (image.width(), image.height()) != (mask.width(), mask.height()) {
        return Err(PipelineError::format("overlay", "image and mask sizes differ"));
    }
    const HIGHLIGHT: [f32; 3] = [255.0, 40.0, 200.0];
    let a = opacity.clamp(0.0, 1.0);
    let mut rgb = Vec::with_capacity(image.pixels().len() * 3);
    for (&p, &m) in image.pixels().iter().zip(mask.labels()) {
        let g = p * 255.0;
        for h in HIGHLIGHT {
            let v = if m == 1 { g * (1.0 - a) + h * a } else { g };
            rgb.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(rgb)
}
