//! Training-set size sweep and labeling-method comparison, both scored on
//! the held-out source image.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cfos_core::features::ClusterModel;
use cfos_core::metrics::{confusion, iou_foreground, ScoreReport};
use cfos_core::nn::ModelParams;
use cfos_core::unet::{binarize, predict_tiles};
use cfos_core::{build_unet, load_mask, parse_tile_name, tile_name, train_unet, ImageBuffer, MaskBuffer, Sample, TileId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LabelSource, PipelineConfig};
use crate::error::{PipelineError, Result};
use crate::iterate::{ReviewStatus, ReviewStore};
use crate::run::{
    create_dir, evaluate_on_source, label_source_path, label_tile, load_tiles, read_json, run_pipeline,
    select_tiles, stage_dir, water_fill, RunOptions, Stage,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub miou: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Untrained,
    Random,
    Cluster,
    Proposal,
    ProposalCluster,
    ProposalClusterIteration,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Untrained,
        Method::Random,
        Method::Cluster,
        Method::Proposal,
        Method::ProposalCluster,
        Method::ProposalClusterIteration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Untrained => "untrained",
            Method::Random => "random",
            Method::Cluster => "cluster",
            Method::Proposal => "proposal",
            Method::ProposalCluster => "proposal+cluster",
            Method::ProposalClusterIteration => "proposal+cluster+iteration",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub train_tiles: usize,
    /// `None` when the arm was skipped.
    pub score: Option<(f64, f64)>,
    pub note: String,
}

/// The held-out images every arm is scored on.
fn test_paths(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let mut v = vec![cfg.resolve(&cfg.paths.source_image)];
    v.extend(cfg.paths.source_mask.as_ref().map(|p| cfg.resolve(p)));
    v
}

/// Fails if any training input is also a test input.
pub fn assert_disjoint(train: &[PathBuf], test: &[PathBuf]) -> Result<()> {
    let canon = |p: &PathBuf| fs::canonicalize(p).unwrap_or_else(|_| p.clone());
    let test: BTreeSet<PathBuf> = test.iter().map(canon).collect();
    if let Some(p) = train.iter().find(|p| test.contains(&canon(p))) {
        return Err(PipelineError::Experiment(format!(
            "training input {} is part of the test set",
            p.display()
        )));
    }
    Ok(())
}

struct Pool {
    crop_dir: PathBuf,
    tiles: Vec<(TileId, ImageBuffer)>,
}

impl Pool {
    fn load(cfg: &PipelineConfig) -> Result<Self> {
        let crop_dir = stage_dir(&cfg.work_dir(), Stage::Crop)?;
        let tiles = load_tiles(&crop_dir)?;
        Ok(Self { crop_dir, tiles })
    }

    fn names(&self) -> Vec<String> {
        self.tiles.iter().map(|(id, _)| tile_name(*id)).collect()
    }

    fn image(&self, name: &str) -> Result<&ImageBuffer> {
        let id = parse_tile_name(name)?;
        self.tiles
            .iter()
            .find(|(t, _)| *t == id)
            .map(|(_, img)| img)
            .ok_or_else(|| PipelineError::Experiment(format!("tile {name} is not in the pool")))
    }

    fn tile_path(&self, name: &str) -> PathBuf {
        self.crop_dir.join("tiles").join(format!("{name}.png"))
    }

    /// Samples for `names` labeled by `mode`, with the paths they were read from.
    fn samples(&self, cfg: &PipelineConfig, names: &[String], mode: LabelSource) -> Result<(Vec<Sample>, Vec<PathBuf>)> {
        let mut samples = Vec::with_capacity(names.len());
        let mut paths = Vec::with_capacity(2 * names.len());
        for n in names {
            samples.push(Sample::new(self.image(n)?.clone(), &label_tile(cfg, mode, n)?)?);
            paths.push(self.tile_path(n));
            paths.push(label_source_path(cfg, mode, n)?);
        }
        Ok((samples, paths))
    }
}

fn untrained(cfg: &PipelineConfig) -> Result<ModelParams<f32>> {
    Ok(build_unet(&cfg.unet, cfg.stage_seed("unet-init"))?)
}

/// Trains a fresh model on `samples` without validation; the seed stream is
/// shared by every arm so arms differ only in their data.
fn train_arm(cfg: &PipelineConfig, samples: &[Sample]) -> Result<ModelParams<f32>> {
    let mut params = cfg.train_params("experiment");
    if let Some(b) = cfg.experiments.batch_size {
        params.batch_size = b;
    }
    if let Some(e) = cfg.experiments.epochs {
        params.epochs = e;
    }
    let (model, _) = train_unet(untrained(cfg)?, samples, &[], &params)?;
    Ok(model)
}

fn score(report: &ScoreReport) -> (f64, f64) {
    (report.miou, report.f1)
}

/// Trains from scratch on nested seeded subsets of the labeled pool and
/// scores each on the held-out source. Size 0 is the untrained model.
pub fn size_sweep(cfg: &PipelineConfig, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    run_pipeline(cfg, RunOptions { stop_after: Some(Stage::Crop) })?;
    let pool = Pool::load(cfg)?;
    let mut order = pool.names();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stage_seed("sweep-order")));
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if largest > order.len() {
        return Err(PipelineError::Experiment(format!(
            "size {largest} exceeds the labeled pool of {}",
            order.len()
        )));
    }
    let (all, paths) = pool.samples(cfg, &order[..largest], cfg.labeling.mode)?;
    assert_disjoint(&paths, &test_paths(cfg))?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let model = if size == 0 {
            untrained(cfg)?
        } else {
            train_arm(cfg, &all[..size])?
        };
        let (miou, f1) = score(&evaluate_on_source(cfg, &model)?);
        log::info!("sweep size {size}: miou {miou:.4} f1 {f1:.4}");
        rows.push(SweepRow { size, miou, f1 });
    }
    Ok(rows)
}

fn skipped(method: Method, note: impl Into<String>) -> MethodRow {
    MethodRow {
        method,
        train_tiles: 0,
        score: None,
        note: note.into(),
    }
}

/// Accepted pairs from the review loop in `work`, if one exists.
fn reviewed_pairs(cfg: &PipelineConfig) -> Result<Option<Vec<(String, PathBuf, PathBuf)>>> {
    let work = cfg.work_dir();
    if !ReviewStore::exists(&work) {
        return Ok(None);
    }
    let store = ReviewStore::open(&work)?;
    Ok(Some(
        store
            .items()
            .iter()
            .filter(|i| i.status == ReviewStatus::Accepted)
            .map(|i| (i.tile.clone(), store.resolve(&i.image_path), store.resolve(&i.mask_path)))
            .collect(),
    ))
}

/// One simulated review round: predicts unseen tiles with `model` and keeps
/// those whose mask reaches the reviewer threshold against the exact masks.
fn simulated_pairs(
    cfg: &PipelineConfig,
    pool: &Pool,
    model: &ModelParams<f32>,
    exclude: &BTreeSet<String>,
    truth_dir: &Path,
    min_iou: f64,
) -> Result<Vec<(String, MaskBuffer)>> {
    let mut unseen: Vec<String> = pool.names().into_iter().filter(|n| !exclude.contains(n)).collect();
    unseen.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stage_seed("methods-review")));
    unseen.truncate(cfg.iterate.batch);
    let tiles = unseen
        .iter()
        .map(|n| Ok((parse_tile_name(n)?, pool.image(n)?.clone())))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (id, prob) in predict_tiles(model, &tiles, 8)? {
        let name = tile_name(id);
        let mask = binarize(&prob, cfg.unet.threshold);
        let truth = load_mask(truth_dir.join(format!("{name}.png")))?;
        if iou_foreground(&confusion(&mask, &truth)?) >= min_iou {
            out.push((name, mask));
        }
    }
    Ok(out)
}

/// Every labeling strategy at the same training-set size, scored on the same
/// held-out source with the same seed.
pub fn methods(cfg: &PipelineConfig) -> Result<Vec<MethodRow>> {
    run_pipeline(cfg, RunOptions { stop_after: Some(Stage::Cluster) })?;
    let pool = Pool::load(cfg)?;
    let budget = cfg.experiments.methods_budget;
    let clusters: ClusterModel = read_json(&stage_dir(&cfg.work_dir(), Stage::Cluster)?.join("clusters.json"))?;
    let test = test_paths(cfg);

    let mut random = pool.names();
    random.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stage_seed("methods-random")));
    if budget > random.len() {
        return Err(PipelineError::Experiment(format!(
            "methods budget {budget} exceeds the pool of {}",
            random.len()
        )));
    }
    random.truncate(budget);
    let quotas = water_fill(budget, &clusters.populations())?;
    let stratified: Vec<String> = select_tiles(cfg, &clusters, &quotas, "methods-cluster")?
        .into_iter()
        .map(|s| s.tile)
        .collect();

    let untrained_model = untrained(cfg)?;
    let mut rows = vec![MethodRow {
        method: Method::Untrained,
        train_tiles: 0,
        score: Some(score(&evaluate_on_source(cfg, &untrained_model)?)),
        note: String::new(),
    }];

    let mut pc: Option<(Vec<Sample>, ModelParams<f32>, (f64, f64))> = None;
    let arms = [
        (Method::Random, &random, LabelSource::Polygon),
        (Method::Cluster, &stratified, LabelSource::Polygon),
        (Method::Proposal, &random, LabelSource::Proposal),
        (Method::ProposalCluster, &stratified, LabelSource::Proposal),
    ];
    for (method, names, mode) in arms {
        let (samples, paths) = match pool.samples(cfg, names, mode) {
            Ok(s) => s,
            Err(PipelineError::Config(reason)) => {
                rows.push(skipped(method, reason));
                continue;
            }
            Err(e) => return Err(e),
        };
        assert_disjoint(&paths, &test)?;
        let model = train_arm(cfg, &samples)?;
        let s = score(&evaluate_on_source(cfg, &model)?);
        log::info!("method {method}: miou {:.4} f1 {:.4}", s.0, s.1);
        rows.push(MethodRow {
            method,
            train_tiles: samples.len(),
            score: Some(s),
            note: String::new(),
        });
        if method == Method::ProposalCluster {
            pc = Some((samples, model, s));
        }
    }

    let method = Method::ProposalClusterIteration;
    let Some((base, base_model, base_score)) = pc else {
        rows.push(skipped(method, "proposal+cluster arm was skipped"));
        return Ok(rows);
    };
    let exclude: BTreeSet<String> = stratified.iter().cloned().collect();
    let (extra, note) = if let Some(pairs) = reviewed_pairs(cfg)? {
        let mut extra = Vec::new();
        let mut paths = Vec::new();
        for (_, image, mask) in pairs.into_iter().filter(|p| !exclude.contains(&p.0)) {
            extra.push(Sample::new(cfos_core::load_image(&image)?, &load_mask(&mask)?)?);
            paths.extend([image, mask]);
        }
        assert_disjoint(&paths, &test)?;
        (extra, "accepted items from the review log".to_string())
    } else if let (Some(min_iou), Some(truth)) = (cfg.iterate.simulated_reviewer_iou, &cfg.paths.truth_dir) {
        let pairs = simulated_pairs(cfg, &pool, &base_model, &exclude, &cfg.resolve(truth), min_iou)?;
        let extra = pairs
            .iter()
            .map(|(n, m)| Sample::new(pool.image(n)?.clone(), m).map_err(PipelineError::from))
            .collect::<Result<Vec<_>>>()?;
        (extra, format!("simulated reviewer at IoU >= {min_iou}"))
    } else {
        rows.push(skipped(method, "no review decisions and no simulated reviewer configured"));
        return Ok(rows);
    };
    let accepted = extra.len();
    let s = if extra.is_empty() {
        base_score
    } else {
        let mut all = base;
        all.extend(extra);
        score(&evaluate_on_source(cfg, &train_arm(cfg, &all)?)?)
    };
    rows.push(MethodRow {
        method,
        train_tiles: budget + accepted,
        score: Some(s),
        note: format!("{note}; {accepted} accepted"),
    });
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("size,miou,f1\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.size, r.miou, r.f1));
    }
    out
}

pub fn methods_csv(rows: &[MethodRow]) -> String {
    let mut out = String::from("method,status,train_tiles,miou,f1,note\n");
    for r in rows {
        let (status, m, f) = match r.score {
            Some((m, f)) => ("trained", format!("{m:.6}"), format!("{f:.6}")),
            None => ("skipped", String::new(), String::new()),
        };
        let status = if r.method == Method::Untrained { "untrained" } else { status };
        out.push_str(&format!(
            "{},{status},{},{m},{f},\"{}\"\n",
            r.method,
            r.train_tiles,
            r.note.replace('"', "'")
        ));
    }
    out
}

/// Writes a CSV under `work/experiments/`.
pub fn write_csv(cfg: &PipelineConfig, name: &str, text: &str) -> Result<PathBuf> {
    let dir = cfg.work_dir().join("experiments");
    create_dir(&dir)?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    Ok(path)
}
