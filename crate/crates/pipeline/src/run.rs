//! Staged, resumable pipeline: crop, autoencoder, encode, cluster, select,
//! label, train, predict, evaluate.
//!
//! Each stage writes into `work/stages/<stage>-<key>/`, where the key hashes
//! the stage's parameters together with the keys of the stages it reads from
//! and the bytes of any external inputs. `work/run.json` records completed
//! stages with the hash of every output file. A rerun reuses a stage when its
//! key and output hashes still match, so an interrupted run resumes where it
//! stopped and a changed parameter invalidates exactly the affected stages.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use cfos_core::features::{
    cluster_report, encode_tiles, kmeans, load_codes, save_codes, stratified_select, train_autoencoder,
    ClusterModel,
};
use cfos_core::labeling::{filter_proposals, load_annotation, load_proposals, merge_proposals, rasterize};
use cfos_core::metrics::{score_dataset, MiouVariant, ScoreReport};
use cfos_core::nn::{load_params, save_params, ModelParams};
use cfos_core::tiling::crop_tile;
use cfos_core::unet::{load_samples, predict_full, train_unet};
use cfos_core::{
    build_unet, compute_grid, crop, load_image, load_mask, manifest_load, manifest_save, parse_tile_name,
    save_image, save_mask, tile_name, DatasetManifest, ImageBuffer, ManifestEntry, MaskBuffer, Provenance,
    Split, TileGrid, TileId,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LabelSource, PipelineConfig};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Crop,
    Autoencoder,
    Encode,
    Cluster,
    Select,
    Label,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Crop,
        Stage::Autoencoder,
        Stage::Encode,
        Stage::Cluster,
        Stage::Select,
        Stage::Label,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Crop => "crop",
            Stage::Autoencoder => "autoencoder",
            Stage::Encode => "encode",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub key: String,
    /// Output directory, relative to the work dir.
    pub dir: PathBuf,
    /// sha256 of every output file, keyed by path relative to `dir`.
    pub outputs: BTreeMap<String, String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

pub const RUN_MANIFEST: &str = "run.json";
pub const FINAL_MASK: &str = "final_mask.png";
pub const FINAL_MODEL: &str = "model.cfosnn";
pub const FINAL_REPORT: &str = "report.json";

impl RunManifest {
    pub fn load(work: &Path) -> Result<Option<Self>> {
        let path = work.join(RUN_MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn completed(&self) -> Vec<Stage> {
        self.stages.iter().map(|r| r.stage).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop once this stage has completed.
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub work_dir: PathBuf,
    pub executed: Vec<Stage>,
    pub reused: Vec<Stage>,
    /// Present once the predict stage has run.
    pub final_mask: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<ScoreReport>,
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::format(path.display().to_string(), e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::format("json", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| PipelineError::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("listed under root").to_path_buf());
        }
    }
    Ok(())
}

fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|f| Ok((f.to_string_lossy().replace('\\', "/"), file_hash(&dir.join(&f))?)))
        .collect()
}

/// Path of `target` as seen from `from_dir`; both relative to the same root.
pub fn relative_to(from_dir: &Path, target: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in from_dir.components() {
        if matches!(c, Component::Normal(_)) {
            out.push("..");
        }
    }
    out.join(target)
}

/// Spreads `budget` over clusters as evenly as their populations allow.
/// Leftover units go to the lowest-numbered clusters with spare tiles.
pub fn water_fill(budget: usize, populations: &[usize]) -> Result<Vec<usize>> {
    let total: usize = populations.iter().sum();
    if budget > total {
        return Err(PipelineError::Config(format!(
            "label budget {budget} exceeds the {total} clustered tiles"
        )));
    }
    let mut quotas = vec![0; populations.len()];
    let mut left = budget;
    while left > 0 {
        let open: Vec<usize> = (0..populations.len()).filter(|&c| quotas[c] < populations[c]).collect();
        let share = left / open.len();
        if share == 0 {
            for &c in open.iter().take(left) {
                quotas[c] += 1;
            }
            break;
        }
        for &c in &open {
            let add = share.min(populations[c] - quotas[c]);
            quotas[c] += add;
            left -= add;
        }
    }
    Ok(quotas)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedTile {
    pub tile: String,
    pub cluster: usize,
    pub split: Split,
}

/// Builds the mask of one pool tile from its annotation or proposal file.
pub fn label_tile(cfg: &PipelineConfig, mode: LabelSource, name: &str) -> Result<MaskBuffer> {
    let side = cfg.tiling.window;
    let mask = match mode {
        LabelSource::Polygon => {
            let dir = cfg
                .paths
                .annotations_dir
                .as_ref()
                .ok_or_else(|| PipelineError::Config("polygon labeling needs paths.annotations_dir".into()))?;
            let ann = load_annotation(cfg.resolve(dir).join(format!("{name}.json")))?;
            rasterize(&ann, &cfg.labeling.label)?
        }
        LabelSource::Proposal => {
            let dir = cfg
                .paths
                .proposals_dir
                .as_ref()
                .ok_or_else(|| PipelineError::Config("proposal labeling needs paths.proposals_dir".into()))?;
            let props = load_proposals(cfg.resolve(dir).join(format!("{name}.json")))?;
            merge_proposals(&filter_proposals(&props, &cfg.labeling.filter), side, side)?
        }
    };
    if (mask.width(), mask.height()) != (side, side) {
        return Err(PipelineError::format(
            format!("label for tile {name}"),
            format!("{}x{} mask for a {side}px tile", mask.width(), mask.height()),
        ));
    }
    Ok(mask)
}

/// Crops the larger of two masks to their common region.
fn common_region(a: &MaskBuffer, b: &MaskBuffer) -> Result<(MaskBuffer, MaskBuffer)> {
    let (w, h) = (a.width().min(b.width()), a.height().min(b.height()));
    let cut = |m: &MaskBuffer| -> Result<MaskBuffer> {
        if (m.width(), m.height()) == (w, h) {
            return Ok(m.clone());
        }
        let labels = (0..h).flat_map(|y| (0..w).map(move |x| m.get(x, y))).collect();
        Ok(MaskBuffer::new(w, h, labels)?)
    };
    Ok((cut(a)?, cut(b)?))
}

/// Foreground IoU and F1 of a full-image prediction against ground truth.
pub fn score_full(pred: &MaskBuffer, truth: &MaskBuffer) -> Result<ScoreReport> {
    let (p, t) = common_region(pred, truth)?;
    let key = "source".to_string();
    Ok(score_dataset(
        &BTreeMap::from([(key.clone(), p)]),
        &BTreeMap::from([(key, t)]),
        MiouVariant::Foreground,
    )?)
}

pub fn source_grid(cfg: &PipelineConfig, source: &ImageBuffer) -> Result<TileGrid> {
    Ok(compute_grid(
        source.width(),
        source.height(),
        cfg.tiling.window,
        cfg.tiling.margin,
        cfg.tiling.source_mode,
    )?)
}

/// Predicts the whole source image and scores it against its ground truth.
pub fn evaluate_on_source(cfg: &PipelineConfig, model: &ModelParams<f32>) -> Result<ScoreReport> {
    let source = load_image(cfg.resolve(&cfg.paths.source_image))?;
    let truth_path = cfg
        .paths
        .source_mask
        .as_ref()
        .ok_or_else(|| PipelineError::Config("evaluation needs paths.source_mask".into()))?;
    let truth = load_mask(cfg.resolve(truth_path))?;
    let pred = predict_full(model, &source, &source_grid(cfg, &source)?, cfg.unet.threshold)?;
    score_full(&pred, &truth)
}

fn check_input_size(cfg: &PipelineConfig) -> Result<()> {
    let w = cfg.tiling.window;
    if cfg.unet.input != w {
        return Err(PipelineError::Config(format!("unet.input {} differs from window {w}", cfg.unet.input)));
    }
    Ok(())
}

/// Tiles stored by the crop stage, in grid order.
pub fn load_tiles(crop_dir: &Path) -> Result<Vec<(TileId, ImageBuffer)>> {
    let grid: TileGrid = read_json(&crop_dir.join("grid.json"))?;
    grid.ids()
        .map(|id| Ok((id, load_image(crop_dir.join("tiles").join(format!("{}.png", tile_name(id))))?)))
        .collect()
}

struct Runner {
    work: PathBuf,
    manifest: RunManifest,
    keys: BTreeMap<Stage, String>,
    executed: Vec<Stage>,
    reused: Vec<Stage>,
}

impl Runner {
    fn dir(&self, stage: Stage) -> PathBuf {
        self.work.join(self.rel_dir(stage))
    }

    fn rel_dir(&self, stage: Stage) -> PathBuf {
        let key = &self.keys[&stage];
        Path::new("stages").join(format!("{}-{}", stage.name(), &key[..16]))
    }

    fn key(&self, stage: Stage, parents: &[Stage], params: &serde_json::Value, inputs: &[PathBuf]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(params.to_string().as_bytes());
        for p in parents {
            h.update(self.keys[p].as_bytes());
        }
        for i in inputs {
            h.update(file_hash(i)?.as_bytes());
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    fn reusable(&self, stage: Stage, key: &str) -> bool {
        let Some(rec) = self.manifest.record(stage) else {
            return false;
        };
        if rec.key != key {
            return false;
        }
        let dir = self.work.join(&rec.dir);
        dir.is_dir() && hash_outputs(&dir).is_ok_and(|h| h == rec.outputs)
    }

    /// Runs `body` for `stage` unless a matching completed record exists.
    fn stage(
        &mut self,
        stage: Stage,
        parents: &[Stage],
        params: serde_json::Value,
        inputs: &[PathBuf],
        body: impl FnOnce(&Self, &Path) -> Result<()>,
    ) -> Result<()> {
        let wrap = |e: PipelineError| PipelineError::Stage {
            stage,
            source: Box::new(e),
        };
        let key = self.key(stage, parents, &params, inputs).map_err(wrap)?;
        self.keys.insert(stage, key.clone());
        if self.reusable(stage, &key) {
            log::info!("stage {stage}: reusing {}", self.rel_dir(stage).display());
            self.reused.push(stage);
            return Ok(());
        }
        log::info!("stage {stage}: running");
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| wrap(PipelineError::io(&dir, e)))?;
        }
        create_dir(&dir).map_err(wrap)?;
        body(self, &dir).map_err(wrap)?;
        let outputs = hash_outputs(&dir).map_err(wrap)?;
        self.manifest.stages.retain(|r| r.stage != stage);
        self.manifest.stages.push(StageRecord {
            stage,
            key,
            dir: self.rel_dir(stage),
            outputs,
            completed_at: chrono::Utc::now().to_rfc3339(),
        });
        self.manifest.stages.sort_by_key(|r| r.stage);
        write_json(&self.manifest, &self.work.join(RUN_MANIFEST)).map_err(wrap)?;
        self.executed.push(stage);
        Ok(())
    }
}

fn json<T: Serialize>(v: T) -> serde_json::Value {
    serde_json::to_value(v).expect("config values serialize")
}

/// Runs every stage in order, reusing completed ones.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let work = cfg.work_dir();
    create_dir(&work)?;
    let manifest = RunManifest::load(&work)?.unwrap_or(RunManifest {
        seed: cfg.seed,
        stages: Vec::new(),
    });
    let mut r = Runner {
        work: work.clone(),
        manifest,
        keys: BTreeMap::new(),
        executed: Vec::new(),
        reused: Vec::new(),
    };
    r.manifest.seed = cfg.seed;
    let stop = |r: &Runner, s: Stage| opts.stop_after == Some(s) && r.keys.contains_key(&s);
    let pool = cfg.resolve(&cfg.paths.pool_image);

    r.stage(Stage::Crop, &[], json(cfg.tiling), &[pool.clone()], |_, dir| {
        let image = load_image(&pool)?;
        let t = cfg.tiling;
        let grid = compute_grid(image.width(), image.height(), t.window, t.margin, t.pool_mode)?;
        let tiles = crop(&image, &grid)?;
        create_dir(&dir.join("tiles"))?;
        for (id, tile) in &tiles {
            save_image(tile, dir.join("tiles").join(format!("{}.png", tile_name(*id))))?;
        }
        write_json(&grid, &dir.join("grid.json"))
    })?;
    if stop(&r, Stage::Crop) {
        return Ok(outcome(r, None));
    }

    let ae_params = json((&cfg.autoencoder, cfg.stage_seed("autoencoder")));
    r.stage(Stage::Autoencoder, &[Stage::Crop], ae_params, &[], |r, dir| {
        if cfg.autoencoder.input != cfg.tiling.window {
            return Err(PipelineError::Config(format!(
                "autoencoder.input {} differs from window {}",
                cfg.autoencoder.input, cfg.tiling.window
            )));
        }
        let tiles: Vec<ImageBuffer> = load_tiles(&r.dir(Stage::Crop))?.into_iter().map(|t| t.1).collect();
        let run = train_autoencoder(&tiles, &cfg.autoencoder, cfg.stage_seed("autoencoder"))?;
        save_params(&run.model, dir.join("autoencoder.cfosnn"))?;
        write_json(&run.history, &dir.join("history.json"))
    })?;
    if stop(&r, Stage::Autoencoder) {
        return Ok(outcome(r, None));
    }

    r.stage(Stage::Encode, &[Stage::Crop, Stage::Autoencoder], json(()), &[], |r, dir| {
        let model = load_params(r.dir(Stage::Autoencoder).join("autoencoder.cfosnn"))?;
        let codes = encode_tiles(&model, &load_tiles(&r.dir(Stage::Crop))?)?;
        save_codes(&codes, dir.join("codes.bin"))?;
        Ok(())
    })?;
    if stop(&r, Stage::Encode) {
        return Ok(outcome(r, None));
    }

    let cluster_seed = cfg.stage_seed("cluster");
    r.stage(Stage::Cluster, &[Stage::Encode], json((cfg.cluster.k, cluster_seed)), &[], |r, dir| {
        let codes = load_codes(r.dir(Stage::Encode).join("codes.bin"))?;
        let model = kmeans(&codes, cfg.cluster.k, cluster_seed)?;
        write_json(&model, &dir.join("clusters.json"))?;
        write_json(&cluster_report(&model), &dir.join("report.json"))
    })?;
    if stop(&r, Stage::Cluster) {
        return Ok(outcome(r, None));
    }

    let select_params = json((&cfg.cluster, cfg.stage_seed("select"), cfg.stage_seed("split")));
    r.stage(Stage::Select, &[Stage::Cluster], select_params, &[], |r, dir| {
        let clusters: ClusterModel = read_json(&r.dir(Stage::Cluster).join("clusters.json"))?;
        let quotas = match &cfg.cluster.quotas {
            Some(q) => q.clone(),
            None => water_fill(cfg.cluster.label_budget, &clusters.populations())?,
        };
        let selected = select_tiles(cfg, &clusters, &quotas, "select")?;
        write_json(&selected, &dir.join("selection.json"))
    })?;
    if stop(&r, Stage::Select) {
        return Ok(outcome(r, None));
    }

    // Label inputs are the external files of the selected tiles.
    let selection: Vec<SelectedTile> = read_json(&r.dir(Stage::Select).join("selection.json"))?;
    let label_inputs = selection
        .iter()
        .map(|s| label_source_path(cfg, cfg.labeling.mode, &s.tile))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| PipelineError::Stage {
            stage: Stage::Label,
            source: Box::new(e),
        })?;
    r.stage(Stage::Label, &[Stage::Crop, Stage::Select], json(&cfg.labeling), &label_inputs, |r, dir| {
        let tiles_rel = relative_to(&r.rel_dir(Stage::Label), &r.rel_dir(Stage::Crop).join("tiles"));
        let manifest = write_labels(cfg, &selection, dir, &tiles_rel)?;
        manifest_save(&manifest, dir.join("manifest.json"))?;
        Ok(())
    })?;
    if stop(&r, Stage::Label) {
        return Ok(outcome(r, None));
    }

    let train_params = json((&cfg.unet, cfg.train_params("train"), cfg.stage_seed("unet-init")));
    r.stage(Stage::Train, &[Stage::Label], train_params, &[], |r, dir| {
        check_input_size(cfg)?;
        let label_dir = r.dir(Stage::Label);
        let manifest = manifest_load(label_dir.join("manifest.json"))?;
        let (model, run) = train_on_manifest(cfg, &manifest, &label_dir, "train")?;
        save_params(&model, dir.join("model.cfosnn"))?;
        write_json(&run, &dir.join("train_run.json"))
    })?;
    if stop(&r, Stage::Train) {
        return Ok(outcome(r, None));
    }

    let source = cfg.resolve(&cfg.paths.source_image);
    let predict_params = json((cfg.tiling, cfg.unet.threshold));
    r.stage(Stage::Predict, &[Stage::Train], predict_params, &[source.clone()], |r, dir| {
        let model = load_params(r.dir(Stage::Train).join("model.cfosnn"))?;
        let image = load_image(&source)?;
        let grid = source_grid(cfg, &image)?;
        let mask = predict_full(&model, &image, &grid, cfg.unet.threshold)?;
        save_mask(&mask, dir.join("mask.png"))?;
        write_json(&grid, &dir.join("grid.json"))
    })?;
    let copy = |from: PathBuf, to: &str| -> Result<PathBuf> {
        let dest = work.join(to);
        fs::copy(&from, &dest).map_err(|e| PipelineError::io(&from, e))?;
        Ok(dest)
    };
    let final_mask = copy(r.dir(Stage::Predict).join("mask.png"), FINAL_MASK)?;
    let model_path = copy(r.dir(Stage::Train).join("model.cfosnn"), FINAL_MODEL)?;
    if stop(&r, Stage::Predict) {
        return Ok(outcome(r, Some((final_mask, model_path, None))));
    }

    let report = match &cfg.paths.source_mask {
        None => None,
        Some(truth) => {
            let truth = cfg.resolve(truth);
            r.stage(Stage::Evaluate, &[Stage::Predict], json(()), &[truth.clone()], |r, dir| {
                let pred = cfos_core::load_mask(r.dir(Stage::Predict).join("mask.png"))?;
                let report = score_full(&pred, &load_mask(&truth)?)?;
                write_json(&report, &dir.join("report.json"))
            })?;
            let path = copy(r.dir(Stage::Evaluate).join("report.json"), FINAL_REPORT)?;
            Some(read_json::<ScoreReport>(&path)?)
        }
    };
    Ok(outcome(r, Some((final_mask, model_path, report))))
}

type Finals = (PathBuf, PathBuf, Option<ScoreReport>);

fn outcome(r: Runner, finals: Option<Finals>) -> RunOutcome {
    let (final_mask, model, report) = match finals {
        Some((m, p, rep)) => (Some(m), Some(p), rep),
        None => (None, None, None),
    };
    RunOutcome {
        work_dir: r.work,
        executed: r.executed,
        reused: r.reused,
        final_mask,
        model,
        report,
    }
}

/// External file a tile's label is built from.
pub fn label_source_path(cfg: &PipelineConfig, mode: LabelSource, tile: &str) -> Result<PathBuf> {
    let dir = match mode {
        LabelSource::Polygon => &cfg.paths.annotations_dir,
        LabelSource::Proposal => &cfg.paths.proposals_dir,
    };
    let dir = dir
        .as_ref()
        .ok_or_else(|| PipelineError::Config(format!("{mode:?} labeling has no input directory")))?;
    Ok(cfg.resolve(dir).join(format!("{tile}.json")))
}

/// Cluster-stratified selection with a seeded train/val split.
pub fn select_tiles(
    cfg: &PipelineConfig,
    clusters: &ClusterModel,
    quotas: &[usize],
    label: &str,
) -> Result<Vec<SelectedTile>> {
    let pool = DatasetManifest {
        seed: cfg.seed,
        entries: clusters
            .assignments
            .keys()
            .map(|id| ManifestEntry {
                image_path: PathBuf::from(format!("{}.png", tile_name(*id))),
                mask_path: PathBuf::new(),
                cluster_index: None,
                split: Split::Train,
                provenance: Provenance::Manual,
            })
            .collect(),
    };
    let picked = stratified_select(&pool, clusters, quotas, cfg.stage_seed(label))?;
    let mut tiles: Vec<SelectedTile> = picked
        .entries
        .iter()
        .map(|e| SelectedTile {
            tile: e.image_path.file_stem().expect("named above").to_string_lossy().into_owned(),
            cluster: e.cluster_index.expect("set by selection"),
            split: Split::Train,
        })
        .collect();
    assign_val_split(&mut tiles, cfg.cluster.val_fraction, cfg.stage_seed("split"));
    Ok(tiles)
}

/// Marks a seeded `fraction` of the tiles (rounded to nearest) as validation.
pub fn assign_val_split(tiles: &mut [SelectedTile], fraction: f64, seed: u64) {
    let n_val = (tiles.len() as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &order[..n_val.min(tiles.len())] {
        tiles[i].split = Split::Val;
    }
}

/// Writes `masks/<tile>.png` under `dir` and returns the matching manifest,
/// whose image paths are `tiles_rel/<tile>.png`.
pub fn write_labels(
    cfg: &PipelineConfig,
    selection: &[SelectedTile],
    dir: &Path,
    tiles_rel: &Path,
) -> Result<DatasetManifest> {
    create_dir(&dir.join("masks"))?;
    let provenance = match cfg.labeling.mode {
        LabelSource::Polygon => Provenance::Manual,
        LabelSource::Proposal => Provenance::Proposal,
    };
    let mut manifest = DatasetManifest::new(cfg.seed);
    for s in selection {
        parse_tile_name(&s.tile)?;
        let mask = label_tile(cfg, cfg.labeling.mode, &s.tile)?;
        let mask_rel = Path::new("masks").join(format!("{}.png", s.tile));
        save_mask(&mask, dir.join(&mask_rel))?;
        manifest.entries.push(ManifestEntry {
            image_path: tiles_rel.join(format!("{}.png", s.tile)),
            mask_path: mask_rel,
            cluster_index: Some(s.cluster),
            split: s.split,
            provenance,
        });
    }
    Ok(manifest)
}

/// Trains a fresh U-Net on the train split of `manifest`, validating on its
/// val split. `stage` names the seed stream.
pub fn train_on_manifest(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    base_dir: &Path,
    stage: &str,
) -> Result<(ModelParams<f32>, cfos_core::TrainRun)> {
    let part = |split: Split| DatasetManifest {
        seed: manifest.seed,
        entries: manifest.split(split).cloned().collect(),
    };
    let train = load_samples(&part(Split::Train), base_dir)?;
    let val = load_samples(&part(Split::Val), base_dir)?;
    let model = build_unet(&cfg.unet, cfg.stage_seed("unet-init"))?;
    Ok(train_unet(model, &train, &val, &cfg.train_params(stage))?)
}

/// The crop stage's tile for `name`, cut directly from the pool image.
pub fn pool_tile(cfg: &PipelineConfig, pool: &ImageBuffer, name: &str) -> Result<ImageBuffer> {
    let t = cfg.tiling;
    let grid = compute_grid(pool.width(), pool.height(), t.window, t.margin, t.pool_mode)?;
    Ok(crop_tile(pool, &grid, parse_tile_name(name)?)?)
}

/// Directory of a completed stage of the last run in `work`.
pub fn stage_dir(work: &Path, stage: Stage) -> Result<PathBuf> {
    let manifest = RunManifest::load(work)?.ok_or_else(|| {
        PipelineError::Config(format!("no completed run in {}", work.display()))
    })?;
    let rec = manifest
        .record(stage)
        .ok_or_else(|| PipelineError::Config(format!("stage {stage} has not completed in {}", work.display())))?;
    Ok(work.join(&rec.dir))
}
