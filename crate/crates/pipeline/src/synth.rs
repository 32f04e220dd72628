//! Synthetic micrograph corpus with exact ground truth.
//!
//! Bright sigmoid-edged ellipses stand in for stained nuclei. Backgrounds come
//! in five kinds (near-black, sparse tissue, dense tissue, stripes, grain) laid
//! out block by block, so a slide mixes kinds the way real sections do.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cfos_core::labeling::{save_annotation, save_proposals, MaskProposal, PolygonAnnotation};
use cfos_core::tiling::crop_tile;
use cfos_core::{compute_grid, save_image, save_mask, tile_name, GridMode, ImageBuffer, MaskBuffer, TileGrid};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::config::{LabelSource, PipelineConfig};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileKind {
    Black,
    Sparse,
    Dense,
    Stripes,
    Noise,
}

pub const KINDS: [TileKind; 5] = [
    TileKind::Black,
    TileKind::Sparse,
    TileKind::Dense,
    TileKind::Stripes,
    TileKind::Noise,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub pool_cols: usize,
    pub pool_rows: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub window: usize,
    pub margin: usize,
    /// Relative frequency of each kind, in [`KINDS`] order.
    pub kind_weights: [f64; 5],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            pool_cols: 16,
            pool_rows: 16,
            source_width: 1024,
            source_height: 768,
            window: 128,
            margin: 4,
            kind_weights: [0.35, 0.2, 0.15, 0.15, 0.15],
        }
    }
}

impl SynthConfig {
    /// Smallest near-square pool grid with at least `tiles` tiles.
    pub fn with_pool_tiles(mut self, tiles: usize) -> Self {
        let cols = ((tiles.max(1) as f64).sqrt().ceil() as usize).max(1);
        self.pool_cols = cols;
        self.pool_rows = tiles.max(1).div_ceil(cols);
        self
    }

    pub fn stride(&self) -> usize {
        self.window - 2 * self.margin
    }

    pub fn pool_tiles(&self) -> usize {
        self.pool_cols * self.pool_rows
    }
}

/// One bright ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
    pub amplitude: f64,
}

impl Blob {
    /// Normalised elliptical radius; 1 on the boundary.
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        (u * u + v * v).sqrt()
    }

    fn reach(&self) -> f64 {
        self.rx.max(self.ry) + 3.0
    }

    /// Pixel box `[x0, y0, x1, y1)` that contains all visible intensity.
    fn pixel_box(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let r = self.reach();
        let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        (
            clamp((self.cx - r).floor(), w),
            clamp((self.cy - r).floor(), h),
            clamp((self.cx + r).ceil() + 1.0, w),
            clamp((self.cy + r).ceil() + 1.0, h),
        )
    }

    fn boundary(&self, vertices: usize) -> Vec<[f64; 2]> {
        let (s, c) = self.angle.sin_cos();
        (0..vertices)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / vertices as f64;
                let (u, v) = (self.rx * t.cos(), self.ry * t.sin());
                [self.cx + u * c - v * s, self.cy + u * s + v * c]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageBuffer,
    pub mask: MaskBuffer,
    pub blobs: Vec<Blob>,
    /// Kind of every `block × block` cell, row-major.
    pub kinds: Vec<TileKind>,
}

fn blob_count(kind: TileKind, rng: &mut ChaCha8Rng) -> usize {
    match kind {
        TileKind::Black => usize::from(rng.random_bool(0.15)),
        TileKind::Sparse => rng.random_range(1..=3),
        TileKind::Dense => rng.random_range(6..=12),
        TileKind::Stripes | TileKind::Noise => rng.random_range(0..=2),
    }
}

fn paint_background(
    px: &mut [f32],
    width: usize,
    (x0, y0, x1, y1): (usize, usize, usize, usize),
    kind: TileKind,
    rng: &mut ChaCha8Rng,
) {
    let grain = Normal::new(0.0, 0.012).expect("valid std");
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tissue: f64 = rng.random_range(0.08..0.2);
    let period: f64 = rng.random_range(10.0..24.0);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (ts, tc) = theta.sin_cos();
    for y in y0..y1 {
        for x in x0..x1 {
            let (fx, fy) = (x as f64, y as f64);
            let v = match kind {
                TileKind::Black => 0.02 + grain.sample(rng),
                TileKind::Sparse | TileKind::Dense => {
                    tissue + 0.04 * (fx / 9.0 + phase).sin() * (fy / 11.0 - phase).cos() + grain.sample(rng)
                }
                TileKind::Stripes => {
                    let t = (fx * tc + fy * ts) / period * std::f64::consts::TAU + phase;
                    0.25 + 0.2 * t.sin() + grain.sample(rng)
                }
                TileKind::Noise => rng.random_range(0.0..0.45),
            };
            px[y * width + x] = v.clamp(0.0, 0.5) as f32;
        }
    }
}

/// Renders a `width × height` scene with kinds assigned per `block` cell.
pub fn render_scene(width: usize, height: usize, block: usize, weights: &[f64; 5], seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(weights).expect("positive kind weights");
    let mut px = vec![0.0f32; width * height];
    let mut blobs: Vec<Blob> = Vec::new();
    let mut kinds = Vec::new();
    for by in (0..height).step_by(block) {
        for bx in (0..width).step_by(block) {
            let kind = KINDS[pick.sample(&mut rng)];
            kinds.push(kind);
            let cell = (bx, by, (bx + block).min(width), (by + block).min(height));
            paint_background(&mut px, width, cell, kind, &mut rng);
            let wanted = blob_count(kind, &mut rng);
            let mut placed = 0;
            for _ in 0..wanted * 40 {
                if placed == wanted {
                    break;
                }
                let b = Blob {
                    cx: rng.random_range(cell.0 as f64..cell.2 as f64),
                    cy: rng.random_range(cell.1 as f64..cell.3 as f64),
                    rx: rng.random_range(4.0..8.0),
                    ry: rng.random_range(4.0..8.0),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    amplitude: rng.random_range(0.7..1.0),
                };
                let clear = blobs.iter().all(|o| {
                    let d = ((o.cx - b.cx).powi(2) + (o.cy - b.cy).powi(2)).sqrt();
                    d > o.reach() + b.reach()
                });
                if clear {
                    blobs.push(b);
                    placed += 1;
                }
            }
        }
    }
    let mut labels = vec![0u8; width * height];
    for b in &blobs {
        let (x0, y0, x1, y1) = b.pixel_box(width, height);
        for y in y0..y1 {
            for x in x0..x1 {
                let r = b.radius(x as f64 + 0.5, y as f64 + 0.5);
                let v = b.amplitude / (1.0 + (-(1.0 - r) * 10.0).exp());
                let i = y * width + x;
                px[i] = px[i].max(v as f32);
                if r <= 1.0 {
                    labels[i] = 1;
                }
            }
        }
    }
    Scene {
        image: ImageBuffer::new(width, height, px).expect("pixels in range"),
        mask: MaskBuffer::new(width, height, labels).expect("binary labels"),
        blobs,
        kinds,
    }
}

/// File layout of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub config: SynthConfig,
    pub pool_tiles: usize,
    pub kinds: BTreeMap<String, TileKind>,
    pub source_foreground: f64,
}

pub const CORPUS_CONFIG: &str = "pipeline.toml";

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::format("json", e))?;
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn tile_origin(grid: &TileGrid, id: cfos_core::TileId) -> (f64, f64) {
    let (x, y) = grid.origin(id);
    (x as f64, y as f64)
}

fn tile_proposals(
    blobs: &[&Blob],
    origin: (f64, f64),
    window: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<MaskProposal> {
    let mut out = Vec::new();
    for b in blobs {
        let mut m = MaskBuffer::zeros(window, window);
        for y in 0..window {
            for x in 0..window {
                if b.radius(origin.0 + x as f64 + 0.5, origin.1 + y as f64 + 0.5) <= 1.0 {
                    m.set(x, y, true);
                }
            }
        }
        if m.count_foreground() > 0 {
            out.push(MaskProposal::from_bitmap(
                m,
                rng.random_range(0.85..0.98),
                rng.random_range(0.92..0.99),
                vec![[b.cx - origin.0, b.cy - origin.1]],
            ));
        }
    }
    let rect = |x0: usize, y0: usize, w: usize, h: usize| {
        let mut m = MaskBuffer::zeros(window, window);
        for y in y0..(y0 + h).min(window) {
            for x in x0..(x0 + w).min(window) {
                m.set(x, y, true);
            }
        }
        m
    };
    // Background region: too large to be a nucleus.
    if rng.random_bool(0.5) {
        let m = rect(rng.random_range(0..40), rng.random_range(0..40), 75, 75);
        out.push(MaskProposal::from_bitmap(m, 0.9, 0.96, vec![[64.0, 64.0]]));
    }
    // Speck: too small.
    if rng.random_bool(0.5) {
        let m = rect(rng.random_range(0..120), rng.random_range(0..120), 3, 4);
        out.push(MaskProposal::from_bitmap(m, 0.8, 0.97, vec![[0.0, 0.0]]));
    }
    // Plausible size, unstable.
    if rng.random_bool(0.5) {
        let m = rect(rng.random_range(0..110), rng.random_range(0..110), 12, 10);
        let stability = rng.random_range(0.6..0.88);
        out.push(MaskProposal::from_bitmap(m, 0.7, stability, vec![[0.0, 0.0]]));
    }
    out
}

/// Pipeline config matching a corpus written by [`generate`].
pub fn corpus_pipeline_config(cfg: &SynthConfig) -> PipelineConfig {
    let mut p = PipelineConfig {
        seed: cfg.seed,
        ..PipelineConfig::default()
    };
    p.paths.pool_image = "pool.png".into();
    p.paths.source_image = "source.png".into();
    p.paths.source_mask = Some("source_mask.png".into());
    p.paths.annotations_dir = Some("annotations".into());
    p.paths.proposals_dir = Some("proposals".into());
    p.paths.truth_dir = Some("truth".into());
    p.paths.work_dir = "work".into();
    p.tiling.window = cfg.window;
    p.tiling.margin = cfg.margin;
    p.tiling.pool_mode = GridMode::Paper;
    p.labeling.mode = LabelSource::Polygon;
    // Tiny training sets collapse to all-background at batch 8 within 15 epochs.
    p.experiments.batch_size = Some(1);
    p.experiments.epochs = Some(30);
    p
}

/// Writes a full corpus to `out`: source and pool slides with exact masks,
/// per-tile polygon annotations, proposal files and truth masks, a summary
/// and a matching pipeline config.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<CorpusSummary> {
    if cfg.window <= 2 * cfg.margin {
        return Err(PipelineError::Config("window must exceed twice the margin".into()));
    }
    let dirs = ["annotations", "proposals", "truth"].map(|d| out.join(d));
    for d in std::iter::once(&out.to_path_buf()).chain(dirs.iter()) {
        fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }
    let stride = cfg.stride();

    let source = render_scene(cfg.source_width, cfg.source_height, stride, &cfg.kind_weights, cfg.seed ^ 0x50);
    save_image(&source.image, out.join("source.png"))?;
    save_mask(&source.mask, out.join("source_mask.png"))?;

    let (pw, ph) = (cfg.pool_cols * stride, cfg.pool_rows * stride);
    let pool = render_scene(pw, ph, stride, &cfg.kind_weights, cfg.seed ^ 0x9001);
    save_image(&pool.image, out.join("pool.png"))?;
    save_mask(&pool.mask, out.join("pool_mask.png"))?;

    let grid = compute_grid(pw, ph, cfg.window, cfg.margin, GridMode::Paper)?;
    debug_assert_eq!((grid.cols, grid.rows), (cfg.pool_cols, cfg.pool_rows));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a7a);
    let mut kinds = BTreeMap::new();
    for id in grid.ids() {
        let name = tile_name(id);
        kinds.insert(name.clone(), pool.kinds[id.row * cfg.pool_cols + id.col]);
        let origin = tile_origin(&grid, id);
        let win = cfg.window as f64;
        let touching: Vec<&Blob> = pool
            .blobs
            .iter()
            .filter(|b| {
                let r = b.reach();
                b.cx + r >= origin.0 && b.cx - r <= origin.0 + win && b.cy + r >= origin.1 && b.cy - r <= origin.1 + win
            })
            .collect();
        let mut ann = PolygonAnnotation::new(cfg.window, cfg.window);
        for b in &touching {
            let pts = b.boundary(24).into_iter().map(|[x, y]| [x - origin.0, y - origin.1]).collect();
            ann.push_polygon("cfos", pts);
        }
        save_annotation(&ann, out.join("annotations").join(format!("{name}.json")))?;
        let props = tile_proposals(&touching, origin, cfg.window, &mut rng);
        save_proposals(&props, out.join("proposals").join(format!("{name}.json")))?;
        let truth: MaskBuffer = crop_tile(&pool.mask, &grid, id)?;
        save_mask(&truth, out.join("truth").join(format!("{name}.png")))?;
    }

    let summary = CorpusSummary {
        config: cfg.clone(),
        pool_tiles: grid.tile_count(),
        kinds,
        source_foreground: source.mask.count_foreground() as f64
            / (cfg.source_width * cfg.source_height) as f64,
    };
    write_json(&summary, &out.join("corpus.json"))?;
    corpus_pipeline_config(cfg).save(out.join(CORPUS_CONFIG))?;
    Ok(summary)
}

pub fn corpus_config_path(dir: &Path) -> PathBuf {
    dir.join(CORPUS_CONFIG)
}
