use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cfos_core::features::{
    cluster_report, encode_tiles, kmeans, load_codes, save_codes, train_autoencoder_with, tsne, AutoencoderConfig,
    LatentCode,
};
use cfos_core::labeling::{filter_proposals, load_annotation, load_proposals, merge_proposals, rasterize, ProposalFilter};
use cfos_core::metrics::{score_dataset, MiouVariant};
use cfos_core::nn::{load_params, save_params};
use cfos_core::{
    build_unet, compute_grid, crop, load_image, load_mask, manifest_load, parse_tile_name, predict_full, save_image,
    save_mask, stitch, tile_name, train_unet, DatasetManifest, GridMode, ImageBuffer, MaskBuffer, Split, TileGrid,
    TileId, TrainParams,
};
use cfos_pipeline::experiments::{methods, methods_csv, size_sweep, sweep_csv, write_csv};
use cfos_pipeline::iterate::{simulate_review, ReviewStore};
use cfos_pipeline::synth::{generate, SynthConfig};
use cfos_pipeline::{run_pipeline, PipelineConfig, RunOptions, Stage};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cfos", version, about = "Tiled segmentation of large grayscale micrographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut an image into overlapping windows named `{row}-{col}.png`.
    Crop {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 128)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        margin: usize,
        #[arg(long, value_enum, default_value_t = Mode::Paper)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reassemble tiles from their central regions.
    Stitch {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the convolutional autoencoder on a directory of tiles.
    Autoencoder {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode tiles into latent codes.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-means over latent codes; writes `tile_name,cluster` lines.
    Cluster {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact 2-D t-SNE of latent codes as CSV `tile_name,x,y,cluster`.
    Tsne {
        #[arg(long)]
        codes: PathBuf,
        /// Output of `cluster`, used to fill the cluster column.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a U-Net on the train split of a manifest, validating on its val split.
    Train {
        /// Pipeline config supplying the U-Net layout.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a full image tile by tile and stitch the masks.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 128)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        margin: usize,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Polygon annotations to masks.
    Rasterize {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long, default_value = "cfos")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter mask proposals and merge the survivors into one mask per file.
    Proposals {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 30)]
        min_area: usize,
        #[arg(long, default_value_t = 4000)]
        max_area: usize,
        #[arg(long, default_value_t = 0.9)]
        min_stability: f64,
        #[arg(long, default_value_t = 0.0)]
        min_predicted_iou: f64,
        /// Mask side used for files without any proposal.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth with matching file names.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::Foreground)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Whole-workflow commands.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Synthetic corpus generation.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long, default_value = "pipeline.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run (or resume) every stage.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        stop_after: Option<String>,
    },
    /// Training-set size sweep on the held-out source.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Compare labeling strategies at a fixed budget.
    Methods {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Start the review loop, or train the next round once reviews are in.
    Iterate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Train even though items are still pending.
        #[arg(long)]
        force: bool,
    },
    /// Serve the review queue over HTTP.
    Serve {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of static files for the review client.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a synthetic corpus with exact masks.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Minimum number of pool tiles.
        #[arg(long, default_value_t = 256)]
        tiles: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    Full,
}

impl From<Mode> for GridMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Paper => GridMode::Paper,
            Mode::Full => GridMode::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Foreground,
    ClassMean,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    files_with_ext(dir, "png")
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Tiles of a directory whose file names parse as tile ids, in id order.
fn load_tile_dir(dir: &Path) -> Result<Vec<(TileId, ImageBuffer)>> {
    let mut tiles = Vec::new();
    for p in png_files(dir)? {
        if let Ok(id) = parse_tile_name(&stem(&p)) {
            tiles.push((id, load_image(&p)?));
        }
    }
    tiles.sort_by_key(|t| t.0);
    if tiles.is_empty() {
        bail!("no `{{row}}-{{col}}.png` tiles in {}", dir.display());
    }
    Ok(tiles)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_clusters(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (t, c) = l.split_once(',').with_context(|| format!("bad cluster line {l:?}"))?;
            Ok((t.to_string(), c.trim().parse()?))
        })
        .collect()
}

fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Crop { input, window, margin, mode, out } => {
            let image = load_image(&input)?;
            let grid = compute_grid(image.width(), image.height(), window, margin, mode.into())?;
            create_dir(&out)?;
            for (id, tile) in crop(&image, &grid)? {
                save_image(&tile, out.join(format!("{}.png", tile_name(id))))?;
            }
            write(&out.join("grid.json"), &serde_json::to_string_pretty(&grid)?)?;
            println!("{} x {} tiles ({} total) in {}", grid.cols, grid.rows, grid.tile_count(), out.display());
        }
        Command::Stitch { input, grid, out } => {
            let grid: TileGrid = serde_json::from_str(&fs::read_to_string(&grid)?)
                .with_context(|| format!("parsing grid file {}", grid.display()))?;
            let tiles: BTreeMap<TileId, ImageBuffer> = load_tile_dir(&input)?.into_iter().collect();
            let image = stitch(&tiles, &grid)?;
            save_image(&image, &out)?;
            println!("{}x{} written to {}", image.width(), image.height(), out.display());
        }
        Command::Autoencoder { tiles, epochs, batch, lr, seed, out } => {
            let tiles: Vec<ImageBuffer> = load_tile_dir(&tiles)?.into_iter().map(|t| t.1).collect();
            let cfg = AutoencoderConfig {
                input: tiles[0].width(),
                epochs,
                batch_size: batch,
                lr,
                ..AutoencoderConfig::default()
            };
            let run = train_autoencoder_with(&tiles, &cfg, seed, |e, loss| println!("epoch {e}: loss {loss:.6}"))?;
            save_params(&run.model, &out)?;
        }
        Command::Encode { model, tiles, out } => {
            let model = load_params(&model)?;
            let codes = encode_tiles(&model, &load_tile_dir(&tiles)?)?;
            save_codes(&codes, &out)?;
            println!("{} codes of length {}", codes.len(), codes.first().map_or(0, |c| c.code.len()));
        }
        Command::Cluster { codes, k, seed, out } => {
            let model = kmeans(&load_codes(&codes)?, k, seed)?;
            let mut text = String::from("tile_name,cluster\n");
            for (id, c) in &model.assignments {
                text.push_str(&format!("{},{c}\n", tile_name(*id)));
            }
            write(&out, &text)?;
            let report = cluster_report(&model);
            let ratios = report.ratios();
            for ((c, n), r) in report.histogram.iter().zip(ratios) {
                println!("cluster {c}: {n} tiles ({r:.2}x smallest)");
            }
        }
        Command::Tsne { codes, clusters, perplexity, seed, out } => {
            let codes: Vec<LatentCode> = load_codes(&codes)?;
            let clusters = clusters.map(|p| read_clusters(&p)).transpose()?;
            let x: Vec<Vec<f64>> = codes.iter().map(|c| c.code.iter().map(|&v| f64::from(v)).collect()).collect();
            let emb = tsne(&x, perplexity, seed)?;
            let mut text = String::from("tile_name,x,y,cluster\n");
            for (c, p) in codes.iter().zip(&emb.points) {
                let name = tile_name(c.tile_id);
                let cl = clusters
                    .as_ref()
                    .and_then(|m| m.get(&name))
                    .map_or(String::new(), |c| c.to_string());
                text.push_str(&format!("{name},{},{},{cl}\n", p[0], p[1]));
            }
            write(&out, &text)?;
            println!("final KL {:.6}", emb.kl_trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::Train { config, manifest, epochs, batch, lr, seed, out } => {
            let unet = match config {
                Some(p) => load_pipeline_config(&p)?.unet,
                None => Default::default(),
            };
            let m = manifest_load(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let part = |s: Split| DatasetManifest {
                seed: m.seed,
                entries: m.split(s).cloned().collect(),
            };
            let train = cfos_core::unet::load_samples(&part(Split::Train), base)?;
            let val = cfos_core::unet::load_samples(&part(Split::Val), base)?;
            let params = TrainParams {
                epochs,
                batch_size: batch,
                seed,
                lr,
                threshold: unet.threshold,
            };
            let (model, run) = train_unet(build_unet(&unet, seed)?, &train, &val, &params)?;
            for (e, (t, v)) in run.train_loss.iter().zip(&run.val_loss).enumerate() {
                let v = v.map_or("-".to_string(), |v| format!("{v:.6}"));
                println!("epoch {}: train {t:.6} val {v}", e + 1);
            }
            save_params(&model, &out)?;
        }
        Command::Predict { model, input, window, margin, mode, threshold, out } => {
            let model = load_params(&model)?;
            let image = load_image(&input)?;
            let grid = compute_grid(image.width(), image.height(), window, margin, mode.into())?;
            let mask = predict_full(&model, &image, &grid, threshold)?;
            save_mask(&mask, &out)?;
            println!("{}x{} mask, {} foreground pixels", mask.width(), mask.height(), mask.count_foreground());
        }
        Command::Rasterize { ann, label, out } => {
            create_dir(&out)?;
            let files = files_with_ext(&ann, "json")?;
            for f in &files {
                let mask = rasterize(&load_annotation(f)?, &label)?;
                save_mask(&mask, out.join(format!("{}.png", stem(f))))?;
            }
            println!("{} masks written to {}", files.len(), out.display());
        }
        Command::Proposals { input, min_area, max_area, min_stability, min_predicted_iou, size, out } => {
            let filter = ProposalFilter {
                min_area,
                max_area,
                min_stability,
                min_predicted_iou,
            };
            filter.validate()?;
            create_dir(&out)?;
            let (mut kept, mut total) = (0, 0);
            for f in files_with_ext(&input, "json")? {
                let props = load_proposals(&f)?;
                let (w, h) = props
                    .first()
                    .map_or((size, size), |p| (p.segmentation.width(), p.segmentation.height()));
                let good = filter_proposals(&props, &filter);
                total += props.len();
                kept += good.len();
                save_mask(&merge_proposals(&good, w, h)?, out.join(format!("{}.png", stem(&f))))?;
            }
            println!("kept {kept} of {total} proposals");
        }
        Command::Evaluate { pred, truth, variant, out } => {
            let load = |dir: &Path| -> Result<BTreeMap<String, MaskBuffer>> {
                png_files(dir)?.iter().map(|p| Ok((stem(p), load_mask(p)?))).collect()
            };
            let variant = match variant {
                Variant::Foreground => MiouVariant::Foreground,
                Variant::ClassMean => MiouVariant::ClassMean,
            };
            let report = score_dataset(&load(&pred)?, &load(&truth)?, variant)?;
            let mut text = String::from("image,iou\n");
            for (id, s) in &report.per_image {
                text.push_str(&format!("{id},{s:.6}\n"));
            }
            text.push_str(&format!(
                "summary,miou={:.6},f1={:.6},variant={}\n",
                report.miou,
                report.f1,
                report.variant.name()
            ));
            write(&out, &text)?;
            println!("miou {:.4} f1 {:.4} ({})", report.miou, report.f1, report.variant.name());
        }
        Command::Pipeline(cmd) => pipeline(cmd)?,
        Command::Synth(SynthCommand::Gen { out, tiles, seed }) => {
            let cfg = SynthConfig {
                seed,
                ..SynthConfig::default()
            }
            .with_pool_tiles(tiles);
            let s = generate(&out, &cfg)?;
            println!(
                "{} pool tiles, source foreground {:.2}%, config {}",
                s.pool_tiles,
                100.0 * s.source_foreground,
                out.join(cfos_pipeline::synth::CORPUS_CONFIG).display()
            );
        }
    }
    Ok(())
}

fn pipeline(cmd: PipelineCommand) -> Result<()> {
    match cmd {
        PipelineCommand::Run { cfg, stop_after } => {
            let cfg = load_pipeline_config(&cfg.config)?;
            let stop_after = stop_after.map(|s| s.parse::<Stage>()).transpose()?;
            let out = run_pipeline(&cfg, RunOptions { stop_after })?;
            let names = |v: &[Stage]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
            println!("ran: [{}]; reused: [{}]", names(&out.executed), names(&out.reused));
            if let Some(m) = &out.final_mask {
                println!("final mask: {}", m.display());
            }
            if let Some(r) = &out.report {
                println!("foreground IoU {:.4}, F1 {:.4}", r.miou, r.f1);
            }
        }
        PipelineCommand::Sweep { cfg, sizes } => {
            let cfg = load_pipeline_config(&cfg.config)?;
            let sizes = sizes.unwrap_or_else(|| cfg.experiments.sizes.clone());
            let rows = size_sweep(&cfg, &sizes)?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            println!("written to {}", write_csv(&cfg, "sweep.csv", &csv)?.display());
        }
        PipelineCommand::Methods { cfg } => {
            let cfg = load_pipeline_config(&cfg.config)?;
            let csv = methods_csv(&methods(&cfg)?);
            print!("{csv}");
            println!("written to {}", write_csv(&cfg, "methods.csv", &csv)?.display());
        }
        PipelineCommand::Iterate { cfg, force } => {
            let cfg = load_pipeline_config(&cfg.config)?;
            let work = cfg.work_dir();
            let simulated = cfg
                .iterate
                .simulated_reviewer_iou
                .zip(cfg.paths.truth_dir.as_ref().map(|p| cfg.resolve(p)));
            let mut store = if ReviewStore::exists(&work) {
                ReviewStore::open(&work)?
            } else {
                let store = ReviewStore::init(&cfg)?;
                println!("round 0 queued {} items", store.status().pending);
                if simulated.is_none() {
                    println!("review them with `cfos pipeline serve`, then rerun `cfos pipeline iterate`");
                    return Ok(());
                }
                store
            };
            if let Some((min_iou, truth)) = &simulated {
                let (a, r) = simulate_review(&mut store, truth, *min_iou)?;
                println!("simulated reviewer accepted {a}, rejected {r}");
            }
            let pending = store.status().pending;
            if pending > 0 && !force {
                bail!("{pending} items are still pending; review them or pass --force");
            }
            let round = store.train_next(&cfg)?;
            let s = store.status();
            println!("round {round} trained; {} new items pending", s.pending);
        }
        PipelineCommand::Serve { cfg, port, host, static_dir } => {
            let cfg = load_pipeline_config(&cfg.config)?;
            let rt = tokio_runtime()?;
            rt.block_on(cfos_pipeline::service::serve(cfg, SocketAddr::new(host, port), static_dir))?;
        }
    }
    Ok(())
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
