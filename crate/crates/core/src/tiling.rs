//! Overlapping sliding-window crop and center-crop stitching.
//!
//! The source is padded by `margin` pixels of black on every side, windows of
//! `window × window` are taken every `stride = window - 2·margin` pixels, and
//! adjacent windows therefore share a `2·margin` wide band. Stitching keeps
//! only the central `stride × stride` region of each tile.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Drops the right/bottom remainder that does not fill a whole window.
    Paper,
    /// Pads right/bottom with extra black so the grid covers the whole source.
    Full,
}

impl FromStr for GridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(GridMode::Paper),
            "full" => Ok(GridMode::Full),
            other => Err(Error::Parse {
                context: "grid mode".into(),
                reason: format!("expected paper|full, got {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileGrid {
    pub source_width: usize,
    pub source_height: usize,
    pub window: usize,
    pub margin: usize,
    pub cols: usize,
    pub rows: usize,
    pub mode: GridMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    pub row: usize,
    pub col: usize,
}

impl TileId {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.row, self.col)
    }
}

impl FromStr for TileId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_tile_name(s)
    }
}

/// `"{row}-{col}"`, zero-based.
pub fn tile_name(id: TileId) -> String {
    id.to_string()
}

pub fn parse_tile_name(name: &str) -> Result<TileId> {
    let bad = || Error::Parse {
        context: "tile name".into(),
        reason: format!("expected \"<row>-<col>\", got {name:?}"),
    };
    let (r, c) = name.split_once('-').ok_or_else(bad)?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(r) || !digits(c) {
        return Err(bad());
    }
    Ok(TileId {
        row: r.parse().map_err(|_| bad())?,
        col: c.parse().map_err(|_| bad())?,
    })
}

fn positions(dim: usize, window: usize, margin: usize, mode: GridMode) -> usize {
    let stride = window - 2 * margin;
    match mode {
        GridMode::Paper => {
            let padded = dim + 2 * margin;
            if padded < window {
                0
            } else {
                (padded - window) / stride + 1
            }
        }
        GridMode::Full => dim.div_ceil(stride),
    }
}

pub fn compute_grid(
    source_width: usize,
    source_height: usize,
    window: usize,
    margin: usize,
    mode: GridMode,
) -> Result<TileGrid> {
    if window <= 2 * margin {
        return Err(Error::Geometry(format!(
            "window {window} must exceed twice the margin {margin}"
        )));
    }
    if source_width == 0 || source_height == 0 {
        return Err(Error::Geometry("source dimensions must be at least 1".into()));
    }
    let cols = positions(source_width, window, margin, mode);
    let rows = positions(source_height, window, margin, mode);
    if cols == 0 || rows == 0 {
        return Err(Error::Geometry(format!(
            "a {window}px window with margin {margin} does not fit a {source_width}x{source_height} source"
        )));
    }
    Ok(TileGrid {
        source_width,
        source_height,
        window,
        margin,
        cols,
        rows,
        mode,
    })
}

impl TileGrid {
    pub fn stride(&self) -> usize {
        self.window - 2 * self.margin
    }

    /// Dimensions of the stitched output, `cols·stride × rows·stride`.
    pub fn covered_dims(&self) -> (usize, usize) {
        (self.cols * self.stride(), self.rows * self.stride())
    }

    pub fn tile_count(&self) -> usize {
        self.cols * self.rows
    }

    /// All tile ids in row-major order.
    pub fn ids(&self) -> impl Iterator<Item = TileId> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| TileId { row, col }))
    }

    pub fn contains(&self, id: TileId) -> bool {
        id.row < self.rows && id.col < self.cols
    }

    /// Top-left corner of a tile in unpadded source coordinates (may be negative).
    pub fn origin(&self, id: TileId) -> (isize, isize) {
        let s = self.stride() as isize;
        let m = self.margin as isize;
        (id.col as isize * s - m, id.row as isize * s - m)
    }
}

/// Cuts the source into one `window × window` tile per grid position.
pub fn crop<R: Raster>(source: &R, grid: &TileGrid) -> Result<BTreeMap<TileId, R>> {
    if (source.width(), source.height()) != (grid.source_width, grid.source_height) {
        return Err(Error::Dimension(format!(
            "grid built for {}x{} but source is {}x{}",
            grid.source_width,
            grid.source_height,
            source.width(),
            source.height()
        )));
    }
    grid.ids()
        .map(|id| Ok((id, crop_tile(source, grid, id)?)))
        .collect()
}

/// Cuts a single tile; pixels outside the source are zero.
pub fn crop_tile<R: Raster>(source: &R, grid: &TileGrid, id: TileId) -> Result<R> {
    let (w, h) = (source.width() as isize, source.height() as isize);
    let x_win = grid.window;
    let (ox, oy) = grid.origin(id);
    let data = source.data();
    let mut out = vec![R::Pixel::default(); x_win * x_win];
    for ty in 0..x_win {
        let sy = oy + ty as isize;
        if sy < 0 || sy >= h {
            continue;
        }
        let row_base = sy as usize * w as usize;
        let x_lo = (-ox).clamp(0, x_win as isize) as usize;
        let x_hi = (w - ox).clamp(0, x_win as isize) as usize;
        if x_lo >= x_hi {
            continue;
        }
        let src_lo = (ox + x_lo as isize) as usize;
        out[ty * x_win + x_lo..ty * x_win + x_hi]
            .copy_from_slice(&data[row_base + src_lo..row_base + src_lo + (x_hi - x_lo)]);
    }
    R::from_parts(x_win, x_win, out)
}

/// Reassembles tiles by placing the central `stride × stride` block of tile
/// `(r, c)` at `(c·stride, r·stride)`.
pub fn stitch<R: Raster>(tiles: &BTreeMap<TileId, R>, grid: &TileGrid) -> Result<R> {
    let stride = grid.stride();
    let (out_w, out_h) = grid.covered_dims();
    let mut out = vec![R::Pixel::default(); out_w * out_h];
    for id in grid.ids() {
        let tile = tiles
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("missing tile {id}")))?;
        if (tile.width(), tile.height()) != (grid.window, grid.window) {
            return Err(Error::Dimension(format!(
                "tile {id} is {}x{}, expected {}x{}",
                tile.width(),
                tile.height(),
                grid.window,
                grid.window
            )));
        }
        let data = tile.data();
        for y in 0..stride {
            let src = (y + grid.margin) * grid.window + grid.margin;
            let dst = (id.row * stride + y) * out_w + id.col * stride;
            out[dst..dst + stride].copy_from_slice(&data[src..src + stride]);
        }
    }
    R::from_parts(out_w, out_h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBuffer;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        let px = (0..w * h).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        ImageBuffer::new(w, h, px).unwrap()
    }

    /// Counts window origins `p·stride` with `p·stride + X ≤ dim + 2a`.
    fn enumerate_positions(dim: usize, window: usize, margin: usize) -> usize {
        let stride = window - 2 * margin;
        (0..).take_while(|p| p * stride + window <= dim + 2 * margin).count()
    }

    #[test]
    fn full_slide_grid() {
        let g = compute_grid(10231, 7162, 128, 4, GridMode::Paper).unwrap();
        assert_eq!((g.cols, g.rows), (85, 59));
        assert_eq!(g.covered_dims(), (10200, 7080));
    }

    #[test]
    fn single_window_grid() {
        let g = compute_grid(120, 120, 128, 4, GridMode::Paper).unwrap();
        assert_eq!((g.cols, g.rows), (1, 1));
    }

    #[test]
    fn mid_size_grid_matches_enumeration() {
        let g = compute_grid(500, 300, 128, 4, GridMode::Paper).unwrap();
        assert_eq!(g.cols, enumerate_positions(500, 128, 4));
        assert_eq!(g.rows, enumerate_positions(300, 128, 4));
    }

    #[test]
    fn degenerate_window_is_geometry_error() {
        assert!(matches!(
            compute_grid(100, 100, 8, 4, GridMode::Paper),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            compute_grid(100, 100, 7, 4, GridMode::Full),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn single_window_tile_is_padded_source() {
        let img = ramp(120, 120);
        let g = compute_grid(120, 120, 128, 4, GridMode::Paper).unwrap();
        let tiles = crop(&img, &g).unwrap();
        let t = &tiles[&TileId::new(0, 0)];
        for y in 0..128 {
            for x in 0..128 {
                let inside = (4..124).contains(&x) && (4..124).contains(&y);
                let expect = if inside { img.get(x - 4, y - 4) } else { 0.0 };
                assert_eq!(t.get(x, y), expect);
            }
        }
        assert_eq!(stitch(&tiles, &g).unwrap(), img);
    }

    #[test]
    fn horizontal_neighbours_share_overlap() {
        let img = ramp(400, 200);
        let g = compute_grid(400, 200, 128, 4, GridMode::Paper).unwrap();
        let tiles = crop(&img, &g).unwrap();
        let (a, b) = (&tiles[&TileId::new(0, 0)], &tiles[&TileId::new(0, 1)]);
        for y in 0..128 {
            for k in 0..8 {
                assert_eq!(a.get(120 + k, y), b.get(k, y));
            }
        }
    }

    #[test]
    fn names() {
        assert_eq!(tile_name(TileId::new(0, 2)), "0-2");
        assert_eq!(tile_name(TileId::new(0, 0)), "0-0");
        for row in 0..100 {
            for col in 0..100 {
                let id = TileId::new(row, col);
                assert_eq!(parse_tile_name(&tile_name(id)).unwrap(), id);
            }
        }
        for bad in ["", "3", "a-b", "1-", "-1", "1-2-3", "+1-2", "1 -2"] {
            assert!(parse_tile_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn stitch_reports_missing_and_misshapen_tiles() {
        let img = ramp(300, 200);
        let g = compute_grid(300, 200, 128, 4, GridMode::Paper).unwrap();
        let mut tiles = crop(&img, &g).unwrap();
        let t = tiles.remove(&TileId::new(0, 1)).unwrap();
        assert!(stitch(&tiles, &g).is_err());
        tiles.insert(TileId::new(0, 1), ImageBuffer::zeros(64, 64));
        assert!(matches!(stitch(&tiles, &g), Err(Error::Dimension(_))));
        tiles.insert(TileId::new(0, 1), t);
        assert!(stitch(&tiles, &g).is_ok());
    }

    #[test]
    fn crop_rejects_mismatched_source() {
        let g = compute_grid(300, 200, 128, 4, GridMode::Paper).unwrap();
        assert!(crop(&ramp(301, 200), &g).is_err());
    }

    mod props {
        use super::*;
        use crate::image::MaskBuffer;
        use proptest::prelude::*;

        fn padded_pixel(img: &ImageBuffer, margin: usize, px: usize, py: usize) -> f32 {
            let (x, y) = (px as isize - margin as isize, py as isize - margin as isize);
            if x < 0 || y < 0 || x >= img.width() as isize || y >= img.height() as isize {
                0.0
            } else {
                img.get(x as usize, y as usize)
            }
        }

        fn image(w: usize, h: usize, seed: u64) -> ImageBuffer {
            let mut s = seed | 1;
            let px = (0..w * h)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    (s % 256) as f32 / 255.0
                })
                .collect();
            ImageBuffer::new(w, h, px).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn counts_match_enumeration(w in 1usize..3000, h in 1usize..3000, window in 3usize..300, m in 0usize..40) {
                prop_assume!(window > 2 * m);
                let expect = (enumerate_positions(w, window, m), enumerate_positions(h, window, m));
                match compute_grid(w, h, window, m, GridMode::Paper) {
                    Ok(g) => prop_assert_eq!((g.cols, g.rows), expect),
                    Err(_) => prop_assert!(expect.0 == 0 || expect.1 == 0),
                }
                let g = compute_grid(w, h, window, m, GridMode::Full).unwrap();
                let s = g.stride();
                prop_assert!(g.cols * s >= w && (g.cols - 1) * s < w);
                prop_assert!(g.rows * s >= h && (g.rows - 1) * s < h);
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]
            #[test]
            fn crop_matches_direct_indexing_and_stitch_inverts(
                w in 20usize..260, h in 20usize..260, window in 9usize..64, m in 0usize..4,
                full in any::<bool>(), seed in any::<u64>()
            ) {
                prop_assume!(window > 2 * m && w + 2 * m >= window && h + 2 * m >= window);
                let mode = if full { GridMode::Full } else { GridMode::Paper };
                let img = image(w, h, seed);
                let g = compute_grid(w, h, window, m, mode).unwrap();
                let tiles = crop(&img, &g).unwrap();
                let s = g.stride();
                for (id, t) in &tiles {
                    for y in 0..window {
                        for x in 0..window {
                            let expect = padded_pixel(&img, m, id.col * s + x, id.row * s + y);
                            prop_assert_eq!(t.get(x, y), expect);
                        }
                    }
                    if id.col + 1 < g.cols {
                        let right = &tiles[&TileId::new(id.row, id.col + 1)];
                        for y in 0..window {
                            for k in 0..2 * m {
                                prop_assert_eq!(t.get(s + k, y), right.get(k, y));
                            }
                        }
                    }
                }
                let back = stitch(&tiles, &g).unwrap();
                let (cw, ch) = g.covered_dims();
                for y in 0..ch {
                    for x in 0..cw {
                        let expect = if x < w && y < h { img.get(x, y) } else { 0.0 };
                        prop_assert_eq!(back.get(x, y), expect);
                    }
                }
                if full {
                    prop_assert!(cw >= w && ch >= h);
                }
            }

            #[test]
            fn masks_stitch_too(w in 30usize..200, h in 30usize..200, seed in any::<u64>()) {
                let img = image(w, h, seed);
                let labels = img.pixels().iter().map(|&v| u8::from(v > 0.5)).collect();
                let mask = MaskBuffer::new(w, h, labels).unwrap();
                let g = compute_grid(w, h, 32, 3, GridMode::Full).unwrap();
                let back = stitch(&crop(&mask, &g).unwrap(), &g).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        prop_assert_eq!(back.get(x, y), mask.get(x, y));
                    }
                }
            }
        }
    }
}
