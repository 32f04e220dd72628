//! Ground-truth masks from polygon annotations and from automatic mask
//! proposals.
//!
//! Annotation files use the field names of the common polygon annotation
//! tool (`imageWidth`, `imageHeight`, `shapes[].label/points/shape_type`).
//! Proposal files are JSON lists of records with the fields `segmentation`,
//! `area`, `bbox`, `predicted_iou`, `point_coords`, `stability_score` and
//! `crop_box`; bitmaps are stored as uncompressed rows of 0/1.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::MaskBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    #[serde(default = "polygon_type")]
    pub shape_type: String,
}

fn polygon_type() -> String {
    "polygon".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    #[serde(rename = "imageWidth")]
    pub image_width: usize,
    #[serde(rename = "imageHeight")]
    pub image_height: usize,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

impl PolygonAnnotation {
    pub fn new(image_width: usize, image_height: usize) -> Self {
        Self {
            image_width,
            image_height,
            shapes: Vec::new(),
        }
    }

    pub fn push_polygon(&mut self, label: &str, points: Vec<[f64; 2]>) {
        self.shapes.push(Shape {
            label: label.to_string(),
            points,
            shape_type: polygon_type(),
        });
    }
}

/// Fills every pixel whose center lies inside `points` under the even-odd rule.
fn fill_polygon(mask: &mut MaskBuffer, points: &[[f64; 2]]) {
    let (w, h) = (mask.width(), mask.height());
    let n = points.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for y in 0..h {
        let py = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let [xi, yi] = points[i];
            let [xj, yj] = points[(i + n - 1) % n];
            if (yi > py) != (yj > py) {
                xs.push((xj - xi) * (py - yi) / (yj - yi) + xi);
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        // A center is inside when an odd number of crossings lie at or left of it.
        for pair in xs.chunks_exact(2) {
            let (x0, x1) = (pair[0], pair[1]);
            let lo = ((x0 - 0.5).floor().max(0.0) as usize).min(w);
            let hi = (((x1 - 0.5).ceil() + 1.0).max(0.0) as usize).min(w);
            for x in lo..hi {
                let px = x as f64 + 0.5;
                if px >= x0 && px < x1 {
                    mask.set(x, y, true);
                }
            }
        }
    }
}

/// Rasterizes every polygon labelled `label` into a binary mask.
pub fn rasterize(annotation: &PolygonAnnotation, label: &str) -> Result<MaskBuffer> {
    if annotation.image_width == 0 || annotation.image_height == 0 {
        return Err(Error::Annotation("image dimensions must be positive".into()));
    }
    let mut mask = MaskBuffer::zeros(annotation.image_width, annotation.image_height);
    for (i, shape) in annotation.shapes.iter().enumerate() {
        if shape.label != label {
            continue;
        }
        if shape.shape_type != "polygon" {
            return Err(Error::Annotation(format!(
                "shape {i} has unsupported type {:?}",
                shape.shape_type
            )));
        }
        if shape.points.len() < 3 {
            return Err(Error::Annotation(format!(
                "shape {i} has {} vertices; a polygon needs at least 3",
                shape.points.len()
            )));
        }
        if shape.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Annotation(format!("shape {i} has a non-finite vertex")));
        }
        fill_polygon(&mut mask, &shape.points);
    }
    Ok(mask)
}

pub fn load_annotation(path: impl AsRef<Path>) -> Result<PolygonAnnotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        reason: e.to_string(),
    })
}

pub fn save_annotation(annotation: &PolygonAnnotation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(annotation).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One automatic segmentation candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProposal {
    #[serde(serialize_with = "ser_bitmap", deserialize_with = "de_bitmap")]
    pub segmentation: MaskBuffer,
    pub area: usize,
    /// Tight bounding box of the foreground, `[x, y, w, h]`.
    pub bbox: [usize; 4],
    pub predicted_iou: f64,
    pub point_coords: Vec<[f64; 2]>,
    pub stability_score: f64,
    pub crop_box: [usize; 4],
}

fn ser_bitmap<S: Serializer>(mask: &MaskBuffer, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<&[u8]> = mask.labels().chunks(mask.width().max(1)).collect();
    rows.serialize(s)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Cell {
    Bool(bool),
    Int(u8),
}

fn de_bitmap<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MaskBuffer, D::Error> {
    use serde::de::Error as _;
    let rows: Vec<Vec<Cell>> = Vec::deserialize(d)?;
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut labels = Vec::with_capacity(width * height);
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != width {
            return Err(D::Error::custom(format!("segmentation row {r} is ragged")));
        }
        for cell in row {
            labels.push(match cell {
                Cell::Bool(b) => u8::from(b),
                Cell::Int(v @ (0 | 1)) => v,
                Cell::Int(v) => {
                    return Err(D::Error::custom(format!("segmentation value {v} is not 0/1")))
                }
            });
        }
    }
    MaskBuffer::new(width, height, labels).map_err(D::Error::custom)
}

/// Tight `[x, y, w, h]` box of the foreground; all zeros for an empty mask.
pub fn tight_bbox(mask: &MaskBuffer) -> [usize; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) == 1 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        [0, 0, 0, 0]
    } else {
        [x0, y0, x1 - x0 + 1, y1 - y0 + 1]
    }
}

impl MaskProposal {
    /// Builds a proposal whose `area` and `bbox` are derived from the bitmap.
    pub fn from_bitmap(
        segmentation: MaskBuffer,
        predicted_iou: f64,
        stability_score: f64,
        point_coords: Vec<[f64; 2]>,
    ) -> Self {
        let crop_box = [0, 0, segmentation.width(), segmentation.height()];
        Self {
            area: segmentation.count_foreground(),
            bbox: tight_bbox(&segmentation),
            segmentation,
            predicted_iou,
            point_coords,
            stability_score,
            crop_box,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalFilter {
    pub min_area: usize,
    pub max_area: usize,
    pub min_stability: f64,
    pub min_predicted_iou: f64,
}

impl Default for ProposalFilter {
    fn default() -> Self {
        Self {
            min_area: 30,
            max_area: 4000,
            min_stability: 0.90,
            min_predicted_iou: 0.0,
        }
    }
}

impl ProposalFilter {
    pub fn permissive() -> Self {
        Self {
            min_area: 0,
            max_area: usize::MAX,
            min_stability: 0.0,
            min_predicted_iou: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_area > self.max_area {
            return Err(Error::InvalidInput(format!(
                "min_area {} exceeds max_area {}",
                self.min_area, self.max_area
            )));
        }
        for (name, v) in [
            ("min_stability", self.min_stability),
            ("min_predicted_iou", self.min_predicted_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn accepts(&self, p: &MaskProposal) -> bool {
        (self.min_area..=self.max_area).contains(&p.area)
            && p.stability_score >= self.min_stability
            && p.predicted_iou >= self.min_predicted_iou
    }
}

/// Keeps proposals passing every threshold, in their original order.
pub fn filter_proposals(proposals: &[MaskProposal], filter: &ProposalFilter) -> Vec<MaskProposal> {
    proposals.iter().filter(|p| filter.accepts(p)).cloned().collect()
}

/// Pixelwise OR of all proposal bitmaps.
pub fn merge_proposals(
    proposals: &[MaskProposal],
    width: usize,
    height: usize,
) -> Result<MaskBuffer> {
    let mut out = MaskBuffer::zeros(width, height);
    for (i, p) in proposals.iter().enumerate() {
        if (p.segmentation.width(), p.segmentation.height()) != (width, height) {
            return Err(Error::Dimension(format!(
                "proposal {i} bitmap is {}x{}, tile is {width}x{height}",
                p.segmentation.width(),
                p.segmentation.height()
            )));
        }
        out.union_with(&p.segmentation)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    AreaMismatch { declared: usize, actual: usize },
    BboxMismatch { declared: [usize; 4], actual: [usize; 4] },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AreaMismatch { declared, actual } => {
                write!(f, "area mismatch: declared {declared}, bitmap has {actual}")
            }
            Violation::BboxMismatch { declared, actual } => {
                write!(f, "bbox mismatch: declared {declared:?}, tight box is {actual:?}")
            }
        }
    }
}

/// Checks that `area` and `bbox` agree with the bitmap.
pub fn validate_proposal(p: &MaskProposal) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let actual = p.segmentation.count_foreground();
    if actual != p.area {
        v.push(Violation::AreaMismatch {
            declared: p.area,
            actual,
        });
    }
    let bbox = tight_bbox(&p.segmentation);
    if bbox != p.bbox {
        v.push(Violation::BboxMismatch {
            declared: p.bbox,
            actual: bbox,
        });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<MaskProposal>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        reason: e.to_string(),
    })
}

pub fn save_proposals(proposals: &[MaskProposal], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(proposals).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
