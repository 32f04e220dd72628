//! Pixel confusion counts, foreground IoU, F1 and dataset-level scores.
//!
//! MIoU is the mean over images of the *foreground* IoU by default. A
//! class-mean variant (average of foreground and background IoU per image) is
//! available and the chosen variant is recorded in every report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskBuffer;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Counts with foreground and background roles exchanged.
    fn background(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

pub fn confusion(pred: &MaskBuffer, truth: &MaskBuffer) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp + fn)`, or 1.0 when both masks are empty.
pub fn iou_foreground(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// `2tp / (2tp + fp + fn)`, or 1.0 when both masks are empty.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiouVariant {
    /// Mean over images of foreground IoU.
    #[default]
    Foreground,
    /// Mean over images of the average of foreground and background IoU.
    ClassMean,
}

impl MiouVariant {
    pub fn name(&self) -> &'static str {
        match self {
            MiouVariant::Foreground => "foreground",
            MiouVariant::ClassMean => "class-mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Per-image IoU under `variant`, keyed by image id.
    pub per_image: Vec<(String, f64)>,
    pub miou: f64,
    /// F1 over pooled pixel counts.
    pub f1: f64,
    pub pooled: ConfusionCounts,
    pub variant: MiouVariant,
}

/// Scores matching sets of predicted and true masks.
pub fn score_dataset(
    pred: &BTreeMap<String, MaskBuffer>,
    truth: &BTreeMap<String, MaskBuffer>,
    variant: MiouVariant,
) -> Result<ScoreReport> {
    if pred.len() != truth.len() || pred.keys().any(|k| !truth.contains_key(k)) {
        let missing: Vec<_> = pred
            .keys()
            .filter(|k| !truth.contains_key(*k))
            .chain(truth.keys().filter(|k| !pred.contains_key(*k)))
            .take(5)
            .cloned()
            .collect();
        return Err(Error::InvalidInput(format!(
            "prediction and truth id sets differ (e.g. {missing:?})"
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no images to score".into()));
    }
    let mut pooled = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(pred.len());
    for (id, p) in pred {
        let c = confusion(p, &truth[id])?;
        pooled.add(&c);
        let score = match variant {
            MiouVariant::Foreground => iou_foreground(&c),
            MiouVariant::ClassMean => 0.5 * (iou_foreground(&c) + iou_foreground(&c.background())),
        };
        per_image.push((id.clone(), score));
    }
    let miou = per_image.iter().map(|(_, s)| s).sum::<f64>() / per_image.len() as f64;
    Ok(ScoreReport {
        per_image,
        miou,
        f1: f1(&pooled),
        pooled,
        variant,
    })
}
