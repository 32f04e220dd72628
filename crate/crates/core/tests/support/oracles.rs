//! Brute-force reference implementations used to check the library.

use cfos_core::features::tsne::{kl_and_gradient, Affinities};
use cfos_core::labeling::{MaskProposal, ProposalFilter};
use cfos_core::metrics::ConfusionCounts;
use cfos_core::{ImageBuffer, MaskBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> MaskBuffer {
    MaskBuffer::new(w, h, (0..w * h).map(|_| u8::from(rng.random_bool(density))).collect()).unwrap()
}

/// Pixel-exact expectation for `stitch(crop(source))`: the source where it
/// exists, zero in the padding beyond it.
pub fn expected_stitch(source: &ImageBuffer, covered: (usize, usize)) -> Vec<f32> {
    let mut out = Vec::with_capacity(covered.0 * covered.1);
    for y in 0..covered.1 {
        for x in 0..covered.0 {
            out.push(if x < source.width() && y < source.height() {
                source.get(x, y)
            } else {
                0.0
            });
        }
    }
    out
}

/// Per-pixel confusion counts by direct indexing.
pub fn brute_confusion(pred: &MaskBuffer, truth: &MaskBuffer) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let p = pred.get(x, y) != 0;
            let t = truth.get(x, y) != 0;
            if p && t {
                c.tp += 1;
            } else if p {
                c.fp += 1;
            } else if t {
                c.fn_ += 1;
            } else {
                c.tn += 1;
            }
        }
    }
    c
}

pub fn brute_iou(c: &ConfusionCounts) -> f64 {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 { 1.0 } else { c.tp as f64 / union as f64 }
}

pub fn brute_f1(c: &ConfusionCounts) -> f64 {
    let d = 2 * c.tp + c.fp + c.fn_;
    if d == 0 { 1.0 } else { 2.0 * c.tp as f64 / d as f64 }
}

/// Star-shaped (hence simple) polygon: vertices at sorted angles around a
/// centre with random radii. Every other polygon is snapped to a half-pixel
/// grid so that vertices and crossings land exactly on pixel centres.
pub fn random_simple_polygon(rng: &mut ChaCha8Rng, w: usize, h: usize, snap: bool) -> Vec<[f64; 2]> {
    let n = rng.random_range(3..=14);
    let cx = rng.random_range(-0.1..1.1) * w as f64;
    let cy = rng.random_range(-0.1..1.1) * h as f64;
    let r_max = rng.random_range(2.0..(w.max(h) as f64 * 0.7));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    angles
        .into_iter()
        .map(|a| {
            let r = rng.random_range(0.2..1.0) * r_max;
            let (x, y) = (cx + r * a.cos(), cy + r * a.sin());
            if snap {
                [(x * 2.0).round() / 2.0, (y * 2.0).round() / 2.0]
            } else {
                [x, y]
            }
        })
        .collect()
}

/// Even-odd crossing test at the centre of every pixel.
pub fn pnpoly_mask(polygons: &[Vec<[f64; 2]>], w: usize, h: usize) -> MaskBuffer {
    let mut m = MaskBuffer::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside_any = polygons.iter().any(|poly| {
                let n = poly.len();
                let mut inside = false;
                let mut j = n - 1;
                for i in 0..n {
                    let [xi, yi] = poly[i];
                    let [xj, yj] = poly[j];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            });
            if inside_any {
                m.set(x, y, true);
            }
        }
    }
    m
}

pub fn random_proposal(rng: &mut ChaCha8Rng, w: usize, h: usize) -> MaskProposal {
    let density = [0.0, 0.005, 0.02, 0.1, 0.4][rng.random_range(0..5)];
    let bitmap = random_mask(rng, w, h, density);
    MaskProposal::from_bitmap(
        bitmap,
        rng.random_range(0.5..1.0),
        rng.random_range(0.7..1.0),
        vec![[rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)]],
    )
}

pub fn random_filter(rng: &mut ChaCha8Rng) -> ProposalFilter {
    let lo = rng.random_range(0..200);
    ProposalFilter {
        min_area: lo,
        max_area: lo + rng.random_range(0..4000),
        min_stability: rng.random_range(0.7..1.0),
        min_predicted_iou: rng.random_range(0.0..0.9),
    }
}

/// Indices of proposals passing every threshold, by direct predicate scan.
pub fn scan_filter(proposals: &[MaskProposal], f: &ProposalFilter) -> Vec<usize> {
    let mut keep = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let area = p.segmentation.count_foreground();
        if area < f.min_area || area > f.max_area {
            continue;
        }
        if p.stability_score < f.min_stability || p.predicted_iou < f.min_predicted_iou {
            continue;
        }
        keep.push(i);
    }
    keep
}

/// Elementwise OR of proposal bitmaps.
pub fn or_masks(proposals: &[MaskProposal], w: usize, h: usize) -> MaskBuffer {
    let mut m = MaskBuffer::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if proposals.iter().any(|p| p.segmentation.get(x, y) == 1) {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// `KL(y + h·e) − KL(y − h·e)` for `e` the unit vector of coordinate
/// `(i, c)`, evaluated term by term so that nothing cancels: only pairs
/// touching `i` and the normaliser change.
pub fn kl_central_difference(aff: &Affinities, y: &[[f64; 2]], i: usize, c: usize, h: f64) -> f64 {
    let n = aff.n;
    let o = 1 - c;
    let mut minus = y.to_vec();
    minus[i][c] -= h;
    let z_minus: f64 = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            let dx = minus[a][0] - minus[b][0];
            let dy = minus[a][1] - minus[b][1];
            1.0 / (1.0 + dx * dx + dy * dy)
        })
        .sum();
    let mut dz = 0.0;
    let mut pair_terms = 0.0;
    for j in (0..n).filter(|&j| j != i) {
        let a = y[i][c] - y[j][c];
        let b = y[i][o] - y[j][o];
        let dm = (a - h) * (a - h) + b * b;
        let dp = (a + h) * (a + h) + b * b;
        // dp − dm == 4ah exactly in real arithmetic.
        dz += 2.0 * (-4.0 * a * h) / ((1.0 + dp) * (1.0 + dm));
        let pij = aff.p[i * n + j] + aff.p[j * n + i];
        pair_terms += pij * (4.0 * a * h / (1.0 + dm)).ln_1p();
    }
    let p_total: f64 = aff.p.iter().sum();
    pair_terms + p_total * (dz / z_minus).ln_1p()
}

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

/// Worst relative error of the analytic KL gradient at `y` against the
/// term-wise central difference with step `h`.
pub fn tsne_gradient_error(aff: &Affinities, y: &[[f64; 2]], h: f64) -> f64 {
    let (_, g) = kl_and_gradient(aff, y, 1.0);
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        for c in 0..2 {
            let fd = kl_central_difference(aff, y, i, c, h) / (2.0 * h);
            worst = worst.max((fd - g[i][c]).abs() / fd.abs().max(g[i][c].abs()));
        }
    }
    worst
}
