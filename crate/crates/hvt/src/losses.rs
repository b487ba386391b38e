//! Training objectives: penalty-reduced focal loss on center heatmaps and
//! L1 regression losses for sub-pixel offsets and box sizes, each with its
//! analytic gradient. Ground truth heatmaps are rendered here as well,
//! with an overlap-derived Gaussian splat per object.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voting::PairMap;

/// Exponent on the `(1 - p)` focusing term at positives.
pub const FOCAL_ALPHA: f64 = 2.0;
/// Exponent on the `(1 - y)` penalty reduction at negatives.
pub const FOCAL_BETA: f64 = 4.0;
/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const FOCAL_EPS: f64 = 1e-7;
/// Weight on the size loss inside the total objective.
pub const SIZE_LOSS_WEIGHT: f64 = 0.1;
/// Minimum IoU a box jittered by the splat radius must keep.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.7;

/// An annotated box in image coordinates, corners inclusive of `x1,y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub class_id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// One object's regression entry on the output map: the integer center
/// cell, the fractional offset left by downsampling, and the box size in
/// map units. Components are ordered `(y, x)` and `(height, width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTarget {
    pub row: usize,
    pub col: usize,
    pub offset: (f64, f64),
    pub size: (f64, f64),
}

/// Rendered supervision for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTargets {
    pub height: usize,
    pub width: usize,
    /// One `height * width` heatmap per class, values in `[0, 1]`.
    pub heatmaps: Vec<Vec<f64>>,
    pub regressions: Vec<RegressionTarget>,
    /// Boxes dropped for having no positive extent.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with respect to the prediction buffer, same layout.
    pub grad: Vec<f64>,
}

/// Loss report as emitted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub focal: f64,
    pub offset: f64,
    pub size: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(focal: f64, offset: f64, size: f64) -> Self {
        LossReport {
            focal,
            offset,
            size,
            total: focal + offset + size,
        }
    }
}

/// Penalty-reduced pixelwise focal loss between a predicted probability
/// map and a rendered heatmap. Pixels at exactly 1.0 are positives; their
/// count (at least 1) normalizes the sum:
///
/// ```text
/// L = -1/N * [ sum_pos (1-p)^a ln p  +  sum_neg (1-y)^b p^a ln(1-p) ]
/// ```
pub fn focal_loss(pred: &[f64], target: &[f64]) -> Result<LossValue> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction holds {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    for &y in target {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::validation(format!(
                "heatmap target {y} outside [0, 1]"
            )));
        }
    }
    if let Some(v) = pred.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite prediction {v}")));
    }
    let n_pos = target.iter().filter(|&&y| y == 1.0).count().max(1) as f64;
    let mut sum = 0.0f64;
    let mut grad = vec![0.0f64; pred.len()];
    for (idx, (&p_raw, &y)) in pred.iter().zip(target).enumerate() {
        let p = p_raw.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
        if y == 1.0 {
            let q = 1.0 - p;
            sum += q.powi(2) * p.ln();
            grad[idx] = -(-2.0 * q * p.ln() + q * q / p) / n_pos;
        } else {
            let damp = (1.0 - y).powi(4);
            sum += damp * p * p * (1.0 - p).ln();
            grad[idx] = -damp * (2.0 * p * (1.0 - p).ln() - p * p / (1.0 - p)) / n_pos;
        }
    }
    Ok(LossValue {
        value: -sum / n_pos,
        grad,
    })
}

/// L1 loss between predicted pairs and sparse targets, averaged over the
/// `2N` compared components. The gradient is the sign of each residual,
/// zero at exact agreement and everywhere off-target.
fn sparse_l1(
    pred: &PairMap,
    targets: &[RegressionTarget],
    pick: impl Fn(&RegressionTarget) -> (f64, f64),
    weight: f64,
) -> Result<LossValue> {
    let mut grad = vec![0.0f64; pred.data().len()];
    if targets.is_empty() {
        return Ok(LossValue { value: 0.0, grad });
    }
    let denom = (2 * targets.len()) as f64;
    let mut sum = 0.0f64;
    for t in targets {
        if t.row >= pred.height() || t.col >= pred.width() {
            return Err(Error::validation(format!(
                "target cell ({}, {}) outside {}x{} map",
                t.row,
                t.col,
                pred.height(),
                pred.width()
            )));
        }
        let (py, px) = pred.get(t.row, t.col);
        let (ty, tx) = pick(t);
        sum += (py - ty).abs() + (px - tx).abs();
        let base = (t.row * pred.width() + t.col) * 2;
        grad[base] += weight * (py - ty).signum_or_zero() / denom;
        grad[base + 1] += weight * (px - tx).signum_or_zero() / denom;
    }
    Ok(LossValue {
        value: weight * sum / denom,
        grad,
    })
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

/// L1 loss on the fractional center offsets.
pub fn offset_loss(pred: &PairMap, targets: &[RegressionTarget]) -> Result<LossValue> {
    sparse_l1(pred, targets, |t| t.offset, 1.0)
}

/// Down-weighted L1 loss on map-unit box sizes.
pub fn size_loss(pred: &PairMap, targets: &[RegressionTarget]) -> Result<LossValue> {
    sparse_l1(pred, targets, |t| t.size, SIZE_LOSS_WEIGHT)
}

/// Evaluates all three objectives and their sum.
pub fn total_loss(
    pred_heat: &[Vec<f64>],
    target_heat: &[Vec<f64>],
    pred_offsets: &PairMap,
    pred_sizes: &PairMap,
    targets: &[RegressionTarget],
) -> Result<LossReport> {
    if pred_heat.len() != target_heat.len() {
        return Err(Error::shape(format!(
            "{} predicted heatmaps against {} targets",
            pred_heat.len(),
            target_heat.len()
        )));
    }
    let mut focal = 0.0;
    for (p, t) in pred_heat.iter().zip(target_heat) {
        focal += focal_loss(p, t)?.value;
    }
    let off = offset_loss(pred_offsets, targets)?.value;
    let size = size_loss(pred_sizes, targets)?.value;
    Ok(LossReport::new(focal, off, size))
}

/// Largest splat radius keeping any corner jitter within `min_overlap`
/// IoU of the original box. Follows the deployed convention: the three
/// quadratic cases each resolve to `(b + sqrt(b^2 - 4ac)) / 2`, and the
/// smallest root wins.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&min_overlap));
    let b1 = height + width;
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;

    let a2 = 4.0;
    let b2 = 2.0 * (height + width);
    let c2 = (1.0 - min_overlap) * width * height;
    let r2 = (b2 + (b2 * b2 - 4.0 * a2 * c2).sqrt()) / 2.0;

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;

    r1.min(r2).min(r3)
}

/// Writes `max(plane, gaussian)` centered at `(cy, cx)` with standard
/// deviation `(2 * radius + 1) / 6`, clipped to the map.
pub fn draw_gaussian(
    plane: &mut [f64],
    height: usize,
    width: usize,
    center: (usize, usize),
    radius: usize,
) {
    let (cy, cx) = center;
    debug_assert!(cy < height && cx < width);
    debug_assert_eq!(plane.len(), height * width);
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let denom = 2.0 * sigma * sigma;
    let r = radius as i64;
    for dy in -r..=r {
        let y = cy as i64 + dy;
        if y < 0 || y as usize >= height {
            continue;
        }
        for dx in -r..=r {
            let x = cx as i64 + dx;
            if x < 0 || x as usize >= width {
                continue;
            }
            let g = (-((dy * dy + dx * dx) as f64) / denom).exp();
            let cell = &mut plane[y as usize * width + x as usize];
            if g > *cell {
                *cell = g;
            }
        }
    }
}

/// Renders class heatmaps and regression entries for one image whose
/// output map is `height x width` at the given stride. Degenerate boxes
/// are counted in `skipped`; centers landing on the map edge are clamped
/// onto the last cell.
pub fn render_targets(
    boxes: &[LabeledBox],
    class_count: usize,
    height: usize,
    width: usize,
    stride: u32,
    min_overlap: f64,
) -> Result<RenderedTargets> {
    if class_count == 0 || height == 0 || width == 0 || stride == 0 {
        return Err(Error::config(
            "class count, map dimensions, and stride must be positive",
        ));
    }
    if !(0.0..1.0).contains(&min_overlap) {
        return Err(Error::config(format!(
            "min_overlap {min_overlap} outside [0, 1)"
        )));
    }
    let mut heatmaps = vec![vec![0.0f64; height * width]; class_count];
    let mut regressions = Vec::new();
    let mut skipped = 0usize;
    let s = f64::from(stride);
    for b in boxes {
        if b.class_id >= class_count {
            return Err(Error::validation(format!(
                "class id {} outside 0..{class_count}",
                b.class_id
            )));
        }
        let (bw, bh) = (b.x2 - b.x1, b.y2 - b.y1);
        if !bw.is_finite() || !bh.is_finite() || bw <= 0.0 || bh <= 0.0 {
            skipped += 1;
            continue;
        }
        let cy = (b.y1 + b.y2) / 2.0 / s;
        let cx = (b.x1 + b.x2) / 2.0 / s;
        let row = (cy.floor().max(0.0) as usize).min(height - 1);
        let col = (cx.floor().max(0.0) as usize).min(width - 1);
        let offset = (
            (cy - row as f64).clamp(0.0, 1.0 - f64::EPSILON),
            (cx - col as f64).clamp(0.0, 1.0 - f64::EPSILON),
        );
        let size = (bh / s, bw / s);
        let radius = gaussian_radius(size.0, size.1, min_overlap).max(0.0) as usize;
        draw_gaussian(&mut heatmaps[b.class_id], height, width, (row, col), radius);
        regressions.push(RegressionTarget {
            row,
            col,
            offset,
            size,
        });
    }
    Ok(RenderedTargets {
        height,
        width,
        heatmaps,
        regressions,
        skipped,
    })
}
