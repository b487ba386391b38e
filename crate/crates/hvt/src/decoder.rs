//! Inference decoding: peak extraction from presence maps, box recovery
//! from offset and size heads, Gaussian score-decay suppression, and
//! multi-scale merging.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voting::{ObjectPresenceMap, PairMap};

pub const DEFAULT_TOP_K: usize = 100;
pub const DEFAULT_SOFT_NMS_SIGMA: f64 = 0.5;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;
/// Test-time image scales merged into one detection set.
pub const MULTISCALE_SCALES: [f64; 5] = [0.6, 1.0, 1.2, 1.5, 1.8];

/// Axis-aligned box, corners in image coordinates, `x2 >= x1`, `y2 >= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// A local maximum on one class's presence map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class_id: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// A decoded object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub row: usize,
    pub col: usize,
    pub bbox: BBox,
}

/// Decoded boxes plus how many predicted sizes had to be clamped up to
/// zero extent.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub detections: Vec<Detection>,
    pub clamped_sizes: usize,
}

/// Finds cells that are maxima of their 3x3 neighborhood, using `>=` so
/// plateau cells all qualify, then keeps the `top_k` best. Order: score
/// descending, ties by `(class, row, col)` ascending. The selected cell
/// set is invariant under any strictly increasing rescoring of the maps.
pub fn extract_peaks(maps: &[ObjectPresenceMap], top_k: usize) -> Result<Vec<Peak>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::shape("no presence maps given"))?;
    let (h, w) = (first.height(), first.width());
    if top_k == 0 {
        return Err(Error::config("top_k must be at least 1"));
    }
    let mut peaks = Vec::new();
    for (class_id, map) in maps.iter().enumerate() {
        if (map.height(), map.width()) != (h, w) {
            return Err(Error::shape("presence maps disagree on dimensions"));
        }
        for row in 0..h {
            for col in 0..w {
                let v = map.get(row, col);
                let mut is_peak = true;
                'scan: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let y = row as i64 + dy;
                        let x = col as i64 + dx;
                        if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                            continue;
                        }
                        if map.get(y as usize, x as usize) > v {
                            is_peak = false;
                            break 'scan;
                        }
                    }
                }
                if is_peak {
                    peaks.push(Peak {
                        class_id,
                        row,
                        col,
                        score: v,
                    });
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| (a.class_id, a.row, a.col).cmp(&(b.class_id, b.row, b.col)))
    });
    peaks.truncate(top_k);
    Ok(peaks)
}

/// Turns peaks into boxes: the center is the peak cell plus its predicted
/// fractional offset, scaled back to image coordinates by `stride`; width
/// and height come from the size head. Boxes are clipped to the image,
/// and non-positive predicted extents are clamped to zero and counted.
pub fn decode_boxes(
    peaks: &[Peak],
    offsets: &PairMap,
    sizes: &PairMap,
    stride: u32,
) -> Result<DecodeResult> {
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    if (offsets.height(), offsets.width()) != (sizes.height(), sizes.width()) {
        return Err(Error::shape("offset and size maps disagree on dimensions"));
    }
    let s = f64::from(stride);
    let img_w = offsets.width() as f64 * s;
    let img_h = offsets.height() as f64 * s;
    let mut clamped = 0usize;
    let mut detections = Vec::with_capacity(peaks.len());
    for p in peaks {
        if p.row >= offsets.height() || p.col >= offsets.width() {
            return Err(Error::validation(format!(
                "peak ({}, {}) outside {}x{} regression maps",
                p.row,
                p.col,
                offsets.height(),
                offsets.width()
            )));
        }
        let (dy, dx) = offsets.get(p.row, p.col);
        let (mut bh, mut bw) = sizes.get(p.row, p.col);
        if bh <= 0.0 || bw <= 0.0 {
            clamped += 1;
            bh = bh.max(0.0);
            bw = bw.max(0.0);
        }
        let cy = (p.row as f64 + dy) * s;
        let cx = (p.col as f64 + dx) * s;
        let half_h = bh * s / 2.0;
        let half_w = bw * s / 2.0;
        let bbox = BBox {
            x1: (cx - half_w).clamp(0.0, img_w),
            y1: (cy - half_h).clamp(0.0, img_h),
            x2: (cx + half_w).clamp(0.0, img_w),
            y2: (cy + half_h).clamp(0.0, img_h),
        };
        detections.push(Detection {
            class_id: p.class_id,
            score: p.score,
            row: p.row,
            col: p.col,
            bbox,
        });
    }
    Ok(DecodeResult {
        detections,
        clamped_sizes: clamped,
    })
}

/// Gaussian score-decay suppression. Repeatedly selects the highest-scoring
/// survivor (first in input order on ties), then multiplies every other
/// same-class score by `exp(-iou^2 / sigma)`. Candidates falling below
/// `score_floor` drop out; selection stops once the best survivor is below
/// the floor. Disjoint boxes keep their scores bit-for-bit.
pub fn soft_nms(detections: Vec<Detection>, sigma: f64, score_floor: f64) -> Vec<Detection> {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut alive = detections;
    let mut kept = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (idx, d) in alive.iter().enumerate() {
            if best.is_none() || d.score > best.unwrap().1 {
                best = Some((idx, d.score));
            }
        }
        let Some((idx, score)) = best else { break };
        if score < score_floor {
            break;
        }
        let chosen = alive.remove(idx);
        for d in &mut alive {
            if d.class_id == chosen.class_id {
                let iou = chosen.bbox.iou(&d.bbox);
                d.score *= (-(iou * iou) / sigma).exp();
            }
        }
        alive.retain(|d| d.score >= score_floor);
        kept.push(chosen);
    }
    kept
}

/// Maps detections decoded at a test-time scale back onto the original
/// image: divides coordinates by `scale`, then, for a horizontally
/// flipped input, mirrors x around the original width.
pub fn rescale_to_original(
    detections: Vec<Detection>,
    scale: f64,
    flip: bool,
    image_width: f64,
) -> Vec<Detection> {
    assert!(scale > 0.0, "scale must be positive");
    detections
        .into_iter()
        .map(|mut d| {
            let b = BBox {
                x1: d.bbox.x1 / scale,
                y1: d.bbox.y1 / scale,
                x2: d.bbox.x2 / scale,
                y2: d.bbox.y2 / scale,
            };
            d.bbox = if flip {
                BBox {
                    x1: image_width - b.x2,
                    y1: b.y1,
                    x2: image_width - b.x1,
                    y2: b.y2,
                }
            } else {
                b
            };
            d
        })
        .collect()
}

/// Merges per-scale detection sets (already mapped to original image
/// coordinates): concatenates in the given order, suppresses across the
/// union, and keeps the `top_k` best survivors.
pub fn merge_multiscale(
    per_scale: Vec<Vec<Detection>>,
    top_k: usize,
    sigma: f64,
    score_floor: f64,
) -> Vec<Detection> {
    let merged: Vec<Detection> = per_scale.into_iter().flatten().collect();
    let mut out = soft_nms(merged, sigma, score_floor);
    out.truncate(top_k);
    out
}

/// One output line of the detections file: image id, category id, box as
/// `[x, y, width, height]`, confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection, image_id: i64, category_id: i64) -> Self {
        DetectionRecord {
            image_id,
            category_id,
            bbox: [
                d.bbox.x1,
                d.bbox.y1,
                d.bbox.x2 - d.bbox.x1,
                d.bbox.y2 - d.bbox.y1,
            ],
            score: d.score,
        }
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.bbox[0],
            y1: self.bbox[1],
            x2: self.bbox[0] + self.bbox[2],
            y2: self.bbox[1] + self.bbox[3],
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.score.is_finite() || self.bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite detection record field"));
        }
        if self.bbox[2] < 0.0 || self.bbox[3] < 0.0 {
            return Err(Error::validation(format!(
                "negative box extent {}x{}",
                self.bbox[2], self.bbox[3]
            )));
        }
        Ok(())
    }
}

/// Reads newline-delimited detection records. Blank lines are allowed;
/// anything else must be a full record.
pub fn read_detections_jsonl(reader: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 1)))?;
        rec.validate()
            .map_err(|e| Error::validation(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections_jsonl(
    writer: &mut impl Write,
    records: &[DetectionRecord],
) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *writer, rec)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
