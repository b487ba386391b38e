//! Detection evaluation: greedy score-ordered matching against ground
//! truth and 101-point interpolated average precision, following the
//! standard COCO protocol. Ignored ground truth (crowd regions, boxes
//! outside the active size bucket) absorbs detections without penalty
//! and can match more than once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::BBox;

/// Area split points: boxes below 32^2 are small, below 96^2 medium.
pub const AREA_SMALL_MAX: f64 = 1024.0;
pub const AREA_MEDIUM_MAX: f64 = 9216.0;

/// Recall sample count of the interpolated sweep.
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds averaged into the headline AP: 0.5 to 0.95 in steps
/// of 0.05.
pub fn iou_thresholds() -> [f64; 10] {
    let mut t = [0.0; 10];
    for (i, v) in t.iter_mut().enumerate() {
        *v = 0.5 + 0.05 * i as f64;
    }
    t
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    /// Marked ignore at the source (crowd regions). Never counts toward
    /// recall; matching it neither scores nor penalizes a detection.
    pub ignore: bool,
    /// Object area in image pixels, used for size bucketing.
    pub area: f64,
}

/// One scored detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalDetection {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

/// Object size bucket an evaluation pass restricts itself to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaBucket {
    All,
    Small,
    Medium,
    Large,
}

impl AreaBucket {
    fn contains(self, area: f64) -> bool {
        match self {
            AreaBucket::All => true,
            AreaBucket::Small => area < AREA_SMALL_MAX,
            AreaBucket::Medium => (AREA_SMALL_MAX..AREA_MEDIUM_MAX).contains(&area),
            AreaBucket::Large => area >= AREA_MEDIUM_MAX,
        }
    }
}

/// Headline metrics. Buckets with no ground truth anywhere report the
/// -1.0 sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
}

/// Interpolated AP from cumulative true/false positive flags over
/// score-descending, non-ignored detections: sweeps 101 evenly spaced
/// recall levels and averages the precision envelope.
fn interpolated_ap(flags: &[bool], positives: usize) -> f64 {
    debug_assert!(positives > 0);
    let mut precisions = Vec::with_capacity(flags.len());
    let mut recalls = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / positives as f64);
    }
    // Envelope: best precision achievable at this recall or beyond.
    for i in (1..precisions.len()).rev() {
        if precisions[i] > precisions[i - 1] {
            precisions[i - 1] = precisions[i];
        }
    }
    let mut total = 0.0;
    for step in 0..RECALL_POINTS {
        let r = step as f64 / (RECALL_POINTS - 1) as f64;
        let p = recalls
            .iter()
            .position(|&rec| rec >= r)
            .map_or(0.0, |idx| precisions[idx]);
        total += p;
    }
    total / RECALL_POINTS as f64
}

struct CategoryData<'a> {
    gts_by_image: BTreeMap<i64, Vec<&'a GroundTruth>>,
    /// Score-descending; ties keep input order.
    dets_sorted: Vec<&'a EvalDetection>,
}

/// Mean AP over categories holding ground truth, at one threshold and
/// bucket; `None` when no category qualifies.
fn ap_at(
    by_category: &BTreeMap<i64, CategoryData<'_>>,
    threshold: f64,
    bucket: AreaBucket,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut defined = 0usize;
    for cat in by_category.values() {
        let mut positives = 0usize;
        let mut gt_ignored: BTreeMap<i64, Vec<bool>> = BTreeMap::new();
        let mut gt_matched: BTreeMap<i64, Vec<bool>> = BTreeMap::new();
        for (&image_id, gts) in &cat.gts_by_image {
            let ignored: Vec<bool> = gts
                .iter()
                .map(|g| g.ignore || !bucket.contains(g.area))
                .collect();
            positives += ignored.iter().filter(|&&ig| !ig).count();
            gt_matched.insert(image_id, vec![false; gts.len()]);
            gt_ignored.insert(image_id, ignored);
        }
        if positives == 0 {
            continue;
        }
        // Walk detections in global score order; each greedily claims the
        // highest-IoU unmatched non-ignored ground truth of its image at
        // or above the threshold, else falls back to the best ignored one
        // (reusable, so crowds absorb any number of detections).
        let mut flags = Vec::with_capacity(cat.dets_sorted.len());
        for d in &cat.dets_sorted {
            let mut hit: Option<(usize, bool)> = None;
            if let Some(gts) = cat.gts_by_image.get(&d.image_id) {
                let ignored = &gt_ignored[&d.image_id];
                let matched = &gt_matched[&d.image_id];
                let best_over = |use_ignored: bool| -> Option<(usize, f64)> {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, g) in gts.iter().enumerate() {
                        if ignored[gi] != use_ignored || (!use_ignored && matched[gi]) {
                            continue;
                        }
                        let v = d.bbox.iou(&g.bbox);
                        if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((gi, v));
                        }
                    }
                    best
                };
                if let Some((gi, _)) = best_over(false) {
                    hit = Some((gi, false));
                } else if let Some((gi, _)) = best_over(true) {
                    hit = Some((gi, true));
                }
            }
            match hit {
                Some((gi, absorbed)) => {
                    gt_matched.get_mut(&d.image_id).expect("image known")[gi] = true;
                    if !absorbed {
                        flags.push(true);
                    }
                    // A detection absorbed by an ignored region drops out
                    // of scoring entirely.
                }
                None => {
                    // Unmatched detections outside the bucket's size
                    // range are not false positives for that bucket.
                    if bucket.contains(d.bbox.area()) {
                        flags.push(false);
                    }
                }
            }
        }
        sum += interpolated_ap(&flags, positives);
        defined += 1;
    }
    (defined > 0).then(|| sum / defined as f64)
}

/// Evaluates detections against ground truth and reports COCO-style
/// averages. Detection score ties resolve by input order.
pub fn evaluate(gts: &[GroundTruth], dets: &[EvalDetection]) -> EvalSummary {
    let mut by_category: BTreeMap<i64, CategoryData<'_>> = BTreeMap::new();
    let empty_cat = || CategoryData {
        gts_by_image: BTreeMap::new(),
        dets_sorted: Vec::new(),
    };
    for g in gts {
        by_category
            .entry(g.category_id)
            .or_insert_with(empty_cat)
            .gts_by_image
            .entry(g.image_id)
            .or_default()
            .push(g);
    }
    for d in dets {
        by_category
            .entry(d.category_id)
            .or_insert_with(empty_cat)
            .dets_sorted
            .push(d);
    }
    for cat in by_category.values_mut() {
        cat.dets_sorted.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).expect("finite scores")
        });
    }

    let thresholds = iou_thresholds();
    let mean_over = |bucket: AreaBucket| -> f64 {
        let mut vals = Vec::new();
        for &t in &thresholds {
            if let Some(v) = ap_at(&by_category, t, bucket) {
                vals.push(v);
            }
        }
        if vals.is_empty() {
            -1.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let single = |t: f64| ap_at(&by_category, t, AreaBucket::All).unwrap_or(-1.0);

    EvalSummary {
        ap: mean_over(AreaBucket::All),
        ap50: single(0.5),
        ap75: single(0.75),
        ap_small: mean_over(AreaBucket::Small),
        ap_medium: mean_over(AreaBucket::Medium),
        ap_large: mean_over(AreaBucket::Large),
    }
}
