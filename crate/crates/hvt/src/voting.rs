//! Vote aggregation: spreads per-pixel, per-region evidence through a vote
//! field into an object presence map, plus the adjoint used for gradients.
//!
//! For evidence `E` of shape `H x W x R` and a field with offset lists
//! `D_r` of size `K_r`, aggregation computes
//!
//! ```text
//! O(y, x) = sum over (i, j, r, k) with (i, j) + D_r[k] = (y, x)
//!           of E(i, j, r) / K_r
//! ```
//!
//! with out-of-grid targets dropped and masked regions skipped. Two
//! implementations exist on purpose: `aggregate_scatter` follows the
//! definition literally and serves as the oracle, `aggregate_gather`
//! walks targets and reads sources through precomputed flat-index deltas.
//! Both are linear in `E`; `aggregate_adjoint` is the transpose.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::VoteField;
use crate::tensor::Tensor;

/// Dense `H x W x R` evidence, f64, region index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceTensor {
    height: usize,
    width: usize,
    region_count: usize,
    data: Vec<f64>,
}

impl EvidenceTensor {
    pub fn new(height: usize, width: usize, region_count: usize, data: Vec<f64>) -> Result<Self> {
        let numel = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(region_count))
            .ok_or_else(|| Error::shape("evidence dimensions overflow"))?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "evidence {height}x{width}x{region_count} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite evidence value {v}")));
        }
        Ok(EvidenceTensor {
            height,
            width,
            region_count,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, region_count: usize) -> Self {
        EvidenceTensor {
            height,
            width,
            region_count,
            data: vec![0.0; height * width * region_count],
        }
    }

    /// Builds from a rank-3 `H x W x R` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[h, w, r] => {
                EvidenceTensor::new(h, w, r, t.data().iter().map(|&v| f64::from(v)).collect())
            }
            dims => Err(Error::shape(format!(
                "evidence tensor must be rank 3, got {dims:?}"
            ))),
        }
    }

    /// Narrows to the f32 file representation.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.region_count],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape is consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value for 1-based region id at pixel `(i, j)`.
    pub fn get(&self, i: usize, j: usize, region_id: usize) -> f64 {
        self.data[(i * self.width + j) * self.region_count + region_id - 1]
    }

    pub fn set(&mut self, i: usize, j: usize, region_id: usize, value: f64) {
        self.data[(i * self.width + j) * self.region_count + region_id - 1] = value;
    }
}

/// Dense `H x W` accumulated vote map.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPresenceMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ObjectPresenceMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let numel = height
            .checked_mul(width)
            .ok_or_else(|| Error::shape("map dimensions overflow"))?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "map {height}x{width} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite map value {v}")));
        }
        Ok(ObjectPresenceMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ObjectPresenceMap {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[h, w] => {
                ObjectPresenceMap::new(h, w, t.data().iter().map(|&v| f64::from(v)).collect())
            }
            dims => Err(Error::shape(format!(
                "presence map tensor must be rank 2, got {dims:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape is consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }
}

/// Dense `H x W x 2` map of per-pixel value pairs, used for predicted
/// center offsets and box sizes. Channel 0 is the y/height component,
/// channel 1 the x/width component.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PairMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let numel = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Error::shape("pair map dimensions overflow"))?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "pair map {height}x{width}x2 needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite pair value {v}")));
        }
        Ok(PairMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        PairMap {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[h, w, 2] => PairMap::new(h, w, t.data().iter().map(|&v| f64::from(v)).collect()),
            dims => Err(Error::shape(format!(
                "pair map tensor must be H x W x 2, got {dims:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, 2],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape is consistent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(y component, x component)` at pixel `(y, x)`.
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let base = (y * self.width + x) * 2;
        (self.data[base], self.data[base + 1])
    }

    pub fn set(&mut self, y: usize, x: usize, pair: (f64, f64)) {
        let base = (y * self.width + x) * 2;
        self.data[base] = pair.0;
        self.data[base + 1] = pair.1;
    }
}

fn check_shapes(evidence: &EvidenceTensor, field: &VoteField) -> Result<()> {
    if evidence.region_count != field.region_count() {
        return Err(Error::shape(format!(
            "evidence carries {} regions, field defines {}",
            evidence.region_count,
            field.region_count()
        )));
    }
    Ok(())
}

/// Active regions with their vote weights `1 / K_r`.
fn active_weights(field: &VoteField) -> Vec<(usize, f64)> {
    field
        .active_regions()
        .map(|id| (id, 1.0 / field.pixel_count(id) as f64))
        .collect()
}

/// Literal form of the aggregation rule: every source pixel scatters each
/// active region's evidence share onto the region's offsets. Slow and
/// obviously correct; the oracle for `aggregate_gather`.
pub fn aggregate_scatter(evidence: &EvidenceTensor, field: &VoteField) -> Result<ObjectPresenceMap> {
    check_shapes(evidence, field)?;
    let (h, w, rc) = (evidence.height, evidence.width, evidence.region_count);
    let active = active_weights(field);
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * rc;
            for &(id, inv_k) in &active {
                let share = evidence.data[base + id - 1] * inv_k;
                for &(dy, dx) in field.offsets(id) {
                    let y = i as i64 + i64::from(dy);
                    let x = j as i64 + i64::from(dx);
                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        out[y as usize * w + x as usize] += share;
                    }
                }
            }
        }
    }
    ObjectPresenceMap::new(h, w, out)
}

/// One active stencil cell as seen from a target pixel: the source lies at
/// `(y - dy, x - dx)` and contributes its region channel scaled by `1/K_r`.
struct GatherCell {
    /// Flat-index delta from the target's own `(y, x, region 0)` slot to
    /// the source value, valid wherever the source is in-grid.
    delta: isize,
    dy: i32,
    dx: i32,
    inv_k: f64,
    /// Accumulator lane, keyed by the cell's slot in the full unmasked
    /// stencil scan. Keeping lanes geometry-determined makes masking a
    /// region bitwise-identical to zeroing its evidence channel.
    lane: u8,
}

const LANES: usize = 4;

fn gather_cells(field: &VoteField, width: usize) -> Vec<GatherCell> {
    let size = field.field_size();
    let rc = field.region_count() as isize;
    let c = (size / 2) as i32;
    let mut cells = Vec::new();
    let mut slot = 0usize;
    for row in 0..size {
        for col in 0..size {
            let id = field.region_map()[row * size + col];
            if id <= 0 {
                continue;
            }
            let lane = (slot % LANES) as u8;
            slot += 1;
            let id = id as usize;
            if field.is_masked(id) {
                continue;
            }
            let dy = row as i32 - c;
            let dx = col as i32 - c;
            let delta =
                (-(dy as isize) * width as isize - dx as isize) * rc + (id as isize - 1);
            cells.push(GatherCell {
                delta,
                dy,
                dx,
                inv_k: 1.0 / field.pixel_count(id) as f64,
                lane,
            });
        }
    }
    cells
}

/// Contiguous index range `lo..hi` of stencil entries sharing row `dy`.
/// Within a run `dx` ascends, so the in-grid entries for any target form
/// one interval and need no per-entry bounds checks.
struct RowSpan {
    dy: i32,
    lo: usize,
    hi: usize,
}

fn row_spans(dys: impl Iterator<Item = i32>) -> Vec<RowSpan> {
    let mut spans: Vec<RowSpan> = Vec::new();
    for (idx, dy) in dys.enumerate() {
        match spans.last_mut() {
            Some(s) if s.dy == dy => s.hi = idx + 1,
            _ => spans.push(RowSpan {
                dy,
                lo: idx,
                hi: idx + 1,
            }),
        }
    }
    spans
}

/// Target-major form of the aggregation rule. Interior pixels, where the
/// whole stencil stays in-grid, run on precomputed index deltas; border
/// pixels clip each stencil row to its in-grid run and add that slice
/// unchecked, in the same order a checked scan would visit it. Agrees
/// with `aggregate_scatter` up to floating-point reassociation.
pub fn aggregate_gather(evidence: &EvidenceTensor, field: &VoteField) -> Result<ObjectPresenceMap> {
    check_shapes(evidence, field)?;
    let (h, w, rc) = (evidence.height, evidence.width, evidence.region_count);
    let cells = gather_cells(field, w);
    let spans = row_spans(cells.iter().map(|c| c.dy));
    let half = field.field_size() / 2;
    let data = &evidence.data;
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        let row_interior = y >= half && y + half < h;
        for x in 0..w {
            let base = ((y * w + x) * rc) as isize;
            let value = if row_interior && x >= half && x + half < w {
                let mut acc = [0.0f64; LANES];
                for cell in &cells {
                    acc[cell.lane as usize] +=
                        data[(base + cell.delta) as usize] * cell.inv_k;
                }
                (acc[0] + acc[1]) + (acc[2] + acc[3])
            } else {
                let mut acc = 0.0f64;
                for span in &spans {
                    let sy = y as isize - span.dy as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    // Sources sit at sx = x - dx: skip the prefix past the
                    // right edge, stop where sx would go negative.
                    let mut lo = span.lo;
                    while lo < span.hi && x as i32 - cells[lo].dx >= w as i32 {
                        lo += 1;
                    }
                    let mut hi = lo;
                    while hi < span.hi && x as i32 >= cells[hi].dx {
                        hi += 1;
                    }
                    for cell in &cells[lo..hi] {
                        acc += data[(base + cell.delta) as usize] * cell.inv_k;
                    }
                }
                acc
            };
            out[y * w + x] = value;
        }
    }
    ObjectPresenceMap::new(h, w, out)
}

/// Transpose of aggregation: routes a presence-map gradient back to the
/// evidence slot that produced each vote. Masked region channels come
/// back zero. Per region, each stencil row is clipped to its in-grid run
/// and summed unchecked, in checked-scan order.
pub fn aggregate_adjoint(grad_out: &ObjectPresenceMap, field: &VoteField) -> Result<EvidenceTensor> {
    let (h, w) = (grad_out.height, grad_out.width);
    let rc = field.region_count();
    let active = active_weights(field);
    let spans: Vec<Vec<RowSpan>> = active
        .iter()
        .map(|&(id, _)| row_spans(field.offsets(id).iter().map(|&(dy, _)| dy)))
        .collect();
    let mut out = vec![0.0f64; h * w * rc];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * rc;
            for (&(id, inv_k), region_spans) in active.iter().zip(&spans) {
                let offs = field.offsets(id);
                let mut acc = 0.0f64;
                for span in region_spans {
                    let y = i as isize + span.dy as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let row = y as usize * w;
                    // Targets sit at x = j + dx: skip the negative prefix,
                    // stop at the right edge.
                    let mut lo = span.lo;
                    while lo < span.hi && j as i32 + offs[lo].1 < 0 {
                        lo += 1;
                    }
                    let mut hi = lo;
                    while hi < span.hi && j as i32 + offs[hi].1 < w as i32 {
                        hi += 1;
                    }
                    for &(_, dx) in &offs[lo..hi] {
                        acc += grad_out.data[row + (j as i32 + dx) as usize];
                    }
                }
                out[base + id - 1] = acc * inv_k;
            }
        }
    }
    EvidenceTensor::new(h, w, rc, out)
}

/// Aggregates each class plane independently. Classes are data-parallel;
/// per-class arithmetic order matches `aggregate_gather` exactly.
pub fn aggregate_multiclass(
    evidence: &[EvidenceTensor],
    field: &VoteField,
) -> Result<Vec<ObjectPresenceMap>> {
    if let Some(first) = evidence.first() {
        for e in evidence {
            if (e.height, e.width, e.region_count) != (first.height, first.width, first.region_count)
            {
                return Err(Error::shape("class planes disagree on dimensions"));
            }
        }
    }
    evidence
        .par_iter()
        .map(|e| aggregate_gather(e, field))
        .collect()
}

/// Per-source breakdown of one target pixel's accumulated vote: entry
/// `(i, j)` is what that source contributed to `target` across all active
/// regions. Sums to the target's aggregated value.
pub fn vote_contributions(
    evidence: &EvidenceTensor,
    field: &VoteField,
    target: (usize, usize),
) -> Result<Vec<f64>> {
    check_shapes(evidence, field)?;
    let (h, w, rc) = (evidence.height, evidence.width, evidence.region_count);
    let (ty, tx) = target;
    if ty >= h || tx >= w {
        return Err(Error::validation(format!(
            "target ({ty},{tx}) outside {h}x{w} map"
        )));
    }
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let dy = ty as i32 - i as i32;
            let dx = tx as i32 - j as i32;
            if let Some(id) = field.region_at(dy, dx) {
                if !field.is_masked(id) {
                    out[i * w + j] = evidence.data[(i * w + j) * rc + id - 1]
                        / field.pixel_count(id) as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Splits a rank-4 `C x H x W x R` tensor into per-class evidence planes.
pub fn evidence_stack_from_tensor(t: &Tensor) -> Result<Vec<EvidenceTensor>> {
    match t.dims() {
        &[c, h, w, r] => {
            let plane = h * w * r;
            (0..c)
                .map(|ci| {
                    let slice = &t.data()[ci * plane..(ci + 1) * plane];
                    EvidenceTensor::new(h, w, r, slice.iter().map(|&v| f64::from(v)).collect())
                })
                .collect()
        }
        dims => Err(Error::shape(format!(
            "evidence stack must be rank 4, got {dims:?}"
        ))),
    }
}

/// Stacks per-class presence maps into a rank-3 `C x H x W` tensor.
pub fn presence_stack_to_tensor(maps: &[ObjectPresenceMap]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::shape("presence stack is empty"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if (m.height, m.width) != (h, w) {
            return Err(Error::shape("presence maps disagree on dimensions"));
        }
        data.extend(m.data.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![maps.len(), h, w], data)
}

/// Splits a rank-3 `C x H x W` tensor into per-class presence maps.
pub fn presence_stack_from_tensor(t: &Tensor) -> Result<Vec<ObjectPresenceMap>> {
    match t.dims() {
        &[c, h, w] => {
            let plane = h * w;
            (0..c)
                .map(|ci| {
                    let slice = &t.data()[ci * plane..(ci + 1) * plane];
                    ObjectPresenceMap::new(h, w, slice.iter().map(|&v| f64::from(v)).collect())
                })
                .collect()
        }
        dims => Err(Error::shape(format!(
            "presence stack must be rank 3, got {dims:?}"
        ))),
    }
}
