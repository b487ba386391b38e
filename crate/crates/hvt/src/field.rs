//! Log-polar vote field: a square stencil of integer pixel offsets
//! partitioned into a center disk plus ring/angle sectors.
//!
//! Region ids are 1-based. Id 1 is always the center disk and is never
//! split angularly. An annulus `k` (1-based, counted outward from the
//! center disk) contributes `angle_bin_count` sectors with ids
//! `2 + (k-1)*angle_bin_count + bin`, where `bin` counts counter-clockwise
//! half-open angular intervals starting at 0 degrees (pointing right,
//! toward +x). Rows grow downward, so the angle of an offset `(dy, dx)`
//! is `atan2(-dy, dx)`.
//!
//! Ring extents are diameters: a pixel offset belongs to ring `i` when its
//! Euclidean distance from the stencil center is at most `ring_extents[i]/2`
//! and greater than every smaller ring's half extent. Membership tests are
//! exact: squared integer distances compared against squared half extents,
//! and angular boundaries on the axes and diagonals resolved without
//! floating point. No other lattice direction can land on a bin boundary
//! when the bin count divides 360, so `atan2` is exact enough everywhere
//! else.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Region id of the center disk.
pub const CENTER_REGION: usize = 1;

/// Importing a serialized field rebuilds its region map, so cap the edge
/// length a document may claim before we allocate for it.
pub const MAX_IMPORT_FIELD_SIZE: usize = 1025;

/// Geometry and masking parameters of a vote field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteFieldConfig {
    /// Number of equal angular sectors per non-center ring. Must divide 360.
    pub angle_bin_count: usize,
    /// Ring diameters in pixels: even, strictly increasing, at least 2.
    pub ring_extents: Vec<u32>,
    /// Region ids excluded from aggregation. Geometry is unaffected.
    #[serde(default)]
    pub masked_regions: BTreeSet<usize>,
}

impl VoteFieldConfig {
    pub fn new(angle_bin_count: usize, ring_extents: Vec<u32>) -> Self {
        VoteFieldConfig {
            angle_bin_count,
            ring_extents,
            masked_regions: BTreeSet::new(),
        }
    }

    /// Total number of regions: one center disk plus `angle_bin_count`
    /// sectors for every ring beyond the first.
    pub fn region_count(&self) -> usize {
        1 + (self.ring_extents.len().saturating_sub(1)) * self.angle_bin_count
    }

    /// Edge length of the square stencil holding the outermost ring.
    pub fn field_size(&self) -> usize {
        self.ring_extents.last().map_or(0, |&e| e as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.angle_bin_count == 0 || 360 % self.angle_bin_count != 0 {
            return Err(Error::config(format!(
                "angle_bin_count must divide 360, got {}",
                self.angle_bin_count
            )));
        }
        if self.ring_extents.is_empty() {
            return Err(Error::config("ring_extents must be non-empty"));
        }
        let mut prev = 0u32;
        for &e in &self.ring_extents {
            if e < 2 || e % 2 != 0 {
                return Err(Error::config(format!(
                    "ring extent {e} must be an even value of at least 2"
                )));
            }
            if e <= prev {
                return Err(Error::config(format!(
                    "ring extents must be strictly increasing, {e} follows {prev}"
                )));
            }
            prev = e;
        }
        let r = self.region_count();
        for &m in &self.masked_regions {
            if m < 1 || m > r {
                return Err(Error::config(format!(
                    "masked region {m} outside valid ids 1..={r}"
                )));
            }
        }
        Ok(())
    }
}

/// Angular bin of a non-origin offset, counted counter-clockwise from the
/// +x axis in half-open intervals of `360/bins` degrees.
fn angle_bin(dy: i32, dx: i32, bins: usize) -> usize {
    debug_assert!(dy != 0 || dx != 0);
    let degrees = if dy == 0 {
        if dx > 0 {
            0.0
        } else {
            180.0
        }
    } else if dx == 0 {
        if dy < 0 {
            90.0
        } else {
            270.0
        }
    } else if dy.abs() == dx.abs() {
        // Exact diagonals; sign pattern picks the quadrant.
        match (dx > 0, dy < 0) {
            (true, true) => 45.0,
            (false, true) => 135.0,
            (false, false) => 225.0,
            (true, false) => 315.0,
        }
    } else {
        (f64::from(-dy).atan2(f64::from(dx)).to_degrees()).rem_euclid(360.0)
    };
    let width = 360.0 / bins as f64;
    ((degrees / width) as usize).min(bins - 1)
}

/// Region id of an integer offset under `config`, or `None` outside the
/// outermost ring. Masking does not affect the result. `config` must be
/// structurally valid.
pub fn region_of(offset: (i32, i32), config: &VoteFieldConfig) -> Option<usize> {
    let (dy, dx) = offset;
    let d2 = i64::from(dy) * i64::from(dy) + i64::from(dx) * i64::from(dx);
    let half = |extent: u32| i64::from(extent / 2);
    let outer = half(*config.ring_extents.last().expect("validated config"));
    if d2 > outer * outer {
        return None;
    }
    let inner = half(config.ring_extents[0]);
    if d2 <= inner * inner {
        return Some(CENTER_REGION);
    }
    let annulus = config
        .ring_extents
        .iter()
        .position(|&e| d2 <= half(e) * half(e))
        .expect("offset inside outer ring");
    let bin = angle_bin(dy, dx, config.angle_bin_count);
    Some(2 + (annulus - 1) * config.angle_bin_count + bin)
}

/// A fully materialized vote field: per-region offset lists plus the
/// region map of the square stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteField {
    config: VoteFieldConfig,
    region_count: usize,
    field_size: usize,
    /// Offset list per region, indexed by `id - 1`, in row-major stencil order.
    offsets: Vec<Vec<(i32, i32)>>,
    /// Row-major `field_size * field_size` grid of region ids, -1 outside.
    region_map: Vec<i32>,
}

/// Selects which regions a derived field keeps active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskMode {
    /// Keep only the center disk: mask every sector id.
    OnlyCenter,
    /// Drop the center disk, keep all sectors.
    NoCenter,
    /// Drop the center disk and the innermost non-center ring.
    OnlyContext,
    /// Mask exactly the given ids.
    Custom(BTreeSet<usize>),
}

pub fn build_field(config: &VoteFieldConfig) -> Result<VoteField> {
    config.validate()?;
    let region_count = config.region_count();
    let field_size = config.field_size();
    let center = (field_size / 2) as i32;
    let mut region_map = vec![-1i32; field_size * field_size];
    let mut offsets = vec![Vec::new(); region_count];
    for row in 0..field_size {
        for col in 0..field_size {
            let dy = row as i32 - center;
            let dx = col as i32 - center;
            if let Some(id) = region_of((dy, dx), config) {
                region_map[row * field_size + col] = id as i32;
                offsets[id - 1].push((dy, dx));
            }
        }
    }
    for (idx, list) in offsets.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::config(format!(
                "region {} holds no pixels; rings too thin for {} angle bins",
                idx + 1,
                config.angle_bin_count
            )));
        }
    }
    Ok(VoteField {
        config: config.clone(),
        region_count,
        field_size,
        offsets,
        region_map,
    })
}

/// Returns a copy of `field` with the mask replaced according to `mode`.
pub fn mask_rings(field: &VoteField, mode: &MaskMode) -> Result<VoteField> {
    let r = field.region_count;
    let masked: BTreeSet<usize> = match mode {
        MaskMode::OnlyCenter => (2..=r).collect(),
        MaskMode::NoCenter => [CENTER_REGION].into_iter().collect(),
        MaskMode::OnlyContext => {
            let mut s: BTreeSet<usize> = [CENTER_REGION].into_iter().collect();
            let first_ring_end = (1 + field.config.angle_bin_count).min(r);
            s.extend(2..=first_ring_end);
            s
        }
        MaskMode::Custom(ids) => {
            for &m in ids {
                if m < 1 || m > r {
                    return Err(Error::config(format!(
                        "masked region {m} outside valid ids 1..={r}"
                    )));
                }
            }
            ids.clone()
        }
    };
    let mut out = field.clone();
    out.config.masked_regions = masked;
    Ok(out)
}

impl VoteField {
    pub fn config(&self) -> &VoteFieldConfig {
        &self.config
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn field_size(&self) -> usize {
        self.field_size
    }

    /// Offsets of region `id` in row-major stencil order.
    pub fn offsets(&self, id: usize) -> &[(i32, i32)] {
        &self.offsets[id - 1]
    }

    /// Number of stencil pixels in region `id`.
    pub fn pixel_count(&self, id: usize) -> usize {
        self.offsets[id - 1].len()
    }

    pub fn is_masked(&self, id: usize) -> bool {
        self.config.masked_regions.contains(&id)
    }

    /// Region ids that participate in aggregation.
    pub fn active_regions(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.region_count).filter(|id| !self.is_masked(*id))
    }

    /// Row-major `field_size * field_size` region ids, -1 outside the disk.
    pub fn region_map(&self) -> &[i32] {
        &self.region_map
    }

    /// Region id at stencil offset `(dy, dx)`, or `None` outside the disk.
    pub fn region_at(&self, dy: i32, dx: i32) -> Option<usize> {
        let c = (self.field_size / 2) as i32;
        let row = dy + c;
        let col = dx + c;
        if row < 0 || col < 0 || row >= self.field_size as i32 || col >= self.field_size as i32 {
            return None;
        }
        let id = self.region_map[row as usize * self.field_size + col as usize];
        (id > 0).then_some(id as usize)
    }

    /// Serializes the field as a JSON document carrying the config, the
    /// derived counts, and the full region map.
    pub fn to_json(&self) -> String {
        let doc = FieldDocument {
            angle_bin_count: self.config.angle_bin_count,
            ring_extents: self.config.ring_extents.clone(),
            masked_regions: self.config.masked_regions.iter().copied().collect(),
            region_count: self.region_count,
            field_size: self.field_size,
            region_map: self.region_map.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("field document serializes")
    }

    /// Parses a field document and cross-checks every derived value in it
    /// against a rebuild from its config.
    pub fn from_json_str(text: &str) -> Result<VoteField> {
        let doc: FieldDocument =
            serde_json::from_str(text).map_err(|e| Error::parse(format!("field json: {e}")))?;
        let mut config = VoteFieldConfig::new(doc.angle_bin_count, doc.ring_extents);
        config.masked_regions = doc.masked_regions.iter().copied().collect();
        config.validate()?;
        if config.field_size() > MAX_IMPORT_FIELD_SIZE {
            return Err(Error::validation(format!(
                "field size {} exceeds import limit {}",
                config.field_size(),
                MAX_IMPORT_FIELD_SIZE
            )));
        }
        let field = build_field(&config)?;
        if doc.region_count != field.region_count {
            return Err(Error::validation(format!(
                "document claims {} regions, config yields {}",
                doc.region_count, field.region_count
            )));
        }
        if doc.field_size != field.field_size {
            return Err(Error::validation(format!(
                "document claims field size {}, config yields {}",
                doc.field_size, field.field_size
            )));
        }
        if doc.region_map != field.region_map {
            return Err(Error::validation(
                "document region map disagrees with config geometry",
            ));
        }
        Ok(field)
    }

    /// Renders the region map as an ASCII grid, one id per cell, for
    /// debugging and CLI output.
    pub fn map_display(&self) -> String {
        let mut out = String::new();
        let cell = self.region_count.to_string().len().max(2);
        for row in 0..self.field_size {
            for col in 0..self.field_size {
                let id = self.region_map[row * self.field_size + col];
                if id < 0 {
                    let _ = write!(out, "{:>cell$} ", ".");
                } else {
                    let _ = write!(out, "{id:>cell$} ");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct FieldDocument {
    angle_bin_count: usize,
    ring_extents: Vec<u32>,
    #[serde(default)]
    masked_regions: Vec<usize>,
    region_count: usize,
    field_size: usize,
    region_map: Vec<i32>,
}
