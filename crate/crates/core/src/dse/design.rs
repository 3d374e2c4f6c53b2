//! Placed designs: rectangles on the tile grid, per-edge communication plans,
//! and the JSON design file.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{read_file, Error, Result};
use crate::mapping::{plan_layers, LayerPlan, Mapping};
use crate::model::ModelSpec;
use crate::perf::LatencyEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
}

impl Tile {
    pub const fn new(row: usize, col: usize) -> Self {
        Tile { row, col }
    }

    pub fn manhattan(&self, other: Tile) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Axis-aligned block of tiles; `row`/`col` is the bottom-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    pub const fn new(row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Rect {
            row,
            col,
            rows,
            cols,
        }
    }

    pub fn end_row(&self) -> usize {
        self.row + self.rows
    }

    pub fn end_col(&self) -> usize {
        self.col + self.cols
    }

    pub fn overlaps(&self, o: &Rect) -> bool {
        self.row < o.end_row() && o.row < self.end_row() && self.col < o.end_col() && o.col < self.end_col()
    }

    pub fn within(&self, arch: &ArchSpec) -> bool {
        self.rows > 0 && self.cols > 0 && self.end_row() <= arch.rows && self.end_col() <= arch.cols
    }

    pub fn contains(&self, t: Tile) -> bool {
        (self.row..self.end_row()).contains(&t.row) && (self.col..self.end_col()).contains(&t.col)
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@({},{}) {}x{}", self.row, self.col, self.rows, self.cols)
    }
}

/// Bitmask occupancy of the grid, one `u128` per row.
#[derive(Debug, Clone)]
pub struct Occupancy {
    rows: usize,
    cols: usize,
    mask: Vec<u128>,
}

impl Occupancy {
    pub const MAX_COLS: usize = 128;

    pub fn new(arch: &ArchSpec) -> Self {
        assert!(arch.cols <= Self::MAX_COLS, "grid wider than {} columns", Self::MAX_COLS);
        Occupancy {
            rows: arch.rows,
            cols: arch.cols,
            mask: vec![0; arch.rows],
        }
    }

    fn row_bits(col: usize, cols: usize) -> u128 {
        let w = if cols >= 128 { u128::MAX } else { (1u128 << cols) - 1 };
        w << col
    }

    pub fn fits(&self, r: &Rect) -> bool {
        if r.end_row() > self.rows || r.end_col() > self.cols || r.rows == 0 || r.cols == 0 {
            return false;
        }
        let bits = Self::row_bits(r.col, r.cols);
        self.mask[r.row..r.end_row()].iter().all(|m| m & bits == 0)
    }

    pub fn fill(&mut self, r: &Rect) {
        debug_assert!(self.fits(r));
        let bits = Self::row_bits(r.col, r.cols);
        for m in &mut self.mask[r.row..r.end_row()] {
            *m |= bits;
        }
    }

    /// Lowest row, then lowest column, where a `rows x cols` block fits.
    pub fn first_fit(&self, rows: usize, cols: usize) -> Option<Rect> {
        if rows > self.rows || cols > self.cols {
            return None;
        }
        for r in 0..=self.rows - rows {
            for c in 0..=self.cols - cols {
                let rect = Rect::new(r, c, rows, cols);
                if self.fits(&rect) {
                    return Some(rect);
                }
            }
        }
        None
    }

    pub fn used(&self) -> usize {
        self.mask.iter().map(|m| m.count_ones() as usize).sum()
    }
}

/// One rectangle per model layer, in model order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Placement {
    pub rects: Vec<Rect>,
}

impl Placement {
    /// Tile of dense-layer partition index `(a, b, c)` with `C` output splits.
    pub fn dense_tile(&self, layer: usize, c_parts: u32, a: u32, b: u32, c: u32) -> Tile {
        let r = &self.rects[layer];
        Tile::new(r.row + (a * c_parts + c) as usize, r.col + b as usize)
    }

    /// Aggregation tile serving producer row `a`.
    pub fn aggregate_tile(&self, layer: usize, a: u32) -> Tile {
        let r = &self.rects[layer];
        Tile::new(r.row + a as usize, r.col)
    }

    /// Consumer directly east of the producer with identical row range.
    pub fn adjacent(&self, producer: usize, consumer: usize) -> bool {
        let p = &self.rects[producer];
        let c = &self.rects[consumer];
        c.col == p.end_col() && c.row == p.row && c.rows == p.rows
    }

    /// Checks bounds, disjointness and extents against the layer plans.
    pub fn validate(&self, plans: &[LayerPlan], arch: &ArchSpec) -> Result<()> {
        if self.rects.len() != plans.len() {
            return Err(Error::Design(format!(
                "placement has {} rectangles for {} layers",
                self.rects.len(),
                plans.len()
            )));
        }
        for (i, (r, p)) in self.rects.iter().zip(plans).enumerate() {
            if (r.rows, r.cols) != p.extent() {
                return Err(Error::Design(format!(
                    "layer {i}: rectangle {r} does not match extent {:?}",
                    p.extent()
                )));
            }
            if !r.within(arch) {
                return Err(Error::Design(format!("layer {i}: rectangle {r} leaves the grid")));
            }
            for (j, o) in self.rects[..i].iter().enumerate() {
                if r.overlaps(o) {
                    return Err(Error::Design(format!("layers {j} and {i} overlap")));
                }
            }
            if let LayerPlan::Aggregate { .. } = p {
                let prod = &self.rects[i - 1];
                if r.col != prod.end_col() || r.row != prod.row {
                    return Err(Error::Design(format!(
                        "layer {i}: aggregation must sit directly east of its producer"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How the first layer receives its input or the last layer emits its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// DMA to or from a PLIO port below row 0.
    #[default]
    Plio,
    /// Cascade from a western neighbour or to an eastern one outside the design.
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Runtime parameters already resident in tile memory.
    #[default]
    Preloaded,
    /// Loaded by DMA from PLIO on every inference.
    Dma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DesignOptions {
    #[serde(default)]
    pub ingress: Boundary,
    #[serde(default)]
    pub egress: Boundary,
    #[serde(default)]
    pub weights: WeightSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Cascade,
    Dma,
    SharedMem,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkKind::Cascade => "cascade",
            LinkKind::Dma => "dma",
            LinkKind::SharedMem => "shared-mem",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Traffic {
    OneToOne,
    Duplicate,
    Partition,
    Gather,
    Mixed,
}

impl fmt::Display for Traffic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Traffic::OneToOne => "one-to-one",
            Traffic::Duplicate => "duplicate",
            Traffic::Partition => "partition",
            Traffic::Gather => "gather",
            Traffic::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Activation,
    Weights,
}

/// Block of valid (unpadded) elements of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
}

impl Region {
    pub fn new(row0: usize, rows: usize, col0: usize, cols: usize) -> Self {
        Region {
            row0,
            rows,
            col0,
            cols,
        }
    }

    /// `[r0, r1) x [c0, c1)`, clipped to the given limits; `None` if empty.
    pub fn span(r0: usize, r1: usize, c0: usize, c1: usize) -> Option<Region> {
        (r1 > r0 && c1 > c0).then(|| Region::new(r0, r1 - r0, c0, c1 - c0))
    }

    pub fn intersect(&self, o: &Region) -> Option<Region> {
        Region::span(
            self.row0.max(o.row0),
            (self.row0 + self.rows).min(o.row0 + o.rows),
            self.col0.max(o.col0),
            (self.col0 + self.cols).min(o.col0 + o.cols),
        )
    }

    pub fn elems(&self) -> usize {
        self.rows * self.cols
    }
}

/// One DMA buffer or shared-memory hand-off.
///
/// `src == None` is a PLIO input; empty `dests` is a PLIO output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub src: Option<Tile>,
    pub dests: Vec<Tile>,
    pub payload: Payload,
    pub region: Region,
    pub bits: u64,
    pub distance: usize,
}

/// Communication into layer `index` (index 0 is the input boundary, index
/// `layers` the output boundary).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub index: usize,
    pub link: LinkKind,
    pub traffic: Traffic,
    pub channels: Vec<Channel>,
    /// 512-bit words per row for cascade edges.
    pub cascade_words: u64,
}

impl Edge {
    pub fn is_ingress(&self) -> bool {
        self.index == 0
    }

    pub fn data_channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.payload == Payload::Activation)
    }

    pub fn weight_channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.payload == Payload::Weights)
    }

    pub fn max_bits(&self) -> u64 {
        self.channels.iter().map(|c| c.bits).max().unwrap_or(0)
    }

    pub fn max_distance(&self) -> usize {
        self.channels.iter().map(|c| c.distance).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommPlan {
    pub edges: Vec<Edge>,
}

/// A placed mapping with its communication plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    pub model_name: String,
    pub mapping: Mapping,
    pub plans: Vec<LayerPlan>,
    pub placement: Placement,
    pub options: DesignOptions,
    pub comm: CommPlan,
}

impl Design {
    pub fn layers(&self) -> usize {
        self.plans.len()
    }

    pub fn total_tiles(&self) -> usize {
        self.plans.iter().map(LayerPlan::tiles).sum()
    }

    /// PLIO streams used by the boundary edges.
    pub fn plio_streams(&self) -> usize {
        let mut n = 0;
        if self.options.ingress == Boundary::Plio {
            n += self.comm.edges[0].data_channels().count();
        }
        if self.options.egress == Boundary::Plio {
            n += self.comm.edges[self.layers()].data_channels().count();
        }
        n
    }

    pub fn to_file(&self) -> DesignFile {
        DesignFile {
            model: self.model_name.clone(),
            mapping: self.mapping.clone(),
            placement: self.placement.clone(),
            options: self.options,
        }
    }
}

/// A design together with its latency estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub design: Design,
    pub estimate: LatencyEstimate,
}

/// On-disk design: enough to rebuild the plan deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub model: String,
    pub mapping: Mapping,
    pub placement: Placement,
    #[serde(default)]
    pub options: DesignOptions,
}

impl DesignFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    /// Validates against `model` and rebuilds the communication plan.
    pub fn into_design(self, model: &ModelSpec, arch: &ArchSpec) -> Result<Design> {
        if self.model != model.name {
            return Err(Error::Design(format!(
                "design is for model '{}', got '{}'",
                self.model, model.name
            )));
        }
        let plans = plan_layers(model, &self.mapping, arch)?;
        self.placement.validate(&plans, arch)?;
        let comm = super::comm::build_comm_plan(&plans, &self.placement, self.options, arch);
        Ok(Design {
            model_name: self.model,
            mapping: self.mapping,
            plans,
            placement: self.placement,
            options: self.options,
            comm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;

    #[test]
    fn occupancy_first_fit() {
        let a = default_aie_ml();
        let mut o = Occupancy::new(&a);
        let r1 = o.first_fit(4, 2).unwrap();
        assert_eq!(r1, Rect::new(0, 0, 4, 2));
        o.fill(&r1);
        let r2 = o.first_fit(4, 2).unwrap();
        assert_eq!(r2, Rect::new(0, 2, 4, 2));
        o.fill(&r2);
        assert_eq!(o.used(), 16);
        assert!(o.first_fit(9, 1).is_none());
        let full = Occupancy::new(&a).first_fit(8, 38).unwrap();
        assert_eq!(full, Rect::new(0, 0, 8, 38));
    }

    #[test]
    fn region_ops() {
        let a = Region::new(0, 8, 0, 16);
        let b = Region::new(4, 8, 8, 16);
        assert_eq!(a.intersect(&b), Some(Region::new(4, 4, 8, 8)));
        assert_eq!(a.intersect(&Region::new(8, 1, 0, 1)), None);
    }

    #[test]
    fn rect_overlap() {
        let a = Rect::new(0, 0, 2, 2);
        assert!(a.overlaps(&Rect::new(1, 1, 2, 2)));
        assert!(!a.overlaps(&Rect::new(0, 2, 2, 2)));
        assert!(!a.overlaps(&Rect::new(2, 0, 1, 1)));
    }
}
