//! Spatial partitioning of layers into per-tile kernels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::model::{DenseLayer, Layer, LayerDims, ModelSpec, ReduceKind, ResolvedLayer};

/// Partition factors `(A, B, C)` of a dense layer along M, K and N.
///
/// The layer occupies `A * C` rows and `B` columns of tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Partition {
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

impl Partition {
    pub const UNIT: Partition = Partition { a: 1, b: 1, c: 1 };

    pub const fn new(a: u32, b: u32, c: u32) -> Self {
        Partition { a, b, c }
    }

    pub fn tiles(&self) -> usize {
        (self.a * self.b * self.c) as usize
    }

    pub fn rows(&self) -> usize {
        (self.a * self.c) as usize
    }

    pub fn cols(&self) -> usize {
        self.b as usize
    }

    pub fn is_pow2(&self) -> bool {
        self.a.is_power_of_two() && self.b.is_power_of_two() && self.c.is_power_of_two()
    }
}

impl From<[u32; 3]> for Partition {
    fn from(v: [u32; 3]) -> Self {
        Partition::new(v[0], v[1], v[2])
    }
}

impl From<Partition> for [u32; 3] {
    fn from(p: Partition) -> Self {
        [p.a, p.b, p.c]
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.a, self.b, self.c)
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s
            .trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split([',', 'x'])
            .map(|t| t.trim().parse::<u32>())
            .collect();
        match parts.as_slice() {
            [Ok(a), Ok(b), Ok(c)] => Ok(Partition::new(*a, *b, *c)),
            _ => Err(Error::Design(format!("bad partition '{s}', expected A,B,C"))),
        }
    }
}

/// Per-tile matrix-multiply shape `H1 x W1 x W2` after padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelShape {
    pub h1: usize,
    pub w1: usize,
    pub w2: usize,
}

impl KernelShape {
    pub const fn new(h1: usize, w1: usize, w2: usize) -> Self {
        KernelShape { h1, w1, w2 }
    }

    /// Checks the minimum-work floor and block alignment.
    pub fn is_valid(&self, arch: &ArchSpec) -> bool {
        let b = arch.block;
        self.h1 >= 2 * b.m
            && self.w1 >= b.k
            && self.w2 >= 2 * b.n
            && self.h1 % (2 * b.m) == 0
            && self.w1 % b.k == 0
            && self.w2 % (2 * b.n) == 0
    }
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h1, self.w1, self.w2)
    }
}

pub(crate) fn round_up(v: usize, to: usize) -> usize {
    v.div_ceil(to) * to
}

/// Padded per-tile extent of `dim` split `parts` ways with block multiple `align`.
fn share(dim: usize, parts: u32, align: usize) -> usize {
    round_up(dim.div_ceil(parts as usize).max(1), align)
}

pub fn kernel_shape(dims: LayerDims, p: Partition, arch: &ArchSpec) -> KernelShape {
    let b = arch.block;
    KernelShape {
        h1: share(dims.m, p.a, 2 * b.m),
        w1: share(dims.k, p.b, b.k),
        w2: share(dims.n, p.c, 2 * b.n),
    }
}

/// A split of `dim` into `parts` is legal when it is a power of two and, if it
/// actually splits, every part gets strictly more than the floor and no part is
/// pure padding.
fn split_legal(dim: usize, parts: u32, floor: usize, align: usize) -> bool {
    if parts == 0 || !parts.is_power_of_two() {
        return false;
    }
    if parts == 1 {
        return true;
    }
    let raw = dim.div_ceil(parts as usize);
    let padded = round_up(raw, align);
    raw > floor && (parts as usize - 1) * padded < dim
}

/// Whether `p` is a legal partition of `dims` on `arch` (ignoring budgets).
pub fn partition_legal(dims: LayerDims, p: Partition, arch: &ArchSpec) -> bool {
    let b = arch.block;
    split_legal(dims.m, p.a, 2 * b.m, 2 * b.m)
        && split_legal(dims.k, p.b, b.k, b.k)
        && split_legal(dims.n, p.c, 2 * b.n, 2 * b.n)
        && p.rows() <= arch.rows
        && p.cols() <= arch.cols
}

/// Legal partitions of one layer in lexicographic `(A, B, C)` order.
pub fn layer_candidates(dims: LayerDims, arch: &ArchSpec, force_c1: bool) -> Vec<Partition> {
    let limit = arch.tiles() as u32;
    let pow2 = |max: u32| {
        std::iter::successors(Some(1u32), |v| v.checked_mul(2)).take_while(move |v| *v <= max)
    };
    let mut out = Vec::new();
    for a in pow2(limit) {
        for b in pow2(limit) {
            for c in pow2(limit) {
                if force_c1 && c != 1 {
                    continue;
                }
                let p = Partition::new(a, b, c);
                if p.tiles() <= arch.tiles() && partition_legal(dims, p, arch) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Per-model-layer mapping information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPlan {
    Dense {
        dims: LayerDims,
        part: Partition,
        kernel: KernelShape,
        layer: DenseLayer,
    },
    Aggregate {
        /// Valid rows reduced.
        m: usize,
        /// Valid features.
        f: usize,
        /// One aggregation tile per producer row.
        tiles: u32,
        /// Producer kernel shape (`h1` rows x `w2` features per tile).
        h1: usize,
        w2: usize,
        reduce: ReduceKind,
        shift: u32,
    },
}

impl LayerPlan {
    pub fn tiles(&self) -> usize {
        match self {
            LayerPlan::Dense { part, .. } => part.tiles(),
            LayerPlan::Aggregate { tiles, .. } => *tiles as usize,
        }
    }

    /// Rows and columns of the rectangle the layer occupies.
    pub fn extent(&self) -> (usize, usize) {
        match self {
            LayerPlan::Dense { part, .. } => (part.rows(), part.cols()),
            LayerPlan::Aggregate { tiles, .. } => (*tiles as usize, 1),
        }
    }
}

/// Partition factors for every dense layer, in model order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mapping {
    pub dense: Vec<Partition>,
}

impl Mapping {
    pub fn new(dense: Vec<Partition>) -> Self {
        Mapping { dense }
    }

    pub fn total_tiles(&self, model: &ModelSpec) -> usize {
        let mut t: usize = self.dense.iter().map(Partition::tiles).sum();
        if let Some(ai) = model.aggregate_index() {
            let di = model.dense_indices();
            if let Some(pos) = di.iter().position(|&i| i == ai - 1) {
                t += self.dense[pos].a as usize;
            }
        }
        t
    }

    /// Flat vector used for deterministic tie-breaking.
    pub fn key(&self) -> Vec<u32> {
        self.dense.iter().flat_map(|p| [p.a, p.b, p.c]).collect()
    }

    pub fn parse_list(s: &str) -> Result<Self> {
        let dense = s
            .split([';', ' '])
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Partition>>>()?;
        Ok(Mapping { dense })
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dense.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Resolves every layer of `model` under `mapping`, checking partition legality
/// and the aggregation producer constraint.
pub fn plan_layers(model: &ModelSpec, mapping: &Mapping, arch: &ArchSpec) -> Result<Vec<LayerPlan>> {
    let resolved = model.resolve()?;
    let n_dense = resolved
        .iter()
        .filter(|r| matches!(r, ResolvedLayer::Dense(_)))
        .count();
    if mapping.dense.len() != n_dense {
        return Err(Error::Design(format!(
            "mapping has {} partitions, model has {n_dense} dense layers",
            mapping.dense.len()
        )));
    }
    let mut plans: Vec<LayerPlan> = Vec::with_capacity(resolved.len());
    let mut di = 0;
    for (i, (r, layer)) in resolved.iter().zip(&model.layers).enumerate() {
        match (r, layer) {
            (ResolvedLayer::Dense(dims), Layer::Dense(dl)) => {
                let part = mapping.dense[di];
                di += 1;
                if !partition_legal(*dims, part, arch) {
                    return Err(Error::Design(format!(
                        "layer {i}: partition {part} is not legal for {}x{}x{}",
                        dims.m, dims.k, dims.n
                    )));
                }
                plans.push(LayerPlan::Dense {
                    dims: *dims,
                    part,
                    kernel: kernel_shape(*dims, part, arch),
                    layer: *dl,
                });
            }
            (ResolvedLayer::Aggregate { m, f }, Layer::Aggregate(al)) => {
                let Some(LayerPlan::Dense { part, kernel, .. }) = plans.last() else {
                    return Err(Error::Design(format!("layer {i}: aggregation without producer")));
                };
                if part.c != 1 {
                    return Err(Error::Design(format!(
                        "layer {}: producer of the aggregation must have C = 1, got {part}",
                        i - 1
                    )));
                }
                plans.push(LayerPlan::Aggregate {
                    m: *m,
                    f: *f,
                    tiles: part.a,
                    h1: kernel.h1,
                    w2: kernel.w2,
                    reduce: al.reduce,
                    shift: al.shift,
                });
            }
            _ => unreachable!("resolve mirrors layers"),
        }
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;

    fn d(m: usize, k: usize, n: usize) -> LayerDims {
        LayerDims { m, k, n }
    }

    #[test]
    fn kernel_padding() {
        let a = default_aie_ml();
        assert_eq!(
            kernel_shape(d(64, 64, 5), Partition::UNIT, &a),
            KernelShape::new(64, 64, 16)
        );
        assert_eq!(
            kernel_shape(d(1, 32, 10), Partition::UNIT, &a),
            KernelShape::new(8, 32, 16)
        );
        assert_eq!(
            kernel_shape(d(32, 32, 32), Partition::new(2, 2, 1), &a),
            KernelShape::new(16, 16, 32)
        );
    }

    #[test]
    fn unit_partition_only_on_tiny_layer() {
        let a = default_aie_ml().with_grid(1, 1);
        assert_eq!(layer_candidates(d(8, 8, 8), &a, false), vec![Partition::UNIT]);
    }

    #[test]
    fn candidates_are_pow2_and_include_221() {
        let a = default_aie_ml();
        let c = layer_candidates(d(32, 32, 32), &a, false);
        assert!(c.contains(&Partition::new(2, 2, 1)));
        assert!(c.iter().all(Partition::is_pow2));
        // strictly more than the floor per split: A <= 2 (16 > 8), B <= 2, C = 1
        assert!(!c.contains(&Partition::new(4, 1, 1)));
        assert!(!c.contains(&Partition::new(1, 1, 2)));
        let mut sorted = c.clone();
        sorted.sort();
        assert_eq!(sorted, c);
    }

    #[test]
    fn no_empty_tiles() {
        let a = default_aie_ml();
        // 34 rows in 4 parts pads to 16 per part; the fourth part would start at 48
        assert!(!partition_legal(d(34, 8, 16), Partition::new(4, 1, 1), &a));
        assert!(partition_legal(d(34, 8, 16), Partition::new(2, 1, 1), &a));
    }

    #[test]
    fn partition_parse() {
        assert_eq!("2,2,1".parse::<Partition>().unwrap(), Partition::new(2, 2, 1));
        assert_eq!("(1,4,2)".parse::<Partition>().unwrap(), Partition::new(1, 4, 2));
        assert_eq!(
            Mapping::parse_list("1,4,2;1,4,1").unwrap().dense,
            vec![Partition::new(1, 4, 2), Partition::new(1, 4, 1)]
        );
        assert!("1,2".parse::<Partition>().is_err());
    }
}
