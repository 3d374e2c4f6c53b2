//! Overhead-aware analytical latency model.
//!
//! A kernel runs `n_j = H1*W2 / (4*B_M*B_N)` j-loops of `4*W1/B_K + L_epi`
//! cycles each, plus a fixed overhead `L_o` that depends on how it talks to its
//! neighbours. A row of `B` tiles chained along K pipelines its j-loops with
//! `B - 1` fill loops, and tiles past the first pay `L_cas` per loop. DMA edges
//! cost `L_init + bits/32 + 4*D`; layer-to-layer cascade costs the constant
//! `O_cas`. The end-to-end latency is the plain sum of all layer and edge terms.

use serde::{Deserialize, Serialize};

use crate::arch::{cycles_to_ns, ArchSpec, ACC_BITS};
use crate::dse::design::{Design, Edge, LinkKind, Payload, Traffic};
use crate::mapping::{KernelShape, LayerPlan, Partition};
use crate::model::ReduceKind;
use crate::profile::{CalibrationProfile, DmaPayload, Port, Variant};

/// j-loops of one kernel.
pub fn n_jloops(k: KernelShape, arch: &ArchSpec) -> u64 {
    let per_loop = 4 * arch.block.m * arch.block.n;
    (k.h1 * k.w2).div_ceil(per_loop) as u64
}

/// Latency of one j-loop of a standalone kernel.
pub fn j_loop_cycles(k: KernelShape, arch: &ArchSpec, p: &CalibrationProfile, br: bool) -> f64 {
    (4 * k.w1.div_ceil(arch.block.k)) as f64 + p.epilogue_for(br)
}

pub fn single_aie_latency(k: KernelShape, arch: &ArchSpec, p: &CalibrationProfile, variant: Variant) -> f64 {
    n_jloops(k, arch) as f64 * j_loop_cycles(k, arch, p, variant.bias_relu) + p.kernel_overhead(variant)
}

/// Per-loop latency of chain position `pos` in a row of `b` tiles.
///
/// Only the last tile applies bias and ReLU; every tile past the first waits on
/// its upstream partial sums.
pub fn chain_position_cycles(
    k: KernelShape,
    b: u32,
    pos: u32,
    arch: &ArchSpec,
    p: &CalibrationProfile,
    br: bool,
) -> f64 {
    let last = pos + 1 == b;
    let mut l = j_loop_cycles(k, arch, p, br && last);
    if pos > 0 {
        l += p.cascade_interference;
    }
    l
}

/// Slowest chain position.
pub fn chain_loop_cycles(k: KernelShape, b: u32, arch: &ArchSpec, p: &CalibrationProfile, br: bool) -> f64 {
    (0..b)
        .map(|pos| chain_position_cycles(k, b, pos, arch, p, br))
        .fold(0.0, f64::max)
}

/// A dense layer with its partition and communication variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedLayer {
    pub index: usize,
    pub part: Partition,
    pub kernel: KernelShape,
    pub variant: Variant,
}

pub fn array_compute_latency(l: &MappedLayer, arch: &ArchSpec, p: &CalibrationProfile) -> f64 {
    let loops = n_jloops(l.kernel, arch) + l.part.b as u64 - 1;
    loops as f64 * chain_loop_cycles(l.kernel, l.part.b, arch, p, l.variant.bias_relu)
        + p.kernel_overhead(l.variant)
}

pub fn dma_comm_latency(bits: u64, distance: usize, arch: &ArchSpec, p: &CalibrationProfile) -> f64 {
    p.dma_init + bits.div_ceil(arch.dma_bits_per_cycle) as f64 + arch.dma_hop_cycles * distance as f64
}

pub fn cascade_comm_latency(p: &CalibrationProfile) -> f64 {
    p.cascade_gap
}

pub fn shared_mem_latency(bits: u64, arch: &ArchSpec) -> f64 {
    bits.div_ceil(arch.shared_mem_bits_per_cycle) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggMethod {
    /// One vector MAC per block pair against an all-ones left operand.
    Mac,
    /// Extract, add and insert each row separately.
    RowExtract,
}

impl std::str::FromStr for AggMethod {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "mac" => Ok(AggMethod::Mac),
            "row-extract" | "baseline" => Ok(AggMethod::RowExtract),
            o => Err(crate::Error::Calibration(format!("unknown aggregation method '{o}'"))),
        }
    }
}

/// Local reduction work of one aggregation tile holding `h1 x w2` values.
pub fn aggregation_local_cycles(h1: usize, w2: usize, method: AggMethod, arch: &ArchSpec, p: &CalibrationProfile) -> f64 {
    let b = arch.block;
    match method {
        AggMethod::Mac => (h1.div_ceil(b.k) * w2.div_ceil(b.n)) as f64,
        AggMethod::RowExtract => (h1 * w2.div_ceil(b.n)) as f64 * p.aggregation_row_op,
    }
}

/// One step of the partial-sum chain between aggregation tiles.
pub fn aggregation_hop_cycles(w2: usize, arch: &ArchSpec, p: &CalibrationProfile) -> f64 {
    p.aggregation_hop + shared_mem_latency(w2 as u64 * ACC_BITS, arch)
}

/// Final division for mean reduction, one cycle per output block.
pub fn aggregation_mean_cycles(w2: usize, reduce: ReduceKind, arch: &ArchSpec) -> f64 {
    match reduce {
        ReduceKind::Mean => w2.div_ceil(arch.block.n) as f64,
        ReduceKind::Sum => 0.0,
    }
}

pub fn aggregation_latency(
    h1: usize,
    w2: usize,
    tiles: u32,
    reduce: ReduceKind,
    method: AggMethod,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> f64 {
    aggregation_local_cycles(h1, w2, method, arch, p)
        + tiles as f64 * aggregation_hop_cycles(w2, arch, p)
        + aggregation_mean_cycles(w2, reduce, arch)
}

fn port_of(link: LinkKind) -> Port {
    match link {
        LinkKind::Dma => Port::Dma,
        LinkKind::Cascade => Port::Cascade,
        LinkKind::SharedMem => Port::Local,
    }
}

/// Communication variant of every dense layer; `None` for the aggregation.
pub fn layer_variants(design: &Design) -> Vec<Option<Variant>> {
    let e = &design.comm.edges;
    design
        .plans
        .iter()
        .enumerate()
        .map(|(i, plan)| match plan {
            LayerPlan::Dense { layer, .. } => Some(Variant::new(
                port_of(e[i].link),
                port_of(e[i + 1].link),
                layer.bias || layer.relu,
            )),
            LayerPlan::Aggregate { .. } => None,
        })
        .collect()
}

/// Latency of a set of DMA channels running together.
pub fn dma_channels_latency<'a>(
    channels: impl IntoIterator<Item = &'a crate::dse::design::Channel>,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> Option<f64> {
    let ch: Vec<_> = channels.into_iter().collect();
    if ch.is_empty() {
        return None;
    }
    Some(match p.dma_payload {
        DmaPayload::PerChannelMax => ch
            .iter()
            .map(|c| dma_comm_latency(c.bits, c.distance, arch, p))
            .fold(0.0, f64::max),
        DmaPayload::Total => {
            let bits = ch.iter().map(|c| c.bits).sum();
            let d = ch.iter().map(|c| c.distance).max().unwrap_or(0);
            dma_comm_latency(bits, d, arch, p)
        }
    })
}

/// Latency of one edge of the communication plan.
pub fn edge_latency(e: &Edge, arch: &ArchSpec, p: &CalibrationProfile) -> f64 {
    let data = match e.link {
        LinkKind::Dma => dma_channels_latency(e.data_channels(), arch, p).unwrap_or(0.0),
        LinkKind::Cascade if e.is_ingress() => e.cascade_words as f64 + cascade_comm_latency(p),
        LinkKind::Cascade => cascade_comm_latency(p),
        LinkKind::SharedMem => {
            shared_mem_latency(e.data_channels().map(|c| c.bits).max().unwrap_or(0), arch)
        }
    };
    let weights = dma_channels_latency(e.weight_channels(), arch, p).unwrap_or(0.0);
    data.max(weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    /// `dense` or `aggregate`.
    pub kind: String,
    pub tiles: usize,
    pub partition: Option<Partition>,
    pub kernel: Option<KernelShape>,
    pub variant: Option<String>,
    /// Pipelined work units (j-loops, or local MACs for aggregation).
    pub j_loops: u64,
    pub fill_loops: u64,
    pub loop_cycles: f64,
    pub overhead: f64,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub index: usize,
    pub link: LinkKind,
    pub traffic: Traffic,
    pub channels: usize,
    pub max_bits: u64,
    pub max_distance: usize,
    pub cascade_words: u64,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub layers: Vec<LayerCost>,
    /// `edges[0]` is the input boundary, `edges[n]` the output boundary.
    pub edges: Vec<EdgeCost>,
    pub total_cycles: f64,
    pub total_ns: f64,
}

impl LatencyEstimate {
    pub fn compute_cycles(&self) -> f64 {
        self.layers.iter().map(|l| l.cycles).sum()
    }

    pub fn comm_cycles(&self) -> f64 {
        self.edges.iter().map(|e| e.cycles).sum()
    }
}

pub fn layer_cost(
    design: &Design,
    i: usize,
    variant: Option<Variant>,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> LayerCost {
    match design.plans[i] {
        LayerPlan::Dense { part, kernel, .. } => {
            let variant = variant.expect("dense layers have a variant");
            let ml = MappedLayer {
                index: i,
                part,
                kernel,
                variant,
            };
            LayerCost {
                index: i,
                kind: "dense".into(),
                tiles: part.tiles(),
                partition: Some(part),
                kernel: Some(kernel),
                variant: Some(variant.to_string()),
                j_loops: n_jloops(kernel, arch),
                fill_loops: part.b as u64 - 1,
                loop_cycles: chain_loop_cycles(kernel, part.b, arch, p, variant.bias_relu),
                overhead: p.kernel_overhead(variant),
                cycles: array_compute_latency(&ml, arch, p),
            }
        }
        LayerPlan::Aggregate {
            tiles, h1, w2, reduce, ..
        } => {
            let b = arch.block;
            LayerCost {
                index: i,
                kind: "aggregate".into(),
                tiles: tiles as usize,
                partition: None,
                kernel: Some(KernelShape::new(h1, h1, w2)),
                variant: Some(format!("mac-{reduce}")),
                j_loops: (h1.div_ceil(b.k) * w2.div_ceil(b.n)) as u64,
                fill_loops: 0,
                loop_cycles: 1.0,
                overhead: tiles as f64 * aggregation_hop_cycles(w2, arch, p)
                    + aggregation_mean_cycles(w2, reduce, arch),
                cycles: aggregation_latency(h1, w2, tiles, reduce, AggMethod::Mac, arch, p),
            }
        }
    }
}

pub fn edge_cost(e: &Edge, arch: &ArchSpec, p: &CalibrationProfile) -> EdgeCost {
    EdgeCost {
        index: e.index,
        link: e.link,
        traffic: e.traffic,
        channels: e.channels.iter().filter(|c| c.payload == Payload::Activation).count(),
        max_bits: e.max_bits(),
        max_distance: e.max_distance(),
        cascade_words: e.cascade_words,
        cycles: edge_latency(e, arch, p),
    }
}

/// Sum of every layer's compute and every edge's communication, boundaries included.
pub fn end_to_end_latency(design: &Design, arch: &ArchSpec, p: &CalibrationProfile) -> LatencyEstimate {
    let variants = layer_variants(design);
    let layers: Vec<LayerCost> = (0..design.layers())
        .map(|i| layer_cost(design, i, variants[i], arch, p))
        .collect();
    let edges: Vec<EdgeCost> = design.comm.edges.iter().map(|e| edge_cost(e, arch, p)).collect();
    let total_cycles = layers.iter().map(|l| l.cycles).sum::<f64>() + edges.iter().map(|e| e.cycles).sum::<f64>();
    LatencyEstimate {
        layers,
        edges,
        total_cycles,
        total_ns: cycles_to_ns(total_cycles, arch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;

    fn dd(br: bool) -> Variant {
        Variant::new(Port::Dma, Port::Dma, br)
    }

    #[test]
    fn jloop_substitution() {
        let a = default_aie_ml();
        let mut p = CalibrationProfile::zero();
        p.epilogue = 1.5;
        assert_eq!(j_loop_cycles(KernelShape::new(8, 32, 16), &a, &p, false), 17.5);
        assert_eq!(j_loop_cycles(KernelShape::new(8, 64, 16), &a, &p, false), 33.5);
        assert_eq!(j_loop_cycles(KernelShape::new(8, 8, 16), &a, &p, false), 5.5);
    }

    #[test]
    fn zero_profile_is_mac_bound() {
        let a = default_aie_ml();
        let z = CalibrationProfile::zero();
        for (h, w1, w2) in [(32, 32, 32), (8, 128, 128), (16, 16, 16), (64, 8, 32)] {
            let k = KernelShape::new(h, w1, w2);
            let ideal = (h * w1 * w2) as f64 / 256.0;
            assert_eq!(single_aie_latency(k, &a, &z, dd(false)), ideal);
        }
        assert_eq!(n_jloops(KernelShape::new(32, 32, 32), &a), 8);
    }

    #[test]
    fn chain_of_one_is_single() {
        let a = default_aie_ml();
        let mut p = CalibrationProfile::zero();
        p.epilogue = 1.0;
        p.epilogue_bias_relu = 4.0;
        p.cascade_interference = 99.0;
        p.set_kernel_overhead(dd(true), 30.0);
        let k = KernelShape::new(32, 32, 32);
        let ml = MappedLayer {
            index: 0,
            part: Partition::UNIT,
            kernel: k,
            variant: dd(true),
        };
        assert_eq!(array_compute_latency(&ml, &a, &p), single_aie_latency(k, &a, &p, dd(true)));
    }

    #[test]
    fn chain_fill_loops() {
        let a = default_aie_ml();
        let mut p = CalibrationProfile::zero();
        p.epilogue = 1.0;
        p.cascade_interference = 2.0;
        let k = KernelShape::new(16, 16, 64); // 8 j-loops
        let ml = MappedLayer {
            index: 0,
            part: Partition::new(1, 4, 1),
            kernel: k,
            variant: dd(false),
        };
        assert_eq!(array_compute_latency(&ml, &a, &p), 11.0 * (8.0 + 1.0 + 2.0));
    }

    #[test]
    fn dma_examples() {
        let a = default_aie_ml();
        let z = CalibrationProfile::zero();
        assert_eq!(dma_comm_latency(2048, 0, &a, &z), 64.0);
        assert_eq!(dma_comm_latency(4096, 0, &a, &z), 128.0);
        let mut p = z.clone();
        p.dma_init = 22.0;
        assert_eq!(dma_comm_latency(0, 0, &a, &p), 22.0);
        assert_eq!(dma_comm_latency(1024, 5, &a, &p), 74.0);
        p.cascade_gap = 7.0;
        assert_eq!(cascade_comm_latency(&p), 7.0);
    }
}
