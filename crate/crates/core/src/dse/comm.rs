//! Traffic classification and per-edge link selection.

use std::collections::BTreeMap;

use crate::arch::{ArchSpec, ELEM_BITS};
use crate::mapping::{LayerPlan, Partition};

use super::design::{
    Boundary, Channel, CommPlan, DesignOptions, Edge, LinkKind, Payload, Placement, Region, Tile,
    Traffic, WeightSource,
};

/// Partial sums can flow layer to layer over cascade only with matching row
/// splits and no column splits on either side.
pub fn cascade_eligible(prev: Partition, next: Partition) -> bool {
    prev.a == next.a && prev.c == 1 && next.c == 1
}

pub fn classify_traffic(prev: Partition, next: Partition) -> Traffic {
    let duplicate = next.c > 1;
    let partition = next.a > prev.a || next.b > prev.c;
    let gather = next.a < prev.a || next.b < prev.c;
    match (duplicate as u8) + (partition as u8) + (gather as u8) {
        0 => Traffic::OneToOne,
        1 if duplicate => Traffic::Duplicate,
        1 if partition => Traffic::Partition,
        1 => Traffic::Gather,
        _ => Traffic::Mixed,
    }
}

/// Output piece of a layer: the producing tile and the valid block it holds.
fn output_pieces(plans: &[LayerPlan], placement: &Placement, i: usize) -> Vec<(Tile, Region)> {
    match plans[i] {
        LayerPlan::Dense {
            dims, part, kernel, ..
        } => {
            let mut v = Vec::new();
            for a in 0..part.a {
                for c in 0..part.c {
                    let r0 = a as usize * kernel.h1;
                    let c0 = c as usize * kernel.w2;
                    if let Some(reg) =
                        Region::span(r0, (r0 + kernel.h1).min(dims.m), c0, (c0 + kernel.w2).min(dims.n))
                    {
                        v.push((placement.dense_tile(i, part.c, a, part.b - 1, c), reg));
                    }
                }
            }
            v
        }
        LayerPlan::Aggregate { f, .. } => {
            vec![(placement.aggregate_tile(i, 0), Region::new(0, 1, 0, f))]
        }
    }
}

/// Input block each tile of dense layer `i` needs, in `(a, b, c)` order.
fn input_needs(plans: &[LayerPlan], placement: &Placement, i: usize) -> Vec<(Tile, Region)> {
    let LayerPlan::Dense {
        dims, part, kernel, ..
    } = plans[i]
    else {
        unreachable!("only dense layers consume over DMA")
    };
    let mut v = Vec::new();
    for a in 0..part.a {
        for b in 0..part.b {
            for c in 0..part.c {
                let r0 = a as usize * kernel.h1;
                let k0 = b as usize * kernel.w1;
                let need = Region::span(r0, (r0 + kernel.h1).min(dims.m), k0, (k0 + kernel.w1).min(dims.k))
                    .expect("legal partitions leave no tile empty");
                v.push((placement.dense_tile(i, part.c, a, b, c), need));
            }
        }
    }
    v
}

fn weight_channels(plans: &[LayerPlan], placement: &Placement, i: usize) -> Vec<Channel> {
    let LayerPlan::Dense {
        dims, part, kernel, ..
    } = plans[i]
    else {
        return Vec::new();
    };
    let mut v = Vec::new();
    for b in 0..part.b {
        for c in 0..part.c {
            let k0 = b as usize * kernel.w1;
            let n0 = c as usize * kernel.w2;
            let region = Region::span(k0, (k0 + kernel.w1).min(dims.k), n0, (n0 + kernel.w2).min(dims.n))
                .expect("legal partitions leave no tile empty");
            let dests: Vec<Tile> = (0..part.a)
                .map(|a| placement.dense_tile(i, part.c, a, b, c))
                .collect();
            let distance = dests.iter().map(|t| t.row).max().unwrap_or(0);
            v.push(Channel {
                src: None,
                dests,
                payload: Payload::Weights,
                region,
                bits: region.elems() as u64 * ELEM_BITS,
                distance,
            });
        }
    }
    v
}

/// Groups intersecting (source piece, destination need) pairs into channels.
fn route(sources: &[(Option<Tile>, Region)], needs: &[(Tile, Region)]) -> Vec<Channel> {
    let mut groups: BTreeMap<(Option<Tile>, Region), Vec<Tile>> = BTreeMap::new();
    for (src, piece) in sources {
        for (dst, need) in needs {
            if let Some(reg) = piece.intersect(need) {
                groups.entry((*src, reg)).or_default().push(*dst);
            }
        }
    }
    groups
        .into_iter()
        .map(|((src, region), dests)| {
            let distance = dests
                .iter()
                .map(|d| src.map_or(d.row, |s| s.manhattan(*d)))
                .max()
                .unwrap_or(0);
            Channel {
                src,
                dests,
                payload: Payload::Activation,
                region,
                bits: region.elems() as u64 * ELEM_BITS,
                distance,
            }
        })
        .collect()
}

fn part_of(plan: &LayerPlan) -> Partition {
    match plan {
        LayerPlan::Dense { part, .. } => *part,
        LayerPlan::Aggregate { .. } => Partition::UNIT,
    }
}

/// Row words of a dense layer's input when delivered over cascade.
fn cascade_in_words(plan: &LayerPlan, arch: &ArchSpec) -> u64 {
    match plan {
        LayerPlan::Dense { part, kernel, .. } => {
            let bits = (kernel.h1 * kernel.w1 * part.b as usize) as u64 * ELEM_BITS;
            bits.div_ceil(arch.cascade_bits_per_cycle)
        }
        LayerPlan::Aggregate { .. } => 0,
    }
}

/// Row words of a layer's output when sent over cascade.
pub fn cascade_out_words(plan: &LayerPlan, arch: &ArchSpec) -> u64 {
    let bits = match plan {
        LayerPlan::Dense { kernel, .. } => (kernel.h1 * kernel.w2) as u64 * ELEM_BITS,
        LayerPlan::Aggregate { w2, .. } => *w2 as u64 * ELEM_BITS,
    };
    bits.div_ceil(arch.cascade_bits_per_cycle)
}

/// Whether the edge into layer `i` (with `i >= 1`) uses cascade.
pub fn interior_cascade(plans: &[LayerPlan], placement: &Placement, i: usize) -> bool {
    match (&plans[i - 1], &plans[i]) {
        (LayerPlan::Dense { part: p, .. }, LayerPlan::Dense { part: n, .. }) => {
            cascade_eligible(*p, *n) && placement.adjacent(i - 1, i)
        }
        (LayerPlan::Aggregate { .. }, LayerPlan::Dense { part: n, .. }) => {
            let fin = placement.aggregate_tile(i - 1, 0);
            let r = &placement.rects[i];
            n.a == 1 && n.c == 1 && r.row == fin.row && r.col == fin.col + 1
        }
        _ => false,
    }
}

fn interior_edge(plans: &[LayerPlan], placement: &Placement, i: usize, arch: &ArchSpec) -> Edge {
    let traffic = classify_traffic(part_of(&plans[i - 1]), part_of(&plans[i]));
    if let LayerPlan::Aggregate { .. } = plans[i] {
        let LayerPlan::Dense { part, .. } = plans[i - 1] else {
            unreachable!("aggregation follows a dense layer")
        };
        let channels = output_pieces(plans, placement, i - 1)
            .into_iter()
            .enumerate()
            .map(|(a, (src, region))| {
                let dst = placement.aggregate_tile(i, a as u32);
                debug_assert_eq!(src, placement.dense_tile(i - 1, 1, a as u32, part.b - 1, 0));
                Channel {
                    src: Some(src),
                    dests: vec![dst],
                    payload: Payload::Activation,
                    region,
                    bits: region.elems() as u64 * ELEM_BITS,
                    distance: src.manhattan(dst),
                }
            })
            .collect();
        return Edge {
            index: i,
            link: LinkKind::SharedMem,
            traffic: Traffic::OneToOne,
            channels,
            cascade_words: 0,
        };
    }
    if interior_cascade(plans, placement, i) {
        return Edge {
            index: i,
            link: LinkKind::Cascade,
            traffic,
            channels: Vec::new(),
            cascade_words: cascade_out_words(&plans[i - 1], arch),
        };
    }
    let sources: Vec<(Option<Tile>, Region)> = output_pieces(plans, placement, i - 1)
        .into_iter()
        .map(|(t, r)| (Some(t), r))
        .collect();
    Edge {
        index: i,
        link: LinkKind::Dma,
        traffic,
        channels: route(&sources, &input_needs(plans, placement, i)),
        cascade_words: 0,
    }
}

/// Edge into layer `i`; `i == 0` is the input boundary.
pub fn edge_into(
    plans: &[LayerPlan],
    placement: &Placement,
    options: DesignOptions,
    i: usize,
    arch: &ArchSpec,
) -> Edge {
    let mut e = if i > 0 {
        interior_edge(plans, placement, i, arch)
    } else {
        let first = part_of(&plans[0]);
        match options.ingress {
            Boundary::Plio => {
                let LayerPlan::Dense { dims, .. } = plans[0] else {
                    unreachable!("models start with a dense layer")
                };
                let whole = Region::new(0, dims.m, 0, dims.k);
                Edge {
                    index: 0,
                    link: LinkKind::Dma,
                    traffic: classify_traffic(Partition::UNIT, first),
                    channels: route(&[(None, whole)], &input_needs(plans, placement, 0)),
                    cascade_words: 0,
                }
            }
            Boundary::Cascade => Edge {
                index: 0,
                link: LinkKind::Cascade,
                traffic: classify_traffic(Partition::UNIT, first),
                channels: Vec::new(),
                cascade_words: cascade_in_words(&plans[0], arch),
            },
        }
    };
    if options.weights == WeightSource::Dma {
        e.channels.extend(weight_channels(plans, placement, i));
    }
    e
}

/// Edge out of the last layer.
pub fn egress_edge(plans: &[LayerPlan], placement: &Placement, options: DesignOptions, arch: &ArchSpec) -> Edge {
    let n = plans.len();
    let last = part_of(&plans[n - 1]);
    match options.egress {
        Boundary::Plio => Edge {
            index: n,
            link: LinkKind::Dma,
            traffic: classify_traffic(last, Partition::UNIT),
            channels: output_pieces(plans, placement, n - 1)
                .into_iter()
                .map(|(src, region)| Channel {
                    src: Some(src),
                    dests: Vec::new(),
                    payload: Payload::Activation,
                    region,
                    bits: region.elems() as u64 * ELEM_BITS,
                    distance: src.row,
                })
                .collect(),
            cascade_words: 0,
        },
        Boundary::Cascade => Edge {
            index: n,
            link: LinkKind::Cascade,
            traffic: classify_traffic(last, Partition::UNIT),
            channels: Vec::new(),
            cascade_words: cascade_out_words(&plans[n - 1], arch),
        },
    }
}

/// Builds the full plan: input boundary, every inter-layer edge, output boundary.
pub fn build_comm_plan(
    plans: &[LayerPlan],
    placement: &Placement,
    options: DesignOptions,
    arch: &ArchSpec,
) -> CommPlan {
    let mut edges: Vec<Edge> = (0..plans.len())
        .map(|i| edge_into(plans, placement, options, i, arch))
        .collect();
    edges.push(egress_edge(plans, placement, options, arch));
    CommPlan { edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;
    use crate::dse::place::place_layers;
    use crate::mapping::{plan_layers, Mapping};
    use crate::model::parse_model;

    fn p(a: u32, b: u32, c: u32) -> Partition {
        Partition::new(a, b, c)
    }

    #[test]
    fn eligibility() {
        assert!(cascade_eligible(p(4, 2, 1), p(4, 4, 1)));
        assert!(!cascade_eligible(p(4, 2, 1), p(2, 4, 1)));
        assert!(!cascade_eligible(p(4, 2, 2), p(4, 2, 1)));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_traffic(p(2, 1, 1), p(2, 1, 2)), Traffic::Duplicate);
        assert_eq!(classify_traffic(p(1, 1, 1), p(2, 1, 1)), Traffic::Partition);
        assert_eq!(classify_traffic(p(1, 1, 1), p(2, 1, 2)), Traffic::Mixed);
        assert_eq!(classify_traffic(p(2, 4, 1), p(2, 1, 1)), Traffic::OneToOne);
        assert_eq!(classify_traffic(p(2, 1, 1), p(1, 1, 1)), Traffic::Gather);
    }

    fn plan(model: &str, parts: Vec<Partition>) -> (Vec<LayerPlan>, Placement) {
        let a = default_aie_ml();
        let m = parse_model(model).unwrap();
        let plans = plan_layers(&m, &Mapping::new(parts), &a).unwrap();
        let pl = place_layers(&plans, &a).unwrap();
        (plans, pl)
    }

    #[test]
    fn tradeoff_design_a_edge() {
        let a = default_aie_ml();
        let (plans, pl) = plan("name=t\ninput=8x64\ndense 64\ndense 32\n", vec![p(1, 4, 2), p(1, 4, 1)]);
        let cp = build_comm_plan(&plans, &pl, DesignOptions::default(), &a);
        let e = &cp.edges[1];
        assert_eq!(e.link, LinkKind::Dma);
        assert_eq!(e.channels.len(), 4);
        assert!(e.channels.iter().all(|c| c.bits == 1024));
        assert_eq!(e.max_distance(), 5);
        // input boundary: one channel per (a, b); output boundary: one per (a, c)
        assert_eq!(cp.edges[0].channels.len(), 4);
        assert_eq!(cp.edges[2].channels.len(), 1);
    }

    #[test]
    fn duplicate_is_multicast() {
        let a = default_aie_ml();
        let (plans, pl) = plan("name=t\ninput=32x32\ndense 32\ndense 64\n", vec![p(1, 1, 1), p(1, 1, 2)]);
        let cp = build_comm_plan(&plans, &pl, DesignOptions::default(), &a);
        let e = &cp.edges[1];
        assert_eq!(e.traffic, Traffic::Duplicate);
        assert_eq!(e.channels.len(), 1);
        assert_eq!(e.channels[0].dests.len(), 2);
    }

    #[test]
    fn partition_halves_payload() {
        let a = default_aie_ml();
        let (plans, pl) = plan("name=t\ninput=32x32\ndense 32\ndense 32\n", vec![p(1, 1, 1), p(2, 1, 1)]);
        let cp = build_comm_plan(&plans, &pl, DesignOptions::default(), &a);
        let e = &cp.edges[1];
        assert_eq!(e.traffic, Traffic::Partition);
        assert_eq!(e.channels.len(), 2);
        assert!(e.channels.iter().all(|c| c.bits == 16 * 32 * 8));
    }

    #[test]
    fn cascade_needs_adjacency() {
        let a = default_aie_ml();
        let (plans, pl) = plan("name=t\ninput=64x64\ndense 64\ndense 64\n", vec![p(4, 2, 1), p(4, 4, 1)]);
        let cp = build_comm_plan(&plans, &pl, DesignOptions::default(), &a);
        assert_eq!(cp.edges[1].link, LinkKind::Cascade);
        assert!(cp.edges[1].channels.is_empty());
    }
}
