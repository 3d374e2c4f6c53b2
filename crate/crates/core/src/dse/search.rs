//! Mapping enumeration and exact branch-and-bound search.
//!
//! The search walks layers in model order, placing each candidate partition as
//! it goes, and scores finished designs with the full latency model. A subtree
//! is cut only when an admissible lower bound on its best total exceeds the
//! current k-th best, so the result equals exhaustive evaluation.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Mutex;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::mapping::{kernel_shape, layer_candidates, plan_layers, LayerPlan, Mapping, Partition};
use crate::model::{Layer, ModelSpec, ResolvedLayer};
use crate::par::{self, Exec};
use crate::perf::{
    aggregation_latency, array_compute_latency, chain_loop_cycles, dma_comm_latency, edge_latency,
    end_to_end_latency, n_jloops, AggMethod, MappedLayer,
};
use crate::profile::{CalibrationProfile, DmaPayload, Port, Variant};

use super::comm::{build_comm_plan, cascade_eligible, edge_into, egress_edge};
use super::design::{
    Boundary, Channel, Design, DesignOptions, DesignPoint, Edge, LinkKind, Occupancy, Placement, Rect,
};
use super::place::{place_layers, place_next};

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOptions {
    /// Number of ranked designs to keep.
    pub topk: usize,
    /// Extra cap on total tiles, below the grid size.
    pub max_aies: Option<usize>,
    pub design: DesignOptions,
    pub exec: Exec,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            topk: 1,
            max_aies: None,
            design: DesignOptions::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Best first; ordered by latency, then tile count, then mapping vector.
    pub ranked: Vec<DesignPoint>,
    /// Complete designs scored with the full model.
    pub leaves: u64,
}

impl SearchResult {
    pub fn best(&self) -> &DesignPoint {
        &self.ranked[0]
    }
}

/// Total order used for ranking and tie-breaking.
pub fn compare_points(a: &DesignPoint, b: &DesignPoint) -> Ordering {
    a.estimate
        .total_cycles
        .total_cmp(&b.estimate.total_cycles)
        .then(a.design.total_tiles().cmp(&b.design.total_tiles()))
        .then_with(|| a.design.mapping.key().cmp(&b.design.mapping.key()))
}

/// Places `mapping` and builds its communication plan.
pub fn design_for_mapping(
    model: &ModelSpec,
    mapping: &Mapping,
    arch: &ArchSpec,
    options: DesignOptions,
) -> Result<Design> {
    let plans = plan_layers(model, mapping, arch)?;
    let placement = place_layers(&plans, arch)?;
    let comm = build_comm_plan(&plans, &placement, options, arch);
    Ok(Design {
        model_name: model.name.clone(),
        mapping: mapping.clone(),
        plans,
        placement,
        options,
        comm,
    })
}

pub fn evaluate_design(design: Design, arch: &ArchSpec, profile: &CalibrationProfile) -> DesignPoint {
    let estimate = end_to_end_latency(&design, arch, profile);
    DesignPoint { design, estimate }
}

pub fn evaluate_mapping(
    model: &ModelSpec,
    mapping: &Mapping,
    arch: &ArchSpec,
    profile: &CalibrationProfile,
    options: DesignOptions,
) -> Result<DesignPoint> {
    Ok(evaluate_design(design_for_mapping(model, mapping, arch, options)?, arch, profile))
}

/// Static description of one model layer for the search.
#[derive(Debug, Clone)]
enum Slot {
    Dense {
        cands: Vec<Partition>,
        feeds_agg: bool,
    },
    Aggregate,
}

fn slots(model: &ModelSpec, arch: &ArchSpec) -> Result<Vec<Slot>> {
    let resolved = model.resolve()?;
    let mut out = Vec::with_capacity(resolved.len());
    for (i, r) in resolved.iter().enumerate() {
        match r {
            ResolvedLayer::Dense(dims) => {
                let feeds_agg = matches!(model.layers.get(i + 1), Some(Layer::Aggregate(_)));
                out.push(Slot::Dense {
                    cands: layer_candidates(*dims, arch, feeds_agg),
                    feeds_agg,
                });
            }
            ResolvedLayer::Aggregate { .. } => out.push(Slot::Aggregate),
        }
    }
    Ok(out)
}

/// PLIO streams of the input boundary for a first-layer partition.
fn ingress_streams(p: Partition, o: &DesignOptions) -> usize {
    if o.ingress == Boundary::Plio {
        (p.a * p.b) as usize
    } else {
        0
    }
}

/// PLIO streams of the output boundary; `None` means the model ends in an aggregation.
fn egress_streams(p: Option<Partition>, o: &DesignOptions) -> usize {
    if o.egress != Boundary::Plio {
        return 0;
    }
    p.map_or(1, |p| (p.a * p.c) as usize)
}

/// Lazily enumerates every mapping within the tile budget and PLIO limit, in
/// lexicographic order of per-layer `(A, B, C)` triples.
pub struct MappingIter {
    cands: Vec<Vec<Partition>>,
    /// Extra tiles taken by an aggregation fed by this dense layer.
    agg_after: Vec<bool>,
    ends_in_agg: bool,
    min_suffix: Vec<usize>,
    budget: usize,
    plio: usize,
    options: DesignOptions,
    idx: Vec<usize>,
    used: Vec<usize>,
    pos: usize,
    done: bool,
}

impl MappingIter {
    pub fn new(model: &ModelSpec, arch: &ArchSpec, budget: usize, options: DesignOptions) -> Result<Self> {
        let sl = slots(model, arch)?;
        let mut cands = Vec::new();
        let mut agg_after = Vec::new();
        for s in &sl {
            if let Slot::Dense { cands: c, feeds_agg } = s {
                cands.push(c.clone());
                agg_after.push(*feeds_agg);
            }
        }
        let n = cands.len();
        let mut min_suffix = vec![0; n + 1];
        for d in (0..n).rev() {
            let m = cands[d]
                .iter()
                .map(|p| p.tiles() + if agg_after[d] { p.a as usize } else { 0 })
                .min()
                .unwrap_or(usize::MAX / 4);
            min_suffix[d] = min_suffix[d + 1] + m;
        }
        Ok(MappingIter {
            done: n == 0 || cands.iter().any(Vec::is_empty),
            ends_in_agg: matches!(sl.last(), Some(Slot::Aggregate)),
            cands,
            agg_after,
            min_suffix,
            budget,
            plio: arch.plio,
            options,
            idx: vec![0; n],
            used: vec![0; n + 1],
            pos: 0,
        })
    }

    fn cost(&self, d: usize, p: Partition) -> usize {
        p.tiles() + if self.agg_after[d] { p.a as usize } else { 0 }
    }

    fn plio_ok(&self) -> bool {
        let n = self.cands.len();
        let first = self.cands[0][self.idx[0]];
        let last = (!self.ends_in_agg).then(|| self.cands[n - 1][self.idx[n - 1]]);
        ingress_streams(first, &self.options) + egress_streams(last, &self.options) <= self.plio
    }
}

impl Iterator for MappingIter {
    type Item = Mapping;

    fn next(&mut self) -> Option<Mapping> {
        let n = self.cands.len();
        while !self.done {
            let d = self.pos;
            if self.idx[d] >= self.cands[d].len() {
                if d == 0 {
                    self.done = true;
                    break;
                }
                self.pos -= 1;
                self.idx[self.pos] += 1;
                continue;
            }
            let p = self.cands[d][self.idx[d]];
            let used = self.used[d] + self.cost(d, p);
            if used + self.min_suffix[d + 1] > self.budget {
                self.idx[d] += 1;
                continue;
            }
            self.used[d + 1] = used;
            if d + 1 == n {
                let ok = self.plio_ok();
                let m = Mapping::new((0..n).map(|i| self.cands[i][self.idx[i]]).collect());
                self.idx[d] += 1;
                if ok {
                    return Some(m);
                }
            } else {
                self.pos += 1;
                self.idx[self.pos] = 0;
            }
        }
        None
    }
}

/// Every mapping of `model` that fits the grid and the PLIO budget.
pub fn enumerate_mappings(model: &ModelSpec, arch: &ArchSpec) -> Result<MappingIter> {
    MappingIter::new(model, arch, arch.tiles(), DesignOptions::default())
}

struct Problem<'a> {
    model: &'a ModelSpec,
    arch: &'a ArchSpec,
    profile: &'a CalibrationProfile,
    options: DesignOptions,
    slots: Vec<Slot>,
    resolved: Vec<ResolvedLayer>,
    /// Candidate partition of each dense slot, or of the producer for an aggregation slot.
    cands: Vec<Vec<Partition>>,
    /// Lower bound on the cost of layer `j` and everything after it, per candidate.
    lb_rest: Vec<Vec<f64>>,
    /// Candidate visiting order per slot, best bound first.
    order: Vec<Vec<usize>>,
    min_tiles_from: Vec<usize>,
    budget: usize,
    topk: usize,
}

struct Shared {
    top: Mutex<Vec<DesignPoint>>,
    threshold: AtomicU64,
    leaves: AtomicU64,
}

impl Shared {
    fn threshold(&self) -> f64 {
        f64::from_bits(self.threshold.load(AtomicOrdering::Acquire))
    }
}

struct State {
    occ: Occupancy,
    plans: Vec<LayerPlan>,
    placement: Placement,
    parts: Vec<Partition>,
    links: Vec<LinkKind>,
    committed: f64,
    tiles: usize,
}

fn port_of(link: LinkKind) -> Port {
    match link {
        LinkKind::Dma => Port::Dma,
        LinkKind::Cascade => Port::Cascade,
        LinkKind::SharedMem => Port::Local,
    }
}

fn min_overhead(p: &CalibrationProfile, br: bool) -> f64 {
    Variant::all_dense()
        .into_iter()
        .filter(|v| v.bias_relu == br)
        .map(|v| p.kernel_overhead(v))
        .fold(f64::INFINITY, f64::min)
}

/// Lower bound for DMA channels whose real distance may be smaller than the
/// one recorded; `unit_hop` forces one hop for tile-to-tile activations.
fn dma_lower_bound<'c>(
    channels: impl Iterator<Item = &'c Channel>,
    unit_hop: bool,
    arch: &ArchSpec,
    p: &CalibrationProfile,
) -> Option<f64> {
    let ch: Vec<(u64, usize)> = channels
        .map(|c| {
            let d = if unit_hop && c.src.is_some() && !c.dests.is_empty() { 1 } else { c.distance };
            (c.bits, d)
        })
        .collect();
    if ch.is_empty() {
        return None;
    }
    Some(match p.dma_payload {
        DmaPayload::PerChannelMax => ch
            .iter()
            .map(|&(b, d)| dma_comm_latency(b, d, arch, p))
            .fold(0.0, f64::max),
        DmaPayload::Total => {
            let bits = ch.iter().map(|c| c.0).sum();
            let d = ch.iter().map(|c| c.1).max().unwrap_or(0);
            dma_comm_latency(bits, d, arch, p)
        }
    })
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a ModelSpec,
        arch: &'a ArchSpec,
        profile: &'a CalibrationProfile,
        opts: &SearchOptions,
    ) -> Result<Self> {
        let slots = slots(model, arch)?;
        let n = slots.len();
        let mut cands: Vec<Vec<Partition>> = Vec::with_capacity(n);
        for (j, s) in slots.iter().enumerate() {
            match s {
                Slot::Dense { cands: c, .. } => cands.push(c.clone()),
                Slot::Aggregate => cands.push(cands[j - 1].clone()),
            }
        }
        let mut min_tiles_from = vec![0usize; n + 1];
        for j in (0..n).rev() {
            let m = match slots[j] {
                Slot::Dense { .. } => cands[j].iter().map(Partition::tiles).min(),
                Slot::Aggregate => cands[j].iter().map(|p| p.a as usize).min(),
            };
            min_tiles_from[j] = min_tiles_from[j + 1].saturating_add(m.unwrap_or(usize::MAX / 4));
        }
        let budget = opts.max_aies.map_or(arch.tiles(), |m| m.min(arch.tiles()));
        let mut pb = Problem {
            model,
            arch,
            profile,
            options: opts.design,
            slots,
            resolved: model.resolve()?,
            cands,
            lb_rest: Vec::new(),
            order: Vec::new(),
            min_tiles_from,
            budget,
            topk: opts.topk.max(1),
        };
        pb.compute_bounds()?;
        Ok(pb)
    }

    fn plan_for(&self, j: usize, p: Partition) -> LayerPlan {
        let resolved = &self.resolved;
        match (&resolved[j], &self.model.layers[j]) {
            (ResolvedLayer::Dense(dims), Layer::Dense(dl)) => LayerPlan::Dense {
                dims: *dims,
                part: p,
                kernel: kernel_shape(*dims, p, self.arch),
                layer: *dl,
            },
            (ResolvedLayer::Aggregate { m, f }, Layer::Aggregate(al)) => {
                let ResolvedLayer::Dense(pd) = resolved[j - 1] else {
                    unreachable!("aggregation follows a dense layer")
                };
                let k = kernel_shape(pd, p, self.arch);
                LayerPlan::Aggregate {
                    m: *m,
                    f: *f,
                    tiles: p.a,
                    h1: k.h1,
                    w2: k.w2,
                    reduce: al.reduce,
                    shift: al.shift,
                }
            }
            _ => unreachable!("resolve mirrors layers"),
        }
    }

    /// Compute cost of a layer once both its edges are known.
    fn layer_cycles(&self, plan: &LayerPlan, in_link: LinkKind, out_link: LinkKind) -> f64 {
        match *plan {
            LayerPlan::Dense {
                part, kernel, layer, ..
            } => array_compute_latency(
                &MappedLayer {
                    index: 0,
                    part,
                    kernel,
                    variant: Variant::new(port_of(in_link), port_of(out_link), layer.bias || layer.relu),
                },
                self.arch,
                self.profile,
            ),
            LayerPlan::Aggregate {
                tiles, h1, w2, reduce, ..
            } => aggregation_latency(h1, w2, tiles, reduce, AggMethod::Mac, self.arch, self.profile),
        }
    }

    fn layer_lb(&self, plan: &LayerPlan) -> f64 {
        match *plan {
            LayerPlan::Dense {
                part, kernel, layer, ..
            } => {
                let br = layer.bias || layer.relu;
                let loops = n_jloops(kernel, self.arch) + part.b as u64 - 1;
                loops as f64 * chain_loop_cycles(kernel, part.b, self.arch, self.profile, br)
                    + min_overhead(self.profile, br)
            }
            LayerPlan::Aggregate { .. } => self.layer_cycles(plan, LinkKind::SharedMem, LinkKind::Dma),
        }
    }

    fn origin_placement(plans: &[LayerPlan]) -> Placement {
        let mut rects = Vec::with_capacity(plans.len());
        for (i, p) in plans.iter().enumerate() {
            let (h, w) = p.extent();
            let col = match p {
                LayerPlan::Aggregate { .. } if i > 0 => {
                    let prev: &Rect = &rects[i - 1];
                    prev.end_col()
                }
                _ => 0,
            };
            rects.push(Rect::new(0, col, h, w));
        }
        Placement { rects }
    }

    fn edge_lb(&self, a: &LayerPlan, b: &LayerPlan) -> f64 {
        let plans = [*a, *b];
        let pl = Self::origin_placement(&plans);
        let e: Edge = edge_into(&plans, &pl, self.options, 1, self.arch);
        let w = dma_lower_bound(e.weight_channels(), false, self.arch, self.profile).unwrap_or(0.0);
        let data = match e.link {
            LinkKind::SharedMem => edge_latency(&e, self.arch, self.profile),
            LinkKind::Cascade => self.profile.cascade_gap,
            LinkKind::Dma => {
                let dma = dma_lower_bound(e.data_channels(), true, self.arch, self.profile).unwrap_or(0.0);
                let may_cascade = match (a, b) {
                    (LayerPlan::Dense { part: p, .. }, LayerPlan::Dense { part: q, .. }) => cascade_eligible(*p, *q),
                    (LayerPlan::Aggregate { .. }, LayerPlan::Dense { part: q, .. }) => q.a == 1 && q.c == 1,
                    _ => false,
                };
                if may_cascade {
                    dma.min(self.profile.cascade_gap)
                } else {
                    dma
                }
            }
        };
        data.max(w)
    }

    fn egress_lb(&self, last: &LayerPlan) -> f64 {
        let plans = [*last];
        let pl = Self::origin_placement(&plans);
        edge_latency(&egress_edge(&plans, &pl, self.options, self.arch), self.arch, self.profile)
    }

    fn compute_bounds(&mut self) -> Result<()> {
        let n = self.slots.len();
        let plans: Vec<Vec<LayerPlan>> = (0..n)
            .map(|j| self.cands[j].iter().map(|&p| self.plan_for(j, p)).collect())
            .collect();
        let mut lb: Vec<Vec<f64>> = vec![Vec::new(); n];
        for j in (0..n).rev() {
            lb[j] = plans[j]
                .iter()
                .enumerate()
                .map(|(ci, plan)| {
                    let own = self.layer_lb(plan);
                    if j + 1 == n {
                        return own + self.egress_lb(plan);
                    }
                    if let Slot::Aggregate = self.slots[j + 1] {
                        return own + self.edge_lb(plan, &plans[j + 1][ci]) + lb[j + 1][ci];
                    }
                    let rest = plans[j + 1]
                        .iter()
                        .enumerate()
                        .map(|(qi, q)| self.edge_lb(plan, q) + lb[j + 1][qi])
                        .fold(f64::INFINITY, f64::min);
                    own + rest
                })
                .collect();
        }
        self.order = lb
            .iter()
            .map(|v| {
                let mut o: Vec<usize> = (0..v.len()).collect();
                o.sort_by(|&x, &y| v[x].total_cmp(&v[y]).then(x.cmp(&y)));
                o
            })
            .collect();
        self.lb_rest = lb;
        Ok(())
    }

    fn plio_streams(&self, st: &State) -> Option<usize> {
        let n = self.slots.len();
        if st.plans.len() != n {
            return None;
        }
        let last = match st.plans[n - 1] {
            LayerPlan::Dense { part, .. } => Some(part),
            LayerPlan::Aggregate { .. } => None,
        };
        Some(ingress_streams(st.parts[0], &self.options) + egress_streams(last, &self.options))
    }

    fn min_egress_streams(&self) -> usize {
        let n = self.slots.len();
        match self.slots[n - 1] {
            Slot::Aggregate => egress_streams(None, &self.options),
            Slot::Dense { .. } => self.cands[n - 1]
                .iter()
                .map(|p| egress_streams(Some(*p), &self.options))
                .min()
                .unwrap_or(0),
        }
    }

    fn feasible_first(&self, p: Partition) -> bool {
        let n = self.slots.len();
        let eg = if n == 1 {
            egress_streams(Some(p), &self.options)
        } else {
            self.min_egress_streams()
        };
        ingress_streams(p, &self.options) + eg <= self.arch.plio
    }

    /// Depth-first expansion of slot `j`; `first` pins the first-layer candidate.
    fn dfs(&self, st: &mut State, j: usize, first: Option<usize>, shared: &Shared) {
        let n = self.slots.len();
        if j == n {
            self.leaf(st, shared);
            return;
        }
        let order: Vec<usize> = match self.slots[j] {
            Slot::Aggregate => {
                let pi = self.cands[j - 1]
                    .iter()
                    .position(|p| *p == st.parts[st.parts.len() - 1])
                    .expect("producer candidate");
                vec![pi]
            }
            Slot::Dense { .. } => match first {
                Some(ci) => vec![ci],
                None => self.order[j].clone(),
            },
        };
        for ci in order {
            let p = self.cands[j][ci];
            let plan = self.plan_for(j, p);
            let tiles = st.tiles + plan.tiles();
            if tiles + self.min_tiles_from[j + 1] > self.budget {
                continue;
            }
            if j == 0 && !self.feasible_first(p) {
                continue;
            }
            st.plans.push(plan);
            let Some(rect) = place_next(&st.occ, &st.plans, &st.placement.rects) else {
                st.plans.pop();
                continue;
            };
            let is_dense = matches!(self.slots[j], Slot::Dense { .. });
            if is_dense {
                st.parts.push(p);
            }
            if j + 1 == n && self.plio_streams(st).is_some_and(|s| s > self.arch.plio) {
                st.plans.pop();
                if is_dense {
                    st.parts.pop();
                }
                continue;
            }
            let saved_occ = st.occ.clone();
            st.occ.fill(&rect);
            st.placement.rects.push(rect);
            let e = edge_into(&st.plans, &st.placement, self.options, j, self.arch);
            let mut add = edge_latency(&e, self.arch, self.profile);
            st.links.push(e.link);
            if j > 0 {
                add += self.layer_cycles(&st.plans[j - 1], st.links[j - 1], st.links[j]);
            }
            let saved = (st.committed, st.tiles);
            st.committed += add;
            st.tiles = tiles;
            if st.committed + self.lb_rest[j][ci] <= shared.threshold() + EPS {
                self.dfs(st, j + 1, None, shared);
            }
            (st.committed, st.tiles) = saved;
            st.links.pop();
            st.placement.rects.pop();
            st.occ = saved_occ;
            st.plans.pop();
            if is_dense {
                st.parts.pop();
            }
        }
    }

    fn leaf(&self, st: &State, shared: &Shared) {
        let n = self.slots.len();
        let eg = egress_edge(&st.plans, &st.placement, self.options, self.arch);
        let quick = st.committed
            + self.layer_cycles(&st.plans[n - 1], st.links[n - 1], eg.link)
            + edge_latency(&eg, self.arch, self.profile);
        shared.leaves.fetch_add(1, AtomicOrdering::Relaxed);
        if quick > shared.threshold() + EPS {
            return;
        }
        let comm = build_comm_plan(&st.plans, &st.placement, self.options, self.arch);
        let design = Design {
            model_name: self.model.name.clone(),
            mapping: Mapping::new(st.parts.clone()),
            plans: st.plans.clone(),
            placement: st.placement.clone(),
            options: self.options,
            comm,
        };
        let dp = evaluate_design(design, self.arch, self.profile);
        let mut top = shared.top.lock().expect("search lock");
        let pos = top
            .binary_search_by(|x| compare_points(x, &dp))
            .unwrap_or_else(|e| e);
        if pos < self.topk {
            top.insert(pos, dp);
            top.truncate(self.topk);
            if top.len() == self.topk {
                let t = top[self.topk - 1].estimate.total_cycles;
                shared.threshold.store(t.to_bits(), AtomicOrdering::Release);
            }
        }
    }

    fn new_state(&self) -> State {
        State {
            occ: Occupancy::new(self.arch),
            plans: Vec::new(),
            placement: Placement { rects: Vec::new() },
            parts: Vec::new(),
            links: Vec::new(),
            committed: 0.0,
            tiles: 0,
        }
    }

    fn diagnose(&self) -> Error {
        for (j, s) in self.slots.iter().enumerate() {
            if let Slot::Dense { cands, .. } = s {
                if cands.is_empty() {
                    return Error::Infeasible(format!(
                        "layer {j}: no legal partition fits a {}x{} grid",
                        self.arch.rows, self.arch.cols
                    ));
                }
            }
        }
        if self.min_tiles_from[0] > self.budget {
            return Error::Infeasible(format!(
                "AIE budget: model needs at least {} tiles, budget is {}",
                self.min_tiles_from[0], self.budget
            ));
        }
        let min_in = self.cands[0]
            .iter()
            .map(|p| ingress_streams(*p, &self.options))
            .min()
            .unwrap_or(0);
        if min_in + self.min_egress_streams() > self.arch.plio {
            return Error::Infeasible(format!(
                "PLIO: boundary streams need at least {}, only {} available",
                min_in + self.min_egress_streams(),
                self.arch.plio
            ));
        }
        Error::Infeasible("placement: no mapping within the budgets places on the grid".into())
    }
}

/// Minimum-latency designs for `model`, best first.
pub fn search(
    model: &ModelSpec,
    arch: &ArchSpec,
    profile: &CalibrationProfile,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if arch.cols > Occupancy::MAX_COLS {
        return Err(Error::Arch(format!(
            "grids wider than {} columns are not supported",
            Occupancy::MAX_COLS
        )));
    }
    let pb = Problem::new(model, arch, profile, opts)?;
    let shared = Shared {
        top: Mutex::new(Vec::new()),
        threshold: AtomicU64::new(f64::INFINITY.to_bits()),
        leaves: AtomicU64::new(0),
    };
    if pb.slots.iter().all(|s| match s {
        Slot::Dense { cands, .. } => !cands.is_empty(),
        Slot::Aggregate => true,
    }) {
        let firsts = pb.order[0].clone();
        par::for_each(opts.exec, &firsts, |&ci| {
            let mut st = pb.new_state();
            pb.dfs(&mut st, 0, Some(ci), &shared);
        });
    }
    let ranked = shared.top.into_inner().expect("search lock");
    if ranked.is_empty() {
        return Err(pb.diagnose());
    }
    Ok(SearchResult {
        ranked,
        leaves: shared.leaves.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;
    use crate::model::parse_model;

    #[test]
    fn enumerate_unit_on_single_tile() {
        let a = default_aie_ml().with_grid(1, 1).with_plio(2);
        let m = parse_model("name=t\ninput=8x8\ndense 8\n").unwrap();
        let all: Vec<Mapping> = enumerate_mappings(&m, &a).unwrap().collect();
        assert_eq!(all, vec![Mapping::new(vec![Partition::UNIT])]);
    }

    #[test]
    fn enumerate_over_budget_is_empty() {
        let a = default_aie_ml().with_grid(2, 2);
        let m = parse_model("name=t\ninput=8x8\ndense 8\ndense 8\ndense 8\ndense 8\ndense 8\n").unwrap();
        assert_eq!(enumerate_mappings(&m, &a).unwrap().count(), 0);
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let a = default_aie_ml();
        let m = parse_model("name=t\ninput=32x32\ndense 32\n").unwrap();
        let all: Vec<Mapping> = enumerate_mappings(&m, &a).unwrap().collect();
        assert!(all.contains(&Mapping::new(vec![Partition::new(2, 2, 1)])));
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
    }

    #[test]
    fn search_matches_exhaustive() {
        let a = default_aie_ml();
        let p = crate::profile::default_profile();
        let m = parse_model("name=t\ninput=16x64\ndense 64 bias relu\ndense 32\n").unwrap();
        let r = search(&m, &a, &p, &SearchOptions::default()).unwrap();
        let mut best: Option<DesignPoint> = None;
        for map in enumerate_mappings(&m, &a).unwrap() {
            let Ok(dp) = evaluate_mapping(&m, &map, &a, &p, DesignOptions::default()) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| compare_points(&dp, b) == Ordering::Less) {
                best = Some(dp);
            }
        }
        assert_eq!(r.best().design.mapping, best.unwrap().design.mapping);
    }

    #[test]
    fn infeasible_names_budget() {
        let a = default_aie_ml().with_grid(1, 1);
        let m = parse_model("name=t\ninput=8x8\ndense 8\ndense 8\n").unwrap();
        let e = search(&m, &a, &CalibrationProfile::zero(), &SearchOptions::default()).unwrap_err();
        assert!(e.to_string().contains("AIE budget"), "{e}");
    }
}
