//! Human-readable and JSON reports.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::ArchSpec;
use crate::calib::CalibrationReport;
use crate::dse::design::{Design, DesignFile, DesignPoint};
use crate::dse::design::LinkKind;
use crate::perf::LatencyEstimate;
use crate::sim::{Mismatch, SimTrace};

/// Grid picture: `.` for free tiles, one symbol per layer otherwise.
pub fn floorplan(design: &Design, arch: &ArchSpec) -> String {
    const SYMBOLS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    let used_cols = design
        .placement
        .rects
        .iter()
        .map(|r| r.end_col())
        .max()
        .unwrap_or(0)
        .min(arch.cols);
    let mut grid = vec![vec![b'.'; used_cols]; arch.rows];
    for (i, r) in design.placement.rects.iter().enumerate() {
        let sym = SYMBOLS[i % SYMBOLS.len()];
        for row in r.row..r.end_row().min(arch.rows) {
            for col in r.col..r.end_col().min(used_cols) {
                grid[row][col] = sym;
            }
        }
    }
    let mut s = String::new();
    for (row, line) in grid.iter().enumerate() {
        let _ = writeln!(s, "{row:>2} {}", String::from_utf8_lossy(line));
    }
    s
}

pub fn estimate_text(design: &Design, est: &LatencyEstimate, arch: &ArchSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model    {}", design.model_name);
    let _ = writeln!(s, "mapping  {}", design.mapping);
    let _ = writeln!(
        s,
        "options  ingress={:?} egress={:?} weights={:?}",
        design.options.ingress, design.options.egress, design.options.weights
    );
    let _ = writeln!(s, "tiles    {}  plio {}", design.total_tiles(), design.plio_streams());
    let _ = writeln!(s);
    let _ = writeln!(s, "layer kind       part      kernel      variant        loops  cycles");
    for l in &est.layers {
        let part = l.partition.map_or("-".to_string(), |p| p.to_string());
        let kernel = l.kernel.map_or("-".to_string(), |k| format!("{}x{}x{}", k.h1, k.w1, k.w2));
        let _ = writeln!(
            s,
            "{:>5} {:<10} {:<9} {:<11} {:<14} {:>5} {:>8.2}",
            l.index,
            l.kind,
            part,
            kernel,
            l.variant.as_deref().unwrap_or("-"),
            l.j_loops + l.fill_loops,
            l.cycles
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, " edge link       traffic      ch   max bits  dist  cycles");
    for e in &est.edges {
        let _ = writeln!(
            s,
            "{:>5} {:<10} {:<11} {:>3} {:>10} {:>5} {:>8.2}",
            e.index,
            e.link.to_string(),
            e.traffic.to_string(),
            e.channels,
            e.max_bits,
            e.max_distance,
            e.cycles
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "compute {:.2}  comm {:.2}  total {:.2} cycles ({:.1} ns)",
        est.compute_cycles(),
        est.comm_cycles(),
        est.total_cycles,
        est.total_ns
    );
    s.push('\n');
    s.push_str(&floorplan(design, arch));
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedDesign {
    pub rank: usize,
    pub design: DesignFile,
    pub tiles: usize,
    pub plio: usize,
    pub cascade_edges: Vec<usize>,
    pub estimate: LatencyEstimate,
}

impl RankedDesign {
    pub fn new(rank: usize, p: &DesignPoint) -> Self {
        RankedDesign {
            rank,
            design: p.design.to_file(),
            tiles: p.design.total_tiles(),
            plio: p.design.plio_streams(),
            cascade_edges: p
                .design
                .comm
                .edges
                .iter()
                .filter(|e| e.link == LinkKind::Cascade)
                .map(|e| e.index)
                .collect(),
            estimate: p.estimate.clone(),
        }
    }
}

/// Machine-readable search result; contains nothing run-dependent.
#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub model: String,
    pub arch: String,
    pub max_aies: usize,
    pub designs: Vec<RankedDesign>,
}

impl SearchReport {
    pub fn new(model: &str, arch: &ArchSpec, max_aies: usize, ranked: &[DesignPoint]) -> Self {
        SearchReport {
            model: model.to_string(),
            arch: arch.name.clone(),
            max_aies,
            designs: ranked.iter().enumerate().map(|(i, p)| RankedDesign::new(i + 1, p)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self, ranked: &[DesignPoint], arch: &ArchSpec) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} on {} ({} designs)", self.model, self.arch, self.designs.len());
        let _ = writeln!(s, "rank  cycles      ns  tiles  cascade  mapping");
        for d in &self.designs {
            let _ = writeln!(
                s,
                "{:>4} {:>7.2} {:>7.1} {:>6}  {:<7}  {}",
                d.rank,
                d.estimate.total_cycles,
                d.estimate.total_ns,
                d.tiles,
                format!("{:?}", d.cascade_edges),
                d.design.mapping
            );
        }
        if let Some(best) = ranked.first() {
            s.push('\n');
            s.push_str(&estimate_text(&best.design, &best.estimate, arch));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalSummary {
    pub seed: u64,
    pub pass: bool,
    pub mismatch: Option<Mismatch>,
}

/// Functional check plus timed run, next to the analytical estimate.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub model: String,
    pub design: DesignFile,
    pub functional: FunctionalSummary,
    pub simulated_cycles: f64,
    pub simulated_ns: f64,
    pub estimated_cycles: f64,
    /// `(estimate - simulated) / simulated` in percent.
    pub deviation_pct: f64,
    pub trace: SimTrace,
}

impl SimulationReport {
    pub fn new(design: &Design, functional: FunctionalSummary, trace: SimTrace, est: &LatencyEstimate) -> Self {
        let dev = if trace.total_cycles > 0.0 {
            100.0 * (est.total_cycles - trace.total_cycles) / trace.total_cycles
        } else {
            0.0
        };
        SimulationReport {
            model: design.model_name.clone(),
            design: design.to_file(),
            functional,
            simulated_cycles: trace.total_cycles,
            simulated_ns: trace.total_ns,
            estimated_cycles: est.total_cycles,
            deviation_pct: dev,
            trace,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = &self.functional;
        match &f.mismatch {
            None => {
                let _ = writeln!(s, "functional PASS (seed {})", f.seed);
            }
            Some(m) => {
                let _ = writeln!(
                    s,
                    "functional FAIL (seed {}): layer {} element ({}, {}) expected {} got {}",
                    f.seed, m.layer, m.row, m.col, m.expected, m.got
                );
            }
        }
        let _ = writeln!(
            s,
            "simulated {:.2} cycles ({:.1} ns), estimated {:.2}, deviation {:+.2}%",
            self.simulated_cycles, self.simulated_ns, self.estimated_cycles, self.deviation_pct
        );
        let _ = writeln!(s, "layer   start      end");
        for l in &self.trace.layers {
            let _ = writeln!(s, "{:>5} {:>7.2} {:>8.2}", l.index, l.start, l.end);
        }
        s
    }
}

pub fn calibration_text(rep: &CalibrationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "group          points  epilogue  overhead");
    for g in &rep.fit.groups {
        let _ = writeln!(s, "{:<14} {:>6} {:>9.4} {:>9.4}", g.variant, g.points, g.epilogue, g.overhead);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "kernel       variant         observed  predicted   error");
    for p in &rep.fit.points {
        let _ = writeln!(
            s,
            "{:<12} {:<14} {:>9.1} {:>10.2} {:>+7.2}%",
            format!("{}x{}x{}", p.kernel.h1, p.kernel.w1, p.kernel.w2),
            p.variant,
            p.observed,
            p.predicted,
            100.0 * p.rel_error
        );
    }
    let _ = writeln!(s, "MAPE {:.2}%", 100.0 * rep.fit.mape);
    let fx = &rep.fixture;
    let _ = writeln!(
        s,
        "dma_init {:.4}  cascade_gap {:.4}  cascade_interference {:.4}",
        fx.dma_init, fx.cascade_gap, fx.cascade_interference
    );
    if let Some(a) = &rep.aggregation {
        let _ = writeln!(
            s,
            "aggregation_hop {:.4}  aggregation_row_op {:.4}",
            a.aggregation_hop, a.aggregation_row_op
        );
        for (name, obs, pred) in &a.points {
            let _ = writeln!(s, "  {name:<28} observed {obs:>8.1}  predicted {pred:>8.2}");
        }
    }
    for w in &rep.fit.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn calibration_json(rep: &CalibrationReport) -> String {
    serde_json::to_string_pretty(rep).expect("report serializes")
}
