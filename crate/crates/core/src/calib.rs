//! Fitting the overhead constants of a [`CalibrationProfile`].
//!
//! Single-tile measurements identify the j-loop epilogue and the per-variant
//! kernel overhead: `latency = n_j * (4*W1/B_K + L_epi) + L_o`. Within each
//! bias/ReLU class all variants share one epilogue slope and get their own
//! intercept. The multi-tile constants come from the two-layer trade-off
//! fixture, and the aggregation constants from aggregation measurements.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{ns_to_cycles, ArchSpec};
use crate::dse::design::DesignOptions;
use crate::dse::search::design_for_mapping;
use crate::error::{read_file, Error, Result};
use crate::mapping::{kernel_shape, round_up, KernelShape, Mapping, Partition};
use crate::model::{parse_model, LayerDims, ModelSpec, ReduceKind};
use crate::perf::{
    aggregation_hop_cycles, aggregation_latency, aggregation_local_cycles, aggregation_mean_cycles,
    edge_latency, n_jloops, single_aie_latency, AggMethod,
};
use crate::profile::{CalibrationProfile, Port, Variant};

pub const TABLE2_CSV: &str = include_str!("../data/measurements/table2.csv");
pub const AGGREGATION_CSV: &str = include_str!("../data/measurements/aggregation.csv");
pub const TRADEOFF_MODEL: &str = include_str!("../data/models/tradeoff.model");

/// Reference cycle counts of the two-layer trade-off fixture: the DMA edge of
/// the compute-optimal design, the cascade edge of the balanced design, and
/// the first layer of the balanced design on four tiles.
pub const TRADEOFF_DMA_EDGE: f64 = 74.0;
pub const TRADEOFF_CASCADE_EDGE: f64 = 7.0;
pub const TRADEOFF_L1_FOUR_TILES: f64 = 145.0;

/// Reduction used when fitting aggregation measurements.
pub const AGGREGATION_FIT_REDUCE: ReduceKind = ReduceKind::Mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kernel: KernelShape,
    pub variant: Variant,
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub rows: Vec<Measurement>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
struct RawRow {
    h1: usize,
    w1: usize,
    w2: usize,
    #[serde(rename = "variant")]
    variant: String,
    #[serde(rename = "br")]
    br: String,
    #[serde(rename = "latency_ns")]
    latency_ns: f64,
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        o => Err(Error::Calibration(format!("bad br flag '{o}'"))),
    }
}

pub fn parse_variant(s: &str, br: bool) -> Result<Variant> {
    let (i, o) = s
        .trim()
        .split_once('-')
        .ok_or_else(|| Error::Calibration(format!("bad variant '{s}', expected input-output")))?;
    Ok(Variant::new(i.parse::<Port>()?, o.parse::<Port>()?, br))
}

impl MeasurementSet {
    pub fn load(path: impl AsRef<Path>, arch: &ArchSpec) -> Result<Self> {
        Self::from_csv(&read_file(path)?, arch)
    }

    /// Columns `H1,W1,W2,variant,br,latency_ns`.
    pub fn from_csv(text: &str, arch: &ArchSpec) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for r in rdr.deserialize() {
            let r: RawRow = r?;
            if r.h1 == 0 || r.w1 == 0 || r.w2 == 0 || !(r.latency_ns >= 0.0) {
                return Err(Error::Calibration("measurement shapes must be >= 1 and latency >= 0".into()));
            }
            rows.push(Measurement {
                kernel: KernelShape::new(r.h1, r.w1, r.w2),
                variant: parse_variant(&r.variant, parse_flag(&r.br)?)?,
                cycles: ns_to_cycles(r.latency_ns, arch),
            });
        }
        Ok(MeasurementSet { rows })
    }

    pub fn filter(&self, f: impl Fn(&Measurement) -> bool) -> MeasurementSet {
        MeasurementSet {
            rows: self.rows.iter().filter(|m| f(m)).cloned().collect(),
        }
    }

    /// The bundled single-tile table.
    pub fn table2(arch: &ArchSpec) -> Self {
        Self::from_csv(TABLE2_CSV, arch).expect("bundled table parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub kernel: KernelShape,
    pub variant: String,
    pub observed: f64,
    pub predicted: f64,
    /// `(predicted - observed) / observed`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub variant: String,
    pub points: usize,
    pub epilogue: f64,
    pub overhead: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub groups: Vec<GroupFit>,
    pub points: Vec<PointError>,
    pub mape: f64,
    pub warnings: Vec<String>,
}

/// Per-point and mean absolute percentage errors of the single-tile model.
pub fn evaluate_profile(p: &CalibrationProfile, m: &MeasurementSet, arch: &ArchSpec) -> FitReport {
    let points: Vec<PointError> = m
        .rows
        .iter()
        .map(|r| {
            let predicted = single_aie_latency(r.kernel, arch, p, r.variant);
            PointError {
                kernel: r.kernel,
                variant: r.variant.to_string(),
                observed: r.cycles,
                predicted,
                rel_error: (predicted - r.cycles) / r.cycles,
            }
        })
        .collect();
    let mape = if points.is_empty() {
        0.0
    } else {
        points.iter().map(|e| e.rel_error.abs()).sum::<f64>() / points.len() as f64
    };
    FitReport {
        groups: Vec::new(),
        points,
        mape,
        warnings: Vec::new(),
    }
}

/// Shared-slope least squares over one bias/ReLU class.
fn fit_class(
    rows: &[&Measurement],
    arch: &ArchSpec,
    warnings: &mut Vec<String>,
) -> Result<(f64, BTreeMap<Variant, f64>, BTreeMap<Variant, usize>)> {
    let mut groups: BTreeMap<Variant, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let nj = n_jloops(r.kernel, arch) as f64;
        let base = nj * (4 * r.kernel.w1.div_ceil(arch.block.k)) as f64;
        groups.entry(r.variant).or_default().push((nj, r.cycles - base));
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for pts in groups.values() {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        for &(x, y) in pts {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
    }
    if sxx <= 0.0 {
        return Err(Error::Calibration(
            "underdetermined fit: need at least two distinct j-loop counts in one variant".into(),
        ));
    }
    let mut slope = sxy / sxx;
    if slope < 0.0 {
        warnings.push(format!("epilogue fitted to {slope:.3}, clamped to 0"));
        slope = 0.0;
    }
    let mut intercepts = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (v, pts) in &groups {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let mut o = my - slope * mx;
        if o < 0.0 {
            warnings.push(format!("overhead for {v} fitted to {o:.3}, clamped to 0"));
            o = 0.0;
        }
        intercepts.insert(*v, o);
        counts.insert(*v, pts.len());
    }
    Ok((slope, intercepts, counts))
}

/// Fits epilogues and kernel overheads, starting from `base` for everything the
/// data cannot identify. Unmeasured variants copy the overhead of a measured
/// variant with the same bias/ReLU flag, preferring `dma-dma`.
pub fn fit_overheads(
    m: &MeasurementSet,
    arch: &ArchSpec,
    base: &CalibrationProfile,
) -> Result<(CalibrationProfile, FitReport)> {
    if m.rows.len() < 2 {
        return Err(Error::Calibration("need at least two measurements".into()));
    }
    let mut p = base.clone();
    let mut warnings = Vec::new();
    let mut groups = Vec::new();
    for br in [false, true] {
        let rows: Vec<&Measurement> = m.rows.iter().filter(|r| r.variant.bias_relu == br).collect();
        if rows.is_empty() {
            continue;
        }
        let (slope, icpt, counts) = fit_class(&rows, arch, &mut warnings)?;
        let (ekey, okey) = if br {
            p.epilogue_bias_relu = slope;
            ("epilogue_bias_relu", "kernel_overhead+br")
        } else {
            p.epilogue = slope;
            ("epilogue", "kernel_overhead")
        };
        p.provenance.insert(
            ekey.into(),
            format!("least-squares fit over {} single-tile measurements", rows.len()),
        );
        let fallback = icpt
            .get(&Variant::new(Port::Dma, Port::Dma, br))
            .copied()
            .unwrap_or_else(|| *icpt.values().next().expect("non-empty"));
        let measured: Vec<String> = icpt.keys().map(|v| v.to_string()).collect();
        for v in Variant::all_dense().into_iter().filter(|v| v.bias_relu == br) {
            p.set_kernel_overhead(v, icpt.get(&v).copied().unwrap_or(fallback));
        }
        p.provenance.insert(
            okey.into(),
            format!(
                "fitted for {}; other variants copy the dma-dma value",
                measured.join(", ")
            ),
        );
        for (v, o) in &icpt {
            groups.push(GroupFit {
                variant: v.to_string(),
                points: counts[v],
                epilogue: slope,
                overhead: *o,
            });
        }
    }
    p.validate()?;
    let mut report = evaluate_profile(&p, m, arch);
    report.groups = groups;
    report.warnings = warnings;
    Ok((p, report))
}

/// Constants identified from the two-layer trade-off fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureConstants {
    pub dma_init: f64,
    pub cascade_gap: f64,
    pub cascade_interference: f64,
}

pub fn tradeoff_model() -> ModelSpec {
    parse_model(TRADEOFF_MODEL).expect("bundled model parses")
}

/// Compute-optimal mapping of the trade-off fixture (DMA between the layers).
pub fn tradeoff_design_a() -> Mapping {
    Mapping::new(vec![Partition::new(1, 4, 2), Partition::new(1, 4, 1)])
}

/// Balanced mapping of the trade-off fixture (cascade between the layers).
pub fn tradeoff_design_b() -> Mapping {
    Mapping::new(vec![Partition::new(1, 4, 1), Partition::new(1, 4, 1)])
}

/// Solves `L_init`, `O_cas` and `L_cas` from the fixture's reference counts,
/// using the real placement and link planning of both designs.
pub fn fixture_constants(arch: &ArchSpec, p: &CalibrationProfile) -> Result<FixtureConstants> {
    let model = tradeoff_model();
    let opts = DesignOptions::default();
    let da = design_for_mapping(&model, &tradeoff_design_a(), arch, opts)?;
    let mut zero_init = p.clone();
    zero_init.dma_init = 0.0;
    let edge = &da.comm.edges[1];
    let dma_init = TRADEOFF_DMA_EDGE - edge_latency(edge, arch, &zero_init);
    if dma_init < 0.0 {
        return Err(Error::Calibration(format!(
            "trade-off DMA edge already costs more than {TRADEOFF_DMA_EDGE} cycles"
        )));
    }
    let db = design_for_mapping(&model, &tradeoff_design_b(), arch, opts)?;
    let crate::mapping::LayerPlan::Dense { kernel, part, layer, .. } = db.plans[0] else {
        unreachable!("dense first layer")
    };
    let variants = crate::perf::layer_variants(&db);
    let v = variants[0].expect("dense");
    let loops = (n_jloops(kernel, arch) + part.b as u64 - 1) as f64;
    let base = (4 * kernel.w1.div_ceil(arch.block.k)) as f64 + p.epilogue_for(layer.bias || layer.relu);
    let l_cas = (TRADEOFF_L1_FOUR_TILES - p.kernel_overhead(v)) / loops - base;
    Ok(FixtureConstants {
        dma_init,
        cascade_gap: TRADEOFF_CASCADE_EDGE,
        cascade_interference: l_cas.max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggMeasurement {
    pub m: usize,
    pub f: usize,
    pub tiles: u32,
    pub method: AggMethod,
    pub cycles: f64,
}

#[derive(Debug, Deserialize)]
struct RawAgg {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "F")]
    f: usize,
    tiles: u32,
    method: String,
    latency_ns: f64,
}

/// Columns `M,F,tiles,method,latency_ns`.
pub fn parse_aggregation_csv(text: &str, arch: &ArchSpec) -> Result<Vec<AggMeasurement>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        let r: RawAgg = r?;
        if r.tiles == 0 || r.m == 0 || r.f == 0 {
            return Err(Error::Calibration("aggregation rows need M, F, tiles >= 1".into()));
        }
        out.push(AggMeasurement {
            m: r.m,
            f: r.f,
            tiles: r.tiles,
            method: r.method.parse()?,
            cycles: ns_to_cycles(r.latency_ns, arch),
        });
    }
    Ok(out)
}

/// Per-tile share of an `m x f` aggregation input split over `tiles` rows.
pub fn aggregation_tile_shape(m: usize, f: usize, tiles: u32, arch: &ArchSpec) -> (usize, usize) {
    let k = kernel_shape(
        LayerDims { m, k: 1, n: f },
        Partition::new(tiles, 1, 1),
        arch,
    );
    (k.h1, round_up(f, 2 * arch.block.n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggFitReport {
    pub aggregation_hop: f64,
    pub aggregation_row_op: f64,
    pub points: Vec<(String, f64, f64)>,
}

/// One-parameter fits through the origin: the hop cost from the MAC rows,
/// then the row-operation cost from the row-extract rows.
pub fn fit_aggregation(
    rows: &[AggMeasurement],
    arch: &ArchSpec,
    base: &CalibrationProfile,
) -> Result<(f64, f64, AggFitReport)> {
    let mut zero = base.clone();
    zero.aggregation_hop = 0.0;
    zero.aggregation_row_op = 1.0;
    let reduce = AGGREGATION_FIT_REDUCE;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in rows.iter().filter(|r| r.method == AggMethod::Mac) {
        let (h1, w2) = aggregation_tile_shape(r.m, r.f, r.tiles, arch);
        let fixed = aggregation_local_cycles(h1, w2, AggMethod::Mac, arch, &zero)
            + r.tiles as f64 * aggregation_hop_cycles(w2, arch, &zero)
            + aggregation_mean_cycles(w2, reduce, arch);
        let x = r.tiles as f64;
        sxy += x * (r.cycles - fixed);
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(Error::Calibration("no MAC aggregation rows to fit".into()));
    }
    let hop = (sxy / sxx).max(0.0);
    zero.aggregation_hop = hop;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in rows.iter().filter(|r| r.method == AggMethod::RowExtract) {
        let (h1, w2) = aggregation_tile_shape(r.m, r.f, r.tiles, arch);
        let x = aggregation_local_cycles(h1, w2, AggMethod::RowExtract, arch, &zero);
        let fixed = r.tiles as f64 * aggregation_hop_cycles(w2, arch, &zero) + aggregation_mean_cycles(w2, reduce, arch);
        sxy += x * (r.cycles - fixed);
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(Error::Calibration("no row-extract aggregation rows to fit".into()));
    }
    let row_op = (sxy / sxx).max(0.0);
    zero.aggregation_row_op = row_op;
    let points = rows
        .iter()
        .map(|r| {
            let (h1, w2) = aggregation_tile_shape(r.m, r.f, r.tiles, arch);
            let pred = aggregation_latency(h1, w2, r.tiles, reduce, r.method, arch, &zero);
            (format!("{}x{}/{} {:?}", r.m, r.f, r.tiles, r.method), r.cycles, pred)
        })
        .collect();
    Ok((
        hop,
        row_op,
        AggFitReport {
            aggregation_hop: hop,
            aggregation_row_op: row_op,
            points,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fit: FitReport,
    pub fixture: FixtureConstants,
    pub aggregation: Option<AggFitReport>,
}

/// Full calibration: single-tile fit, fixture constants, aggregation fit.
pub fn calibrate(
    m: &MeasurementSet,
    agg: Option<&[AggMeasurement]>,
    arch: &ArchSpec,
) -> Result<(CalibrationProfile, CalibrationReport)> {
    let (mut p, fit) = fit_overheads(m, arch, &CalibrationProfile::zero())?;
    let fx = fixture_constants(arch, &p)?;
    p.dma_init = fx.dma_init;
    p.cascade_gap = fx.cascade_gap;
    p.cascade_interference = fx.cascade_interference;
    p.provenance.insert(
        "dma_init".into(),
        format!("trade-off fixture: inter-layer DMA edge of the compute-optimal design is {TRADEOFF_DMA_EDGE} cycles"),
    );
    p.provenance.insert(
        "cascade_gap".into(),
        format!("trade-off fixture: cascade edge of the balanced design is {TRADEOFF_CASCADE_EDGE} cycles"),
    );
    p.provenance.insert(
        "cascade_interference".into(),
        format!("trade-off fixture: first layer on four tiles takes {TRADEOFF_L1_FOUR_TILES} cycles"),
    );
    let aggregation = match agg {
        Some(rows) => {
            let (hop, row_op, rep) = fit_aggregation(rows, arch, &p)?;
            p.aggregation_hop = hop;
            p.aggregation_row_op = row_op;
            p.provenance.insert(
                "aggregation_hop".into(),
                "least-squares fit through the origin over the MAC aggregation measurements".into(),
            );
            p.provenance.insert(
                "aggregation_row_op".into(),
                "least-squares fit through the origin over the row-extract aggregation measurements".into(),
            );
            Some(rep)
        }
        None => None,
    };
    p.provenance.insert(
        "dma_payload".into(),
        "largest channel per edge; channels of one edge run concurrently".into(),
    );
    p.validate()?;
    Ok((
        p,
        CalibrationReport {
            fit,
            fixture: fx,
            aggregation,
        },
    ))
}

/// Calibration over the bundled measurement files.
pub fn calibrate_bundled(arch: &ArchSpec) -> Result<(CalibrationProfile, CalibrationReport)> {
    let agg = parse_aggregation_csv(AGGREGATION_CSV, arch)?;
    calibrate(&MeasurementSet::table2(arch), Some(&agg), arch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_aie_ml;

    #[test]
    fn two_point_fit_by_hand() {
        let a = default_aie_ml();
        let m = MeasurementSet::table2(&a).filter(|r| {
            !r.variant.bias_relu && r.kernel.h1 == r.kernel.w1 && (r.kernel.h1 == 32 || r.kernel.h1 == 64)
        });
        assert_eq!(m.rows.len(), 2);
        let (p, _) = fit_overheads(&m, &a, &CalibrationProfile::zero()).unwrap();
        // 162 = 8 (16 + e) + o, 1085 = 32 (32 + e) + o
        assert!((p.epilogue - 1.125).abs() < 1e-9, "{}", p.epilogue);
        let dd = Variant::new(Port::Dma, Port::Dma, false);
        assert!((p.kernel_overhead(dd) - 25.0).abs() < 1e-9);
    }

    #[test]
    fn synthetic_roundtrip() {
        let a = default_aie_ml();
        let mut truth = CalibrationProfile::zero();
        truth.epilogue = 2.5;
        let v = Variant::new(Port::Cascade, Port::Dma, false);
        truth.set_kernel_overhead(v, 17.0);
        let rows = [(16, 16, 16), (32, 32, 32), (8, 64, 64)]
            .into_iter()
            .map(|(h, w1, w2)| {
                let k = KernelShape::new(h, w1, w2);
                Measurement {
                    kernel: k,
                    variant: v,
                    cycles: single_aie_latency(k, &a, &truth, v),
                }
            })
            .collect();
        let (p, rep) = fit_overheads(&MeasurementSet { rows }, &a, &CalibrationProfile::zero()).unwrap();
        assert!((p.epilogue - 2.5).abs() < 1e-9);
        assert!((p.kernel_overhead(v) - 17.0).abs() < 1e-9);
        assert!(rep.mape < 1e-12);
    }

    #[test]
    fn underdetermined_rejected() {
        let a = default_aie_ml();
        let k = KernelShape::new(32, 32, 32);
        let v = Variant::new(Port::Dma, Port::Dma, false);
        let rows = vec![
            Measurement { kernel: k, variant: v, cycles: 160.0 },
            Measurement { kernel: k, variant: v, cycles: 162.0 },
        ];
        assert!(fit_overheads(&MeasurementSet { rows }, &a, &CalibrationProfile::zero()).is_err());
    }

    #[test]
    fn zero_profile_underpredicts() {
        let a = default_aie_ml();
        let r = evaluate_profile(&CalibrationProfile::zero(), &MeasurementSet::table2(&a), &a);
        assert!(r.points.iter().all(|p| p.rel_error < 0.0));
    }

    #[test]
    fn fixture_constants_by_hand() {
        let a = default_aie_ml();
        let mut p = CalibrationProfile::zero();
        p.epilogue = 1.125;
        for v in Variant::all_dense() {
            p.set_kernel_overhead(v, 25.0);
        }
        let fx = fixture_constants(&a, &p).unwrap();
        // 4 channels of 8x16 INT8 over 5 hops: 32 + 20 cycles before initialization
        assert_eq!(fx.dma_init, 22.0);
        assert_eq!(fx.cascade_gap, 7.0);
        // 145 = 7 (8 + 1.125 + L_cas) + 25
        assert!((fx.cascade_interference - (120.0 / 7.0 - 9.125)).abs() < 1e-9);
    }

    #[test]
    fn bundled_profile_is_reproducible() {
        let a = default_aie_ml();
        let (p, _) = calibrate_bundled(&a).unwrap();
        assert_eq!(p, crate::profile::default_profile());
    }
}
