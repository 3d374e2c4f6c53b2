//! `tilecast` command line.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 infeasible, 3 functional mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tilecast::calib::{self, MeasurementSet};
use tilecast::dse::design::{Boundary, Design, DesignFile, DesignOptions, WeightSource};
use tilecast::dse::search::{design_for_mapping, evaluate_design, search, SearchOptions};
use tilecast::error::{write_file, Error};
use tilecast::perf::end_to_end_latency;
use tilecast::report::{calibration_json, calibration_text, estimate_text, FunctionalSummary, SearchReport, SimulationReport};
use tilecast::sim::{
    first_mismatch, random_input, random_params, reference_forward, run_functional, run_timed, ParamOptions,
};
use tilecast::{default_aie_ml, default_profile, ArchSpec, CalibrationProfile, Exec, Mapping, ModelSpec};

#[derive(Parser)]
#[command(name = "tilecast", version, about = "Map, estimate and simulate DNN layers on AIE-ML tile arrays")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Find the lowest-latency mappings of a model.
    Search(SearchArgs),
    /// Score one design with the analytical model.
    Estimate(DesignArgs),
    /// Run one design bit-exactly and with the timed simulator.
    Simulate(SimulateArgs),
    /// Fit a calibration profile from measurements.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Plio,
    Cascade,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Plio => Boundary::Plio,
            BoundaryArg::Cascade => Boundary::Cascade,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Preloaded,
    Dma,
}

#[derive(Args)]
struct Common {
    /// Model description file.
    #[arg(long)]
    model: PathBuf,
    /// Architecture TOML; the built-in AIE-ML array when omitted.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Calibration profile TOML, or `zero` for an overhead-free model.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptionArgs {
    #[arg(long, value_enum, default_value = "plio")]
    ingress: BoundaryArg,
    #[arg(long, value_enum, default_value = "plio")]
    egress: BoundaryArg,
    #[arg(long, value_enum, default_value = "preloaded")]
    weights: WeightsArg,
}

impl OptionArgs {
    fn options(&self) -> DesignOptions {
        DesignOptions {
            ingress: self.ingress.into(),
            egress: self.egress.into(),
            weights: match self.weights {
                WeightsArg::Preloaded => WeightSource::Preloaded,
                WeightsArg::Dma => WeightSource::Dma,
            },
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: OptionArgs,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Cap on tiles used, below the grid size.
    #[arg(long)]
    max_aies: Option<usize>,
    /// Single-threaded search.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: OptionArgs,
    /// Design JSON with mapping, placement and options.
    #[arg(long, conflicts_with = "mapping")]
    design: Option<PathBuf>,
    /// Partitions as `a,b,c;a,b,c`, placed automatically.
    #[arg(long)]
    mapping: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inclusive bias range `lo,hi`; full INT32 range when omitted.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    bias_range: Option<(i32, i32)>,
    /// Event trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Single-tile measurements CSV; the bundled set when omitted.
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Aggregation measurements CSV; the bundled set when omitted.
    #[arg(long)]
    aggregation: Option<PathBuf>,
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Profile TOML to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit report; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn parse_range(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: i32 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: i32 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("lo must not exceed hi".into());
    }
    Ok((lo, hi))
}

fn load_arch(path: &Option<PathBuf>) -> Result<ArchSpec, Error> {
    match path {
        Some(p) => ArchSpec::load(p),
        None => Ok(default_aie_ml()),
    }
}

fn load_profile(spec: &Option<String>) -> Result<CalibrationProfile, Error> {
    match spec.as_deref() {
        None => Ok(default_profile()),
        Some("zero") => Ok(CalibrationProfile::zero()),
        Some(p) => CalibrationProfile::load(p),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn build_design(a: &DesignArgs, model: &ModelSpec, arch: &ArchSpec) -> Result<Design, Error> {
    match (&a.design, &a.mapping) {
        (Some(path), _) => {
            let f = DesignFile::load(path)?;
            if f.model != model.name {
                return Err(Error::Design(format!(
                    "design is for model '{}', not '{}'",
                    f.model, model.name
                )));
            }
            f.into_design(model, arch)
        }
        (None, Some(m)) => design_for_mapping(model, &Mapping::parse_list(m)?, arch, a.opts.options()),
        (None, None) => Err(Error::Design("give --design or --mapping".into())),
    }
}

fn cmd_search(a: &SearchArgs) -> Result<ExitCode, Error> {
    let arch = load_arch(&a.common.arch)?;
    let profile = load_profile(&a.common.profile)?;
    let model = ModelSpec::load(&a.common.model)?;
    let opts = SearchOptions {
        topk: a.topk.max(1),
        max_aies: a.max_aies,
        design: a.opts.options(),
        exec: if a.sequential { Exec::Sequential } else { Exec::Parallel },
    };
    let res = search(&model, &arch, &profile, &opts)?;
    let rep = SearchReport::new(&model.name, &arch, a.max_aies.unwrap_or(arch.tiles()), &res.ranked);
    let text = match a.common.format {
        Format::Json => rep.to_json(),
        Format::Text => rep.to_text(&res.ranked, &arch),
    };
    emit(&a.common.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(a: &DesignArgs) -> Result<ExitCode, Error> {
    let arch = load_arch(&a.common.arch)?;
    let profile = load_profile(&a.common.profile)?;
    let model = ModelSpec::load(&a.common.model)?;
    let design = build_design(a, &model, &arch)?;
    let point = evaluate_design(design, &arch, &profile);
    let text = match a.common.format {
        Format::Json => SearchReport::new(&model.name, &arch, point.design.total_tiles(), std::slice::from_ref(&point)).to_json(),
        Format::Text => estimate_text(&point.design, &point.estimate, &arch),
    };
    emit(&a.common.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode, Error> {
    let d = &a.design;
    let arch = load_arch(&d.common.arch)?;
    let profile = load_profile(&d.common.profile)?;
    let model = ModelSpec::load(&d.common.model)?;
    let design = build_design(d, &model, &arch)?;

    let x = random_input(&model, a.seed);
    let params = random_params(&model, a.seed, ParamOptions { bias_range: a.bias_range })?;
    let want = reference_forward(&model, &x, &params)?;
    let got = run_functional(&design, &arch, &x, &params)?;
    let mismatch = first_mismatch(&want, &got);

    let trace = run_timed(&design, &arch, &profile)?;
    if let Some(p) = &a.trace {
        write_file(p, &trace.events_csv())?;
    }
    let est = end_to_end_latency(&design, &arch, &profile);
    let pass = mismatch.is_none();
    let rep = SimulationReport::new(
        &design,
        FunctionalSummary {
            seed: a.seed,
            pass,
            mismatch,
        },
        trace,
        &est,
    );
    let text = match d.common.format {
        Format::Json => rep.to_json(),
        Format::Text => rep.to_text(),
    };
    emit(&d.common.out, &text)?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<ExitCode, Error> {
    let arch = load_arch(&a.arch)?;
    let m = match &a.measurements {
        Some(p) => MeasurementSet::load(p, &arch)?,
        None => MeasurementSet::table2(&arch),
    };
    let agg_text = match &a.aggregation {
        Some(p) => tilecast::error::read_file(p)?,
        None => calib::AGGREGATION_CSV.to_string(),
    };
    let agg = calib::parse_aggregation_csv(&agg_text, &arch)?;
    let (profile, rep) = calib::calibrate(&m, Some(&agg), &arch)?;
    write_file(&a.out, &profile.to_toml())?;
    for w in &rep.fit.warnings {
        eprintln!("warning: {w}");
    }
    let text = match a.format {
        Format::Json => calibration_json(&rep),
        Format::Text => calibration_text(&rep),
    };
    emit(&a.report, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Infeasible(_) | Error::Design(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let r = match &cli.cmd {
        Cmd::Search(a) => cmd_search(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Calibrate(a) => cmd_calibrate(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
