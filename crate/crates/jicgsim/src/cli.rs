//! Command-line interface: layout generation, threshold calibration, scans,
//! escalation campaigns, single traces, and report rendering.
//!
//! Options resolve in a fixed precedence: explicit flag, then the
//! `JICGSIM_SEED` environment variable (for the jitter seed only), then the
//! `--config` JSON file, then built-in defaults. All outputs are
//! deterministic byte for byte for equal inputs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::beam::{BeamShot, SpotModel};
use crate::campaign::{
    escalate, render_report_table, scan, sensitive_areas, summarize, EscalationLadder, ScanGrid,
    ScanParams, DEFAULT_GRID_MARGIN_UM, DEFAULT_GRID_STEP_UM,
};
use crate::circuit::{
    default_cycles, default_fire_cycle, fire_window, ForcedState, TraceSpec, DEFAULT_CLOCK_MHZ,
};
use crate::fault::{
    calibrate_default, classify, effective_pairs, opened_sites, Calibration, FaultThresholds,
};
use crate::layout::{build_register_layout, CellLayout, DEFAULT_JITTER_AMPLITUDE};
use crate::model::RegisterModel;
use crate::{Error, Result};

/// Default number of register stages.
pub const DEFAULT_STAGES: u32 = 4;
/// Environment variable consulted for the coupling-jitter seed.
pub const SEED_ENV_VAR: &str = "JICGSIM_SEED";

/// Deterministic laser fault-injection simulator for interleaved
/// dual-transistor shift registers.
#[derive(Parser, Debug)]
#[command(name = "jicgsim", version, about)]
pub struct Cli {
    /// JSON config file supplying defaults for common options.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for intensity-field evaluation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a register cell layout and write it as JSON.
    BuildLayout(BuildLayoutArgs),
    /// Calibrate the critical intensities against the behavioural targets.
    Calibrate(CalibrateArgs),
    /// Shoot every grid centre with fixed parameters and map the outcomes.
    Scan(ScanArgs),
    /// Walk the power/duration/objective ladder until each objective upsets
    /// the target, and summarize the campaign.
    Escalate(EscalateArgs),
    /// Run one clocked trace, optionally with a single laser shot.
    Trace(TraceArgs),
    /// Render a saved campaign as a summary table.
    Report(ReportArgs),
}

/// Where the cell layout comes from.
#[derive(Args, Debug, Clone, Default)]
pub struct LayoutArgs {
    /// Layout JSON file; omit to generate the standard geometry.
    #[arg(long, value_name = "FILE")]
    pub layout: Option<PathBuf>,

    /// Number of register stages when generating the layout.
    #[arg(long, value_name = "N", conflicts_with = "layout")]
    pub stages: Option<u32>,

    /// Seed for per-stage coupling jitter (also read from JICGSIM_SEED).
    #[arg(long, value_name = "SEED")]
    pub jitter_seed: Option<u64>,

    /// Coupling jitter amplitude in [0, 1); requires a seed.
    #[arg(long, value_name = "A")]
    pub jitter_amplitude: Option<f64>,
}

/// Where the fault thresholds come from. Without any of these the command
/// calibrates on the fly against the built-in targets.
#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdArgs {
    /// Calibration JSON written by `calibrate` (or a bare thresholds object).
    #[arg(long, value_name = "FILE")]
    pub thresholds: Option<PathBuf>,

    /// NMOS critical mean intensity (W/µm²); PMOS sits at the fixed ratio.
    #[arg(long, value_name = "I", conflicts_with = "thresholds")]
    pub i_crit_nmos: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BuildLayoutArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    /// Spot-size model used for the calibration shots.
    #[arg(long, value_name = "MODEL")]
    pub spot_model: Option<SpotModel>,

    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    /// Flip-flop under test (default: the last stage).
    #[arg(long, value_name = "K")]
    pub target_ff: Option<u32>,

    /// Objective magnification (5, 20, 50 or 100).
    #[arg(long, value_name = "M")]
    pub magnification: Option<u32>,

    /// Spot-size model.
    #[arg(long, value_name = "MODEL")]
    pub spot_model: Option<SpotModel>,

    /// Laser drive as a fraction of full power, in [0, 1].
    #[arg(long, value_name = "P")]
    pub power: f64,

    /// Pulse duration in ns.
    #[arg(long, value_name = "NS")]
    pub duration_ns: Option<f64>,

    /// Bit preloaded into every stage and held at the input (0 or 1).
    #[arg(long, value_name = "B", value_parser = clap::value_parser!(u8).range(0..=1))]
    pub input_bit: Option<u8>,

    /// Shift clock in MHz.
    #[arg(long, value_name = "MHZ")]
    pub clock_mhz: Option<f64>,

    /// Grid step in µm.
    #[arg(long, value_name = "UM")]
    pub step_um: Option<f64>,

    /// Margin around the target cell in µm (ignored with explicit corners).
    #[arg(long, value_name = "UM")]
    pub margin_um: Option<f64>,

    /// Explicit grid corners (all four required together).
    #[arg(long, value_name = "UM", requires_all = ["y0", "x1", "y1"])]
    pub x0: Option<f64>,
    #[arg(long, value_name = "UM", requires_all = ["x0", "x1", "y1"])]
    pub y0: Option<f64>,
    #[arg(long, value_name = "UM", requires_all = ["x0", "y0", "y1"])]
    pub x1: Option<f64>,
    #[arg(long, value_name = "UM", requires_all = ["x0", "y0", "x1"])]
    pub y1: Option<f64>,

    /// Directory receiving map.csv, map.ppm and map.json (default: ".").
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EscalateArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    /// Flip-flop under test (default: the last stage).
    #[arg(long, value_name = "K")]
    pub target_ff: Option<u32>,

    /// Spot-size model.
    #[arg(long, value_name = "MODEL")]
    pub spot_model: Option<SpotModel>,

    /// Grid step in µm.
    #[arg(long, value_name = "UM")]
    pub step_um: Option<f64>,

    /// Margin around the target cell in µm.
    #[arg(long, value_name = "UM")]
    pub margin_um: Option<f64>,

    /// First drive level of the ladder.
    #[arg(long, value_name = "P")]
    pub power_start: Option<f64>,

    /// Drive increment between rungs.
    #[arg(long, value_name = "P")]
    pub power_step: Option<f64>,

    /// Last drive level of the ladder.
    #[arg(long, value_name = "P")]
    pub power_end: Option<f64>,

    /// Pulse durations tried at each drive level, ascending (ns).
    #[arg(long, value_name = "NS", value_delimiter = ',')]
    pub durations_ns: Option<Vec<f64>>,

    /// Objectives tried, in order.
    #[arg(long, value_name = "M", value_delimiter = ',')]
    pub magnifications: Option<Vec<u32>>,

    /// Directory receiving campaign.json, report.json and report.txt
    /// (default: ".").
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    /// Bit preloaded into every stage and held at the input (0 or 1).
    #[arg(long, value_name = "B", value_parser = clap::value_parser!(u8).range(0..=1))]
    pub input_bit: Option<u8>,

    /// Shift clock in MHz.
    #[arg(long, value_name = "MHZ")]
    pub clock_mhz: Option<f64>,

    /// Number of clock cycles to run.
    #[arg(long, value_name = "N")]
    pub cycles: Option<usize>,

    /// Accept clock rates outside the supported set.
    #[arg(long)]
    pub allow_nonstandard_clock: bool,

    /// Fire a laser shot centred at this x (µm); requires --center-y and
    /// --power.
    #[arg(long, value_name = "UM", requires_all = ["center_y", "power"])]
    pub center_x: Option<f64>,

    /// Shot centre y (µm).
    #[arg(long, value_name = "UM", requires_all = ["center_x", "power"])]
    pub center_y: Option<f64>,

    /// Shot drive as a fraction of full power, in [0, 1].
    #[arg(long, value_name = "P", requires_all = ["center_x", "center_y"])]
    pub power: Option<f64>,

    /// Pulse duration in ns.
    #[arg(long, value_name = "NS")]
    pub duration_ns: Option<f64>,

    /// Objective magnification for the shot.
    #[arg(long, value_name = "M")]
    pub magnification: Option<u32>,

    /// Spot-size model for the shot.
    #[arg(long, value_name = "MODEL")]
    pub spot_model: Option<SpotModel>,

    /// Clock cycle in which the shot fires (default: stages + 1).
    #[arg(long, value_name = "K")]
    pub fire_cycle: Option<usize>,

    /// Output CSV file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// campaign.json written by `escalate`.
    #[arg(long, value_name = "FILE")]
    pub campaign: PathBuf,

    /// Output format.
    #[arg(long, value_name = "FMT", default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

/// Defaults file loaded with `--config`. Every field is optional; explicit
/// flags always win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub stages: Option<u32>,
    pub target_ff: Option<u32>,
    pub clock_mhz: Option<f64>,
    pub spot_model: Option<SpotModel>,
    pub grid_step_um: Option<f64>,
    pub grid_margin_um: Option<f64>,
    pub jitter_seed: Option<u64>,
    pub jitter_amplitude: Option<f64>,
    pub i_crit_nmos: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Process exit code for an error: 2 for bad requests, 3 for an infeasible
/// calibration, 4 for I/O and serialization failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::NotFound(_) | Error::Unstable(_) => 2,
        Error::CalibrationInfeasible { .. } => 3,
        Error::Io(_) | Error::Json(_) => 4,
    }
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::invalid("--jobs must be at least 1"));
        }
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::BuildLayout(args) => cmd_build_layout(&config, args),
        Command::Calibrate(args) => cmd_calibrate(&config, args),
        Command::Scan(args) => cmd_scan(&config, args),
        Command::Escalate(args) => cmd_escalate(&config, args),
        Command::Trace(args) => cmd_trace(&config, args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Jitter seed precedence: flag, then environment, then config.
fn resolve_seed(flag: Option<u64>, env_value: Option<&str>, config: &Config) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(text) = env_value {
        let seed = text.parse::<u64>().map_err(|_| {
            Error::invalid(format!("{SEED_ENV_VAR} must be an unsigned integer, got {text:?}"))
        })?;
        return Ok(Some(seed));
    }
    Ok(config.jitter_seed)
}

/// Loads or generates the cell layout per the layout flags and config.
fn resolve_layout(config: &Config, args: &LayoutArgs) -> Result<CellLayout> {
    let mut layout = match &args.layout {
        Some(path) => CellLayout::from_json_str(&fs::read_to_string(path)?)?,
        None => {
            let stages = args.stages.or(config.stages).unwrap_or(DEFAULT_STAGES);
            build_register_layout(stages)?
        }
    };
    let env_value = std::env::var(SEED_ENV_VAR).ok();
    let seed = resolve_seed(args.jitter_seed, env_value.as_deref(), config)?;
    let amplitude = args.jitter_amplitude.or(config.jitter_amplitude);
    match (seed, amplitude) {
        (Some(seed), amplitude) => {
            layout = layout
                .with_coupling_jitter(seed, amplitude.unwrap_or(DEFAULT_JITTER_AMPLITUDE))?;
        }
        (None, Some(_)) => {
            return Err(Error::invalid(
                "a jitter amplitude without a seed has no effect; set --jitter-seed \
                 (or JICGSIM_SEED)",
            ));
        }
        (None, None) => {}
    }
    Ok(layout)
}

/// Resolves fault thresholds: inline value, then thresholds file (either a
/// full calibration or a bare thresholds object), then the config's inline
/// value, then an on-the-fly calibration of `layout` under `spot_model`.
fn resolve_thresholds(
    config: &Config,
    args: &ThresholdArgs,
    layout: &CellLayout,
    spot_model: SpotModel,
) -> Result<FaultThresholds> {
    if let Some(i_crit) = args.i_crit_nmos {
        return FaultThresholds::from_nmos(i_crit);
    }
    if let Some(path) = &args.thresholds {
        let text = fs::read_to_string(path)?;
        return parse_thresholds_json(&text);
    }
    if let Some(i_crit) = config.i_crit_nmos {
        return FaultThresholds::from_nmos(i_crit);
    }
    Ok(calibrate_default(layout, spot_model)?.thresholds)
}

/// Accepts either a full calibration document or a bare thresholds object.
fn parse_thresholds_json(text: &str) -> Result<FaultThresholds> {
    if let Ok(cal) = serde_json::from_str::<Calibration>(text) {
        return Ok(cal.thresholds);
    }
    let th: FaultThresholds = serde_json::from_str(text).map_err(|e| {
        Error::invalid(format!(
            "thresholds file is neither a calibration document nor a thresholds object: {e}"
        ))
    })?;
    FaultThresholds::new(th.i_crit_nmos, th.i_crit_pmos)
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            std::io::stdout().flush()?;
            Ok(())
        }
    }
}

fn json_doc<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn cmd_build_layout(config: &Config, args: BuildLayoutArgs) -> Result<()> {
    let layout = resolve_layout(config, &args.layout)?;
    let text = layout.to_json_string()?;
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_calibrate(config: &Config, args: CalibrateArgs) -> Result<()> {
    let layout = resolve_layout(config, &args.layout)?;
    let spot_model = args.spot_model.or(config.spot_model).unwrap_or_default();
    let calibration = calibrate_default(&layout, spot_model)?;
    let text = json_doc(&calibration)?;
    write_or_print(args.out.as_deref(), &text)?;
    if args.out.is_some() {
        println!(
            "calibrated: i_crit_nmos = {:.6e} W/µm², i_crit_pmos = {:.6e} W/µm²",
            calibration.thresholds.i_crit_nmos, calibration.thresholds.i_crit_pmos
        );
    }
    Ok(())
}

/// Target stage: flag, then config, then the last stage.
fn resolve_target_ff(flag: Option<u32>, config: &Config, n_stages: u32) -> u32 {
    flag.or(config.target_ff).unwrap_or(n_stages.saturating_sub(1))
}

fn resolve_grid(
    corners: (Option<f64>, Option<f64>, Option<f64>, Option<f64>),
    step_um: f64,
    margin_um: f64,
    layout: &CellLayout,
    target_ff: u32,
) -> Result<ScanGrid> {
    match corners {
        (Some(x0), Some(y0), Some(x1), Some(y1)) => {
            let grid = ScanGrid {
                first: crate::geom::Point::new(x0, y0),
                last: crate::geom::Point::new(x1, y1),
                step_um,
            };
            grid.validate()?;
            Ok(grid)
        }
        (None, None, None, None) => {
            ScanGrid::covering(&layout.ff_cell_bounds(target_ff)?, margin_um, step_um)
        }
        _ => Err(Error::invalid("grid corners need all of --x0 --y0 --x1 --y1")),
    }
}

fn cmd_scan(config: &Config, args: ScanArgs) -> Result<()> {
    let layout = resolve_layout(config, &args.layout)?;
    let model = RegisterModel::from_layout(layout)?;
    let spot_model = args.spot_model.or(config.spot_model).unwrap_or_default();
    let thresholds = resolve_thresholds(config, &args.thresholds, &model.layout, spot_model)?;
    let target_ff = resolve_target_ff(args.target_ff, config, model.n_stages());
    let step = args.step_um.or(config.grid_step_um).unwrap_or(DEFAULT_GRID_STEP_UM);
    let margin = args.margin_um.or(config.grid_margin_um).unwrap_or(DEFAULT_GRID_MARGIN_UM);
    let grid =
        resolve_grid((args.x0, args.y0, args.x1, args.y1), step, margin, &model.layout, target_ff)?;
    let params = ScanParams {
        magnification: args.magnification.unwrap_or(20),
        spot_model,
        power_fraction: args.power,
        duration_ns: args.duration_ns.unwrap_or(50.0),
        input_bit: args.input_bit.unwrap_or(0) != 0,
        clock_mhz: args.clock_mhz.or(config.clock_mhz).unwrap_or(DEFAULT_CLOCK_MHZ),
    };
    let map = scan(&model, target_ff, &grid, &params, &thresholds)?;

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let mut csv = Vec::new();
    map.write_csv(&mut csv)?;
    fs::write(out_dir.join("map.csv"), &csv)?;
    let mut ppm = Vec::new();
    map.write_ppm(&mut ppm)?;
    fs::write(out_dir.join("map.ppm"), &ppm)?;
    fs::write(out_dir.join("map.json"), json_doc(&map)?)?;

    if let Some(warning) = &map.warning {
        println!("warning: {warning}");
    }
    let counts = map
        .counts()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!("scanned {} centres: {counts}", map.cells.len());
    for (i, region) in sensitive_areas(&map, &model.layout).iter().enumerate() {
        let gates = region
            .gates
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "region {}: {} x{} cells, centroid ({:.2}, {:.2}), gates [{gates}]",
            i + 1,
            region.outcome,
            region.cell_count,
            region.centroid.x,
            region.centroid.y
        );
    }
    Ok(())
}

fn cmd_escalate(config: &Config, args: EscalateArgs) -> Result<()> {
    let layout = resolve_layout(config, &args.layout)?;
    let model = RegisterModel::from_layout(layout)?;
    let spot_model = args.spot_model.or(config.spot_model).unwrap_or_default();
    let thresholds = resolve_thresholds(config, &args.thresholds, &model.layout, spot_model)?;
    let target_ff = resolve_target_ff(args.target_ff, config, model.n_stages());
    let step = args.step_um.or(config.grid_step_um).unwrap_or(DEFAULT_GRID_STEP_UM);
    let margin = args.margin_um.or(config.grid_margin_um).unwrap_or(DEFAULT_GRID_MARGIN_UM);
    let grid = ScanGrid::covering(&model.layout.ff_cell_bounds(target_ff)?, margin, step)?;

    let defaults = EscalationLadder::default();
    let ladder = EscalationLadder {
        power_start: args.power_start.unwrap_or(defaults.power_start),
        power_step: args.power_step.unwrap_or(defaults.power_step),
        power_end: args.power_end.unwrap_or(defaults.power_end),
        durations_ns: args.durations_ns.unwrap_or(defaults.durations_ns),
        magnifications: args.magnifications.unwrap_or(defaults.magnifications),
    };
    let result = escalate(&model, target_ff, &grid, &ladder, spot_model, &thresholds)?;
    let report = summarize(&result);
    let table = render_report_table(&report);

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("campaign.json"), json_doc(&result)?)?;
    fs::write(out_dir.join("report.json"), json_doc(&report)?)?;
    fs::write(out_dir.join("report.txt"), &table)?;
    print!("{table}");
    std::io::stdout().flush()?;
    Ok(())
}

fn cmd_trace(config: &Config, args: TraceArgs) -> Result<()> {
    let layout = resolve_layout(config, &args.layout)?;
    let model = RegisterModel::from_layout(layout)?;
    let n = model.n_stages();
    let input_bit = args.input_bit.unwrap_or(0) != 0;
    let spec = TraceSpec {
        clock_mhz: args.clock_mhz.or(config.clock_mhz).unwrap_or(DEFAULT_CLOCK_MHZ),
        input_bit,
        n_cycles: args.cycles.unwrap_or_else(|| default_cycles(n)),
        allow_nonstandard_clock: args.allow_nonstandard_clock,
    };

    let shot_requested = args.power.is_some();
    let mut info = Vec::new();
    let trace = if shot_requested {
        let power = args.power.expect("clap guarantees power with centres");
        let center = crate::geom::Point::new(
            args.center_x.expect("clap guarantees center_x with power"),
            args.center_y.expect("clap guarantees center_y with power"),
        );
        let spot_model = args.spot_model.or(config.spot_model).unwrap_or_default();
        let shot = BeamShot::new(
            args.magnification.unwrap_or(20),
            spot_model,
            center,
            power,
            args.duration_ns.unwrap_or(50.0),
        )?;
        let thresholds =
            resolve_thresholds(config, &args.thresholds, &model.layout, spot_model)?;
        let opened = opened_sites(&shot, &model.layout, &thresholds);
        let forced = effective_pairs(&opened, &model.layout);
        let cycle = args.fire_cycle.unwrap_or_else(|| default_fire_cycle(n));
        let (start, end) = fire_window(spec.clock_mhz, cycle, shot.duration_ns);
        let armed = forced.clone().with_window(start, end, power);

        let mut reference_reg = model.register.clone();
        let idle = ForcedState::default().with_window(start, end, 0.0);
        let reference = reference_reg.run_trace(&spec, Some(&idle))?;
        let mut reg = model.register.clone();
        let observed = reg.run_trace(&spec, Some(&armed))?;
        let outcome = classify(&reference, &observed, &reference)?;

        info.push(format!("opened sites: {}", opened.len()));
        let pairs: Vec<String> = forced
            .open_nmos
            .iter()
            .chain(forced.open_pmos.iter())
            .map(|p| p.to_string())
            .collect();
        info.push(format!("effective pairs: [{}]", pairs.join(" ")));
        info.push(format!("classification: {outcome}"));
        observed
    } else {
        let mut reg = model.register.clone();
        reg.run_trace(&spec, None)?
    };

    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            for line in &info {
                println!("{line}");
            }
        }
        None => {
            std::io::stdout().write_all(&csv)?;
            for line in &info {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.campaign)?;
    let result: crate::campaign::CampaignResult = serde_json::from_str(&text)?;
    let report = summarize(&result);
    match args.format {
        ReportFormat::Text => {
            print!("{}", render_report_table(&report));
            std::io::stdout().flush()?;
        }
        ReportFormat::Json => {
            print!("{}", json_doc(&report)?);
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}
