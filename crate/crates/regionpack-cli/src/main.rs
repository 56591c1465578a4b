//! Command-line front end over the regionpack library: importance maps,
//! frame selection, region packing, pipeline planning, and simulation as
//! file-in/file-out subcommands with machine-readable outputs.
//!
//! Exit codes: 0 success, 1 internal error, 2 input validation failure.
//! Everything is deterministic given the same inputs and seed; the seed
//! comes from `--seed`, then the `REGIONPACK_SEED` environment variable,
//! then a fixed default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use regionpack::importance::{compute_mb_importance, quantize_levels, MbGeometry, PixelField};
use regionpack::pack::{self, BinSpec, PackPolicy};
use regionpack::plan::{dp_plan, parse_dag, verify_balance, BalanceReport, ExecutionPlan};
use regionpack::sim::{run_scenario, FrameSample, Policy, Scenario};
use regionpack::temporal::{
    allocate_frame_budget, build_series, cdf_select, default_threshold, FrameSelection,
    PhiOperator, ResidualFrame,
};
use regionpack::{grid, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "regionpack", version, about = "Region scheduling toolkit and pipeline simulator")]
struct Cli {
    /// Seed override for randomized subcommands. Falls back to the
    /// REGIONPACK_SEED environment variable, then a fixed default.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuse gradient and difference fields into an MB importance map.
    Importance {
        /// Gradient-magnitude field (GRID or CSV flavor).
        #[arg(long)]
        grad: PathBuf,
        /// Frame-difference field with the same dimensions.
        #[arg(long)]
        diff: PathBuf,
        /// Output path for the importance map grid.
        #[arg(long)]
        out: PathBuf,
        /// Also write the quantized level map here.
        #[arg(long)]
        levels_out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        mb_size: usize,
        /// Quantization levels for --levels-out.
        #[arg(long, default_value_t = 10)]
        levels: u32,
    },
    /// Pick frames to re-predict from residual series, under a budget.
    SelectFrames {
        /// JSON manifest: {"streams":[{"stream_id":0,"frames":["f0.grid",...]}]}.
        #[arg(long)]
        manifest: PathBuf,
        /// Total frames to select across all streams.
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = OperatorArg::InvArea)]
        operator: OperatorArg,
        /// Foreground threshold; derived from the data when omitted.
        #[arg(long)]
        threshold: Option<f64>,
        /// Output path for the selection JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grow boxes around important MBs and pack them into bins.
    Pack {
        /// CSV of MB cells: stream_id,frame_id,loc_x,loc_y,importance.
        #[arg(long)]
        mb_csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        bins: usize,
        #[arg(long)]
        bin_w: u32,
        #[arg(long)]
        bin_h: u32,
        #[arg(long, default_value_t = 16)]
        mb_size: u32,
        #[arg(long, value_enum, default_value_t = PackPolicyArg::ImportanceDensity)]
        policy: PackPolicyArg,
        /// Expansion margin in MBs around each region.
        #[arg(long, default_value_t = 3)]
        expand: u32,
        /// Maximum box side in pixels before splitting.
        #[arg(long, default_value_t = 352)]
        partition_limit: u32,
        /// Source frame width; derived from the cells when omitted.
        #[arg(long)]
        frame_w: Option<u32>,
        /// Source frame height; derived from the cells when omitted.
        #[arg(long)]
        frame_h: Option<u32>,
        /// Output path for the packing plan JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign resources and batch sizes over a component dataflow.
    Plan {
        /// Dataflow JSON: nodes with cost tables, edges, optional budget.
        #[arg(long)]
        dag: PathBuf,
        /// Resource budget; the dag file's own budget when omitted.
        #[arg(long)]
        budget: Option<u32>,
        /// Sink latency ceiling in ms.
        #[arg(long)]
        latency_target: Option<f64>,
        /// Audit the plan for single-unit improvements and report balance.
        #[arg(long)]
        verify: bool,
        /// Output path for the plan JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline simulator over a scenario file.
    Simulate {
        /// Scenario JSON or TOML; the bundled scenario when omitted.
        scenario: Option<PathBuf>,
        /// Override the scenario's policy.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Override the scenario's simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Output path for the report JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-frame latency samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the bundled scenario to this path and exit.
        #[arg(long)]
        write_scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    InvArea,
    Area,
}

impl From<OperatorArg> for PhiOperator {
    fn from(op: OperatorArg) -> PhiOperator {
        match op {
            OperatorArg::InvArea => PhiOperator::InvArea,
            OperatorArg::Area => PhiOperator::Area,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PackPolicyArg {
    ImportanceDensity,
    MaxAreaFirst,
    Block,
}

impl From<PackPolicyArg> for PackPolicy {
    fn from(p: PackPolicyArg) -> PackPolicy {
        match p {
            PackPolicyArg::ImportanceDensity => PackPolicy::ImportanceDensity,
            PackPolicyArg::MaxAreaFirst => PackPolicy::MaxAreaFirst,
            PackPolicyArg::Block => PackPolicy::Block,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    OnlyInfer,
    PerFrame,
    SelectiveAnchor,
    RegionBased,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Policy {
        match p {
            PolicyArg::OnlyInfer => Policy::OnlyInfer,
            PolicyArg::PerFrame => Policy::PerFrame,
            PolicyArg::SelectiveAnchor => Policy::SelectiveAnchor,
            PolicyArg::RegionBased => Policy::RegionBased,
        }
    }
}

/// A failed run: what to print and which exit code to use.
struct Failure {
    code: i32,
    err: anyhow::Error,
}

/// Input validation failure → exit 2.
fn invalid(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

/// Internal failure (output I/O, serialization) → exit 1.
fn internal(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

type CmdResult = Result<(), Failure>;

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("error: {:#}", f.err);
        std::process::exit(f.code);
    }
}

fn run(cli: Cli) -> CmdResult {
    let seed = resolve_seed(cli.seed)?;
    match cli.cmd {
        Cmd::Importance { grad, diff, out, levels_out, mb_size, levels } => {
            cmd_importance(&grad, &diff, &out, levels_out.as_deref(), mb_size, levels)
        }
        Cmd::SelectFrames { manifest, budget, operator, threshold, out } => {
            cmd_select_frames(&manifest, budget, operator.into(), threshold, out.as_deref())
        }
        Cmd::Pack {
            mb_csv,
            bins,
            bin_w,
            bin_h,
            mb_size,
            policy,
            expand,
            partition_limit,
            frame_w,
            frame_h,
            out,
        } => {
            let bins = BinSpec { count: bins, width: bin_w, height: bin_h };
            cmd_pack(&mb_csv, bins, mb_size, policy.into(), expand, partition_limit, frame_w, frame_h, out.as_deref())
        }
        Cmd::Plan { dag, budget, latency_target, verify, out } => {
            cmd_plan(&dag, budget, latency_target, verify, out.as_deref())
        }
        Cmd::Simulate { scenario, policy, duration, out, csv, write_scenario } => cmd_simulate(
            scenario.as_deref(),
            policy.map(Into::into),
            duration,
            seed,
            out.as_deref(),
            csv.as_deref(),
            write_scenario.as_deref(),
        ),
    }
}

/// --seed, then REGIONPACK_SEED, then None (commands fall back to their
/// own fixed defaults).
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("REGIONPACK_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| invalid(anyhow!("REGIONPACK_SEED is set to '{raw}', not a u64"))),
        Err(_) => Ok(None),
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| internal(anyhow!(e)))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| internal(anyhow!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_importance(
    grad: &Path,
    diff: &Path,
    out: &Path,
    levels_out: Option<&Path>,
    mb_size: usize,
    levels: u32,
) -> CmdResult {
    let read_field = |path: &Path| -> Result<(PixelField, usize, usize), Failure> {
        let raw = grid::read_grid(path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
        let (rows, cols) = (raw.rows, raw.cols);
        let field =
            PixelField::from_grid(raw).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
        Ok((field, cols, rows))
    };
    let (grad_field, frame_w, frame_h) = read_field(grad)?;
    let (diff_field, _, _) = read_field(diff)?;
    let geom = MbGeometry::for_frame(frame_w, frame_h, mb_size)
        .map_err(|e| invalid(anyhow!("{}: {e}", grad.display())))?;
    let map = compute_mb_importance(&grad_field, &diff_field, geom)
        .map_err(|e| invalid(anyhow!("{} vs {}: {e}", grad.display(), diff.display())))?;
    grid::write_grid(out, &map.to_grid()).map_err(|e| internal(anyhow!("{}: {e}", out.display())))?;
    if let Some(path) = levels_out {
        let lv = quantize_levels(&map, levels).map_err(|e| invalid(anyhow!(e)))?;
        grid::write_grid(path, &lv.to_grid()).map_err(|e| internal(anyhow!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct Manifest {
    streams: Vec<ManifestStream>,
}

#[derive(Deserialize)]
struct ManifestStream {
    stream_id: u32,
    frames: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SelectOut {
    schema_version: u32,
    budget: usize,
    operator: &'static str,
    threshold: Option<f64>,
    /// (stream_id, frames granted), in manifest order.
    allocation: Vec<(u32, usize)>,
    selections: Vec<FrameSelection>,
}

fn cmd_select_frames(
    manifest_path: &Path,
    budget: usize,
    operator: PhiOperator,
    threshold: Option<f64>,
    out: Option<&Path>,
) -> CmdResult {
    let text = read_input(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| invalid(anyhow!("{}: {e}", manifest_path.display())))?;
    if manifest.streams.is_empty() {
        return Err(invalid(anyhow!("{}: manifest lists no streams", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut series = Vec::new();
    for stream in &manifest.streams {
        let mut frames = Vec::new();
        for rel in &stream.frames {
            let path = if rel.is_absolute() { rel.clone() } else { base.join(rel) };
            let raw = grid::read_grid(&path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
            frames.push(
                ResidualFrame::from_grid(raw).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?,
            );
        }
        let thr = threshold.unwrap_or_else(|| default_threshold(&frames));
        series.push(
            build_series(stream.stream_id, &frames, operator, thr)
                .map_err(|e| invalid(anyhow!("stream {}: {e}", stream.stream_id)))?,
        );
    }

    let allocation = allocate_frame_budget(&series, budget).map_err(|e| invalid(anyhow!(e)))?;
    let mut selections = Vec::new();
    for (s, &(stream_id, granted)) in series.iter().zip(&allocation) {
        debug_assert_eq!(s.stream_id, stream_id);
        selections
            .push(cdf_select(s, granted).map_err(|e| invalid(anyhow!("stream {stream_id}: {e}")))?);
    }
    let report = SelectOut {
        schema_version: SCHEMA_VERSION,
        budget,
        operator: match operator {
            PhiOperator::InvArea => "inv_area",
            PhiOperator::Area => "area",
        },
        threshold,
        allocation,
        selections,
    };
    write_json(out, &report)
}

#[derive(Serialize)]
struct PackOut {
    schema_version: u32,
    policy: String,
    occupy_ratio: f64,
    packed_importance: f64,
    plan: pack::PackingPlan,
}

#[allow(clippy::too_many_arguments)]
fn cmd_pack(
    mb_csv: &Path,
    bins: BinSpec,
    mb_size: u32,
    policy: PackPolicy,
    expand: u32,
    partition_limit: u32,
    frame_w: Option<u32>,
    frame_h: Option<u32>,
    out: Option<&Path>,
) -> CmdResult {
    let cells =
        pack::read_mb_csv(mb_csv).map_err(|e| invalid(anyhow!("{}: {e}", mb_csv.display())))?;
    if cells.is_empty() {
        return Err(invalid(anyhow!("{}: no MB cells", mb_csv.display())));
    }
    let frame_w = frame_w
        .unwrap_or_else(|| (cells.iter().map(|c| c.loc_x).max().unwrap_or(0) + 1) * mb_size);
    let frame_h = frame_h
        .unwrap_or_else(|| (cells.iter().map(|c| c.loc_y).max().unwrap_or(0) + 1) * mb_size);

    let wrap = |e: pack::PackError| invalid(anyhow!(e));
    let selected = pack::select_top_n(&cells, bins, mb_size).map_err(wrap)?;
    let regions = pack::region_props(&selected);
    let boxes = pack::bound_regions(&regions, mb_size, expand, frame_w, frame_h).map_err(wrap)?;
    let boxes = pack::partition_boxes(boxes, partition_limit).map_err(wrap)?;
    let plan = pack::pack(&boxes, bins, policy).map_err(wrap)?;

    let report = PackOut {
        schema_version: SCHEMA_VERSION,
        policy: policy.to_string(),
        occupy_ratio: pack::occupy_ratio(&plan),
        packed_importance: pack::packed_importance(&plan),
        plan,
    };
    if out.is_some() {
        println!(
            "occupy_ratio {:.4} packed_importance {:.4} placements {} unplaced {}",
            report.occupy_ratio,
            report.packed_importance,
            report.plan.placements.len(),
            report.plan.unplaced.len()
        );
    }
    write_json(out, &report)
}

#[derive(Serialize)]
struct PlanOut<'a> {
    schema_version: u32,
    budget: u32,
    #[serde(flatten)]
    plan: &'a ExecutionPlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<BalanceReport>,
}

fn cmd_plan(
    dag_path: &Path,
    budget: Option<u32>,
    latency_target: Option<f64>,
    verify: bool,
    out: Option<&Path>,
) -> CmdResult {
    let text = read_input(dag_path)?;
    let dag = parse_dag(&text).map_err(|e| invalid(anyhow!("{}: {e}", dag_path.display())))?;
    let budget = budget.or(dag.default_budget).ok_or_else(|| {
        invalid(anyhow!("{}: no --budget given and the dag file carries none", dag_path.display()))
    })?;
    let plan = dp_plan(&dag, budget, latency_target).map_err(|e| invalid(anyhow!(e)))?;
    let balance = verify.then(|| verify_balance(&dag, &plan));
    if let Some(b) = &balance {
        // Keep stdout clean for the JSON when no --out is given.
        if out.is_some() {
            println!(
                "bottleneck {} e2e_throughput {:.6} improvable {}",
                b.bottleneck, b.e2e_throughput, b.improvable
            );
        }
    }
    write_json(out, &PlanOut { schema_version: SCHEMA_VERSION, budget, plan: &plan, balance })
}

fn cmd_simulate(
    scenario: Option<&Path>,
    policy: Option<Policy>,
    duration: Option<f64>,
    seed: Option<u64>,
    out: Option<&Path>,
    csv_out: Option<&Path>,
    write_scenario: Option<&Path>,
) -> CmdResult {
    if let Some(path) = write_scenario {
        let sc = Scenario::desk_default();
        let text = if path.extension().is_some_and(|e| e == "toml") {
            sc.to_toml().map_err(|e| internal(anyhow!(e)))?
        } else {
            serde_json::to_string_pretty(&sc).map_err(|e| internal(anyhow!(e)))? + "\n"
        };
        return fs::write(path, text).map_err(|e| internal(anyhow!("{}: {e}", path.display())));
    }

    let mut sc = match scenario {
        Some(path) => Scenario::load(path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?,
        None => Scenario::desk_default(),
    };
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(policy) = policy {
        sc.policy = policy;
        sc.plan = None;
    }
    if let Some(duration) = duration {
        sc.duration_s = duration;
    }
    sc.validate().map_err(|e| invalid(anyhow!(e)))?;

    let report = run_scenario(&sc).map_err(|e| invalid(anyhow!(e)))?;
    if let Some(path) = csv_out {
        write_samples_csv(path, &report.samples)?;
    }
    write_json(out, &report)
}

fn write_samples_csv(path: &Path, samples: &[FrameSample]) -> CmdResult {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| internal(anyhow!("{}: {e}", path.display())))?;
    for s in samples {
        writer.serialize(s).map_err(|e| internal(anyhow!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| internal(anyhow!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
