//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 a simulation
//! fault (clobber, out of memory, use after free, oracle mismatch).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kernels::reference::{conv_reference, depthwise_reference, fc_reference, ib_reference};
use crate::kernels::{
    conv2d_forward, depthwise_forward, fc_forward, inverted_bottleneck_forward, place_tensor,
    read_tensor, FcSpec, FlashWeights, IbWeights, KernelError, QTensor,
};
use crate::netplan::{
    load_network_file, plan_entry, plan_network, sweep_headroom, Axis, Budget, NetEntry, NetError,
    NetOp, NetworkSpec,
};
use crate::planner::{LayerSpec, MemPlan};
use crate::pool::{Pool, PoolConfig, PoolMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

const DEFAULT_CONFIG: &str = "mcunet-vww.json";

#[derive(Debug, Parser)]
#[command(
    name = "segmem",
    version,
    about = "Segment-level memory planner and kernel simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan every entry and print footprints against the baselines.
    Plan(PlanArgs),
    /// Run the segment kernels on seeded random data and compare with the reference.
    Simulate(SimArgs),
    /// Scale entries until they exhaust a memory budget.
    Sweep(SweepArgs),
    /// Dump the pool event log of one simulated entry.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Network config file; bundled names (mcunet-vww.json, mcunet-320kb.json) also work.
    #[arg(long, default_value = DEFAULT_CONFIG)]
    config: PathBuf,
    /// Override the pool size in bytes.
    #[arg(long)]
    memcap: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Also write the per-entry CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Entry to simulate; all entries when omitted.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Added to the planned offset (negative values inject overlap faults).
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    offset_delta: i64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Image,
    Channel,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_enum, default_value = "image")]
    axis: AxisArg,
    /// `baseline` (each entry's unscaled baseline) or a byte count.
    #[arg(long, default_value = "baseline", value_parser = parse_budget)]
    budget: Budget,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Entry to trace; the first entry when omitted.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    offset_delta: i64,
    /// Write the log here instead of stdout.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_budget(s: &str) -> Result<Budget, String> {
    if s == "baseline" {
        return Ok(Budget::Baseline);
    }
    s.parse()
        .map(Budget::Bytes)
        .map_err(|_| format!("expected `baseline` or a byte count, got `{s}`"))
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Fault(String),
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

/// Result of one simulated entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub name: String,
    pub plan: MemPlan,
    pub metrics: PoolMetrics,
    pub bit_exact: bool,
    pub trace: Vec<String>,
}

/// Run one entry's kernel on seeded random data in a pool of `memcap_bytes`,
/// with `offset_delta` added to the planned offset.
pub fn simulate_entry(
    entry: &NetEntry,
    memcap_bytes: usize,
    seed: u64,
    offset_delta: i64,
    trace: bool,
) -> Result<SimReport, KernelError> {
    let mut plan = plan_entry(entry, 1).map_err(|e| match e {
        NetError::Plan { source, .. } => KernelError::Plan(source),
        other => KernelError::Shape(other.to_string()),
    })?;
    let planned = plan;
    plan.offset_segments += offset_delta;
    let seg = plan.segment_elems;
    let mut pool = Pool::new(PoolConfig::new(memcap_bytes, seg)?);
    if trace {
        pool = pool.with_trace();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_shape = match entry.op {
        NetOp::Layer(LayerSpec::FullyConnected { m, k, .. }) => vec![m, k],
        op => {
            let s = op.input_shape();
            vec![1, s[0], s[1], s[2]]
        }
    };
    let x = QTensor::random(input_shape, &mut rng);
    place_tensor(&mut pool, 0, &x, seg)?;
    let out_shape = match entry.op {
        NetOp::Layer(LayerSpec::FullyConnected { m, n, .. }) => vec![m, n],
        op => {
            let s = op.output_shape();
            vec![1, s[0], s[1], s[2]]
        }
    };
    let (out_base, want) = match entry.op {
        NetOp::Module(m) => {
            let w = IbWeights::random(&m, &mut rng);
            (
                inverted_bottleneck_forward(&mut pool, 0, &w, &m, &plan)?,
                ib_reference(&x, &w, &m),
            )
        }
        NetOp::Layer(LayerSpec::FullyConnected { m, k, n }) => {
            let w = FlashWeights::random(vec![k, n], k, &mut rng);
            (
                fc_forward(&mut pool, 0, &w, FcSpec { m, k, n }, &plan)?,
                fc_reference(&x, &w),
            )
        }
        NetOp::Layer(LayerSpec::Conv2D(c)) => {
            let w = FlashWeights::random(vec![c.r, c.s, c.c, c.k], c.r * c.s * c.c, &mut rng);
            (
                conv2d_forward(&mut pool, 0, &w, &c, &plan)?,
                conv_reference(&x, &w, &c),
            )
        }
        NetOp::Layer(LayerSpec::Depthwise(c)) => {
            let w = FlashWeights::random(vec![c.r, c.s, c.c], c.r * c.s, &mut rng);
            (
                depthwise_forward(&mut pool, 0, &w, &c, &plan)?,
                depthwise_reference(&x, &w, &c),
            )
        }
        NetOp::Layer(LayerSpec::Add { .. }) => {
            return Err(KernelError::Unsupported("standalone add entries".into()));
        }
    };
    let got = read_tensor(&pool, out_base, out_shape, seg)?;
    Ok(SimReport {
        name: entry.name.clone(),
        plan: planned,
        metrics: pool.metrics(),
        bit_exact: got == want,
        trace: pool.take_trace(),
    })
}

fn load(args: &NetArgs) -> Result<NetworkSpec, CliError> {
    let mut net = load_network_file(&args.config)?;
    if let Some(cap) = args.memcap {
        if cap == 0 {
            return Err(CliError::Invalid("--memcap must be positive".into()));
        }
        net.memcap_bytes = cap;
    }
    Ok(net)
}

fn selected<'a>(
    net: &'a NetworkSpec,
    layer: Option<&str>,
) -> Result<Vec<(usize, &'a NetEntry)>, CliError> {
    match layer {
        Some(name) => {
            let idx = net
                .entries
                .iter()
                .position(|e| e.name == name)
                .ok_or_else(|| NetError::UnknownEntry(name.to_string()))?;
            Ok(vec![(idx, &net.entries[idx])])
        }
        None => Ok(net.entries.iter().enumerate().collect()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn kernel_error(name: &str, e: KernelError) -> CliError {
    if e.is_pool_fault() {
        CliError::Fault(format!("{name}: FAULT {e}"))
    } else {
        CliError::Invalid(format!("{name}: {e}"))
    }
}

fn cmd_plan(args: PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load(&args.net)?;
    let report = plan_network(&net)?;
    out.write_all(report.to_table().as_bytes())?;
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_simulate(args: SimArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load(&args.net)?;
    if net.dtype_bytes != 1 {
        return Err(CliError::Invalid(
            "kernels are int8; dtype_bytes must be 1".into(),
        ));
    }
    let entries = selected(&net, args.layer.as_deref())?;
    let explicit = args.layer.is_some();
    let mut csv =
        String::from("name,result,footprint_bytes,peak_live_segments,stores,loads,frees\n");
    let mut mismatch = false;
    for (idx, entry) in entries {
        let seed = args.seed.wrapping_add(idx as u64);
        match simulate_entry(entry, net.memcap_bytes, seed, args.offset_delta, false) {
            Ok(r) => {
                let verdict = if r.bit_exact {
                    "PASS bit-exact"
                } else {
                    "FAIL mismatch"
                };
                mismatch |= !r.bit_exact;
                let m = r.metrics;
                writeln!(
                    out,
                    "{} {verdict} (footprint {} B, peak live {} of {} segments, {} stores, {} frees)",
                    r.name,
                    r.plan.footprint_bytes,
                    m.peak_live_segments,
                    r.plan.footprint_segments,
                    m.total_stores,
                    m.total_frees
                )?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.name,
                    if r.bit_exact { "pass" } else { "mismatch" },
                    r.plan.footprint_bytes,
                    m.peak_live_segments,
                    m.total_stores,
                    m.total_loads,
                    m.total_frees
                );
            }
            Err(KernelError::Unsupported(why)) if !explicit => {
                writeln!(out, "{} SKIP unsupported: {why}", entry.name)?;
                let _ = writeln!(csv, "{},skip,,,,,", entry.name);
            }
            Err(e) => return Err(kernel_error(&entry.name, e)),
        }
    }
    if let Some(path) = &args.csv {
        write_file(path, &csv)?;
    }
    if mismatch {
        return Err(CliError::Fault("output differs from the reference".into()));
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load(&args.net)?;
    let axis = match args.axis {
        AxisArg::Image => Axis::Image,
        AxisArg::Channel => Axis::Channel,
    };
    let report = sweep_headroom(&net, args.budget, axis)?;
    out.write_all(report.to_table().as_bytes())?;
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net = load(&args.net)?;
    let (idx, entry) = match args.layer.as_deref() {
        Some(_) => selected(&net, args.layer.as_deref())?[0],
        None => (0, &net.entries[0]),
    };
    let seed = args.seed.wrapping_add(idx as u64);
    let report = simulate_entry(entry, net.memcap_bytes, seed, args.offset_delta, true)
        .map_err(|e| kernel_error(&entry.name, e))?;
    let mut text = report.trace.join("\n");
    text.push('\n');
    match &args.trace {
        Some(path) => {
            write_file(path, &text)?;
            writeln!(
                out,
                "{}: {} events written to {}",
                entry.name,
                report.trace.len(),
                path.display()
            )?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Parse `argv` (including the program name) and run the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Trace(a) => cmd_trace(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Invalid(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
        Err(CliError::Fault(msg)) => {
            let _ = writeln!(err, "{msg}");
            EXIT_FAULT
        }
    }
}
