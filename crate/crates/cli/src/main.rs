use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use decadam::analysis::{analyze_traces, check_consensus_bound, BoundKind};
use decadam::harness::{
    load_config, parse_table, read_trace_file, run_sweep, run_to_dir, vega_lite_spec, write_atomic, write_gnuplot,
    PlotMetric,
};
use decadam::topology::{build_topology, TopologyKind, WeightRule};
use serde::de::DeserializeOwned;

mod verify;

#[derive(Parser)]
#[command(name = "decadam", version, about = "Decentralized Adam simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trace CSV and manifest.
    Run(RunArgs),
    /// Expand list-valued config keys into a grid and run every point.
    Sweep(SweepArgs),
    /// Check consensus bounds and summarize traces as a JSON report.
    Analyze(AnalyzeArgs),
    /// Run the self-check suites; exits nonzero if any check fails.
    Verify(VerifyArgs),
    /// Topology utilities.
    #[command(subcommand)]
    Topology(TopologyCommand),
    /// Emit gnuplot or vega-lite data for one or more traces.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a manifest JSON from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's evaluation interval.
    #[arg(long)]
    eval_every: Option<usize>,
    /// File stem for the outputs; defaults to `run-seed<SEED>`.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parallel runs; defaults to the number of CPUs.
    #[arg(long, env = "DECADAM_JOBS")]
    jobs: Option<usize>,
    /// Overrides `seed` for every grid point.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace CSV files, or directories whose `*.csv` files are all read.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Equivalence,
    Contraction,
    Mixing,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Subcommand)]
enum TopologyCommand {
    /// Print the mixing matrix and its spectrum as JSON.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct InspectArgs {
    /// Read the topology section of this config instead of the flags below.
    #[arg(long, conflicts_with_all = ["kind", "workers", "weight_rule"])]
    config: Option<PathBuf>,
    /// ring, complete, grid2d, or star_regularized.
    #[arg(long, default_value = "ring")]
    kind: String,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// uniform_neighbor or metropolis.
    #[arg(long, default_value = "uniform_neighbor")]
    weight_rule: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotFormat {
    Gnuplot,
    VegaLite,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "gnuplot")]
    format: PlotFormat,
    /// loss, grad_norm_sq, or consensus_err (vega-lite only).
    #[arg(long, default_value = "loss")]
    metric: String,
    /// Use cumulative bits instead of iterations on the x axis (vega-lite only).
    #[arg(long)]
    x_bits: bool,
}

/// Print a line to stdout. A closed pipe (`decadam ... | head`) ends output
/// quietly instead of panicking.
pub(crate) fn emit(line: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}") {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("cannot write to stdout: {e}");
    }
}

/// Parse a snake_case enum value through its serde representation.
fn parse_enum<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .with_context(|| format!("invalid value `{value}` for --{flag}"))
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let mut config = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(e) = a.eval_every {
        config.eval_every = e;
    }
    let stem = a.name.unwrap_or_else(|| format!("run-seed{}", config.seed));
    let (trace, out) = run_to_dir(config, &a.out, &stem)?;
    let s = &trace.summary;
    emit(
        &serde_json::json!({
            "trace": out.trace_path,
            "manifest": out.manifest_path,
            "final_loss": s.final_loss,
            "comm_rounds": s.comm_rounds,
            "comm_bits": s.comm_bits,
        })
        .to_string(),
    );
    Ok(true)
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("cannot read {}", a.config.display()))?;
    let mut table = parse_table(&text)?;
    if let Some(seed) = a.seed {
        table.insert("seed".into(), toml::Value::Integer(i64::try_from(seed).context("--seed exceeds i64")?));
    }
    if let Some(e) = a.eval_every {
        table.insert("eval_every".into(), toml::Value::Integer(i64::try_from(e).context("--eval-every too large")?));
    }
    let jobs = match a.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let index = run_sweep(&table, &a.out, jobs)?;
    eprintln!("{} runs written to {}", index.runs.len(), a.out.display());
    Ok(true)
}

fn collect_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no trace files found");
    }
    Ok(files)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, bytes)?,
        None => {
            if let Err(e) = io::stdout().write_all(bytes) {
                if e.kind() != io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<bool> {
    let files = collect_traces(&a.traces)?;
    let traces = files
        .iter()
        .map(|f| read_trace_file(f).with_context(|| format!("cannot load trace {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = analyze_traces(&traces)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_output(a.out.as_deref(), &json)?;
    // name the failing traces; the report itself only carries bound values
    for (t, f) in traces.iter().zip(&files) {
        let Some(kind) = BoundKind::for_algorithm(t.header.config.algorithm) else { continue };
        let b = check_consensus_bound(t, kind)?;
        if !b.satisfied {
            eprintln!(
                "bound violated: {} for {} (observed {:e} > bound {:e})",
                b.bound_name,
                f.display(),
                b.empirical_value,
                b.theoretical_value
            );
        }
    }
    Ok(report.all_bounds_satisfied)
}

fn cmd_inspect(a: InspectArgs) -> Result<bool> {
    let topology = match a.config {
        Some(path) => load_config(&path)?.topology.build()?,
        None => build_topology(
            parse_enum::<TopologyKind>("kind", &a.kind)?,
            a.workers,
            parse_enum::<WeightRule>("weight-rule", &a.weight_rule)?,
        )?,
    };
    emit(&serde_json::to_string_pretty(&topology.report())?);
    Ok(true)
}

fn cmd_plot(a: PlotArgs) -> Result<bool> {
    let files = collect_traces(&a.traces)?;
    let mut traces = Vec::with_capacity(files.len());
    for f in &files {
        let label = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
        traces.push((label, read_trace_file(f)?));
    }
    let bytes = match a.format {
        PlotFormat::Gnuplot => {
            let mut buf = Vec::new();
            write_gnuplot(&traces, &mut buf)?;
            buf
        }
        PlotFormat::VegaLite => {
            let metric: PlotMetric = parse_enum("metric", &a.metric)?;
            let mut buf = serde_json::to_vec_pretty(&vega_lite_spec(&traces, metric, a.x_bits))?;
            buf.push(b'\n');
            buf
        }
    };
    write_atomic(&a.out, &bytes)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Verify(a) => verify::run(a.suite, a.seed),
        Command::Topology(TopologyCommand::Inspect(a)) => cmd_inspect(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
