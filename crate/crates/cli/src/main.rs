use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warpdiv_core::harness::{
    compare, emit_trace, row_from_run, write_rows, HarnessError, OracleSet, OutputFormat, MAX_N,
};
use warpdiv_core::kernels::KernelError;
use warpdiv_core::{
    bound_pattern, charge, format_program, parse_program, predict_total, run, ArchProfile, KernelId,
    LaunchConfig, ModelError, Program, RunResult,
};

#[derive(Parser)]
#[command(name = "warpdiv", version, about = "Single-warp SIMT divergence emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print its counters
    Run(Opts),
    /// Run a kernel over a range of n and write one row per point
    Sweep(Opts),
    /// Sweep and check against the closed forms and fitted curves
    Compare(Opts),
    /// Write the per-instruction trace of one run
    Trace(Opts),
    /// Print the assembly of a kernel or program file
    Dump(Opts),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["kernel", "program"])))]
struct Opts {
    /// Built-in kernel: single, double or instrumented
    #[arg(long)]
    kernel: Option<KernelId>,
    /// Assembly file to run instead of a built-in kernel
    #[arg(long)]
    program: Option<PathBuf>,
    /// Built-in architecture profile
    #[arg(long, default_value = "kepler")]
    arch: String,
    /// Profile file overriding --arch
    #[arg(long)]
    profile_file: Option<PathBuf>,
    /// Number of divergent lanes; expands to the bound pattern
    #[arg(long)]
    n: Option<u32>,
    /// Inclusive range for sweep and compare, e.g. 0..31
    #[arg(long, value_parser = parse_range)]
    n_range: Option<RangeInclusive<u32>>,
    /// Per-lane register values, NAME=v0,...,v31
    #[arg(long = "reg")]
    regs: Vec<String>,
    /// Register receiving the bound pattern when --n is used with --program
    #[arg(long, default_value = "R5")]
    bound_reg: String,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Instruction budget
    #[arg(long)]
    budget: Option<u64>,
}

enum Failure {
    Usage(String),
    Model(String),
    Comparison,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Model(m) => Failure::Model(m.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Launch(_) | ModelError::Profile(_) => Failure::Usage(e.to_string()),
            other => Failure::Model(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn parse_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u32 = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: u32 = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..=b)
}

fn profile(opts: &Opts) -> Result<ArchProfile, Failure> {
    let p = match &opts.profile_file {
        Some(path) => ArchProfile::load(path),
        None => ArchProfile::builtin(&opts.arch),
    };
    p.map_err(|e| Failure::Usage(e.to_string()))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_reg(spec: &str) -> Result<(String, Vec<i64>), Failure> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--reg expects NAME=v0,...,v31, got `{spec}`")))?;
    let values = values
        .split(',')
        .map(|v| {
            let v = v.trim();
            let parsed = match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
                Some(hex) => i64::from_str_radix(hex, 16),
                None => v.parse(),
            };
            parsed.map_err(|_| Failure::Usage(format!("bad value `{v}` for {name}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}

/// A resolved simulation input.
struct Job {
    kernel: Option<KernelId>,
    program: Program,
    launch: LaunchConfig,
}

fn job(opts: &Opts, n: Option<u32>, trace: bool) -> Result<Job, Failure> {
    let profile = profile(opts)?;
    let (kernel, program, mut launch) = match (opts.kernel, &opts.program) {
        (Some(k), _) => {
            let launch = match n {
                Some(n) => k.launch(&bound_pattern(n)?.bounds, profile),
                None => LaunchConfig::new(profile),
            };
            (Some(k), k.program(), launch)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let program =
                parse_program(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let mut launch = LaunchConfig::new(profile);
            if let Some(n) = n {
                let bounds: Vec<i64> = bound_pattern(n)?.bounds.iter().map(|&b| b as i64).collect();
                launch.set_register(&opts.bound_reg, &bounds)?;
            }
            (None, program, launch)
        }
        (None, None) => return Err(Failure::Usage("one of --kernel or --program is required".into())),
    };
    for spec in &opts.regs {
        let (name, values) = parse_reg(spec)?;
        launch.set_register(&name, &values)?;
    }
    if let Some(b) = opts.budget {
        launch = launch.with_budget(b);
    }
    Ok(Job {
        kernel,
        program,
        launch: launch.with_trace(trace),
    })
}

fn require_kernel(opts: &Opts, command: &str) -> Result<KernelId, Failure> {
    opts.kernel
        .ok_or_else(|| Failure::Usage(format!("{command} needs a built-in --kernel")))
}

fn range(opts: &Opts) -> Result<RangeInclusive<u32>, Failure> {
    if opts.n.is_some() && opts.n_range.is_some() {
        return Err(Failure::Usage("--n and --n-range are mutually exclusive".into()));
    }
    let r = match (opts.n, &opts.n_range) {
        (Some(n), _) => n..=n,
        (None, Some(r)) => r.clone(),
        (None, None) => 0..=MAX_N,
    };
    if *r.end() > MAX_N {
        return Err(Failure::Usage(format!("n must lie in 0..={MAX_N}")));
    }
    Ok(r)
}

fn write_report(out: &mut dyn Write, job: &Job, n: Option<u32>, r: &RunResult) -> Result<(), Failure> {
    let profile = &job.launch.profile;
    let source = match job.kernel {
        Some(k) => k.as_str().to_string(),
        None => "program".to_string(),
    };
    writeln!(out, "kernel={source}")?;
    writeln!(out, "arch={}", profile.name)?;
    if let Some(n) = n {
        writeln!(out, "n={n}")?;
    }
    let e = &r.events;
    writeln!(out, "sync_pushes={}", e.sync_pushes)?;
    writeln!(out, "div_pushes={}", e.div_pushes)?;
    writeln!(out, "total_pushes={}", e.total_pushes())?;
    writeln!(out, "pops={}", e.pops())?;
    writeln!(out, "max_depth={}", r.max_depth)?;
    writeln!(out, "spill_stores={}", e.spill_stores)?;
    writeln!(out, "spill_loads={}", e.spill_loads)?;
    writeln!(out, "extra_branches={}", r.extra_branches())?;
    writeln!(out, "executed_instructions={}", r.executed_instructions)?;
    writeln!(out, "cycles={}", r.cycles)?;
    let overhead = charge(e, profile);
    writeln!(out, "overhead_cycles={overhead}")?;
    match job.kernel {
        Some(k) => match (predict_total(k, profile, r), n) {
            (Ok(p), Some(n)) => {
                let row = row_from_run(k, profile, n, r)?;
                writeln!(out, "predicted_cycles={p}")?;
                if let Some(o) = row.oracle_cycles {
                    writeln!(out, "oracle_cycles={o}")?;
                    writeln!(out, "diff={}", p as i64 - o)?;
                }
            }
            (Ok(p), None) => writeln!(out, "predicted_cycles={p}")?,
            (Err(_), _) => writeln!(out, "predicted_cycles={overhead} (overhead only, no base constant)")?,
        },
        None => writeln!(out, "predicted_cycles={overhead} (overhead only, no base constant)")?,
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(opts) => {
            let job = job(&opts, opts.n, false)?;
            let r = run(&job.program, &job.launch)?;
            let mut out = sink(opts.out.as_deref())?;
            write_report(&mut out, &job, opts.n, &r)?;
            out.flush()?;
        }
        Command::Trace(opts) => {
            let job = job(&opts, opts.n, true)?;
            let r = run(&job.program, &job.launch)?;
            emit_trace(&r, sink(opts.out.as_deref())?, opts.format)?;
        }
        Command::Sweep(opts) | Command::Compare(opts) if opts.program.is_some() => {
            return Err(Failure::Usage("sweep and compare need a built-in --kernel".into()));
        }
        Command::Sweep(opts) => {
            let kernel = require_kernel(&opts, "sweep")?;
            let rows = sweep_rows(&opts, kernel)?;
            write_rows(&rows, sink(opts.out.as_deref())?, opts.format)?;
        }
        Command::Compare(opts) => {
            let kernel = require_kernel(&opts, "compare")?;
            let rows = sweep_rows(&opts, kernel)?;
            let profile = profile(&opts)?;
            let report = compare(&rows, &OracleSet::new(kernel, &profile.name, range(&opts)?)?)?;
            let mut out = sink(opts.out.as_deref())?;
            writeln!(out, "{report}")?;
            out.flush()?;
            if !report.passed() {
                return Err(Failure::Comparison);
            }
        }
        Command::Dump(opts) => {
            let program = job(&opts, None, false)?.program;
            let mut out = sink(opts.out.as_deref())?;
            out.write_all(format_program(&program).as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn sweep_rows(opts: &Opts, kernel: KernelId) -> Result<Vec<warpdiv_core::harness::SweepRow>, Failure> {
    range(opts)?
        .map(|n| {
            let job = job(opts, Some(n), false)?;
            let r = run(&job.program, &job.launch)?;
            Ok(row_from_run(kernel, &job.launch.profile, n, &r)?)
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Model(msg)) => {
            eprintln!("model violation: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Comparison) => ExitCode::from(3),
    }
}
