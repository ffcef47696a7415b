//! Sweeps over divergent-thread counts, closed-form oracles, comparison and
//! trace output.

use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cost::{charge, predict_total, ArchProfile, CostError};
use crate::kernels::{bound_pattern, KernelError, KernelId};
use crate::warp::{run, ModelError, RunResult};

/// Largest divergent-thread count of the bound patterns.
pub const MAX_N: u32 = 31;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("n = {0} is outside the domain 0..=31")]
    OutOfDomain(u32),
    #[error("rows and oracles cover different ranges: {0}")]
    RangeMismatch(String),
    #[error("run was not recorded with a trace")]
    TraceNotRecorded,
    #[error("unknown output format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" | "json" => Ok(OutputFormat::Jsonl),
            _ => Err(HarnessError::UnknownFormat(s.to_string())),
        }
    }
}

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub n: u32,
    pub kernel: KernelId,
    pub arch: String,
    pub div_pushes: u64,
    pub total_pushes: u64,
    pub max_depth: usize,
    pub spill_stores: u64,
    pub spill_loads: u64,
    pub extra_branches: u64,
    /// Event-attributed cycles (no base constant).
    pub overhead_cycles: u64,
    /// Base constant plus overhead; absent when the profile has no base
    /// constant for the kernel.
    pub predicted_cycles: Option<u64>,
    pub oracle_cycles: Option<i64>,
    pub abs_diff: Option<u64>,
}

fn check_n(n: u32) -> Result<(), HarnessError> {
    if n > MAX_N {
        Err(HarnessError::OutOfDomain(n))
    } else {
        Ok(())
    }
}

/// Runs `kernel` with the bound pattern for `n`.
pub fn run_pattern(
    kernel: KernelId,
    profile: &ArchProfile,
    n: u32,
    trace: bool,
) -> Result<RunResult, HarnessError> {
    let pattern = bound_pattern(n)?;
    let launch = kernel.launch(&pattern.bounds, profile.clone()).with_trace(trace);
    Ok(run(&kernel.program(), &launch)?)
}

pub fn row_from_run(kernel: KernelId, profile: &ArchProfile, n: u32, result: &RunResult) -> Result<SweepRow, HarnessError> {
    let predicted = predict_total(kernel, profile, result).ok();
    let oracle = fit_curve(kernel, &profile.name, n)?;
    let abs_diff = match (predicted, oracle) {
        (Some(p), Some(o)) => Some((p as i64 - o).unsigned_abs()),
        _ => None,
    };
    Ok(SweepRow {
        n,
        kernel,
        arch: profile.name.clone(),
        div_pushes: result.events.div_pushes,
        total_pushes: result.events.total_pushes(),
        max_depth: result.max_depth,
        spill_stores: result.events.spill_stores,
        spill_loads: result.events.spill_loads,
        extra_branches: result.extra_branches(),
        overhead_cycles: charge(&result.events, profile),
        predicted_cycles: predicted,
        oracle_cycles: oracle,
        abs_diff,
    })
}

/// One row per `n`, ordered by `n`. Points are simulated in parallel.
pub fn sweep(
    kernel: KernelId,
    profile: &ArchProfile,
    range: RangeInclusive<u32>,
) -> Result<Vec<SweepRow>, HarnessError> {
    check_n(*range.end())?;
    range
        .into_par_iter()
        .map(|n| {
            let result = run_pattern(kernel, profile, n, false)?;
            row_from_run(kernel, profile, n, &result)
        })
        .collect()
}

/// Total synchronization-stack pushes for the bound pattern `n`.
pub fn expected_push_count(kernel: KernelId, n: u32) -> Result<u64, HarnessError> {
    check_n(n)?;
    let n = n as u64;
    Ok(match kernel {
        KernelId::SingleLoop | KernelId::SingleLoopInstrumented => n + 1,
        KernelId::DoubleLoop => n * (65 - n) / 2 + 33,
    })
}

pub fn expected_max_depth(kernel: KernelId, n: u32) -> Result<usize, HarnessError> {
    check_n(n)?;
    let n = n as usize;
    Ok(match kernel {
        KernelId::SingleLoop | KernelId::SingleLoopInstrumented => n + 1,
        KernelId::DoubleLoop => n + 2,
    })
}

/// Published fit of measured cycles, where one exists (Kepler single and
/// double loop).
pub fn fit_curve(kernel: KernelId, arch: &str, n: u32) -> Result<Option<i64>, HarnessError> {
    check_n(n)?;
    let x = n as i64;
    Ok(match (kernel, arch.to_ascii_lowercase().as_str()) {
        (KernelId::SingleLoop, "kepler") => Some(1732 + 32 * x),
        (KernelId::DoubleLoop, "kepler") => Some(-16 * x * x + 1040 * x + 57024),
        _ => None,
    })
}

/// Closed-form expectations for one kernel/architecture over a range of `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleSet {
    pub kernel: KernelId,
    pub arch: String,
    pub range: RangeInclusive<u32>,
}

impl OracleSet {
    pub fn new(kernel: KernelId, arch: &str, range: RangeInclusive<u32>) -> Result<Self, HarnessError> {
        check_n(*range.end())?;
        Ok(OracleSet {
            kernel,
            arch: arch.to_string(),
            range,
        })
    }

    pub fn push_count(&self, n: u32) -> Result<u64, HarnessError> {
        expected_push_count(self.kernel, n)
    }

    pub fn max_depth(&self, n: u32) -> Result<usize, HarnessError> {
        expected_max_depth(self.kernel, n)
    }

    pub fn cycles(&self, n: u32) -> Result<Option<i64>, HarnessError> {
        fit_curve(self.kernel, &self.arch, n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparedRow {
    pub n: u32,
    pub predicted: Option<u64>,
    pub oracle: Option<i64>,
    pub diff: Option<i64>,
    /// No spills occurred, so the prediction must match the fit exactly.
    pub exact_region: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub kernel: KernelId,
    pub arch: String,
    pub rows: Vec<ComparedRow>,
    pub max_abs_diff: Option<u64>,
    pub max_rel_diff: Option<f64>,
    pub exact_region_max_diff: Option<u64>,
    pub failures: Vec<String>,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks a sweep against the oracles.
///
/// Push counts, maximum depths and the spill/extra-branch identity must hold
/// everywhere; cycle predictions must equal the fit wherever no spill
/// occurred. Spill-region cycle differences are reported only.
pub fn compare(rows: &[SweepRow], oracles: &OracleSet) -> Result<ComparisonReport, HarnessError> {
    let ns: Vec<u32> = rows.iter().map(|r| r.n).collect();
    let expected: Vec<u32> = oracles.range.clone().collect();
    if ns != expected {
        return Err(HarnessError::RangeMismatch(format!(
            "rows cover {ns:?}, oracles cover {:?}",
            oracles.range
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.kernel != oracles.kernel) {
        return Err(HarnessError::RangeMismatch(format!(
            "row n={} is for kernel {}, oracles for {}",
            r.n, r.kernel, oracles.kernel
        )));
    }

    let mut failures = Vec::new();
    let mut compared = Vec::with_capacity(rows.len());
    for r in rows {
        let pushes = oracles.push_count(r.n)?;
        if r.total_pushes != pushes {
            failures.push(format!("n={}: total_pushes {} != {pushes}", r.n, r.total_pushes));
        }
        let depth = oracles.max_depth(r.n)?;
        if r.max_depth != depth {
            failures.push(format!("n={}: max_depth {} != {depth}", r.n, r.max_depth));
        }
        if r.extra_branches != r.spill_stores {
            failures.push(format!(
                "n={}: extra_branches {} != spills {}",
                r.n, r.extra_branches, r.spill_stores
            ));
        }
        let oracle = oracles.cycles(r.n)?;
        let diff = match (r.predicted_cycles, oracle) {
            (Some(p), Some(o)) => Some(p as i64 - o),
            _ => None,
        };
        let exact_region = r.spill_stores == 0;
        if exact_region && diff.is_some_and(|d| d != 0) {
            failures.push(format!(
                "n={}: predicted {} differs from fit {} in the no-spill region",
                r.n,
                r.predicted_cycles.unwrap_or_default(),
                oracle.unwrap_or_default()
            ));
        }
        compared.push(ComparedRow {
            n: r.n,
            predicted: r.predicted_cycles,
            oracle,
            diff,
            exact_region,
        });
    }

    let max_abs = |exact_only: bool| {
        compared
            .iter()
            .filter(|c| !exact_only || c.exact_region)
            .filter_map(|c| c.diff.map(i64::unsigned_abs))
            .max()
    };
    let max_rel_diff = compared
        .iter()
        .filter_map(|c| match (c.diff, c.oracle) {
            (Some(d), Some(o)) if o != 0 => Some(d.unsigned_abs() as f64 / o.unsigned_abs() as f64),
            _ => None,
        })
        .reduce(f64::max);

    Ok(ComparisonReport {
        kernel: oracles.kernel,
        arch: oracles.arch.clone(),
        max_abs_diff: max_abs(false),
        exact_region_max_diff: max_abs(true),
        max_rel_diff,
        rows: compared,
        failures,
    })
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kernel={} arch={}", self.kernel, self.arch)?;
        writeln!(f, "{:>3} {:>10} {:>10} {:>8}  region", "n", "predicted", "fit", "diff")?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.rows {
            writeln!(
                f,
                "{:>3} {:>10} {:>10} {:>8}  {}",
                r.n,
                opt(r.predicted.map(|v| v.to_string())),
                opt(r.oracle.map(|v| v.to_string())),
                opt(r.diff.map(|v| v.to_string())),
                if r.exact_region { "exact" } else { "spill" }
            )?;
        }
        writeln!(f, "max_abs_diff={}", opt(self.max_abs_diff.map(|v| v.to_string())))?;
        writeln!(
            f,
            "max_rel_diff={}",
            opt(self.max_rel_diff.map(|v| format!("{:.6}", v)))
        )?;
        writeln!(
            f,
            "exact_region_max_diff={}",
            opt(self.exact_region_max_diff.map(|v| v.to_string()))
        )?;
        for fail in &self.failures {
            writeln!(f, "FAIL {fail}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    n: u32,
    kernel: &'a str,
    arch: &'a str,
    div_pushes: u64,
    total_pushes: u64,
    max_depth: usize,
    spills: u64,
    extra_branches: u64,
    predicted_cycles: Option<u64>,
    oracle_cycles: Option<i64>,
    diff: Option<u64>,
}

/// Writes sweep rows as CSV (fixed column set) or JSON lines (all fields).
pub fn write_rows<W: Write>(rows: &[SweepRow], sink: W, format: OutputFormat) -> Result<(), HarnessError> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for r in rows {
                w.serialize(CsvRow {
                    n: r.n,
                    kernel: r.kernel.as_str(),
                    arch: &r.arch,
                    div_pushes: r.div_pushes,
                    total_pushes: r.total_pushes,
                    max_depth: r.max_depth,
                    spills: r.spill_stores,
                    extra_branches: r.extra_branches,
                    predicted_cycles: r.predicted_cycles,
                    oracle_cycles: r.oracle_cycles,
                    diff: r.abs_diff,
                })?;
            }
            w.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut sink = sink;
            for r in rows {
                serde_json::to_writer(&mut sink, r)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceLine {
    ordinal: u64,
    pc: usize,
    opcode: String,
    active_mask: String,
    depth: usize,
    event: String,
    cycle: u64,
}

/// Writes the per-instruction trace (stack depth, mask, events, cycle).
pub fn emit_trace<W: Write>(result: &RunResult, sink: W, format: OutputFormat) -> Result<(), HarnessError> {
    let trace = result.trace.as_ref().ok_or(HarnessError::TraceNotRecorded)?;
    let lines = trace.iter().map(|t| TraceLine {
        ordinal: t.ordinal,
        pc: t.pc,
        opcode: t.instruction.to_string(),
        active_mask: t.active_mask.to_string(),
        depth: t.depth,
        event: t
            .events
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("+"),
        cycle: t.cycle,
    });
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for l in lines {
                w.serialize(l)?;
            }
            w.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut sink = sink;
            for l in lines {
                serde_json::to_writer(&mut sink, &l)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
        }
    }
    Ok(())
}
