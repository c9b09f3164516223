//! Run fan-out, aggregation, and output writing.
//!
//! An experiment is `n_runs` independent runs of one configured optimizer,
//! each on its own RNG stream (and, for stochastic problem builders, its
//! own problem instance). Runs execute in parallel when the pool is
//! available, but results are assembled in run order and written by a
//! single writer, so outputs depend only on the config.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use mirrorcbx::diagnostics::aggregate;
use mirrorcbx::dynamics::RunTrace;
use mirrorcbx::ensemble::make_ensemble;
use mirrorcbx::run;

use crate::config::{config_from_value, default_record, ExperimentConfig};
use crate::{HarnessError, Result};

// ---- Outcome types ----

/// One completed run: the raw trace plus what the judging layer needs.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: u64,
    pub trace: RunTrace,
    /// Ground truth of this run's problem instance, when the builder has one.
    pub ground_truth: Option<DVector<f64>>,
    /// Final consensus mapped into comparison space (unlifted when lifted).
    pub final_point: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    /// Completed runs in run order.
    pub per_run: Vec<RunRecord>,
    /// (run index, error message) for runs that failed.
    pub failures: Vec<(u64, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    /// Runs attempted, including failed ones.
    pub n_runs: usize,
    pub failed_runs: usize,
    /// Fraction of completed runs meeting the success criterion, when the
    /// config has one.
    pub success_rate: Option<f64>,
    /// Mean exact-zero support size of the final consensus points.
    pub mean_l0: f64,
    /// Mean and median consensus-distance curves over the recorded
    /// iterations; empty unless a record target is configured.
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub iter: usize,
    pub mean: f64,
    pub median: f64,
}

// ---- Running ----

fn one_run(cfg: &ExperimentConfig, run_index: u64) -> std::result::Result<RunRecord, String> {
    let kind = cfg.optimizer.build().map_err(|e| e.to_string())?;
    let params = cfg.params.build().map_err(|e| e.to_string())?;
    let problem = cfg
        .problem
        .build(cfg.dim, &cfg.base_dir, cfg.seed, run_index)
        .map_err(|e| e.to_string())?;
    let record = match &cfg.record {
        Some(r) => r.record_spec(cfg.record_stride, cfg.dim, &problem).map_err(|e| e.to_string())?,
        None => default_record(cfg.record_stride),
    };
    let init_spec = cfg.init.build().map_err(|e| e.to_string())?;
    let init = make_ensemble(&init_spec, cfg.n_particles, cfg.dim, cfg.seed, run_index)
        .map_err(|e| e.to_string())?;
    let mut trace = run(
        &kind,
        problem.objective.as_ref(),
        init,
        cfg.init_in_dual,
        &params,
        &record,
        cfg.k_max,
        cfg.seed,
        run_index,
    )
    .map_err(|e| e.to_string())?;
    trace.success = match &cfg.success {
        Some(s) => {
            Some(s.is_success(&problem, &trace.final_consensus).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let final_point = problem.comparison_point(&trace.final_consensus);
    Ok(RunRecord { run: run_index, trace, ground_truth: problem.ground_truth, final_point })
}

/// Execute all runs of a validated config. Individual run failures are
/// collected rather than aborting the experiment; only a config in which
/// every run fails is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let runs: Vec<u64> = (0..cfg.n_runs as u64).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<(u64, std::result::Result<RunRecord, String>)> =
        runs.into_par_iter().map(|r| (r, one_run(cfg, r))).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(u64, std::result::Result<RunRecord, String>)> =
        runs.into_iter().map(|r| (r, one_run(cfg, r))).collect();
    assemble(cfg, results)
}

fn assemble(
    cfg: &ExperimentConfig,
    results: Vec<(u64, std::result::Result<RunRecord, String>)>,
) -> Result<ExperimentOutcome> {
    let n_attempted = results.len();
    let mut per_run = Vec::new();
    let mut failures = Vec::new();
    for (run_index, result) in results {
        match result {
            Ok(record) => per_run.push(record),
            Err(msg) => failures.push((run_index, msg)),
        }
    }
    if per_run.is_empty() {
        let (first_run, first_msg) =
            failures.first().cloned().unwrap_or((0, "no runs configured".into()));
        return Err(HarnessError::Runtime(format!(
            "all {n_attempted} runs failed; run {first_run}: {first_msg}"
        )));
    }

    let traces: Vec<RunTrace> = per_run.iter().map(|r| r.trace.clone()).collect();
    let agg = aggregate(&traces, None)
        .map_err(|e| HarnessError::Runtime(format!("aggregation failed: {e}")))?;
    let success_rate = cfg.success.as_ref().map(|_| {
        let hits = per_run.iter().filter(|r| r.trace.success == Some(true)).count();
        hits as f64 / per_run.len() as f64
    });
    let curve = agg
        .iters
        .iter()
        .zip(agg.mean_curve.iter().zip(agg.median_curve.iter()))
        .map(|(&iter, (&mean, &median))| CurvePoint { iter, mean, median })
        .collect();

    Ok(ExperimentOutcome {
        summary: Summary {
            experiment: cfg.experiment.clone(),
            n_runs: n_attempted,
            failed_runs: failures.len(),
            success_rate,
            mean_l0: agg.mean_l0,
            curve,
        },
        per_run,
        failures,
    })
}

// ---- Output writing ----

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-iteration trace CSV. Column set and order are fixed; cells for
/// unconfigured diagnostics are left empty.
pub fn trace_csv(per_run: &[RunRecord]) -> String {
    let mut out = String::from("run,iter,best_energy,consensus_dist,alpha,lyapunov\n");
    for record in per_run {
        for row in &record.trace.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                record.run,
                row.iter,
                row.best_energy,
                fmt_opt(row.consensus_dist),
                row.alpha,
                fmt_opt(row.lyapunov),
            ));
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Write `<experiment>.csv` and `<experiment>_summary.json` under `out_dir`,
/// returning the two paths.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{}.csv", cfg.experiment));
    write_file(&csv_path, &trace_csv(&outcome.per_run))?;
    let summary_path = out_dir.join(format!("{}_summary.json", cfg.experiment));
    write_file(&summary_path, &(summary_json(&outcome.summary)? + "\n"))?;
    Ok((csv_path, summary_path))
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    serde_json::to_string_pretty(summary)
        .map_err(|e| HarnessError::Runtime(format!("cannot serialize summary: {e}")))
}

// ---- Sweeps ----

pub struct SweepEntry {
    /// The raw value string as passed on the command line.
    pub raw: String,
    /// The value as JSON (numbers stay numbers).
    pub value: serde_json::Value,
    pub outcome: ExperimentOutcome,
}

pub struct SweepOutcome {
    pub experiment: String,
    pub entries: Vec<SweepEntry>,
}

/// Rerun one config across several values of a dot-separated field path,
/// offsetting the base seed by the value's index so entries stay on
/// distinct but reproducible streams.
pub fn sweep(config_path: &Path, param_path: &str, values: &[String]) -> Result<SweepOutcome> {
    let text = fs::read_to_string(config_path).map_err(|e| {
        HarnessError::Config(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let base: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", config_path.display())))?;
    let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }

    let mut entries = Vec::new();
    let mut experiment = String::new();
    for (index, raw) in values.iter().enumerate() {
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut patched = base.clone();
        patch(&mut patched, param_path, value.clone())?;
        let mut cfg = config_from_value(patched, &base_dir)?;
        cfg.seed = cfg.seed.wrapping_add(index as u64);
        experiment = cfg.experiment.clone();
        let outcome = run_experiment(&cfg)?;
        entries.push(SweepEntry { raw: raw.clone(), value, outcome });
    }
    Ok(SweepOutcome { experiment, entries })
}

/// Set `path` (dot-separated object keys and array indices) to `value`.
/// Intermediate segments must already exist; the final segment may insert a
/// new key into an object, so optional fields can be swept too.
fn patch(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let unresolvable = |seg: &str| {
        HarnessError::Config(format!("sweep path {path:?} does not resolve at segment {seg:?}"))
    };
    let mut segments = path.split('.').peekable();
    let mut current = root;
    while let Some(seg) = segments.next() {
        let last = segments.peek().is_none();
        match current {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                current = map.get_mut(seg).ok_or_else(|| unresolvable(seg))?;
            }
            serde_json::Value::Array(items) => {
                let index: usize = seg.parse().map_err(|_| unresolvable(seg))?;
                let slot = items.get_mut(index).ok_or_else(|| unresolvable(seg))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                current = slot;
            }
            _ => return Err(unresolvable(seg)),
        }
    }
    Err(HarnessError::Config(format!("sweep path {path:?} is empty")))
}

/// Combined trace CSV with a leading column for the swept value.
pub fn sweep_csv(sweep: &SweepOutcome) -> String {
    let mut out = String::from("value,run,iter,best_energy,consensus_dist,alpha,lyapunov\n");
    for entry in &sweep.entries {
        for record in &entry.outcome.per_run {
            for row in &record.trace.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    entry.raw,
                    record.run,
                    row.iter,
                    row.best_energy,
                    fmt_opt(row.consensus_dist),
                    row.alpha,
                    fmt_opt(row.lyapunov),
                ));
            }
        }
    }
    out
}

pub fn write_sweep_outputs(sweep: &SweepOutcome, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{}_sweep.csv", sweep.experiment));
    write_file(&csv_path, &sweep_csv(sweep))?;

    #[derive(Serialize)]
    struct Entry<'a> {
        value: &'a serde_json::Value,
        summary: &'a Summary,
    }
    let rows: Vec<Entry<'_>> =
        sweep.entries.iter().map(|e| Entry { value: &e.value, summary: &e.outcome.summary }).collect();
    let json = serde_json::to_string_pretty(&rows)
        .map_err(|e| HarnessError::Runtime(format!("cannot serialize sweep summary: {e}")))?;
    let summary_path = out_dir.join(format!("{}_sweep_summary.json", sweep.experiment));
    write_file(&summary_path, &(json + "\n"))?;
    Ok((csv_path, summary_path))
}
