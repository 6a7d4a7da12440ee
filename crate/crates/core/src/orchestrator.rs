//! Sweep engine and artifact pipeline.
//!
//! `sweep` runs an (L, rho, seed) grid, one single-threaded training run
//! per worker task, and persists one run record plus one checkpoint per
//! run, tracked by a content-hash manifest (reruns skip hash-valid runs).
//! `report` recomputes every condition statistic from the records alone
//! and writes the summary table, heatmap matrices, phase map, ridge
//! crossings, and per-condition time series. `ablate` runs the sweep with
//! and without agent identifiers under shared seeds and emits the
//! comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::gridworld::{density_to_count, GridConfig, GridError};
use crate::learner::{self, LearnerError, TrainerConfig};
use crate::metrics::{
    self, attach_stability, condition_stats, ConditionStats, MetricsError, SpreadSource,
};
use crate::nn::NetParams;
use crate::phase::{self, PhaseError, PhaseMap, RidgeCrossing};
use crate::record::{RecordError, RunCondition, RunData};
use crate::seeding;

pub const DEFAULT_WINDOW_FRAC: f64 = 0.25;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no run records found under {0}")]
    MissingRuns(PathBuf),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> OrchestratorError {
    let context = context.into();
    move |source| OrchestratorError::Io { context, source }
}

/// Seeds as either a count (0..count) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(usize),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Result<Vec<u64>, OrchestratorError> {
        let seeds = match self {
            SeedSpec::Count(k) => (0..*k as u64).collect(),
            SeedSpec::List(list) => list.clone(),
        };
        if seeds.is_empty() {
            return Err(OrchestratorError::InvalidConfig("need at least one seed".into()));
        }
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            return Err(OrchestratorError::InvalidConfig("seed list has duplicates".into()));
        }
        Ok(seeds)
    }
}

fn default_exclude() -> Vec<(usize, f64)> {
    vec![(32, 0.5)]
}

fn default_id_enabled() -> bool {
    true
}

/// Sweep description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub l_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    #[serde(default = "default_exclude")]
    pub exclude: Vec<(usize, f64)>,
    pub seeds: SeedSpec,
    #[serde(default = "default_id_enabled")]
    pub id_enabled: bool,
    #[serde(default)]
    pub fixed_goal: Option<(usize, usize)>,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path)
            .map_err(io_err(format!("reading config {}", path.display())))?;
        let cfg: SweepConfig = serde_json::from_str(&text)?;
        cfg.trainer.validate()?;
        Ok(cfg)
    }

    /// Expand into the deterministic, sorted task list.
    pub fn tasks(&self) -> Result<Vec<RunTask>, OrchestratorError> {
        if self.l_values.is_empty() || self.rho_values.is_empty() {
            return Err(OrchestratorError::InvalidConfig(
                "l_values and rho_values must be non-empty".into(),
            ));
        }
        let seeds = self.seeds.seeds()?;
        let mut sides = self.l_values.clone();
        sides.sort_unstable();
        sides.dedup();
        let mut rhos = self.rho_values.clone();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();

        let excluded =
            |side: usize, rho: f64| self.exclude.iter().any(|&(l, r)| l == side && r == rho);
        let mut tasks = Vec::new();
        for &side in &sides {
            for &rho in &rhos {
                if excluded(side, rho) {
                    continue;
                }
                let agents = density_to_count(side, rho)?;
                for &seed in &seeds {
                    tasks.push(RunTask {
                        condition: RunCondition {
                            side,
                            rho,
                            agents,
                            seed,
                            id_enabled: self.id_enabled,
                        },
                        trainer: self.trainer.clone(),
                        fixed_goal: self.fixed_goal,
                    });
                }
            }
        }
        if tasks.is_empty() {
            return Err(OrchestratorError::InvalidConfig(
                "config expands to zero runs (everything excluded?)".into(),
            ));
        }
        Ok(tasks)
    }
}

/// One unit of work: a single (condition, seed) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTask {
    pub condition: RunCondition,
    pub trainer: TrainerConfig,
    pub fixed_goal: Option<(usize, usize)>,
}

impl RunTask {
    fn grid(&self) -> Result<GridConfig, GridError> {
        let mut grid = GridConfig::from_density(
            self.condition.side,
            self.condition.rho,
            self.condition.id_enabled,
        )?;
        if let Some(goal) = self.fixed_goal {
            grid = grid.with_fixed_goal(goal)?;
        }
        Ok(grid)
    }
}

/// Run one task in memory. Deterministic in the task alone.
pub fn run_condition(task: &RunTask) -> Result<(RunData, NetParams), OrchestratorError> {
    let grid = task.grid()?;
    let master = seeding::master_seed(
        task.condition.side,
        task.condition.rho,
        task.condition.id_enabled,
        task.condition.seed,
    );
    let output = learner::run_training(&grid, &task.trainer, master)?;
    let data = RunData::from_output(task.condition.clone(), &task.trainer, &grid, &output);
    Ok((data, output.online))
}

fn map_tasks<I, T, F>(items: Vec<I>, workers: usize, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers != 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers) // 0 = rayon's default
                .build()
                .expect("building worker pool");
            return pool.install(|| items.into_par_iter().map(f).collect());
        }
    }
    let _ = workers;
    items.into_iter().map(f).collect()
}

/// Run tasks in memory, parallel across runs when the `parallel` feature
/// is enabled and `workers != 1`.
pub fn execute_tasks(
    tasks: Vec<RunTask>,
    workers: usize,
) -> Vec<Result<(RunData, NetParams), OrchestratorError>> {
    map_tasks(tasks, workers, |t| run_condition(&t))
}

/// Sequential reference path; the benchmark baseline.
pub fn execute_tasks_sequential(
    tasks: Vec<RunTask>,
) -> Vec<Result<(RunData, NetParams), OrchestratorError>> {
    tasks.iter().map(run_condition).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming into {}", path.display())))?;
    Ok(())
}

type Manifest = BTreeMap<String, String>;

fn load_manifest(path: &Path) -> Manifest {
    fs::read_to_string(path)
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok())
        .unwrap_or_default()
}

fn store_manifest(path: &Path, manifest: &Manifest) -> Result<(), OrchestratorError> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn file_hash_matches(root: &Path, rel: &str, manifest: &Manifest) -> bool {
    match (manifest.get(rel), fs::read(root.join(rel))) {
        (Some(expected), Ok(bytes)) => sha256_hex(&bytes) == *expected,
        _ => false,
    }
}

/// Run every task in the config, skipping runs whose artifacts already
/// hash-match the manifest. Record bytes depend only on (condition, seed),
/// never on worker count or scheduling.
pub fn sweep(
    cfg: &SweepConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<SweepSummary, OrchestratorError> {
    cfg.trainer.validate()?;
    let tasks = cfg.tasks()?;
    fs::create_dir_all(out_dir.join("runs"))
        .map_err(io_err(format!("creating {}", out_dir.join("runs").display())))?;
    fs::create_dir_all(out_dir.join("checkpoints"))
        .map_err(io_err(format!("creating {}", out_dir.join("checkpoints").display())))?;

    let mut config_echo = serde_json::to_string_pretty(cfg)?;
    config_echo.push('\n');
    write_atomic(&out_dir.join("config.json"), config_echo.as_bytes())?;

    let manifest_path = out_dir.join("manifest.json");
    let manifest = Mutex::new(load_manifest(&manifest_path));

    let mut todo = Vec::new();
    let mut skipped = 0usize;
    {
        let manifest = manifest.lock().expect("manifest lock");
        for task in tasks {
            let id = task.condition.run_id();
            let record_rel = format!("runs/{id}.record");
            let checkpoint_rel = format!("checkpoints/{id}.qnet");
            if file_hash_matches(out_dir, &record_rel, &manifest)
                && file_hash_matches(out_dir, &checkpoint_rel, &manifest)
            {
                skipped += 1;
            } else {
                todo.push(task);
            }
        }
    }

    let results = map_tasks(todo, workers, |task| -> Result<(), (String, String)> {
        let id = task.condition.run_id();
        let fail = |e: OrchestratorError| (id.clone(), e.to_string());
        let (mut data, params) = run_condition(&task).map_err(fail)?;
        let record_rel = format!("runs/{id}.record");
        let checkpoint_rel = format!("checkpoints/{id}.qnet");
        data.checkpoint = Some(checkpoint_rel.clone());

        let checkpoint_bytes = checkpoint::to_bytes(&params);
        write_atomic(&out_dir.join(&checkpoint_rel), &checkpoint_bytes).map_err(fail)?;
        let record_text = data.to_text().map_err(|e| fail(e.into()))?;
        write_atomic(&out_dir.join(&record_rel), record_text.as_bytes()).map_err(fail)?;

        let mut manifest = manifest.lock().expect("manifest lock");
        manifest.insert(record_rel, sha256_hex(record_text.as_bytes()));
        manifest.insert(checkpoint_rel, sha256_hex(&checkpoint_bytes));
        store_manifest(&manifest_path, &manifest).map_err(fail)?;
        Ok(())
    });

    let mut completed = 0usize;
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(()) => completed += 1,
            Err(pair) => failed.push(pair),
        }
    }
    failed.sort();
    Ok(SweepSummary { completed, skipped, failed })
}

/// Load and parse every run record under `dir/runs`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunData>, OrchestratorError> {
    let runs_dir = dir.join("runs");
    let entries = fs::read_dir(&runs_dir)
        .map_err(|_| OrchestratorError::MissingRuns(runs_dir.clone()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |ext| ext == "record"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(OrchestratorError::MissingRuns(runs_dir));
    }
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path)
            .map_err(io_err(format!("reading {}", path.display())))?;
        records.push(RunData::parse(&text)?);
    }
    Ok(records)
}

/// Report configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub window_frac: f64,
    pub ridge_level: f64,
    pub spread_source: SpreadSource,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            window_frac: DEFAULT_WINDOW_FRAC,
            ridge_level: phase::DEFAULT_RIDGE_LEVEL,
            spread_source: SpreadSource::Evaluation,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    side: usize,
    rho: f64,
    agents: usize,
    id_enabled: bool,
    seeds: usize,
    csr: f64,
    td_var: f64,
    td_mean: Option<f64>,
    grad_var: f64,
    grad_mean: Option<f64>,
    s: f64,
    s_grad: f64,
    spread_mean: f64,
    co_reach_mean: f64,
    rho_eff: f64,
    d_phase: Option<f64>,
    regime: Option<String>,
    window_episodes: usize,
    window_eval_records: usize,
}

#[derive(Debug, Clone, Serialize)]
struct ReportSummary {
    window_frac: f64,
    ridge_level: f64,
    spread_source: String,
    v_max: f64,
    grad_var_max: f64,
    thresholds: Option<phase::Thresholds>,
    conditions: Vec<SummaryRow>,
    ridge_crossings: Vec<RidgeCrossing>,
}

/// Everything `report` computes, before it is written to disk.
#[derive(Debug, Clone)]
pub struct Report {
    pub stats: Vec<ConditionStats>,
    pub v_max: f64,
    pub grad_var_max: f64,
    /// Present only when at least two conditions exist.
    pub phase_map: Option<PhaseMap>,
    pub ridge_crossings: Vec<RidgeCrossing>,
    pub options: ReportOptions,
}

/// Compute every condition statistic and the phase structure from parsed
/// records. Pure function of the records; `report` writes it to disk.
pub fn build_report(
    records: &[RunData],
    opts: &ReportOptions,
) -> Result<Report, OrchestratorError> {
    if records.is_empty() {
        return Err(OrchestratorError::MissingRuns(PathBuf::from("<memory>")));
    }
    let mut arms: Vec<bool> = records.iter().map(|r| r.condition.id_enabled).collect();
    arms.dedup();
    if arms.len() > 1 {
        return Err(OrchestratorError::InvalidConfig(
            "runs mix ID and no-ID arms; report each arm separately".into(),
        ));
    }

    let mut groups: BTreeMap<(usize, u64), Vec<&RunData>> = BTreeMap::new();
    for r in records {
        groups.entry((r.condition.side, r.condition.rho.to_bits())).or_default().push(r);
    }

    let mut stats = Vec::with_capacity(groups.len());
    for ((side, rho_bits), runs) in &groups {
        let rho = f64::from_bits(*rho_bits);
        let first = runs[0];
        let seed_runs: Vec<metrics::SeedRun> = runs.iter().map(|r| r.seed_run()).collect();
        stats.push(condition_stats(
            *side,
            rho,
            first.condition.agents,
            first.condition.id_enabled,
            &seed_runs,
            opts.window_frac,
            opts.spread_source,
        )?);
    }
    let (v_max, grad_var_max) = attach_stability(&mut stats)?;

    let phase_map = if stats.len() >= 2 {
        let conditions: Vec<(usize, f64, f64, f64)> = stats
            .iter()
            .map(|s| (s.side, s.rho, s.csr, s.s.expect("filled by attach_stability")))
            .collect();
        Some(phase::build_phase_map(&conditions, opts.ridge_level)?)
    } else {
        None
    };
    let ridge_crossings = phase_map
        .as_ref()
        .map(|m| phase::ridge_cells(&m.points, opts.ridge_level))
        .unwrap_or_default();

    Ok(Report { stats, v_max, grad_var_max, phase_map, ridge_crossings, options: *opts })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_heatmap(
    path: &Path,
    sides: &[usize],
    rhos: &[f64],
    value: impl Fn(usize, f64) -> Option<f64>,
) -> Result<(), OrchestratorError> {
    let mut out = String::from("L/rho");
    for rho in rhos {
        out.push_str(&format!(",{rho}"));
    }
    out.push('\n');
    for &side in sides {
        out.push_str(&side.to_string());
        for &rho in rhos {
            out.push(',');
            if let Some(v) = value(side, rho) {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Write the full report tree for a runs directory:
/// `summary.csv`/`summary.json`, three heatmap matrices (CSR, S, d_phase),
/// `phase_map.csv`, `ridge.csv`, and per-condition time series.
pub fn report(
    runs_dir: &Path,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<Report, OrchestratorError> {
    let records = load_records(runs_dir)?;
    let report = build_report(&records, opts)?;
    write_report_files(&report, out_dir)?;
    Ok(report)
}

fn condition_label(side: usize, rho: f64, id_enabled: bool) -> String {
    format!("L{side}_rho{rho}_{}", if id_enabled { "id" } else { "noid" })
}

fn write_report_files(report: &Report, out_dir: &Path) -> Result<(), OrchestratorError> {
    fs::create_dir_all(out_dir.join("timeseries"))
        .map_err(io_err(format!("creating {}", out_dir.display())))?;

    let phase_point = |side: usize, rho: f64| {
        report
            .phase_map
            .as_ref()
            .and_then(|m| m.points.iter().find(|p| p.side == side && p.rho == rho))
    };

    // summary.csv
    let mut csv = String::from(
        "side,rho,agents,id_enabled,seeds,csr,td_var,td_mean,grad_var,grad_mean,s,s_grad,\
         spread_mean,co_reach_mean,rho_eff,d_phase,regime,window_episodes,window_eval_records\n",
    );
    let mut rows = Vec::new();
    for s in &report.stats {
        let point = phase_point(s.side, s.rho);
        let row = SummaryRow {
            side: s.side,
            rho: s.rho,
            agents: s.agents,
            id_enabled: s.id_enabled,
            seeds: s.seeds,
            csr: s.csr,
            td_var: s.td_var,
            td_mean: s.td_mean,
            grad_var: s.grad_var,
            grad_mean: s.grad_mean,
            s: s.s.expect("attached"),
            s_grad: s.s_grad.expect("attached"),
            spread_mean: s.spread_mean,
            co_reach_mean: s.co_reach_mean,
            rho_eff: s.rho_eff,
            d_phase: point.map(|p| p.d_phase),
            regime: point.map(|p| p.regime.label().to_string()),
            window_episodes: s.window_episodes,
            window_eval_records: s.window_eval_records,
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.side,
            row.rho,
            row.agents,
            row.id_enabled,
            row.seeds,
            fmt_f64(row.csr),
            fmt_f64(row.td_var),
            fmt_opt(row.td_mean),
            fmt_f64(row.grad_var),
            fmt_opt(row.grad_mean),
            fmt_f64(row.s),
            fmt_f64(row.s_grad),
            fmt_f64(row.spread_mean),
            fmt_f64(row.co_reach_mean),
            fmt_f64(row.rho_eff),
            fmt_opt(row.d_phase),
            row.regime.clone().unwrap_or_default(),
            row.window_episodes,
            row.window_eval_records,
        ));
        rows.push(row);
    }
    write_atomic(&out_dir.join("summary.csv"), csv.as_bytes())?;

    let summary = ReportSummary {
        window_frac: report.options.window_frac,
        ridge_level: report.options.ridge_level,
        spread_source: match report.options.spread_source {
            SpreadSource::Evaluation => "evaluation".into(),
            SpreadSource::Training => "training".into(),
        },
        v_max: report.v_max,
        grad_var_max: report.grad_var_max,
        thresholds: report.phase_map.as_ref().map(|m| m.thresholds),
        conditions: rows,
        ridge_crossings: report.ridge_crossings.clone(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;

    // Heatmaps over the observed (L, rho) grid; absent conditions (e.g. the
    // excluded corner) stay empty.
    let mut sides: Vec<usize> = report.stats.iter().map(|s| s.side).collect();
    sides.sort_unstable();
    sides.dedup();
    let mut rhos: Vec<f64> = report.stats.iter().map(|s| s.rho).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let find = |side: usize, rho: f64| {
        report.stats.iter().find(|s| s.side == side && s.rho == rho)
    };
    write_heatmap(&out_dir.join("heatmap_csr.csv"), &sides, &rhos, |l, r| {
        find(l, r).map(|s| s.csr)
    })?;
    write_heatmap(&out_dir.join("heatmap_s.csv"), &sides, &rhos, |l, r| {
        find(l, r).and_then(|s| s.s)
    })?;
    write_heatmap(&out_dir.join("heatmap_dphase.csv"), &sides, &rhos, |l, r| {
        phase_point(l, r).map(|p| p.d_phase)
    })?;

    // phase_map.csv
    let mut out = String::from("side,rho,csr,s,d_phase,regime\n");
    if let Some(map) = &report.phase_map {
        for p in &map.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.side,
                p.rho,
                fmt_f64(p.csr),
                fmt_f64(p.s),
                fmt_f64(p.d_phase),
                p.regime.label()
            ));
        }
    }
    write_atomic(&out_dir.join("phase_map.csv"), out.as_bytes())?;

    // ridge.csv
    let mut out = String::from("axis,a_side,a_rho,b_side,b_rho,d_a,d_b,fraction\n");
    for c in &report.ridge_crossings {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            match c.axis {
                phase::EdgeAxis::Side => "side",
                phase::EdgeAxis::Rho => "rho",
            },
            c.a.0,
            c.a.1,
            c.b.0,
            c.b.1,
            fmt_f64(c.d_a),
            fmt_f64(c.d_b),
            fmt_f64(c.fraction)
        ));
    }
    write_atomic(&out_dir.join("ridge.csv"), out.as_bytes())?;

    // Per-condition time series.
    for s in &report.stats {
        let mut out = String::from(
            "episode,seeds,td_mean,td_mean_ci95,td_var,td_var_ci95,grad_mean,grad_mean_ci95,\
             grad_var,grad_var_ci95,spread,spread_ci95,co_reach,co_reach_ci95,return,return_ci95\n",
        );
        for p in &s.series {
            let opt = |m: &Option<metrics::MeanCi>| match m {
                Some(v) => (fmt_f64(v.mean), fmt_f64(v.ci95)),
                None => (String::new(), String::new()),
            };
            let (tm, tmc) = opt(&p.td_mean);
            let (tv, tvc) = opt(&p.td_var);
            let (gm, gmc) = opt(&p.grad_mean);
            let (gv, gvc) = opt(&p.grad_var);
            out.push_str(&format!(
                "{},{},{tm},{tmc},{tv},{tvc},{gm},{gmc},{gv},{gvc},{},{},{},{},{},{}\n",
                p.episode,
                p.seeds,
                fmt_f64(p.spread.mean),
                fmt_f64(p.spread.ci95),
                fmt_f64(p.co_reach.mean),
                fmt_f64(p.co_reach.ci95),
                fmt_f64(p.episode_return.mean),
                fmt_f64(p.episode_return.ci95),
            ));
        }
        let name = format!("{}.csv", condition_label(s.side, s.rho, s.id_enabled));
        write_atomic(&out_dir.join("timeseries").join(name), out.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateSummary {
    pub id_arm: SweepSummary,
    pub noid_arm: SweepSummary,
    pub table: PathBuf,
}

/// Mean pre-clip gradient norm over *all* episodes of every seed (not just
/// the trailing window); the ablation's headline contrast.
pub fn overall_grad_mean(records: &[&RunData]) -> Option<f64> {
    let values: Vec<f64> = records
        .iter()
        .flat_map(|r| r.episode_rows.iter().filter_map(|row| row.grad_mean))
        .collect();
    (!values.is_empty()).then(|| metrics::mean(&values))
}

/// Run the sweep twice (IDs on and off) under shared seeds and write the
/// per-condition comparison table.
pub fn ablate(
    cfg: &SweepConfig,
    out_dir: &Path,
    workers: usize,
    window_frac: f64,
) -> Result<AblateSummary, OrchestratorError> {
    let mut id_cfg = cfg.clone();
    id_cfg.id_enabled = true;
    let mut noid_cfg = cfg.clone();
    noid_cfg.id_enabled = false;

    let id_arm = sweep(&id_cfg, &out_dir.join("id"), workers)?;
    let noid_arm = sweep(&noid_cfg, &out_dir.join("noid"), workers)?;

    let opts = ReportOptions { window_frac, ..ReportOptions::default() };
    let id_records = load_records(&out_dir.join("id"))?;
    let noid_records = load_records(&out_dir.join("noid"))?;
    let id_report = build_report(&id_records, &opts)?;
    let noid_report = build_report(&noid_records, &opts)?;

    let mut table = String::from(
        "side,rho,agents,csr_id,csr_noid,td_var_id,td_var_noid,grad_mean_id,grad_mean_noid,\
         grad_var_id,grad_var_noid,grad_mean_all_id,grad_mean_all_noid,obs_dim_id,obs_dim_noid\n",
    );
    for id_stat in &id_report.stats {
        let partner = noid_report
            .stats
            .iter()
            .find(|s| s.side == id_stat.side && s.rho == id_stat.rho)
            .ok_or_else(|| {
                OrchestratorError::InvalidConfig(format!(
                    "no-ID arm is missing condition (L={}, rho={})",
                    id_stat.side, id_stat.rho
                ))
            })?;
        fn arm_records(records: &[RunData], side: usize, rho: f64) -> Vec<&RunData> {
            records
                .iter()
                .filter(|r| r.condition.side == side && r.condition.rho == rho)
                .collect()
        }
        let id_arm_records = arm_records(&id_records, id_stat.side, id_stat.rho);
        let noid_arm_records = arm_records(&noid_records, id_stat.side, id_stat.rho);
        let obs_dim = |records: &[&RunData]| records.first().map(|r| r.obs_dim).unwrap_or(0);
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            id_stat.side,
            id_stat.rho,
            id_stat.agents,
            fmt_f64(id_stat.csr),
            fmt_f64(partner.csr),
            fmt_f64(id_stat.td_var),
            fmt_f64(partner.td_var),
            fmt_opt(id_stat.grad_mean),
            fmt_opt(partner.grad_mean),
            fmt_f64(id_stat.grad_var),
            fmt_f64(partner.grad_var),
            fmt_opt(overall_grad_mean(&id_arm_records)),
            fmt_opt(overall_grad_mean(&noid_arm_records)),
            obs_dim(&id_arm_records),
            obs_dim(&noid_arm_records),
        ));
    }
    let table_path = out_dir.join("ablation_compare.csv");
    write_atomic(&table_path, table.as_bytes())?;
    Ok(AblateSummary { id_arm, noid_arm, table: table_path })
}

/// Train one (condition, seed) run; sugar over a one-task sweep so the
/// artifact layout and resume semantics stay identical.
pub fn train_one(
    side: usize,
    rho: f64,
    seed: u64,
    id_enabled: bool,
    fixed_goal: Option<(usize, usize)>,
    trainer: TrainerConfig,
    out_dir: &Path,
) -> Result<SweepSummary, OrchestratorError> {
    let cfg = SweepConfig {
        l_values: vec![side],
        rho_values: vec![rho],
        exclude: Vec::new(),
        seeds: SeedSpec::List(vec![seed]),
        id_enabled,
        fixed_goal,
        trainer,
    };
    sweep(&cfg, out_dir, 1)
}

/// Greedy evaluation of a stored checkpoint; writes an eval-only report
/// and never mutates the checkpoint.
pub fn eval_checkpoint(
    checkpoint_path: &Path,
    side: usize,
    rho: f64,
    seed: u64,
    id_enabled: bool,
    episodes: usize,
    out_path: &Path,
) -> Result<PathBuf, OrchestratorError> {
    let params = checkpoint::load(checkpoint_path)?;
    let grid = GridConfig::from_density(side, rho, id_enabled)?;
    if grid.obs_dim() != params.input_dim {
        return Err(OrchestratorError::InvalidConfig(format!(
            "checkpoint expects input_dim {}, condition produces {}",
            params.input_dim,
            grid.obs_dim()
        )));
    }
    let master = seeding::master_seed(side, rho, id_enabled, seed);
    let mut rng = seeding::stream_rng(master, seeding::StreamId::Eval);
    let records = learner::evaluate(&params, &grid, episodes, &mut rng)?;

    let condition = RunCondition { side, rho, agents: grid.agents, seed, id_enabled };
    let mut out = String::new();
    out.push_str("# gridphase-eval v1\n");
    out.push_str(&format!("# condition: {}\n", serde_json::to_string(&condition)?));
    out.push_str(&format!("# checkpoint: {}\n", checkpoint_path.display()));
    out.push_str(&format!("# episodes: {episodes}\n"));
    out.push_str("[eval]\n");
    out.push_str("eval_index,all_reached,return,steps,arrivals\n");
    for (k, r) in records.iter().enumerate() {
        let arrivals = r
            .arrival_steps
            .iter()
            .map(|a| a.map(|s| s.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            r.all_reached,
            fmt_f64(r.episode_return),
            r.steps,
            arrivals
        ));
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(io_err(format!("creating {}", parent.display())))?;
        }
    }
    write_atomic(out_path, out.as_bytes())?;
    Ok(out_path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tiny_trainer() -> TrainerConfig {
        TrainerConfig {
            episodes: 6,
            warm_up: 32,
            buffer_capacity: 4_096,
            batch: 8,
            hidden: 8,
            eval_every: 2,
            eval_episodes: 2,
            ..TrainerConfig::default()
        }
    }

    fn tiny_config() -> SweepConfig {
        SweepConfig {
            l_values: vec![8],
            rho_values: vec![0.03125, 0.0625],
            exclude: vec![(32, 0.5)],
            seeds: SeedSpec::Count(3),
            id_enabled: true,
            fixed_goal: None,
            trainer: tiny_trainer(),
        }
    }

    fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut snapshot = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    snapshot.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        snapshot
    }

    #[test]
    fn seed_spec_expansion_and_validation() {
        assert_eq!(SeedSpec::Count(3).seeds().unwrap(), vec![0, 1, 2]);
        assert_eq!(SeedSpec::List(vec![7, 9]).seeds().unwrap(), vec![7, 9]);
        assert!(SeedSpec::List(vec![7, 7]).seeds().is_err());
        assert!(SeedSpec::Count(0).seeds().is_err());
    }

    #[test]
    fn config_json_accepts_count_or_list() {
        let json = r#"{
            "l_values": [8],
            "rho_values": [0.03125],
            "seeds": 2,
            "trainer": {"episodes": 6, "hidden": 8}
        }"#;
        let cfg: SweepConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.seeds, SeedSpec::Count(2));
        assert!(cfg.id_enabled);
        assert_eq!(cfg.exclude, vec![(32, 0.5)]);
        assert_eq!(cfg.trainer.episodes, 6);
        assert_eq!(cfg.trainer.batch, 64, "unset fields take defaults");

        let json = r#"{"l_values": [8], "rho_values": [0.03125], "seeds": [3, 5]}"#;
        let cfg: SweepConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.seeds, SeedSpec::List(vec![3, 5]));
    }

    #[test]
    fn task_expansion_counts_and_excludes() {
        let cfg = tiny_config();
        assert_eq!(cfg.tasks().unwrap().len(), 6);

        let paper = SweepConfig {
            l_values: vec![8, 16, 24, 32],
            rho_values: vec![0.03125, 0.0625, 0.125, 0.25, 0.5],
            exclude: vec![(32, 0.5)],
            seeds: SeedSpec::Count(50),
            id_enabled: true,
            fixed_goal: None,
            trainer: TrainerConfig::default(),
        };
        assert_eq!(paper.tasks().unwrap().len(), 19 * 50);

        let bad = SweepConfig { exclude: Vec::new(), ..paper };
        assert!(matches!(
            bad.tasks(),
            Err(OrchestratorError::Grid(GridError::UnsupportedCondition { .. }))
        ));
    }

    #[test]
    fn sweep_produces_records_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let summary = sweep(&cfg, dir.path(), 1).unwrap();
        assert_eq!(summary.completed, 6);
        assert_eq!(summary.skipped, 0);
        assert!(summary.failed.is_empty());

        let first = dir_snapshot(dir.path());
        assert_eq!(
            first.keys().filter(|k| k.starts_with("runs/")).count(),
            6,
            "one record per (condition, seed)"
        );

        // Rerun: everything hash-valid, nothing recomputed.
        let summary = sweep(&cfg, dir.path(), 1).unwrap();
        assert_eq!(summary.completed, 0);
        assert_eq!(summary.skipped, 6);
        assert_eq!(dir_snapshot(dir.path()), first);

        // Corrupt one record: only that run is redone, bytes are restored.
        let victim = dir.path().join("runs/L8_rho0.03125_seed1_id.record");
        fs::write(&victim, b"garbage").unwrap();
        let summary = sweep(&cfg, dir.path(), 1).unwrap();
        assert_eq!(summary.completed, 1);
        assert_eq!(summary.skipped, 5);
        assert_eq!(dir_snapshot(dir.path()), first);
    }

    #[test]
    fn record_files_embed_their_condition() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            rho_values: vec![0.03125],
            seeds: SeedSpec::List(vec![4]),
            ..tiny_config()
        };
        sweep(&cfg, dir.path(), 1).unwrap();
        let records = load_records(dir.path()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].condition.seed, 4);
        assert_eq!(records[0].obs_dim, 6);
        assert_eq!(records[0].episode_rows.len(), 6);
        assert!(records[0].checkpoint.is_some());
        let ck = dir.path().join(records[0].checkpoint.as_ref().unwrap());
        let params = checkpoint::load(&ck).unwrap();
        assert_eq!(params.input_dim, 6);
    }

    #[test]
    fn report_is_pure_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        sweep(&cfg, dir.path(), 1).unwrap();
        let out_a = dir.path().join("report_a");
        let out_b = dir.path().join("report_b");
        report(dir.path(), &out_a, &ReportOptions::default()).unwrap();
        report(dir.path(), &out_b, &ReportOptions::default()).unwrap();
        assert_eq!(dir_snapshot(&out_a), dir_snapshot(&out_b));
        for file in ["summary.csv", "summary.json", "heatmap_csr.csv", "heatmap_s.csv",
                     "heatmap_dphase.csv", "phase_map.csv", "ridge.csv"] {
            assert!(out_a.join(file).is_file(), "missing {file}");
        }
        assert!(out_a.join("timeseries/L8_rho0.03125_id.csv").is_file());
    }

    #[test]
    fn report_errors_without_records() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(dir.path(), &dir.path().join("report"), &ReportOptions::default());
        assert!(matches!(err, Err(OrchestratorError::MissingRuns(_))));
    }

    #[test]
    fn mixed_arms_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SweepConfig {
            rho_values: vec![0.03125],
            seeds: SeedSpec::Count(1),
            ..tiny_config()
        };
        sweep(&cfg, dir.path(), 1).unwrap();
        cfg.id_enabled = false;
        sweep(&cfg, dir.path(), 1).unwrap();
        let err = report(dir.path(), &dir.path().join("report"), &ReportOptions::default());
        assert!(matches!(err, Err(OrchestratorError::InvalidConfig(_))));
    }

    #[test]
    fn ablation_compares_both_arms() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig {
            rho_values: vec![0.03125],
            seeds: SeedSpec::Count(2),
            ..tiny_config()
        };
        let summary = ablate(&cfg, dir.path(), 1, 0.25).unwrap();
        assert_eq!(summary.id_arm.completed, 2);
        assert_eq!(summary.noid_arm.completed, 2);
        let table = fs::read_to_string(&summary.table).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2, "header plus one condition");
        let cells: Vec<&str> = lines[1].split(',').collect();
        let obs_dim_id: usize = cells[cells.len() - 2].parse().unwrap();
        let obs_dim_noid: usize = cells[cells.len() - 1].parse().unwrap();
        assert_eq!(obs_dim_id, 6);
        assert_eq!(obs_dim_noid, 4);

        let id_records = load_records(&dir.path().join("id")).unwrap();
        let noid_records = load_records(&dir.path().join("noid")).unwrap();
        assert!(id_records.iter().all(|r| r.condition.id_enabled));
        assert!(noid_records.iter().all(|r| !r.condition.id_enabled));
        assert_eq!(
            id_records.iter().map(|r| r.condition.seed).collect::<Vec<_>>(),
            noid_records.iter().map(|r| r.condition.seed).collect::<Vec<_>>(),
            "arms share seeds"
        );
    }

    #[test]
    fn eval_checkpoint_writes_rows_and_keeps_params() {
        let dir = tempfile::tempdir().unwrap();
        train_one(8, 0.03125, 0, true, None, tiny_trainer(), dir.path()).unwrap();
        let ck = dir.path().join("checkpoints/L8_rho0.03125_seed0_id.qnet");
        let before = fs::read(&ck).unwrap();
        let out = dir.path().join("eval_report.csv");
        eval_checkpoint(&ck, 8, 0.03125, 1, true, 3, &out).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("# gridphase-eval v1"));
        assert_eq!(text.lines().filter(|l| !l.starts_with(['#', '['])).count(), 4);
        assert_eq!(fs::read(&ck).unwrap(), before, "checkpoint untouched");

        // Dimension mismatch: no-ID condition against an ID checkpoint.
        assert!(matches!(
            eval_checkpoint(&ck, 8, 0.03125, 1, false, 3, &out),
            Err(OrchestratorError::InvalidConfig(_))
        ));
    }
}
