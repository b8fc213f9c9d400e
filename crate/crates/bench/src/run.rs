//! Load, evaluate, render, write.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pathloss_core::cv::{conventional_evaluate, run_with_plan_timed, ConventionalResult, CvError, Estimator};
use pathloss_core::data::{generate_synthetic, load_csv, ColumnMapping, DataError};
use pathloss_core::{make_fold_plan, Dataset, EvaluationReport};
use thiserror::Error;

use crate::config::{DataSource, RunConfig};
use crate::render::{check_table, emit_chart, emit_leaky_table, emit_table, ChartMetric};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Plan(CvError),
    #[error(transparent)]
    Cv(CvError),
    #[error("rendered table disagrees with the report:\n{}", .0.join("\n"))]
    Inconsistent(Vec<String>),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read report {path}: {reason}")]
    Report { path: PathBuf, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Data(_) | RunError::Plan(_) | RunError::Report { .. } => EXIT_DATA,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Everything a run produces, before it is written.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub report: EvaluationReport,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
}

pub struct LoadedData {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub dropped: usize,
    pub source: String,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData, DataError> {
    match &cfg.data {
        DataSource::Csv(path) => {
            let rep = load_csv(path, &cfg.load)?;
            Ok(LoadedData {
                rows_read: rep.rows_read,
                dropped: rep.dropped,
                dataset: rep.dataset,
                source: path.display().to_string(),
            })
        }
        DataSource::Synthetic(s) => Ok(LoadedData {
            dataset: generate_synthetic(s)?,
            rows_read: s.n,
            dropped: 0,
            source: format!(
                "synthetic (intercept {}, slope {}, noise_std {}, n {}, distance {}..{} m, seed {})",
                s.intercept, s.slope, s.noise_std, s.n, s.distance_range.0, s.distance_range.1, s.seed
            ),
        }),
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.3} s", d.as_secs_f64())
}

/// Runs the benchmark described by `cfg` and renders every artifact.
/// Nothing is written to disk.
pub fn compute(cfg: &RunConfig) -> Result<Artifacts, RunError> {
    let start = Instant::now();
    let loaded = load_data(cfg)?;
    let data = &loaded.dataset;
    let plan = make_fold_plan(data.n(), cfg.outer_k, cfg.inner_k, cfg.seed).map_err(RunError::Plan)?;
    let ests: Vec<&dyn Estimator> = cfg.models.iter().map(|m| m as &dyn Estimator).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let threads = pool.current_num_threads();
    let (report, times, conventional) = pool.install(|| -> Result<_, RunError> {
        let (report, times) = run_with_plan_timed(&ests, data, &plan, cfg.selection_metric).map_err(RunError::Cv)?;
        let conventional: Vec<ConventionalResult> = if cfg.leaky_baseline {
            ests.iter()
                .filter_map(|e| conventional_evaluate(*e, data, &plan, cfg.selection_metric).ok())
                .collect()
        } else {
            Vec::new()
        };
        Ok((report, times, conventional))
    })?;

    let mut log = String::new();
    writeln!(log, "data source: {}", loaded.source).unwrap();
    if matches!(cfg.data, DataSource::Csv(_)) {
        writeln!(log, "expected columns: {}", ColumnMapping::fields().join(", ")).unwrap();
    }
    writeln!(log, "rows read: {}", loaded.rows_read).unwrap();
    writeln!(log, "rows dropped: {}", loaded.dropped).unwrap();
    writeln!(log, "rows used: {}", data.n()).unwrap();
    writeln!(log, "seed: {}", cfg.seed).unwrap();
    writeln!(log, "folds: outer {} / inner {}", cfg.outer_k, cfg.inner_k).unwrap();
    writeln!(log, "fold plan sha256: {}", report.plan_hash).unwrap();
    writeln!(log, "selection metric: {}", cfg.selection_metric).unwrap();
    writeln!(log, "threads: {threads}").unwrap();
    for (m, t) in report.models.iter().zip(&times) {
        let status = m.error.as_deref().map_or("ok".to_string(), |e| format!("FAILED: {e}"));
        writeln!(log, "model {}: {} grid points, wall time {}, {status}", m.label, m.grid_size, fmt_duration(*t)).unwrap();
    }
    writeln!(log, "best model: {}", report.best.as_deref().unwrap_or("none")).unwrap();

    let mut files = render_files(&report, cfg, &mut log)?;
    if cfg.leaky_baseline {
        files.push(("leaky_baseline.txt".into(), emit_leaky_table(&report, &conventional)));
        let json = serde_json::to_string_pretty(&conventional).expect("serializable") + "\n";
        files.push(("leaky_baseline.json".into(), json));
    }
    writeln!(log, "total wall time: {}", fmt_duration(start.elapsed())).unwrap();
    files.push(("run.log".into(), log));
    Ok(Artifacts { report, files })
}

/// Report, table and charts for `report`, as selected by `cfg.formats`.
/// The table is checked against the report before it is returned.
fn render_files(report: &EvaluationReport, cfg: &RunConfig, log: &mut String) -> Result<Vec<(String, String)>, RunError> {
    let mut files = Vec::new();
    if cfg.formats.json {
        files.push(("report.json".into(), report_json(report)));
    }
    if cfg.formats.table {
        files.push(("table.txt".into(), checked_table(report)?));
    }
    if cfg.formats.svg {
        for metric in [ChartMetric::Mae, ChartMetric::Mse] {
            match emit_chart(report, metric) {
                Some(svg) => files.push((metric.file_name().into(), svg)),
                None => writeln!(log, "chart {} skipped: fewer than two models with results", metric.file_name()).unwrap(),
            }
        }
    }
    Ok(files)
}

pub fn report_json(report: &EvaluationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

pub fn checked_table(report: &EvaluationReport) -> Result<String, RunError> {
    let table = emit_table(report);
    check_table(report, &table).map_err(RunError::Inconsistent)?;
    Ok(table)
}

pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| RunError::Write {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

/// Full `run`: compute, then write everything into `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<(Artifacts, Vec<PathBuf>), RunError> {
    let artifacts = compute(cfg)?;
    let written = write_files(&cfg.out_dir, &artifacts.files)?;
    Ok((artifacts, written))
}

/// Re-renders the table and charts from a saved `report.json`.
pub fn rerender(report_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let bad = |reason: String| RunError::Report {
        path: report_path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(report_path).map_err(|e| bad(e.to_string()))?;
    let report: EvaluationReport = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut files = vec![("table.txt".to_string(), checked_table(&report)?)];
    for metric in [ChartMetric::Mae, ChartMetric::Mse] {
        if let Some(svg) = emit_chart(&report, metric) {
            files.push((metric.file_name().into(), svg));
        }
    }
    write_files(out_dir, &files)
}
