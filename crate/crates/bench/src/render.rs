//! Human-readable forms of an [`EvaluationReport`].
//!
//! MAE and MSE cells show two decimals. Relative differences go through
//! [`display_difference`] at two decimals, chart labels through
//! [`display_percent`]. The best model's difference cells are `-`.

use std::fmt::Write as _;

use pathloss_core::cv::{ConventionalResult, ModelReport};
use pathloss_core::metrics::{display_difference, display_percent};
use pathloss_core::EvaluationReport;

pub const HEADER: [&str; 5] = ["Model", "MAE", "MSE", "Diff.(MAE)", "Diff.(MSE)"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartMetric {
    Mae,
    Mse,
}

impl ChartMetric {
    pub fn name(self) -> &'static str {
        match self {
            ChartMetric::Mae => "MAE",
            ChartMetric::Mse => "MSE",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            ChartMetric::Mae => "diff_mae.svg",
            ChartMetric::Mse => "diff_mse.svg",
        }
    }

    fn diff(self, m: &ModelReport) -> Option<f64> {
        match self {
            ChartMetric::Mae => m.diff_mae,
            ChartMetric::Mse => m.diff_mse,
        }
    }
}

fn is_best(report: &EvaluationReport, m: &ModelReport) -> bool {
    report.best.as_deref() == Some(m.label.as_str())
}

/// The five cells of one model's row.
pub fn row_cells(report: &EvaluationReport, m: &ModelReport) -> [String; 5] {
    let Some(a) = m.aggregate else {
        return [m.label.clone(), "failed".into(), "failed".into(), "-".into(), "-".into()];
    };
    let diff = |d: Option<f64>| {
        if is_best(report, m) {
            "-".to_string()
        } else {
            d.map_or("n/a".to_string(), |d| display_difference(d, 2))
        }
    };
    [
        m.label.clone(),
        format!("{:.2}", a.mae),
        format!("{:.2}", a.mse),
        diff(m.diff_mae),
        diff(m.diff_mse),
    ]
}

fn layout(rows: &[[String; 5]]) -> String {
    let mut widths = HEADER.map(str::len);
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 5]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells.iter().zip(widths).skip(1) {
            write!(s, "  {c:>w$}").unwrap();
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut out, HEADER);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3], &rule[4]]);
    for r in rows {
        line(&mut out, [&r[0], &r[1], &r[2], &r[3], &r[4]]);
    }
    out
}

/// Fixed-width results table, one row per model in report order. Failed
/// models get a footnote with their error.
pub fn emit_table(report: &EvaluationReport) -> String {
    let rows: Vec<[String; 5]> = report.models.iter().map(|m| row_cells(report, m)).collect();
    let mut out = layout(&rows);
    for m in &report.models {
        if let Some(e) = &m.error {
            writeln!(out, "\n{}: {e}", m.label).unwrap();
        }
    }
    out
}

/// Checks that every cell of `table` re-derives from `report`: the text
/// must equal the rendered cell, and numeric cells must lie within the
/// rounding error of the full-precision value.
pub fn check_table(report: &EvaluationReport, table: &str) -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    let lines: Vec<&str> = table.lines().collect();
    let body = lines.iter().skip(2).take(report.models.len());
    if lines.len() < 2 + report.models.len() {
        return Err(vec![format!("table has {} lines, expected at least {}", lines.len(), 2 + report.models.len())]);
    }
    for (m, line) in report.models.iter().zip(body) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        let want = row_cells(report, m);
        if cells != want.iter().map(String::as_str).collect::<Vec<_>>() {
            problems.push(format!("{}: row {cells:?} does not match {want:?}", m.label));
            continue;
        }
        let Some(a) = m.aggregate else { continue };
        let near = |cell: &str, v: f64, tol: f64| cell.parse::<f64>().is_ok_and(|c| (c - v).abs() <= tol);
        if !near(cells[1], a.mae, 0.005 + 1e-9 * a.mae.abs()) || !near(cells[2], a.mse, 0.005 + 1e-9 * a.mse.abs()) {
            problems.push(format!("{}: metric cells drift from {} / {}", m.label, a.mae, a.mse));
        }
        if !is_best(report, m) {
            for (cell, d) in [(cells[3], m.diff_mae), (cells[4], m.diff_mse)] {
                if let Some(d) = d {
                    if !near(cell, d, 0.0055 + 1e-12) {
                        problems.push(format!("{}: diff cell {cell} drifts from {d}", m.label));
                    }
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

/// One bar per non-best model, height `100 x relative difference`.
/// `None` when fewer than two models have results.
pub fn emit_chart(report: &EvaluationReport, metric: ChartMetric) -> Option<String> {
    let best = report.best.as_deref()?;
    let bars: Vec<(&str, f64)> = report
        .models
        .iter()
        .filter(|m| m.aggregate.is_some() && m.label != best)
        .filter_map(|m| metric.diff(m).map(|d| (m.label.as_str(), d * 100.0)))
        .collect();
    if bars.is_empty() {
        return None;
    }
    let (w, h) = (120.0 * bars.len() as f64 + 80.0, 360.0);
    let (top, bottom) = (60.0, 300.0);
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let lo = bars.iter().map(|b| b.1).fold(0.0, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let y = |v: f64| top + (hi - v) / span * (bottom - top);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{best} performance difference in {} (%)</text>"#,
        w / 2.0,
        metric.name()
    )
    .unwrap();
    let zero = y(0.0);
    writeln!(s, r#"<line x1="40" y1="{zero}" x2="{}" y2="{zero}" stroke="black"/>"#, w - 40.0).unwrap();
    for (i, (label, pct)) in bars.iter().enumerate() {
        let x = 60.0 + 120.0 * i as f64;
        let (y0, y1) = if *pct >= 0.0 { (y(*pct), zero) } else { (zero, y(*pct)) };
        writeln!(
            s,
            r##"<g class="bar" data-model="{label}" data-percent="{pct}"><rect x="{x}" y="{y0}" width="80" height="{}" fill="#4a7ab5"/><text x="{}" y="{}" text-anchor="middle" font-size="14">{}%</text><text x="{}" y="{}" text-anchor="middle" font-size="14">{label}</text></g>"##,
            y1 - y0,
            x + 40.0,
            y0 - 6.0,
            display_percent(pct / 100.0),
            x + 40.0,
            bottom + 30.0,
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// `(model, percent label)` for each bar of a chart made by [`emit_chart`].
pub fn chart_labels(svg: &str) -> Vec<(String, String)> {
    svg.lines()
        .filter_map(|l| {
            let model = l.split("data-model=\"").nth(1)?.split('"').next()?;
            let label = l.split("font-size=\"14\">").nth(1)?.split('<').next()?;
            Some((model.to_string(), label.trim_end_matches('%').to_string()))
        })
        .collect()
}

/// Side-by-side nested and conventional estimates.
pub fn emit_leaky_table(report: &EvaluationReport, conventional: &[ConventionalResult]) -> String {
    let mut out = String::from(
        "Conventional (non-nested) cross validation, for comparison only.\n\
         The same folds pick the hyperparameters and score them, so these errors are optimistic.\n\n",
    );
    let head = ["Model", "Nested MAE", "Conv. MAE", "Nested MSE", "Conv. MSE"];
    let mut rows = vec![head.map(String::from)];
    for c in conventional {
        let nested = report.model(&c.label).and_then(|m| m.aggregate);
        let f = |v: Option<f64>| v.map_or("failed".to_string(), |v| format!("{v:.2}"));
        rows.push([
            c.label.clone(),
            f(nested.map(|a| a.mae)),
            f(Some(c.aggregate.mae)),
            f(nested.map(|a| a.mse)),
            f(Some(c.aggregate.mse)),
        ]);
    }
    let widths: Vec<usize> = (0..5).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    for r in &rows {
        let mut line = format!("{:<w$}", r[0], w = widths[0]);
        for j in 1..5 {
            write!(line, "  {:>w$}", r[j], w = widths[j]).unwrap();
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
