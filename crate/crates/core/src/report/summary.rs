//! Per-task, per-scenario result tables. There is deliberately no combined
//! score across tasks.

use serde::Serialize;

use super::RunResult;

const HEADER: [&str; 7] = ["task", "scenario", "metric", "value", "units", "status", "queries"];

/// Aligned plain-text table, one row per result, sorted by task then
/// scenario. Invalid rows list their violations underneath.
pub fn summarize(results: &[RunResult]) -> String {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| (&a.task, a.scenario).cmp(&(&b.task, b.scenario)));

    let rows: Vec<[String; 7]> = sorted
        .iter()
        .map(|r| {
            [
                r.task.clone(),
                r.scenario.to_string(),
                r.metric_name.as_str().to_string(),
                format_value(r.metric_value),
                r.units.clone(),
                if r.valid { "VALID".into() } else { "INVALID".into() },
                r.query_count.to_string(),
            ]
        })
        .collect();

    let mut widths = HEADER.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render = |cells: &[String]| -> String {
        let mut line = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        line.truncate(line.trim_end().len());
        line + "\n"
    };

    let mut out = render(&HEADER.map(String::from));
    out += &render(&widths.map(|w| "-".repeat(w)));
    for (row, r) in rows.iter().zip(&sorted) {
        out += &render(row);
        for v in &r.violations {
            out += &format!("    violation {}: measured {} limit {} ({})\n", v.rule, v.measured, v.limit, v.detail);
        }
    }
    out
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    task: &'a str,
    scenario: String,
    metric_name: &'a str,
    metric_value: f64,
    units: &'a str,
    valid: bool,
    query_count: u64,
    violations: &'a [super::Violation],
}

/// Machine-readable counterpart of [`summarize`]: a JSON array of rows.
pub fn summarize_json(results: &[RunResult]) -> String {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| (&a.task, a.scenario).cmp(&(&b.task, b.scenario)));
    let rows: Vec<JsonRow> = sorted
        .iter()
        .map(|r| JsonRow {
            task: &r.task,
            scenario: r.scenario.to_string(),
            metric_name: r.metric_name.as_str(),
            metric_value: r.metric_value,
            units: &r.units,
            valid: r.valid,
            query_count: r.query_count,
            violations: &r.violations,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("summary rows serialize")
}
