//! Versioned JSON Lines log format.
//!
//! Every file starts with a format header naming the document kind. A run
//! log then has one `run` line (settings and profile), one `query` line per
//! issued query in `query_id` order and a closing `summary` line. Result
//! and audit documents end with an `end` line carrying the record count, so
//! a truncated file is always detected.
//!
//! Output is canonical: field order is fixed and floats round-trip, so
//! reading and re-writing a file reproduces it byte for byte. Wall-clock
//! values live only in keys prefixed `wall_`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditReport;
use crate::harness::{QueryRecord, RunLog, RunSummary};
use crate::scenario::{BenchmarkProfile, SampleIndex, TestSettings};
use crate::time::Nanos;

use super::RunResult;

pub const LOG_FORMAT_NAME: &str = "loadgen-log";
pub const LOG_FORMAT_VERSION: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum LogDocument {
    Run(Box<RunLog>),
    Results(Vec<RunResult>),
    Audit(Box<AuditReport>),
}

impl From<RunLog> for LogDocument {
    fn from(log: RunLog) -> Self {
        LogDocument::Run(Box::new(log))
    }
}

impl From<Vec<RunResult>> for LogDocument {
    fn from(results: Vec<RunResult>) -> Self {
        LogDocument::Results(results)
    }
}

impl From<AuditReport> for LogDocument {
    fn from(report: AuditReport) -> Self {
        LogDocument::Audit(Box::new(report))
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unsupported log version {version} (this reader handles {LOG_FORMAT_VERSION})")]
    UnknownVersion { line: usize, version: u32 },
    #[error("line {line}: truncated log: {reason}")]
    Truncated { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Run,
    Results,
    Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunHeader {
    run_id: String,
    sut_name: String,
    settings: TestSettings,
    profile: BenchmarkProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    query_id: u64,
    scheduled_time_ns: Nanos,
    issue_time_ns: Nanos,
    completion_time_ns: Option<Nanos>,
    latency_ns: Option<Nanos>,
    sample_indices: Vec<SampleIndex>,
    skipped_intervals: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload_digests: Option<Vec<u64>>,
}

impl From<&QueryRecord> for QueryLine {
    fn from(r: &QueryRecord) -> Self {
        QueryLine {
            query_id: r.query_id,
            scheduled_time_ns: r.scheduled_time,
            issue_time_ns: r.issue_time,
            completion_time_ns: r.completion_time,
            latency_ns: r.latency(),
            sample_indices: r.sample_indices.clone(),
            skipped_intervals: r.skipped_intervals,
            payload_digests: r.payload_digests.clone(),
        }
    }
}

impl QueryLine {
    fn into_record(self, line: usize) -> Result<QueryRecord, LogError> {
        let record = QueryRecord {
            query_id: self.query_id,
            scheduled_time: self.scheduled_time_ns,
            issue_time: self.issue_time_ns,
            completion_time: self.completion_time_ns,
            sample_indices: self.sample_indices,
            skipped_intervals: self.skipped_intervals,
            payload_digests: self.payload_digests,
        };
        if record.latency() != self.latency_ns {
            return Err(LogError::Malformed {
                line,
                reason: "latency_ns disagrees with issue and completion times".into(),
            });
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Format { format: String, version: u32, kind: Kind },
    Run(RunHeader),
    Query(QueryLine),
    Summary(RunSummary),
    Result(RunResult),
    Audit(AuditReport),
    End { count: u64 },
}

fn encode(line: &Line, out: &mut String) {
    out.push_str(&serde_json::to_string(line).expect("log records serialize"));
    out.push('\n');
}

fn header(kind: Kind) -> Line {
    Line::Format { format: LOG_FORMAT_NAME.into(), version: LOG_FORMAT_VERSION, kind }
}

/// Canonical text for a document.
pub fn to_log_string(doc: &LogDocument) -> String {
    let mut out = String::new();
    match doc {
        LogDocument::Run(log) => {
            encode(&header(Kind::Run), &mut out);
            encode(
                &Line::Run(RunHeader {
                    run_id: log.run_id.clone(),
                    sut_name: log.sut_name.clone(),
                    settings: log.settings.clone(),
                    profile: log.profile.clone(),
                }),
                &mut out,
            );
            for record in &log.records {
                encode(&Line::Query(record.into()), &mut out);
            }
            encode(&Line::Summary(log.summary.clone()), &mut out);
        }
        LogDocument::Results(results) => {
            encode(&header(Kind::Results), &mut out);
            for r in results {
                encode(&Line::Result(r.clone()), &mut out);
            }
            encode(&Line::End { count: results.len() as u64 }, &mut out);
        }
        LogDocument::Audit(report) => {
            encode(&header(Kind::Audit), &mut out);
            encode(&Line::Audit((**report).clone()), &mut out);
            encode(&Line::End { count: 1 }, &mut out);
        }
    }
    out
}

pub fn from_log_str(text: &str) -> Result<LogDocument, LogError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let parse = |(n, l): (usize, &str)| -> Result<(usize, Line), LogError> {
        serde_json::from_str(l)
            .map(|line| (n, line))
            .map_err(|e| LogError::Malformed { line: n, reason: e.to_string() })
    };

    let Some(first) = lines.next() else {
        return Err(LogError::Truncated { line: 1, reason: "empty file".into() });
    };
    let (n, first) = parse(first)?;
    let kind = match first {
        Line::Format { format, version, kind } => {
            if format != LOG_FORMAT_NAME {
                return Err(LogError::Malformed { line: n, reason: format!("unknown format `{format}`") });
            }
            if version != LOG_FORMAT_VERSION {
                return Err(LogError::UnknownVersion { line: n, version });
            }
            kind
        }
        _ => return Err(LogError::Malformed { line: n, reason: "missing format header".into() }),
    };

    let mut body = Vec::new();
    let mut last = n;
    for raw in lines {
        let (n, line) = parse(raw)?;
        last = n;
        body.push((n, line));
    }
    let unexpected = |n: usize, what: &str| LogError::Malformed { line: n, reason: format!("unexpected {what} record") };

    match kind {
        Kind::Run => {
            let mut it = body.into_iter();
            let header = match it.next() {
                Some((_, Line::Run(h))) => h,
                Some((n, _)) => return Err(unexpected(n, "non-run")),
                None => return Err(LogError::Truncated { line: last + 1, reason: "missing run record".into() }),
            };
            let mut records = Vec::new();
            let mut summary = None;
            for (n, line) in it {
                if summary.is_some() {
                    return Err(unexpected(n, "trailing"));
                }
                match line {
                    Line::Query(q) => {
                        if q.query_id != records.len() as u64 {
                            return Err(LogError::Malformed {
                                line: n,
                                reason: format!("expected query_id {}, found {}", records.len(), q.query_id),
                            });
                        }
                        records.push(q.into_record(n)?);
                    }
                    Line::Summary(s) => summary = Some(s),
                    _ => return Err(unexpected(n, "out-of-place")),
                }
            }
            let Some(summary) = summary else {
                return Err(LogError::Truncated { line: last + 1, reason: "missing summary record".into() });
            };
            if summary.issued != records.len() as u64 {
                return Err(LogError::Truncated {
                    line: last,
                    reason: format!("summary reports {} queries, found {}", summary.issued, records.len()),
                });
            }
            Ok(LogDocument::Run(Box::new(RunLog {
                run_id: header.run_id,
                sut_name: header.sut_name,
                settings: header.settings,
                profile: header.profile,
                records,
                summary,
            })))
        }
        Kind::Results | Kind::Audit => {
            let mut results = Vec::new();
            let mut audit = None;
            let mut end = None;
            for (n, line) in body {
                if end.is_some() {
                    return Err(unexpected(n, "trailing"));
                }
                match (kind, line) {
                    (Kind::Results, Line::Result(r)) => results.push(r),
                    (Kind::Audit, Line::Audit(a)) if audit.is_none() => audit = Some(a),
                    (_, Line::End { count }) => end = Some((n, count)),
                    _ => return Err(unexpected(n, "out-of-place")),
                }
            }
            let Some((n, count)) = end else {
                return Err(LogError::Truncated { line: last + 1, reason: "missing end record".into() });
            };
            if kind == Kind::Results {
                if count != results.len() as u64 {
                    return Err(LogError::Truncated {
                        line: n,
                        reason: format!("end record counts {count} results, found {}", results.len()),
                    });
                }
                Ok(LogDocument::Results(results))
            } else {
                match audit {
                    Some(a) if count == 1 => Ok(LogDocument::Audit(Box::new(a))),
                    _ => Err(LogError::Truncated { line: n, reason: "missing audit record".into() }),
                }
            }
        }
    }
}

pub fn write_log(doc: &LogDocument, path: &Path) -> Result<(), LogError> {
    let io = |source| LogError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(to_log_string(doc).as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)
}

pub fn read_log(path: &Path) -> Result<LogDocument, LogError> {
    let text = fs::read_to_string(path).map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    from_log_str(&text)
}

/// Canonical text with every `wall_`-prefixed key removed, for determinism
/// comparisons.
pub fn strip_wall_fields(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(mut value) => {
                strip_value(&mut value);
                out.push_str(&value.to_string());
            }
            Err(_) => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

fn strip_value(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.starts_with("wall_"));
            map.values_mut().for_each(strip_value);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_value),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{check_validity, tests::server_log};

    #[test]
    fn run_log_round_trips_byte_for_byte() {
        let mut log = server_log(50, 3);
        log.records[7].payload_digests = Some(vec![1, u64::MAX]);
        log.summary.wall_elapsed_ns = 123;
        let text = to_log_string(&log.clone().into());
        let back = from_log_str(&text).unwrap();
        assert_eq!(back, LogDocument::Run(Box::new(log)));
        assert_eq!(to_log_string(&back), text);
        assert!(text.starts_with(r#"{"record":"format","format":"loadgen-log","version":0,"kind":"run"}"#));
    }

    #[test]
    fn results_round_trip() {
        let results = vec![check_validity(&server_log(20, 1)).unwrap()];
        let text = to_log_string(&results.clone().into());
        assert_eq!(from_log_str(&text).unwrap(), LogDocument::Results(results));
        assert!(matches!(
            from_log_str(""),
            Err(LogError::Truncated { line: 1, .. })
        ));
    }

    #[test]
    fn truncation_names_a_line() {
        let text = to_log_string(&server_log(10, 0).into());
        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..lines.len() - 1].join("\n");
        match from_log_str(&cut) {
            Err(LogError::Truncated { line, .. }) => assert_eq!(line, lines.len()),
            other => panic!("expected truncation, got {other:?}"),
        }
        let half = &lines[5][..lines[5].len() / 2];
        let partial = format!("{}\n{half}\n", lines[..5].join("\n"));
        match from_log_str(&partial) {
            Err(LogError::Malformed { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected malformed line 6, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = to_log_string(&server_log(2, 0).into()).replacen("\"version\":0", "\"version\":7", 1);
        assert!(matches!(from_log_str(&text), Err(LogError::UnknownVersion { line: 1, version: 7 })));
    }

    #[test]
    fn wall_fields_are_stripped() {
        let mut a = server_log(5, 0);
        let mut b = a.clone();
        a.summary.wall_elapsed_ns = 1;
        b.summary.wall_elapsed_ns = 2;
        b.summary.wall_started_unix_ms = 99;
        let ta = to_log_string(&a.into());
        let tb = to_log_string(&b.into());
        assert_ne!(ta, tb);
        assert_eq!(strip_wall_fields(&ta), strip_wall_fields(&tb));
    }
}
