//! Validity rules, scenario metrics and accuracy thresholds.
//!
//! [`check_validity`] is a pure function of a [`RunLog`]: re-running it on a
//! stored log reproduces the verdict shipped with the run.

pub mod log;
pub mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::RunLog;
use crate::scenario::{BenchmarkProfile, Scenario, TestMode};
use crate::stats;
use crate::time::Nanos;

pub use log::{read_log, write_log, LogDocument, LogError, LOG_FORMAT_VERSION};
pub use summary::{summarize, summarize_json};

/// Largest tolerated fraction of multistream queries that caused a skip.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

/// Single-stream reports this latency percentile.
pub const SINGLE_STREAM_PERCENTILE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    P90Latency,
    MaxStreams,
    Qps,
    SamplesPerSecond,
}

impl MetricName {
    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::SingleStream => MetricName::P90Latency,
            Scenario::MultiStream => MetricName::MaxStreams,
            Scenario::Server => MetricName::Qps,
            Scenario::Offline => MetricName::SamplesPerSecond,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::P90Latency => "p90_latency",
            MetricName::MaxStreams => "max_streams",
            MetricName::Qps => "qps",
            MetricName::SamplesPerSecond => "samples_per_second",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            MetricName::P90Latency => "ms",
            MetricName::MaxStreams => "streams",
            MetricName::Qps => "queries/s",
            MetricName::SamplesPerSecond => "samples/s",
        }
    }

    /// Latency is the only metric where smaller is better.
    pub fn higher_is_better(self) -> bool {
        self != MetricName::P90Latency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Violation {
    pub rule: String,
    pub measured: f64,
    pub limit: f64,
    pub detail: String,
}

/// Verdict and metric for one performance run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunResult {
    pub run_id: String,
    pub task: String,
    pub scenario: Scenario,
    pub metric_name: MetricName,
    pub metric_value: f64,
    pub units: String,
    pub valid: bool,
    pub violations: Vec<Violation>,
    pub query_count: u64,
    pub sample_count: u64,
    #[serde(rename = "duration_ns")]
    pub duration: Nanos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overtime_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_qps: Option<f64>,
    pub official: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidityError {
    #[error("validity rules apply to performance-mode logs only")]
    NotPerformance,
    #[error("truncated log: summary reports {expected} queries, found {found} records")]
    Truncated { expected: u64, found: u64 },
    #[error("truncated log: query {0} has no completion and the run was not aborted")]
    MissingCompletion(u64),
}

/// Applies the run rules to a performance log and computes its metric.
pub fn check_validity(log: &RunLog) -> Result<RunResult, ValidityError> {
    let settings = &log.settings;
    let profile = &log.profile;
    if settings.mode != TestMode::Performance {
        return Err(ValidityError::NotPerformance);
    }
    let found = log.records.len() as u64;
    if found != log.summary.issued {
        return Err(ValidityError::Truncated { expected: log.summary.issued, found });
    }
    let aborted = log.summary.aborted.as_deref();
    if aborted.is_none() {
        if let Some(r) = log.records.iter().find(|r| r.completion_time.is_none()) {
            return Err(ValidityError::MissingCompletion(r.query_id));
        }
    }

    let mut violations = Vec::new();
    if let Some(reason) = aborted {
        let incomplete = log.records.iter().filter(|r| r.completion_time.is_none()).count();
        violations.push(Violation {
            rule: "run_aborted".into(),
            measured: incomplete as f64,
            limit: 0.0,
            detail: reason.to_string(),
        });
    }

    let scenario = settings.scenario;
    let min_queries = settings
        .min_query_count
        .unwrap_or_else(|| profile.min_queries.for_scenario(scenario));
    if found < min_queries {
        violations.push(Violation {
            rule: "min_query_count".into(),
            measured: found as f64,
            limit: min_queries as f64,
            detail: format!("{found} queries issued, at least {min_queries} required"),
        });
    }
    let duration = log.summary.duration;
    let min_duration = settings.min_duration.unwrap_or(crate::scenario::OFFICIAL_MIN_DURATION);
    if duration < min_duration {
        violations.push(Violation {
            rule: "min_duration".into(),
            measured: duration.as_secs_f64(),
            limit: min_duration.as_secs_f64(),
            detail: format!("run lasted {duration}, at least {min_duration} required"),
        });
    }

    let latencies = log.latencies();
    let samples: u64 = log.records.iter().map(|r| r.sample_indices.len() as u64).sum();
    let secs = duration.as_secs_f64();
    let metric_name = MetricName::for_scenario(scenario);
    let mut overtime_fraction = None;
    let mut skipped_fraction = None;
    let mut achieved_qps = None;

    let metric_value = match scenario {
        Scenario::SingleStream => stats::percentile(&latencies, SINGLE_STREAM_PERCENTILE)
            .map(Nanos::as_millis_f64)
            .unwrap_or(0.0),
        Scenario::MultiStream => {
            let with_skips = log.records.iter().filter(|r| r.skipped_intervals > 0).count();
            let fraction = ratio(with_skips as f64, found as f64);
            skipped_fraction = Some(fraction);
            if fraction > MAX_SKIPPED_FRACTION {
                violations.push(Violation {
                    rule: "multistream_skipped_fraction".into(),
                    measured: fraction,
                    limit: MAX_SKIPPED_FRACTION,
                    detail: format!("{with_skips} of {found} queries caused skipped intervals"),
                });
            }
            settings.samples_per_query.unwrap_or(1) as f64
        }
        Scenario::Server => {
            let bound = profile.server_qos_bound;
            let over = stats::overtime_count(&latencies, bound)
                + log.records.iter().filter(|r| r.completion_time.is_none()).count();
            let fraction = ratio(over as f64, found as f64);
            overtime_fraction = Some(fraction);
            achieved_qps = Some(ratio(found as f64, secs));
            if fraction > profile.server_overtime_max {
                violations.push(Violation {
                    rule: "server_overtime_fraction".into(),
                    measured: fraction,
                    limit: profile.server_overtime_max,
                    detail: format!("{over} of {found} queries exceeded {bound}"),
                });
            }
            settings.target_qps.unwrap_or(0.0)
        }
        Scenario::Offline => {
            if samples < profile.offline_min_samples {
                violations.push(Violation {
                    rule: "offline_min_samples".into(),
                    measured: samples as f64,
                    limit: profile.offline_min_samples as f64,
                    detail: format!("{samples} samples processed, at least {} required", profile.offline_min_samples),
                });
            }
            let completed: u64 = log
                .records
                .iter()
                .filter(|r| r.completion_time.is_some())
                .map(|r| r.sample_indices.len() as u64)
                .sum();
            ratio(completed as f64, secs)
        }
    };

    let official = min_duration >= crate::scenario::OFFICIAL_MIN_DURATION
        && min_queries >= profile.min_queries.for_scenario(scenario);
    Ok(RunResult {
        run_id: log.run_id.clone(),
        task: profile.task_name.clone(),
        scenario,
        metric_name,
        metric_value,
        units: metric_name.units().to_string(),
        valid: violations.is_empty(),
        violations,
        query_count: found,
        sample_count: samples,
        duration,
        overtime_fraction,
        skipped_fraction,
        achieved_qps,
        official,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyResult {
    pub measured: f64,
    pub reference: f64,
    pub target_fraction: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Passes iff `measured >= target_fraction * reference`.
pub fn check_accuracy(measured: f64, profile: &BenchmarkProfile) -> AccuracyResult {
    let threshold = profile.accuracy_target_fraction * profile.accuracy_reference;
    AccuracyResult {
        measured,
        reference: profile.accuracy_reference,
        target_fraction: profile.accuracy_target_fraction,
        threshold,
        pass: measured >= threshold,
    }
}

/// Fraction of logged sample digests equal to the reference digest for
/// that index. `None` when nothing was logged.
pub fn digest_accuracy(log: &RunLog) -> Option<f64> {
    let mut total = 0u64;
    let mut correct = 0u64;
    for record in &log.records {
        let Some(digests) = &record.payload_digests else { continue };
        for (index, digest) in record.sample_indices.iter().zip(digests) {
            total += 1;
            if *digest == crate::digest::reference_digest(index.0) {
                correct += 1;
            }
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}
