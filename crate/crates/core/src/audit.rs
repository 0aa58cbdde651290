//! Compliance experiments run against any SUT: accuracy verification,
//! caching detection and alternate seeds.
//!
//! Audit runs ignore the minimum duration; they run exactly the planned
//! number of queries so paired phases stay comparable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::run::plan_times;
use crate::harness::search::run_and_check;
use crate::harness::{run_performance, run_plan, HarnessError, RunLog, SampleLibrary, SutFactory};
use crate::par::{self, Execution};
use crate::report::RunResult;
use crate::scenario::{SampleIndex, TestMode, ValidSettings};
use crate::schedule::{PlannedQuery, SeededRng, StreamLabel};
use crate::time::Nanos;

/// Duplicate-phase speedup above which the caching audit fails.
pub const DEFAULT_CACHING_THRESHOLD: f64 = 0.10;

/// Largest tolerated metric regression of an alternate-seed run.
pub const DEFAULT_SEED_TOLERANCE: f64 = 0.05;

/// Duplicate-phase samples are drawn from this fraction of the demand.
const DUPLICATE_POOL_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evidence {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
}

impl Evidence {
    fn new(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditReport {
    pub test_name: String,
    pub verdict: Verdict,
    pub evidence: Vec<Evidence>,
    /// Run ids of the logs the verdict is based on.
    pub logs: Vec<String>,
}

/// A report together with the runs behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub runs: Vec<RunLog>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("accuracy verification needs an accuracy-mode reference log")]
    MissingReference,
    #[error("reference log `{0}` was not produced in accuracy mode")]
    ReferenceNotAccuracy(String),
    #[error("sampling rate must lie in [0, 1], got {0}")]
    BadSamplingRate(f64),
    #[error("threshold must be a nonnegative finite number, got {0}")]
    BadThreshold(f64),
    #[error("alternate-seed audit needs at least one seed")]
    EmptySeedList,
    #[error("library too small for the unique phase: need {needed} samples, have {available}")]
    LibraryTooSmall { needed: u64, available: u64 },
}

fn performance(settings: &ValidSettings) -> Result<ValidSettings, AuditError> {
    Ok(settings.with(|s| s.mode = TestMode::Performance).map_err(HarnessError::from)?)
}

fn tag(mut log: RunLog, suffix: &str) -> RunLog {
    log.run_id = format!("{}-{suffix}", log.run_id);
    log
}

/// Performance run with sampled digest logging; every logged digest must
/// equal the reference digest for the same sample index.
pub fn audit_accuracy_verification(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    reference: Option<&RunLog>,
    sampling_rate: f64,
) -> Result<AuditOutcome, AuditError> {
    let reference = reference.ok_or(AuditError::MissingReference)?;
    if reference.settings.mode != TestMode::Accuracy {
        return Err(AuditError::ReferenceNotAccuracy(reference.run_id.clone()));
    }
    if !(0.0..=1.0).contains(&sampling_rate) {
        return Err(AuditError::BadSamplingRate(sampling_rate));
    }
    let mut expected: HashMap<SampleIndex, u64> = HashMap::new();
    for r in &reference.records {
        if let Some(digests) = &r.payload_digests {
            expected.extend(r.sample_indices.iter().copied().zip(digests.iter().copied()));
        }
    }

    let run_settings = performance(settings)?
        .with(|s| s.accuracy_log_sampling_rate = sampling_rate)
        .map_err(HarnessError::from)?;
    let mut sut = factory.create();
    let log = tag(run_performance(sut.as_mut(), lib, &run_settings)?, "accuracy-verification");

    let mut checked = 0u64;
    let mut mismatches = 0u64;
    for r in &log.records {
        let Some(digests) = &r.payload_digests else { continue };
        for (index, digest) in r.sample_indices.iter().zip(digests) {
            checked += 1;
            if expected.get(index) != Some(digest) {
                mismatches += 1;
            }
        }
        // A response with the wrong number of digests cannot be verified.
        if digests.len() != r.sample_indices.len() {
            mismatches += 1;
        }
    }
    let verdict = if mismatches > 0 {
        Verdict::Fail
    } else if checked == 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    let report = AuditReport {
        test_name: "accuracy_verification".into(),
        verdict,
        evidence: vec![
            Evidence::new("digests_checked", checked as f64, 1.0),
            Evidence::new("digest_mismatches", mismatches as f64, 0.0),
        ],
        logs: vec![reference.run_id.clone(), log.run_id.clone()],
    };
    Ok(AuditOutcome { report, runs: vec![log] })
}

/// Samples per unit of latency over a run: completed samples divided by the
/// summed query latencies, in samples per second.
fn latency_throughput(log: &RunLog) -> f64 {
    let mut samples = 0u64;
    let mut busy = Nanos::ZERO;
    for r in &log.records {
        if let Some(l) = r.latency() {
            samples += r.sample_indices.len() as u64;
            busy += l;
        }
    }
    if busy == Nanos::ZERO {
        return f64::INFINITY;
    }
    samples as f64 / busy.as_secs_f64()
}

/// Fisher-Yates prefix: `k` distinct indices from `[0, n)`.
fn distinct_indices(rng: &mut SeededRng, n: u64, k: u64) -> Vec<SampleIndex> {
    let mut swapped: HashMap<u64, u64> = HashMap::new();
    (0..k)
        .map(|i| {
            let j = i + rng.uniform_below(n - i);
            let at_j = *swapped.get(&j).unwrap_or(&j);
            let at_i = *swapped.get(&i).unwrap_or(&i);
            swapped.insert(j, at_i);
            SampleIndex(at_j)
        })
        .collect()
}

/// Paired runs with unique and duplicate-heavy sample indices; fails if
/// the duplicate phase is more than `threshold` faster.
pub fn audit_caching(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    threshold: f64,
) -> Result<AuditOutcome, AuditError> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(AuditError::BadThreshold(threshold));
    }
    let settings = performance(settings)?;
    let queries = settings.min_query_count();
    let per_query = settings.samples_per_query();
    let demand = queries.saturating_mul(per_query);
    let available = lib.total_samples();
    if demand > available {
        return Err(AuditError::LibraryTooSmall { needed: demand, available });
    }
    let times = plan_times(&settings, queries as usize)?;
    let mut rng = SeededRng::new(settings.settings().sample_seed, StreamLabel::Samples);
    let unique = distinct_indices(&mut rng, available, demand);
    let pool_size = ((demand as f64 * DUPLICATE_POOL_FRACTION).ceil() as u64).max(1);
    let pool = distinct_indices(&mut rng, available, pool_size);
    let duplicate: Vec<SampleIndex> = (0..demand).map(|_| pool[rng.uniform_below(pool_size) as usize]).collect();

    let plan = |indices: &[SampleIndex]| -> Vec<PlannedQuery> {
        times
            .iter()
            .zip(indices.chunks(per_query as usize))
            .map(|(&scheduled, samples)| PlannedQuery { scheduled, samples: samples.to_vec() })
            .collect()
    };
    let run = |indices: &[SampleIndex], suffix: &str| -> Result<RunLog, AuditError> {
        let mut sut = factory.create();
        Ok(tag(run_plan(sut.as_mut(), lib, &settings, plan(indices))?, suffix))
    };
    let unique_log = run(&unique, "caching-unique")?;
    let duplicate_log = run(&duplicate, "caching-duplicate")?;

    let unique_speed = latency_throughput(&unique_log);
    let duplicate_speed = latency_throughput(&duplicate_log);
    let ratio = duplicate_speed / unique_speed;
    let limit = 1.0 + threshold;
    let aborted = unique_log.is_aborted() || duplicate_log.is_aborted();
    let verdict = if aborted || !ratio.is_finite() {
        Verdict::Inconclusive
    } else if ratio > limit {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    let report = AuditReport {
        test_name: "caching".into(),
        verdict,
        evidence: vec![
            Evidence::new("unique_samples_per_second", unique_speed, 0.0),
            Evidence::new("duplicate_samples_per_second", duplicate_speed, 0.0),
            Evidence::new("duplicate_to_unique_ratio", ratio, limit),
            Evidence::new("duplicate_pool_size", pool_size as f64, demand as f64),
        ],
        logs: vec![unique_log.run_id.clone(), duplicate_log.run_id.clone()],
    };
    Ok(AuditOutcome { report, runs: vec![unique_log, duplicate_log] })
}

fn regressed(official: &RunResult, alternate: &RunResult, tolerance: f64) -> bool {
    if official.metric_name.higher_is_better() {
        alternate.metric_value < official.metric_value * (1.0 - tolerance)
    } else {
        alternate.metric_value > official.metric_value * (1.0 + tolerance)
    }
}

/// Re-runs with each alternate schedule seed; fails if any alternate run is
/// invalid or its metric is more than `tolerance` worse than the official one.
pub fn audit_alternate_seed(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    alternate_seeds: &[u64],
    tolerance: f64,
    exec: Execution,
) -> Result<AuditOutcome, AuditError> {
    if alternate_seeds.is_empty() {
        return Err(AuditError::EmptySeedList);
    }
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(AuditError::BadThreshold(tolerance));
    }
    let settings = performance(settings)?;
    let mut variants = vec![settings.clone()];
    for &seed in alternate_seeds {
        variants.push(settings.with(|s| s.schedule_seed = seed).map_err(HarnessError::from)?);
    }
    let outcomes = par::map(exec, variants, |v| run_and_check(factory, lib, &v));
    let mut runs = Vec::new();
    let mut results = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let (log, result) = outcome?;
        let suffix = if i == 0 { "official".to_string() } else { format!("alternate-{i}") };
        runs.push(tag(log, &suffix));
        results.push(result);
    }

    let official = &results[0];
    let mut evidence = vec![
        Evidence::new("official_valid", f64::from(u8::from(official.valid)), 1.0),
        Evidence::new(format!("official_{}", official.metric_name.as_str()), official.metric_value, 0.0),
    ];
    let mut failed = false;
    for (seed, alt) in alternate_seeds.iter().zip(&results[1..]) {
        let limit = if official.metric_name.higher_is_better() {
            official.metric_value * (1.0 - tolerance)
        } else {
            official.metric_value * (1.0 + tolerance)
        };
        evidence.push(Evidence::new(format!("seed_{seed:#x}_valid"), f64::from(u8::from(alt.valid)), 1.0));
        evidence.push(Evidence::new(format!("seed_{seed:#x}_{}", alt.metric_name.as_str()), alt.metric_value, limit));
        if !alt.valid || regressed(official, alt, tolerance) {
            failed = true;
        }
    }
    let verdict = if !official.valid {
        Verdict::Inconclusive
    } else if failed {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    let report = AuditReport {
        test_name: "alternate_seed".into(),
        verdict,
        evidence,
        logs: runs.iter().map(|r| r.run_id.clone()).collect(),
    };
    Ok(AuditOutcome { report, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_accuracy, InMemoryLibrary};
    use crate::scenario::Scenario;
    use crate::scenario::{validate_settings, ClockMode, ProfileSet, TestSettings};
    use crate::sim::{sim_factory, SimConfig};

    fn settings(scenario: Scenario, edit: impl FnOnce(&mut TestSettings)) -> ValidSettings {
        let mut s = TestSettings::new(scenario, "image-classification-heavy");
        s.min_duration = Some(Nanos::ZERO);
        edit(&mut s);
        validate_settings(&s, &ProfileSet::builtin()).unwrap()
    }

    #[test]
    fn distinct_indices_are_distinct() {
        let mut rng = SeededRng::new(5, StreamLabel::Samples);
        let mut v: Vec<u64> = distinct_indices(&mut rng, 1000, 1000).into_iter().map(|s| s.0).collect();
        v.sort_unstable();
        assert_eq!(v, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn accuracy_verification_needs_a_reference() {
        let f = sim_factory(SimConfig::default(), ClockMode::Virtual).unwrap();
        let lib = InMemoryLibrary::new("lib", 100);
        let s = settings(Scenario::SingleStream, |s| s.min_query_count = Some(10));
        assert_eq!(
            audit_accuracy_verification(&f, &lib, &s, None, 0.5),
            Err(AuditError::MissingReference)
        );
    }

    #[test]
    fn zero_sampling_rate_is_inconclusive() {
        let f = sim_factory(SimConfig::default(), ClockMode::Virtual).unwrap();
        let lib = InMemoryLibrary::new("lib", 100);
        let acc = settings(Scenario::SingleStream, |s| s.mode = TestMode::Accuracy);
        let reference = run_accuracy(f().as_mut(), &lib, &acc).unwrap();
        let s = settings(Scenario::SingleStream, |s| {
            s.min_query_count = Some(200);
            s.performance_sample_count = 100;
        });
        let out = audit_accuracy_verification(&f, &lib, &s, Some(&reference), 0.0).unwrap();
        assert_eq!(out.report.verdict, Verdict::Inconclusive);
        let out = audit_accuracy_verification(&f, &lib, &s, Some(&reference), 0.5).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
    }

    #[test]
    fn slower_duplicates_pass_the_caching_audit() {
        // A cache hit that is slower than computing still passes.
        let cfg = SimConfig {
            caching_enabled: true,
            cache_hit_latency: Nanos::from_millis(3),
            ..SimConfig::default()
        };
        let f = sim_factory(cfg, ClockMode::Virtual).unwrap();
        let lib = InMemoryLibrary::new("lib", 4_096);
        let s = settings(Scenario::SingleStream, |s| s.min_query_count = Some(1_024));
        let out = audit_caching(&f, &lib, &s, DEFAULT_CACHING_THRESHOLD).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
        assert!(out.report.evidence[2].value < 1.0);
    }

    #[test]
    fn caching_audit_rejects_small_libraries() {
        let f = sim_factory(SimConfig::default(), ClockMode::Virtual).unwrap();
        let lib = InMemoryLibrary::new("lib", 100);
        let s = settings(Scenario::SingleStream, |s| s.min_query_count = Some(1_024));
        assert_eq!(
            audit_caching(&f, &lib, &s, 0.1),
            Err(AuditError::LibraryTooSmall { needed: 1_024, available: 100 })
        );
    }

    #[test]
    fn alternate_seed_edge_cases() {
        let f = sim_factory(SimConfig::default(), ClockMode::Virtual).unwrap();
        let lib = InMemoryLibrary::new("lib", 1_024);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(100.0);
            s.min_query_count = Some(2_000);
        });
        assert_eq!(
            audit_alternate_seed(&f, &lib, &s, &[], 0.05, Execution::Sequential),
            Err(AuditError::EmptySeedList)
        );
        let same = s.settings().schedule_seed;
        let out = audit_alternate_seed(&f, &lib, &s, &[same], 0.05, Execution::Sequential).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass);
        assert_eq!(out.runs[0].records, out.runs[1].records);
    }
}
