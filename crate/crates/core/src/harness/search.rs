//! Multi-run drivers: the five-run server protocol and the searches for the
//! largest valid server rate and multistream stream count.
//!
//! Runs inside a driver are independent, so they are fanned out through
//! [`crate::par::map`]. The probe sequence is fixed (three interior points
//! per round), so sequential and parallel execution give identical answers.

use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::report::{check_validity, RunResult};
use crate::scenario::{Scenario, ValidSettings};
use crate::schedule::derive_seed;

use super::run::{run_performance, RunLog};
use super::sut::{SampleLibrary, SutFactory};
use super::HarnessError;

/// Number of server runs in the official protocol.
pub const OFFICIAL_SERVER_RUNS: u64 = 5;

/// Interior probes per search round.
const PROBES_PER_ROUND: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OfficialServerResult {
    pub runs: Vec<RunLog>,
    pub results: Vec<RunResult>,
    /// The worst of the per-run results.
    pub selected: RunResult,
    /// False if any of the runs is invalid.
    pub valid: bool,
}

/// One performance run followed by the validity check.
pub fn run_and_check(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
) -> Result<(RunLog, RunResult), HarnessError> {
    let mut sut = factory.create();
    let log = run_performance(sut.as_mut(), lib, settings)?;
    let result = check_validity(&log)?;
    Ok((log, result))
}

/// Five server runs with schedule seeds derived from the base seed; the
/// reported result is the minimum.
pub fn run_server_official(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    exec: Execution,
) -> Result<OfficialServerResult, HarnessError> {
    if settings.scenario() != Scenario::Server {
        return Err(HarnessError::WrongScenario("server"));
    }
    let base = settings.settings().schedule_seed;
    let variants = (0..OFFICIAL_SERVER_RUNS)
        .map(|i| settings.with(|s| s.schedule_seed = derive_seed(base, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = par::map(exec, variants, |v| run_and_check(factory, lib, &v));
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut results = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (log, result) = outcome?;
        runs.push(log);
        results.push(result);
    }
    let (selected, valid) = select_official(&results).expect("five runs were made");
    Ok(OfficialServerResult { runs, results, selected, valid })
}

/// Picks the worst metric among `results` and reports whether all of them
/// are valid. `None` for an empty slice.
pub fn select_official(results: &[RunResult]) -> Option<(RunResult, bool)> {
    let worst = results.iter().min_by(|a, b| {
        let ord = a.metric_value.total_cmp(&b.metric_value);
        if a.metric_name.higher_is_better() {
            ord
        } else {
            ord.reverse()
        }
    })?;
    let valid = results.iter().all(|r| r.valid);
    let mut selected = worst.clone();
    selected.valid = valid && selected.valid;
    Some((selected, valid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpsSearch {
    pub lo: f64,
    pub hi: f64,
    pub resolution: f64,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe<T> {
    pub value: T,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome<T> {
    /// Largest tested value whose run was valid.
    pub value: T,
    pub result: RunResult,
    /// Every probe, in the order the rounds were made.
    pub probes: Vec<Probe<T>>,
}

/// Largest valid `target_qps` in `[lo, hi]`, to within `resolution`.
pub fn find_max_qps(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    base: &ValidSettings,
    search: QpsSearch,
) -> Result<SearchOutcome<f64>, HarnessError> {
    if base.scenario() != Scenario::Server {
        return Err(HarnessError::WrongScenario("server"));
    }
    let QpsSearch { lo, hi, resolution, execution } = search;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
        return Err(HarnessError::InvalidSearch(format!("need 0 < lo < hi, got lo {lo}, hi {hi}")));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(HarnessError::InvalidSearch(format!("resolution must be positive, got {resolution}")));
    }
    let probe = |q: f64| -> Result<RunResult, HarnessError> {
        let settings = base.with(|s| s.target_qps = Some(q))?;
        run_and_check(factory, lib, &settings).map(|(_, r)| r)
    };
    k_ary_search(
        lo,
        hi,
        |a, b| b - a <= resolution,
        |a, b| {
            let step = (b - a) / (PROBES_PER_ROUND + 1) as f64;
            (1..=PROBES_PER_ROUND).map(|i| a + step * i as f64).collect()
        },
        probe,
        execution,
    )?
    .ok_or(HarnessError::NoValidRate(lo))
}

/// Largest `N <= max_n` whose multistream run keeps the skipped fraction
/// within the limit.
pub fn find_max_streams(
    factory: &dyn SutFactory,
    lib: &dyn SampleLibrary,
    base: &ValidSettings,
    max_n: u64,
    execution: Execution,
) -> Result<SearchOutcome<u64>, HarnessError> {
    if base.scenario() != Scenario::MultiStream {
        return Err(HarnessError::WrongScenario("multistream"));
    }
    if max_n == 0 {
        return Err(HarnessError::InvalidSearch("max_n must be at least 1".into()));
    }
    let probe = |n: u64| -> Result<RunResult, HarnessError> {
        let settings = base.with(|s| s.samples_per_query = Some(n))?;
        run_and_check(factory, lib, &settings).map(|(_, r)| r)
    };
    k_ary_search(
        1,
        max_n,
        |a, b| b - a <= 1,
        |a, b| {
            let span = b - a;
            let mut points: Vec<u64> = (1..=PROBES_PER_ROUND as u64)
                .map(|i| a + span * i / (PROBES_PER_ROUND as u64 + 1))
                .filter(|&p| p > a && p < b)
                .collect();
            points.dedup();
            points
        },
        probe,
        execution,
    )?
    .ok_or(HarnessError::StreamsInvalidAtOne)
}

/// Searches `[lo, hi]` for the boundary between valid and invalid runs,
/// assuming validity is monotone (valid below, invalid above).
///
/// Returns `Ok(None)` when `lo` itself is invalid.
fn k_ary_search<T, D, P, F>(
    lo: T,
    hi: T,
    done: D,
    points: P,
    probe: F,
    exec: Execution,
) -> Result<Option<SearchOutcome<T>>, HarnessError>
where
    T: Copy + PartialOrd + Send + Sync,
    D: Fn(T, T) -> bool,
    P: Fn(T, T) -> Vec<T>,
    F: Fn(T) -> Result<RunResult, HarnessError> + Sync + Send,
{
    let mut probes = Vec::new();
    let run_round = |values: Vec<T>, probes: &mut Vec<Probe<T>>| -> Result<Vec<(T, RunResult)>, HarnessError> {
        let out = par::map(exec, values.clone(), &probe);
        values
            .into_iter()
            .zip(out)
            .map(|(v, r)| {
                let r = r?;
                probes.push(Probe { value: v, valid: r.valid });
                Ok((v, r))
            })
            .collect()
    };

    let ends = run_round(vec![lo, hi], &mut probes)?;
    let (lo_result, hi_result) = (ends[0].1.clone(), ends[1].1.clone());
    if !lo_result.valid {
        return Ok(None);
    }
    if hi_result.valid {
        return Ok(Some(SearchOutcome { value: hi, result: hi_result, probes }));
    }

    let (mut good, mut good_result, mut bad) = (lo, lo_result, hi);
    while !done(good, bad) {
        let candidates = points(good, bad);
        if candidates.is_empty() {
            break;
        }
        let round = run_round(candidates, &mut probes)?;
        for (v, r) in round {
            if r.valid {
                good = v;
                good_result = r;
            } else {
                bad = v;
                break;
            }
        }
    }
    Ok(Some(SearchOutcome { value: good, result: good_result, probes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::MetricName;
    use crate::time::Nanos;

    fn qps_result(value: f64, valid: bool) -> RunResult {
        RunResult {
            run_id: String::new(),
            task: "t".into(),
            scenario: Scenario::Server,
            metric_name: MetricName::Qps,
            metric_value: value,
            units: "queries/s".into(),
            valid,
            violations: vec![],
            query_count: 1,
            sample_count: 1,
            duration: Nanos::ZERO,
            overtime_fraction: None,
            skipped_fraction: None,
            achieved_qps: None,
            official: false,
        }
    }

    #[test]
    fn official_result_is_the_minimum() {
        let results: Vec<RunResult> = [100.0, 98.0, 99.0, 101.0, 100.0].map(|v| qps_result(v, true)).to_vec();
        let (selected, valid) = select_official(&results).unwrap();
        assert_eq!(selected.metric_value, 98.0);
        assert!(valid);
    }

    #[test]
    fn one_invalid_run_invalidates_the_official_result() {
        let mut results: Vec<RunResult> = [100.0, 98.0, 99.0, 101.0, 100.0].map(|v| qps_result(v, true)).to_vec();
        results[3].valid = false;
        let (selected, valid) = select_official(&results).unwrap();
        assert!(!valid);
        assert!(!selected.valid);
        assert!(select_official(&[]).is_none());
    }

    #[test]
    fn latency_metrics_select_the_largest() {
        let mut a = qps_result(5.0, true);
        a.metric_name = MetricName::P90Latency;
        let mut b = a.clone();
        b.metric_value = 7.0;
        assert_eq!(select_official(&[a, b]).unwrap().0.metric_value, 7.0);
    }

    #[test]
    fn k_ary_search_finds_threshold_in_both_modes() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let probe = |n: u64| Ok(qps_result(n as f64, n <= 37));
            let out = k_ary_search(1u64, 100, |a, b| b - a <= 1, |a, b| {
                let span = b - a;
                (1..=3).map(|i| a + span * i / 4).filter(|&p| p > a && p < b).collect()
            }, probe, exec)
            .unwrap()
            .unwrap();
            assert_eq!(out.value, 37);
            assert!(out.probes.len() < 20);
        }
        let none = k_ary_search(1u64, 10, |a, b| b - a <= 1, |_, _| vec![], |n| Ok(qps_result(n as f64, false)), Execution::Sequential)
            .unwrap();
        assert!(none.is_none());
    }
}
