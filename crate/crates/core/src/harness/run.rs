//! The run loop: drives a SUT through a query plan under scenario rules.
//!
//! Scenario semantics:
//!
//! * single-stream: issue one query, wait for its completion, issue the next
//!   at that instant;
//! * multistream: issue at each grid slot unless the previous query is still
//!   in flight, in which case the slot is skipped and the remaining grid
//!   shifts one interval later (the skip is charged to the in-flight query);
//! * server: issue at the scheduled Poisson times, independent of completions;
//! * offline: issue one batch query, and further batches back to back only if
//!   the minimum duration has not yet elapsed.
//!
//! Worked multistream trace, interval 50 ms, first query taking 120 ms:
//! slot 0 issues q0; slots 50 and 100 find q0 in flight and are skipped
//! (q0 is charged two skips); q1 issues at 150.
//!
//! Completions that fall on the same instant as an issue slot are processed
//! first, so a query that finishes exactly at the next slot does not skip it.

use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::scenario::{
    BenchmarkProfile, ClockMode, Query, SampleIndex, Scenario, TestMode, TestSettings, ValidSettings,
};
use crate::schedule::{PlannedQuery, ScheduleGenerator, SeededRng, StreamLabel};
use crate::time::Nanos;

use super::clock::{Clock, VirtualClock, WallClock};
use super::sut::{Completer, Inbox, RunInfo, SampleLibrary, Sut};
use super::HarnessError;

/// Per-query record. Latency is measured from the actual issue time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: u64,
    #[serde(rename = "scheduled_time_ns")]
    pub scheduled_time: Nanos,
    #[serde(rename = "issue_time_ns")]
    pub issue_time: Nanos,
    #[serde(rename = "completion_time_ns")]
    pub completion_time: Option<Nanos>,
    pub sample_indices: Vec<SampleIndex>,
    pub skipped_intervals: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digests: Option<Vec<u64>>,
}

impl QueryRecord {
    pub fn latency(&self) -> Option<Nanos> {
        self.completion_time.map(|c| c.saturating_sub(self.issue_time))
    }
}

/// End-of-run totals. Keys prefixed `wall_` depend on real time and are
/// excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub issued: u64,
    pub completed: u64,
    pub samples: u64,
    #[serde(rename = "duration_ns")]
    pub duration: Nanos,
    pub skipped_intervals: u64,
    pub aborted: Option<String>,
    pub wall_elapsed_ns: u64,
    pub wall_started_unix_ms: u64,
}

/// Append-only record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run_id: String,
    pub sut_name: String,
    pub settings: TestSettings,
    pub profile: BenchmarkProfile,
    pub records: Vec<QueryRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    pub fn latencies(&self) -> Vec<Nanos> {
        self.records.iter().filter_map(QueryRecord::latency).collect()
    }

    pub fn is_aborted(&self) -> bool {
        self.summary.aborted.is_some()
    }
}

pub fn run_id_for(settings: &TestSettings) -> String {
    let mode = match settings.mode {
        TestMode::Accuracy => "accuracy",
        TestMode::Performance => "performance",
    };
    let mut id = format!(
        "{}-{}-{}-{:016x}-{:016x}",
        settings.profile, settings.scenario, mode, settings.schedule_seed, settings.sample_seed
    );
    if let Some(q) = settings.target_qps {
        id.push_str(&format!("-qps{q}"));
    }
    if let Some(n) = settings.samples_per_query {
        id.push_str(&format!("-n{n}"));
    }
    id
}

/// Timed performance run following the scenario's generation rules, until
/// both the minimum query count and the minimum duration are met.
pub fn run_performance(
    sut: &mut dyn Sut,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
) -> Result<RunLog, HarnessError> {
    if settings.settings().mode != TestMode::Performance {
        return Err(HarnessError::WrongMode { expected: TestMode::Performance });
    }
    let generator = ScheduleGenerator::new(settings)?;
    let plan = Plan::Endless(generator);
    let stop = StopRule::Minimums {
        queries: settings.min_query_count(),
        duration: settings.min_duration(),
        max_queries: settings.settings().max_query_count,
    };
    let loaded = performance_set(lib, settings)?;
    execute(sut, lib, settings, plan, stop, &loaded)
}

/// Accuracy run: every library sample exactly once, in index order, shaped
/// per scenario; every response digest is logged. No duration floor applies.
pub fn run_accuracy(
    sut: &mut dyn Sut,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
) -> Result<RunLog, HarnessError> {
    if settings.settings().mode != TestMode::Accuracy {
        return Err(HarnessError::WrongMode { expected: TestMode::Accuracy });
    }
    let total = lib.total_samples();
    if total == 0 {
        return Err(HarnessError::LibraryTooSmall { needed: 1, available: 0 });
    }
    let per_query = match settings.scenario() {
        Scenario::Offline => total,
        _ => settings.samples_per_query(),
    };
    let indices: Vec<SampleIndex> = (0..total).map(SampleIndex).collect();
    let chunks: Vec<Vec<SampleIndex>> = indices.chunks(per_query as usize).map(<[_]>::to_vec).collect();
    let times = plan_times(settings, chunks.len())?;
    let planned = times
        .into_iter()
        .zip(chunks)
        .map(|(scheduled, samples)| PlannedQuery { scheduled, samples })
        .collect();
    execute(sut, lib, settings, Plan::Fixed(planned), StopRule::Exhaust, &indices)
}

/// Issue times for a fixed plan of `count` queries shaped like the scenario.
pub(crate) fn plan_times(settings: &ValidSettings, count: usize) -> Result<Vec<Nanos>, HarnessError> {
    let raw = settings.settings();
    Ok(match raw.scenario {
        Scenario::Server => {
            let mut rng = SeededRng::new(raw.schedule_seed, StreamLabel::Schedule);
            crate::schedule::gen_poisson_schedule(&mut rng, raw.target_qps.unwrap_or(0.0), count)?
        }
        Scenario::MultiStream => {
            crate::schedule::gen_multistream_schedule(settings.profile().multistream_arrival_interval, count)?
        }
        _ => vec![Nanos::ZERO; count],
    })
}

/// Runs exactly the given queries (no extension for minimums). Used by
/// audits that need to control sample selection.
pub fn run_plan(
    sut: &mut dyn Sut,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    plan: Vec<PlannedQuery>,
) -> Result<RunLog, HarnessError> {
    let mut loaded: Vec<SampleIndex> = plan.iter().flat_map(|q| q.samples.iter().copied()).collect();
    loaded.sort_unstable();
    loaded.dedup();
    if let Some(&max) = loaded.last() {
        if max.0 >= lib.total_samples() {
            return Err(HarnessError::LibraryTooSmall { needed: max.0 + 1, available: lib.total_samples() });
        }
    }
    execute(sut, lib, settings, Plan::Fixed(plan), StopRule::Exhaust, &loaded)
}

fn performance_set(lib: &dyn SampleLibrary, settings: &ValidSettings) -> Result<Vec<SampleIndex>, HarnessError> {
    let count = settings.settings().performance_sample_count;
    if count > lib.total_samples() {
        return Err(HarnessError::LibraryTooSmall { needed: count, available: lib.total_samples() });
    }
    Ok((0..count).map(SampleIndex).collect())
}

enum Plan {
    Endless(ScheduleGenerator),
    Fixed(Vec<PlannedQuery>),
}

impl Plan {
    fn into_source(self) -> Box<dyn Iterator<Item = PlannedQuery>> {
        match self {
            Plan::Endless(mut g) => Box::new(std::iter::from_fn(move || Some(g.next_query()))),
            Plan::Fixed(v) => Box::new(v.into_iter()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum StopRule {
    Minimums { queries: u64, duration: Nanos, max_queries: Option<u64> },
    Exhaust,
}

enum Pumped {
    Progress,
    Deadline,
}

struct Driver<'a> {
    scenario: Scenario,
    sut: &'a mut dyn Sut,
    clock: Arc<dyn Clock>,
    virtual_clock: Option<Arc<VirtualClock>>,
    inbox: Arc<Inbox>,
    source: Box<dyn Iterator<Item = PlannedQuery>>,
    pending: Option<PlannedQuery>,
    stop: StopRule,
    interval: Nanos,
    watchdog: Nanos,
    log_rng: SeededRng,
    log_rate: f64,
    records: Vec<QueryRecord>,
    in_flight: u64,
    first_incomplete: usize,
    grid_shift: u64,
    skipped: u64,
    issuance_over: bool,
    aborted: Option<String>,
}

fn execute(
    sut: &mut dyn Sut,
    lib: &dyn SampleLibrary,
    settings: &ValidSettings,
    plan: Plan,
    stop: StopRule,
    loaded: &[SampleIndex],
) -> Result<RunLog, HarnessError> {
    let raw = settings.settings();
    if raw.clock == ClockMode::Virtual && !sut.supports_virtual_clock() {
        return Err(HarnessError::VirtualClockUnsupported(sut.name().to_string()));
    }

    // Untimed: sample loading happens before the clock starts.
    lib.load_samples(loaded);

    let wall_started = Instant::now();
    let wall_started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);

    let (clock, virtual_clock): (Arc<dyn Clock>, Option<Arc<VirtualClock>>) = match raw.clock {
        ClockMode::Virtual => {
            let v = Arc::new(VirtualClock::new());
            (v.clone(), Some(v))
        }
        ClockMode::Wall => (Arc::new(WallClock::start()), None),
    };
    let inbox = Arc::new(Inbox::default());
    let info = RunInfo {
        scenario: raw.scenario,
        mode: raw.mode,
        samples_per_query: settings.samples_per_query(),
    };
    sut.start_run(&info, Completer::new(inbox.clone(), clock.clone()));

    let log_rate = match raw.mode {
        TestMode::Accuracy => 1.0,
        TestMode::Performance => raw.accuracy_log_sampling_rate,
    };
    let mut driver = Driver {
        scenario: raw.scenario,
        sut,
        clock,
        virtual_clock,
        inbox,
        source: plan.into_source(),
        pending: None,
        stop,
        interval: settings.profile().multistream_arrival_interval,
        watchdog: settings.watchdog(),
        log_rng: SeededRng::new(raw.sample_seed, StreamLabel::AccuracyLog),
        log_rate,
        records: Vec::new(),
        in_flight: 0,
        first_incomplete: 0,
        grid_shift: 0,
        skipped: 0,
        issuance_over: false,
        aborted: None,
    };
    driver.run_loop();
    let Driver { sut, records, skipped, aborted, clock, .. } = driver;
    sut.end_run();
    lib.unload_samples(loaded);

    let completed = records.iter().filter(|r| r.completion_time.is_some()).count() as u64;
    let duration = records
        .iter()
        .filter_map(|r| r.completion_time)
        .max()
        .unwrap_or(Nanos::ZERO)
        .max(if aborted.is_some() { clock.now() } else { Nanos::ZERO });
    let summary = RunSummary {
        issued: records.len() as u64,
        completed,
        samples: records.iter().map(|r| r.sample_indices.len() as u64).sum(),
        duration,
        skipped_intervals: skipped,
        aborted,
        wall_elapsed_ns: Nanos::from(wall_started.elapsed()).0,
        wall_started_unix_ms,
    };
    Ok(RunLog {
        run_id: run_id_for(raw),
        sut_name: sut.name().to_string(),
        settings: raw.clone(),
        profile: settings.profile().clone(),
        records,
        summary,
    })
}

impl Driver<'_> {
    fn closed_loop(&self) -> bool {
        matches!(self.scenario, Scenario::SingleStream | Scenario::Offline)
    }

    /// Whether another query should be issued, judged at time `now`.
    fn wants_more(&self, now: Nanos) -> bool {
        let issued = self.records.len() as u64;
        match self.stop {
            StopRule::Exhaust => true,
            StopRule::Minimums { queries, duration, max_queries } => {
                if max_queries.is_some_and(|m| issued >= m) {
                    return false;
                }
                if issued < queries {
                    return true;
                }
                // Open loop: keep going until a query has been issued at or
                // past the floor. Closed loop: until the clock has reached it.
                let reference = if self.closed_loop() {
                    now
                } else {
                    self.records.last().map_or(Nanos::ZERO, |r| r.issue_time)
                };
                reference < duration
            }
        }
    }

    /// Makes sure `pending` holds the next query if issuance continues.
    fn refill(&mut self) {
        if self.pending.is_some() || self.issuance_over {
            return;
        }
        let now = self.clock.now();
        if self.closed_loop() && self.in_flight > 0 {
            return;
        }
        if self.wants_more(now) {
            self.pending = self.source.next();
        }
        if self.pending.is_none() {
            self.issuance_over = true;
            self.sut.flush();
        }
    }

    fn next_issue_time(&self) -> Option<Nanos> {
        let pending = self.pending.as_ref()?;
        match self.scenario {
            Scenario::SingleStream | Scenario::Offline => {
                (self.in_flight == 0).then(|| self.clock.now())
            }
            Scenario::Server => Some(pending.scheduled),
            Scenario::MultiStream => {
                Some(pending.scheduled + self.interval.saturating_mul(self.grid_shift))
            }
        }
    }

    fn watchdog_deadline(&self) -> Option<Nanos> {
        (self.in_flight > 0)
            .then(|| self.records[self.first_incomplete].issue_time.saturating_add(self.watchdog))
    }

    fn run_loop(&mut self) {
        loop {
            self.absorb();
            if self.aborted.is_some() {
                return;
            }
            self.refill();
            let next_issue = self.next_issue_time();
            if next_issue.is_none() && self.in_flight == 0 {
                return;
            }
            let now = self.clock.now();
            if let Some(deadline) = self.watchdog_deadline() {
                if now >= deadline {
                    let q = &self.records[self.first_incomplete];
                    self.aborted = Some(format!(
                        "watchdog: query {} not completed within {} of issue",
                        q.query_id, self.watchdog
                    ));
                    return;
                }
            }
            match next_issue {
                Some(t) if t <= now => {
                    self.issue_slot(t);
                    continue;
                }
                _ => {}
            }
            let deadline = match (next_issue, self.watchdog_deadline()) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            match self.pump(deadline) {
                Ok(Pumped::Progress | Pumped::Deadline) => {}
                Err(reason) => {
                    self.aborted = Some(reason);
                    return;
                }
            }
        }
    }

    /// Waits for SUT progress or until `deadline`.
    fn pump(&mut self, deadline: Option<Nanos>) -> Result<Pumped, String> {
        if let Some(vc) = &self.virtual_clock {
            let event = self.sut.next_event_time();
            return match (event, deadline) {
                (Some(te), Some(d)) if te > d => {
                    vc.advance_to(d);
                    Ok(Pumped::Deadline)
                }
                (Some(te), _) => {
                    vc.advance_to(te);
                    self.sut.advance_to(te);
                    Ok(Pumped::Progress)
                }
                (None, Some(d)) => {
                    vc.advance_to(d);
                    Ok(Pumped::Deadline)
                }
                (None, None) => Err("SUT has no pending events but queries are in flight".into()),
            };
        }
        let now = self.clock.now();
        match deadline {
            Some(d) if d > now => {
                let left = Duration::from(d - now);
                if left > Duration::from_micros(200) {
                    self.inbox.wait(left - Duration::from_micros(200));
                } else {
                    self.clock.wait_until(d);
                }
                Ok(Pumped::Progress)
            }
            Some(_) => Ok(Pumped::Deadline),
            None => {
                self.inbox.wait(Duration::from(self.watchdog));
                Ok(Pumped::Progress)
            }
        }
    }

    fn issue_slot(&mut self, slot: Nanos) {
        if self.scenario == Scenario::MultiStream && self.in_flight > 0 {
            let last = self.records.last_mut().expect("in-flight query has a record");
            last.skipped_intervals += 1;
            self.grid_shift += 1;
            self.skipped += 1;
            return;
        }
        let planned = self.pending.take().expect("issue_slot called with a pending query");
        let query_id = self.records.len() as u64;
        let log_digest = self.log_rate >= 1.0
            || (self.log_rate > 0.0 && self.log_rng.next_open_unit() <= self.log_rate);
        let issue_time = match self.clock.mode() {
            ClockMode::Virtual => slot,
            ClockMode::Wall => self.clock.now(),
        };
        let scheduled_time = match self.scenario {
            Scenario::Server | Scenario::MultiStream => slot,
            Scenario::SingleStream | Scenario::Offline => issue_time,
        };
        self.records.push(QueryRecord {
            query_id,
            scheduled_time,
            issue_time,
            completion_time: None,
            sample_indices: planned.samples.clone(),
            skipped_intervals: 0,
            payload_digests: log_digest.then(Vec::new),
        });
        self.in_flight += 1;
        self.sut.issue_query(Query { query_id, sample_indices: planned.samples, scheduled_time });
    }

    fn absorb(&mut self) {
        for response in self.inbox.drain() {
            let Some(record) = usize::try_from(response.query_id)
                .ok()
                .and_then(|i| self.records.get_mut(i))
            else {
                self.aborted = Some(format!("completion for unknown query_id {}", response.query_id));
                return;
            };
            if record.completion_time.is_some() {
                self.aborted = Some(format!("duplicate completion for query_id {}", response.query_id));
                return;
            }
            record.completion_time = Some(response.completion_time.max(record.issue_time));
            if let Some(slot) = record.payload_digests.as_mut() {
                *slot = response.payload_digests;
            }
            self.in_flight -= 1;
        }
        while self
            .records
            .get(self.first_incomplete)
            .is_some_and(|r| r.completion_time.is_some())
        {
            self.first_incomplete += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::InMemoryLibrary;
    use crate::report::check_validity;
    use crate::scenario::{validate_settings, ProfileSet};
    use crate::sim::{ScriptedSut, SimConfig, VirtualSimSut};

    fn settings(scenario: Scenario, edit: impl FnOnce(&mut TestSettings)) -> ValidSettings {
        let mut s = TestSettings::new(scenario, "image-classification-heavy");
        edit(&mut s);
        validate_settings(&s, &ProfileSet::builtin()).unwrap()
    }

    fn constant(ms: u64) -> ScriptedSut {
        ScriptedSut::new(vec![Nanos::from_millis(ms)])
    }

    #[test]
    fn single_stream_constant_service() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::SingleStream, |_| {});
        let log = run_performance(&mut constant(5), &lib, &s).unwrap();
        // 60 s at 5 ms per query.
        assert_eq!(log.records.len(), 12_000);
        assert_eq!(log.summary.duration, Nanos::from_secs(60));
        let r = check_validity(&log).unwrap();
        assert!(r.valid, "{:?}", r.violations);
        assert_eq!(r.metric_value, 5.0);
        // Closed loop: each issue happens at the previous completion.
        for w in log.records.windows(2) {
            assert_eq!(w[1].issue_time, w[0].completion_time.unwrap());
        }
    }

    #[test]
    fn multistream_hand_trace() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::MultiStream, |s| {
            s.samples_per_query = Some(1);
            s.min_query_count = Some(3);
            s.min_duration = Some(Nanos::ZERO);
        });
        let mut sut = ScriptedSut::new(vec![Nanos::from_millis(120), Nanos::from_millis(10)]);
        let log = run_performance(&mut sut, &lib, &s).unwrap();
        assert_eq!(log.records[0].skipped_intervals, 2);
        assert_eq!(log.records[1].issue_time, Nanos::from_millis(150));
        assert_eq!(log.records[2].issue_time, Nanos::from_millis(200));
        assert_eq!(log.summary.skipped_intervals, 2);
    }

    #[test]
    fn completion_on_the_slot_does_not_skip() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::MultiStream, |s| {
            s.samples_per_query = Some(1);
            s.min_query_count = Some(10);
            s.min_duration = Some(Nanos::ZERO);
        });
        let log = run_performance(&mut constant(50), &lib, &s).unwrap();
        assert_eq!(log.summary.skipped_intervals, 0);
        assert_eq!(log.records[9].issue_time, Nanos::from_millis(450));
    }

    #[test]
    fn offline_throughput_matches_service_rate() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Offline, |s| s.min_duration = Some(Nanos::ZERO));
        let cfg = SimConfig { max_batch: 24_576, ..SimConfig::default() };
        let log = run_performance(&mut VirtualSimSut::new(cfg).unwrap(), &lib, &s).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.summary.duration, Nanos::from_millis(24_576));
        assert_eq!(check_validity(&log).unwrap().metric_value, 1_000.0);
    }

    #[test]
    fn offline_repeats_batches_until_min_duration() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Offline, |_| {});
        let cfg = SimConfig { max_batch: 24_576, ..SimConfig::default() };
        let log = run_performance(&mut VirtualSimSut::new(cfg).unwrap(), &lib, &s).unwrap();
        assert_eq!(log.records.len(), 3);
        assert!(check_validity(&log).unwrap().valid);
    }

    #[test]
    fn server_issue_times_are_the_schedule() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(50.0);
            s.min_query_count = Some(500);
            s.min_duration = Some(Nanos::ZERO);
        });
        // Slow SUT: many queries in flight at once.
        let log = run_performance(&mut constant(100), &lib, &s).unwrap();
        let schedule = crate::schedule::build_schedule(&s).unwrap();
        let issued: Vec<Nanos> = log.records.iter().map(|r| r.issue_time).collect();
        assert_eq!(issued, schedule.issue_times);
        assert!(log.records.iter().all(|r| r.scheduled_time == r.issue_time));
    }

    #[test]
    fn accuracy_run_covers_library_once() {
        let lib = InMemoryLibrary::new("lib", 100);
        let s = settings(Scenario::SingleStream, |s| s.mode = TestMode::Accuracy);
        let log = run_accuracy(&mut constant(1), &lib, &s).unwrap();
        assert_eq!(log.records.len(), 100);
        for (i, r) in log.records.iter().enumerate() {
            assert_eq!(r.sample_indices, vec![SampleIndex(i as u64)]);
            assert_eq!(r.payload_digests, Some(vec![crate::digest::reference_digest(i as u64)]));
        }
        assert_eq!(lib.loaded_count(), 0);
        assert_eq!(
            run_performance(&mut constant(1), &lib, &s),
            Err(HarnessError::WrongMode { expected: TestMode::Performance })
        );
    }

    #[test]
    fn multistream_accuracy_chunks_by_stream_count() {
        let lib = InMemoryLibrary::new("lib", 10);
        let s = settings(Scenario::MultiStream, |s| {
            s.mode = TestMode::Accuracy;
            s.samples_per_query = Some(4);
        });
        let log = run_accuracy(&mut constant(1), &lib, &s).unwrap();
        let sizes: Vec<usize> = log.records.iter().map(|r| r.sample_indices.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    struct Silent;
    impl Sut for Silent {
        fn name(&self) -> &str {
            "silent"
        }
        fn start_run(&mut self, _: &RunInfo, _: Completer) {}
        fn issue_query(&mut self, _: Query) {}
        fn supports_virtual_clock(&self) -> bool {
            true
        }
    }

    struct Misaddressed(Option<Completer>);
    impl Sut for Misaddressed {
        fn name(&self) -> &str {
            "misaddressed"
        }
        fn start_run(&mut self, _: &RunInfo, c: Completer) {
            self.0 = Some(c);
        }
        fn issue_query(&mut self, q: Query) {
            self.0.as_ref().unwrap().complete(q.query_id + 1000, vec![]);
        }
        fn supports_virtual_clock(&self) -> bool {
            true
        }
    }

    #[test]
    fn watchdog_aborts_a_silent_sut() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(10.0);
            s.min_query_count = Some(5);
            s.min_duration = Some(Nanos::ZERO);
        });
        let log = run_performance(&mut Silent, &lib, &s).unwrap();
        assert!(log.summary.aborted.as_deref().unwrap().starts_with("watchdog"));
        assert_eq!(log.summary.duration, log.records[0].issue_time + Nanos::from_millis(150));
        let r = check_validity(&log).unwrap();
        assert!(!r.valid);
    }

    #[test]
    fn unknown_query_id_aborts() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::SingleStream, |s| {
            s.min_query_count = Some(5);
            s.min_duration = Some(Nanos::ZERO);
        });
        let log = run_performance(&mut Misaddressed(None), &lib, &s).unwrap();
        assert_eq!(log.summary.aborted.as_deref(), Some("completion for unknown query_id 1000"));
    }

    #[test]
    fn max_query_count_caps_zero_latency_runs() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::SingleStream, |s| s.max_query_count = Some(5_000));
        let log = run_performance(&mut constant(0), &lib, &s).unwrap();
        assert_eq!(log.records.len(), 5_000);
        assert!(!check_validity(&log).unwrap().valid);
    }

    #[test]
    fn library_must_hold_the_performance_set() {
        let lib = InMemoryLibrary::new("lib", 10);
        let s = settings(Scenario::SingleStream, |_| {});
        assert_eq!(
            run_performance(&mut constant(1), &lib, &s),
            Err(HarnessError::LibraryTooSmall { needed: 1024, available: 10 })
        );
    }

    #[test]
    fn virtual_runs_are_deterministic() {
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(400.0);
            s.min_duration = Some(Nanos::from_secs(1));
            s.min_query_count = Some(1_000);
            s.accuracy_log_sampling_rate = 0.1;
        });
        let cfg = SimConfig {
            jitter: crate::sim::Jitter::Exponential { mean: Nanos::from_micros(300) },
            max_batch: 4,
            ..SimConfig::default()
        };
        let a = run_performance(&mut VirtualSimSut::new(cfg.clone()).unwrap(), &lib, &s).unwrap();
        let b = run_performance(&mut VirtualSimSut::new(cfg).unwrap(), &lib, &s).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.iter().any(|r| r.payload_digests.is_some()));
        assert!(a.records.iter().any(|r| r.payload_digests.is_none()));
    }
}
