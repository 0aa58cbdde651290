//! Discrete-event simulated SUT.
//!
//! Queries are split into samples on arrival and queued FIFO. Whenever an
//! executor is free it takes whatever is queued, up to `max_batch` samples,
//! and is busy for
//!
//! ```text
//! fixed_overhead + base_latency_per_sample * (1 + batch_efficiency * (b - 1)) + jitter
//! ```
//!
//! A query completes when its last sample finishes. With caching enabled,
//! samples seen before cost `cache_hit_latency` each instead of going
//! through the batch model, which breaks the no-caching rule on purpose.
//!
//! Response digests are decided when the query arrives, from their own
//! seeded stream, so they do not depend on timing.

use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::cmp::Reverse;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{reference_digest, wrong_digest};
use crate::harness::{Completer, RunInfo, Sut};
use crate::scenario::{ClockMode, Query, TestMode};
use crate::schedule::{SeededRng, StreamLabel};
use crate::time::{millis, Nanos};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("batch size {batch} outside 1..={max_batch}")]
    BatchSize { batch: u64, max_batch: u64 },
    #[error("malformed simulator config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueDiscipline {
    #[default]
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Jitter {
    #[default]
    None,
    Exponential {
        #[serde(with = "millis")]
        mean: Nanos,
    },
}

/// Deliberately dishonest behaviours, used to exercise the audits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Adversary {
    #[default]
    None,
    /// Returns wrong results at `error_rate` in performance mode only.
    DegradeInPerformance { error_rate: f64 },
    /// Runs at full speed only when the first query arrives at
    /// `official_first_issue`; otherwise every service time is multiplied
    /// by `slowdown`.
    ScheduleKeyed {
        #[serde(with = "millis")]
        official_first_issue: Nanos,
        slowdown: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    #[serde(with = "millis")]
    pub base_latency_per_sample: Nanos,
    #[serde(with = "millis")]
    pub fixed_overhead: Nanos,
    pub max_batch: u64,
    pub batch_efficiency: f64,
    pub concurrency: u64,
    pub queue_discipline: QueueDiscipline,
    pub jitter: Jitter,
    pub caching_enabled: bool,
    #[serde(with = "millis")]
    pub cache_hit_latency: Nanos,
    pub accuracy_error_rate: f64,
    /// How long a free executor may wait for a fuller batch. Zero means
    /// dispatch whatever is queued immediately.
    #[serde(with = "millis")]
    pub max_batch_wait: Nanos,
    pub seed: u64,
    pub adversary: Adversary,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            base_latency_per_sample: Nanos::from_millis(1),
            fixed_overhead: Nanos::ZERO,
            max_batch: 1,
            batch_efficiency: 1.0,
            concurrency: 1,
            queue_discipline: QueueDiscipline::Fifo,
            jitter: Jitter::None,
            caching_enabled: false,
            cache_hit_latency: Nanos::ZERO,
            accuracy_error_rate: 0.0,
            max_batch_wait: Nanos::ZERO,
            seed: 0,
            adversary: Adversary::None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.max_batch == 0 {
            return bad("max_batch must be at least 1".into());
        }
        if !(self.batch_efficiency > 0.0 && self.batch_efficiency <= 1.0) {
            return bad(format!("batch_efficiency must lie in (0, 1], got {}", self.batch_efficiency));
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.accuracy_error_rate) {
            return bad(format!("accuracy_error_rate must lie in [0, 1], got {}", self.accuracy_error_rate));
        }
        match self.adversary {
            Adversary::DegradeInPerformance { error_rate } if !(0.0..=1.0).contains(&error_rate) => {
                bad(format!("adversary error_rate must lie in [0, 1], got {error_rate}"))
            }
            Adversary::ScheduleKeyed { slowdown, .. } if !(slowdown.is_finite() && slowdown > 0.0) => {
                bad(format!("adversary slowdown must be positive, got {slowdown}"))
            }
            _ => Ok(()),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sim config serializes")
    }
}

/// Busy time for one batch of `batch` samples, plus a jitter draw.
pub fn service_time(cfg: &SimConfig, batch: u64, rng: &mut SeededRng) -> Result<Nanos, SimError> {
    if batch == 0 || batch > cfg.max_batch {
        return Err(SimError::BatchSize { batch, max_batch: cfg.max_batch });
    }
    let scale = 1.0 + cfg.batch_efficiency * (batch - 1) as f64;
    let compute = Nanos((cfg.base_latency_per_sample.0 as f64 * scale).round() as u64);
    let jitter = match cfg.jitter {
        Jitter::None => Nanos::ZERO,
        Jitter::Exponential { mean } => Nanos(rng.exponential(mean.0 as f64).round() as u64),
    };
    Ok(cfg.fixed_overhead + compute + jitter)
}

/// The reference digest with probability `1 - error_rate`, else the wrong one.
pub fn sim_accuracy_response(error_rate: f64, sample_index: u64, rng: &mut SeededRng) -> u64 {
    let wrong = error_rate >= 1.0 || (error_rate > 0.0 && rng.next_open_unit() <= error_rate);
    if wrong {
        wrong_digest(sample_index)
    } else {
        reference_digest(sample_index)
    }
}

#[derive(Debug, Clone, Copy)]
struct QueuedSample {
    query_id: u64,
    sample: u64,
}

#[derive(Debug)]
struct Pending {
    remaining: usize,
    digests: Vec<u64>,
}

/// State shared by the virtual and wall-clock front ends.
#[derive(Debug)]
struct SimCore {
    cfg: SimConfig,
    mode: TestMode,
    service_rng: SeededRng,
    accuracy_rng: SeededRng,
    queue: VecDeque<QueuedSample>,
    // Arrival time of each queued sample's query, parallel to `queue`.
    arrivals: VecDeque<Nanos>,
    pending: HashMap<u64, Pending>,
    seen: HashSet<u64>,
    keyed: Option<bool>,
}

impl SimCore {
    fn new(cfg: SimConfig) -> Self {
        Self {
            service_rng: SeededRng::new(cfg.seed, StreamLabel::SimService),
            accuracy_rng: SeededRng::new(cfg.seed, StreamLabel::SimAccuracy),
            cfg,
            mode: TestMode::Performance,
            queue: VecDeque::new(),
            arrivals: VecDeque::new(),
            pending: HashMap::new(),
            seen: HashSet::new(),
            keyed: None,
        }
    }

    fn reset(&mut self, info: &RunInfo) {
        *self = Self::new(self.cfg.clone());
        self.mode = info.mode;
    }

    fn error_rate(&self) -> f64 {
        match (self.cfg.adversary, self.mode) {
            (Adversary::DegradeInPerformance { error_rate }, TestMode::Performance) => {
                error_rate.max(self.cfg.accuracy_error_rate)
            }
            _ => self.cfg.accuracy_error_rate,
        }
    }

    fn enqueue(&mut self, query: &Query, now: Nanos) {
        if self.keyed.is_none() {
            self.keyed = Some(match self.cfg.adversary {
                Adversary::ScheduleKeyed { official_first_issue, .. } => query.scheduled_time == official_first_issue,
                _ => true,
            });
        }
        let rate = self.error_rate();
        let digests = query
            .sample_indices
            .iter()
            .map(|s| sim_accuracy_response(rate, s.0, &mut self.accuracy_rng))
            .collect();
        self.pending.insert(query.query_id, Pending { remaining: query.sample_indices.len(), digests });
        for s in &query.sample_indices {
            self.queue.push_back(QueuedSample { query_id: query.query_id, sample: s.0 });
            self.arrivals.push_back(now);
        }
    }

    /// When a free executor should dispatch, given the oldest queued arrival.
    /// `None` if the queue is empty.
    fn dispatch_ready_at(&self) -> Option<Nanos> {
        let oldest = *self.arrivals.front()?;
        if self.queue.len() as u64 >= self.cfg.max_batch {
            return Some(oldest);
        }
        Some(oldest.saturating_add(self.cfg.max_batch_wait))
    }

    /// Takes a batch and returns it with its busy time.
    fn take_batch(&mut self) -> (Vec<QueuedSample>, Nanos) {
        let n = (self.queue.len() as u64).min(self.cfg.max_batch) as usize;
        let batch: Vec<QueuedSample> = self.queue.drain(..n).collect();
        self.arrivals.drain(..n);
        let mut hits = 0u64;
        let mut misses = 0u64;
        for s in &batch {
            if self.cfg.caching_enabled && !self.seen.insert(s.sample) {
                hits += 1;
            } else {
                misses += 1;
            }
        }
        let mut busy = self.cfg.cache_hit_latency.saturating_mul(hits);
        if misses > 0 {
            busy += service_time(&self.cfg, misses, &mut self.service_rng).expect("batch within max_batch");
        }
        if let (Adversary::ScheduleKeyed { slowdown, .. }, Some(false)) = (self.cfg.adversary, self.keyed) {
            busy = Nanos((busy.0 as f64 * slowdown).round() as u64);
        }
        (batch, busy)
    }

    /// Marks samples finished; returns the queries that are now complete.
    fn finish(&mut self, batch: &[QueuedSample]) -> Vec<(u64, Vec<u64>)> {
        let mut done = Vec::new();
        for s in batch {
            let p = self.pending.get_mut(&s.query_id).expect("sample belongs to a pending query");
            p.remaining -= 1;
            if p.remaining == 0 {
                let p = self.pending.remove(&s.query_id).expect("present");
                done.push((s.query_id, p.digests));
            }
        }
        done
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    BatchDone { executor: usize },
    Wake,
}

/// Simulator stepped by the harness's virtual clock.
pub struct VirtualSimSut {
    core: SimCore,
    completer: Option<Completer>,
    events: BinaryHeap<Reverse<(Nanos, u64, EventKind)>>,
    seq: u64,
    executors: Vec<Option<Vec<QueuedSample>>>,
    wake_at: Option<Nanos>,
}

impl VirtualSimSut {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let executors = (0..cfg.concurrency).map(|_| None).collect();
        Ok(Self { core: SimCore::new(cfg), completer: None, events: BinaryHeap::new(), seq: 0, executors, wake_at: None })
    }

    fn push_event(&mut self, at: Nanos, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, kind)));
    }

    fn dispatch(&mut self, now: Nanos) {
        while let Some(free) = self.executors.iter().position(Option::is_none) {
            let Some(ready) = self.core.dispatch_ready_at() else { return };
            if ready > now {
                if self.wake_at != Some(ready) {
                    self.wake_at = Some(ready);
                    self.push_event(ready, EventKind::Wake);
                }
                return;
            }
            let (batch, busy) = self.core.take_batch();
            self.executors[free] = Some(batch);
            self.push_event(now + busy, EventKind::BatchDone { executor: free });
        }
    }
}

impl Sut for VirtualSimSut {
    fn name(&self) -> &str {
        "sim"
    }

    fn start_run(&mut self, info: &RunInfo, completer: Completer) {
        self.core.reset(info);
        self.events.clear();
        self.executors.iter_mut().for_each(|e| *e = None);
        self.wake_at = None;
        self.completer = Some(completer);
    }

    fn issue_query(&mut self, query: Query) {
        let now = self.completer.as_ref().expect("run started").now();
        self.core.enqueue(&query, now);
        self.dispatch(now);
    }

    fn supports_virtual_clock(&self) -> bool {
        true
    }

    fn next_event_time(&self) -> Option<Nanos> {
        self.events.peek().map(|Reverse((t, _, _))| *t)
    }

    fn advance_to(&mut self, now: Nanos) {
        while let Some(Reverse((t, _, _))) = self.events.peek() {
            if *t > now {
                break;
            }
            let Reverse((t, _, kind)) = self.events.pop().expect("peeked");
            match kind {
                EventKind::BatchDone { executor } => {
                    let batch = self.executors[executor].take().expect("executor was busy");
                    let completer = self.completer.as_ref().expect("run started");
                    for (id, digests) in self.core.finish(&batch) {
                        completer.complete(id, digests);
                    }
                }
                EventKind::Wake => {
                    if self.wake_at == Some(t) {
                        self.wake_at = None;
                    }
                }
            }
        }
        self.dispatch(now);
    }
}

struct WallShared {
    core: Mutex<WallState>,
    ready: Condvar,
}

struct WallState {
    core: SimCore,
    shutting_down: bool,
    origin: Instant,
}

impl WallState {
    fn now(&self) -> Nanos {
        self.origin.elapsed().into()
    }
}

/// Simulator whose executors are real threads sleeping for each batch.
pub struct WallSimSut {
    shared: Arc<WallShared>,
    workers: Vec<JoinHandle<()>>,
    concurrency: u64,
}

impl WallSimSut {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let concurrency = cfg.concurrency;
        let state = WallState { core: SimCore::new(cfg), shutting_down: false, origin: Instant::now() };
        Ok(Self {
            shared: Arc::new(WallShared { core: Mutex::new(state), ready: Condvar::new() }),
            workers: Vec::new(),
            concurrency,
        })
    }

    fn stop_workers(&mut self) {
        self.shared.core.lock().expect("sim poisoned").shutting_down = true;
        self.shared.ready.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn wall_worker(shared: Arc<WallShared>, completer: Completer) {
    loop {
        let (batch, busy) = {
            let mut state = shared.core.lock().expect("sim poisoned");
            loop {
                if state.shutting_down && state.core.queue.is_empty() {
                    return;
                }
                match state.core.dispatch_ready_at() {
                    Some(ready) if ready <= state.now() || state.shutting_down => break,
                    Some(ready) => {
                        let wait = Duration::from(ready - state.now());
                        state = shared.ready.wait_timeout(state, wait).expect("sim poisoned").0;
                    }
                    None => state = shared.ready.wait(state).expect("sim poisoned"),
                }
            }
            state.core.take_batch()
        };
        std::thread::sleep(Duration::from(busy));
        let done = shared.core.lock().expect("sim poisoned").core.finish(&batch);
        for (id, digests) in done {
            completer.complete(id, digests);
        }
    }
}

impl Sut for WallSimSut {
    fn name(&self) -> &str {
        "sim"
    }

    fn start_run(&mut self, info: &RunInfo, completer: Completer) {
        self.stop_workers();
        {
            let mut state = self.shared.core.lock().expect("sim poisoned");
            state.core.reset(info);
            state.shutting_down = false;
            state.origin = Instant::now();
        }
        for _ in 0..self.concurrency {
            let shared = self.shared.clone();
            let completer = completer.clone();
            self.workers.push(std::thread::spawn(move || wall_worker(shared, completer)));
        }
    }

    fn issue_query(&mut self, query: Query) {
        let mut state = self.shared.core.lock().expect("sim poisoned");
        let now = state.now();
        state.core.enqueue(&query, now);
        drop(state);
        self.shared.ready.notify_all();
    }

    fn end_run(&mut self) {
        self.stop_workers();
    }
}

impl Drop for WallSimSut {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

/// Virtual-clock SUT that finishes query `i` exactly `service[i % len]`
/// after it was issued, with no queueing between queries. Useful for
/// replaying hand-written completion traces.
pub struct ScriptedSut {
    service: Vec<Nanos>,
    completer: Option<Completer>,
    events: BinaryHeap<Reverse<(Nanos, u64, usize)>>,
    digests: Vec<Option<Vec<u64>>>,
}

impl ScriptedSut {
    pub fn new(service: Vec<Nanos>) -> Self {
        assert!(!service.is_empty(), "scripted SUT needs at least one service time");
        Self { service, completer: None, events: BinaryHeap::new(), digests: Vec::new() }
    }
}

impl Sut for ScriptedSut {
    fn name(&self) -> &str {
        "scripted"
    }

    fn start_run(&mut self, _info: &RunInfo, completer: Completer) {
        self.events.clear();
        self.digests.clear();
        self.completer = Some(completer);
    }

    fn issue_query(&mut self, query: Query) {
        let now = self.completer.as_ref().expect("run started").now();
        let service = self.service[(query.query_id % self.service.len() as u64) as usize];
        let slot = self.digests.len();
        self.digests.push(Some(query.sample_indices.iter().map(|s| reference_digest(s.0)).collect()));
        self.events.push(Reverse((now + service, query.query_id, slot)));
    }

    fn supports_virtual_clock(&self) -> bool {
        true
    }

    fn next_event_time(&self) -> Option<Nanos> {
        self.events.peek().map(|Reverse((t, _, _))| *t)
    }

    fn advance_to(&mut self, now: Nanos) {
        while self.events.peek().is_some_and(|Reverse((t, _, _))| *t <= now) {
            let Reverse((_, id, slot)) = self.events.pop().expect("peeked");
            let digests = self.digests[slot].take().unwrap_or_default();
            self.completer.as_ref().expect("run started").complete(id, digests);
        }
    }
}

/// A simulated SUT for the given clock.
pub fn sim_sut(cfg: SimConfig, clock: ClockMode) -> Result<Box<dyn Sut>, SimError> {
    Ok(match clock {
        ClockMode::Virtual => Box::new(VirtualSimSut::new(cfg)?),
        ClockMode::Wall => Box::new(WallSimSut::new(cfg)?),
    })
}

/// A factory producing fresh simulators, for multi-run drivers and audits.
pub fn sim_factory(cfg: SimConfig, clock: ClockMode) -> Result<impl Fn() -> Box<dyn Sut> + Sync, SimError> {
    cfg.validate()?;
    Ok(move || sim_sut(cfg.clone(), clock).expect("validated config"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_accuracy, run_performance, InMemoryLibrary};
    use crate::report::{check_validity, digest_accuracy};
    use crate::scenario::{profile, ProfileSet, Scenario, TestSettings, validate_settings};

    fn rng() -> SeededRng {
        SeededRng::new(1, StreamLabel::SimService)
    }

    fn batching(eff: f64) -> SimConfig {
        SimConfig {
            base_latency_per_sample: Nanos::from_millis(1),
            fixed_overhead: Nanos::from_millis(1),
            max_batch: 8,
            batch_efficiency: eff,
            ..SimConfig::default()
        }
    }

    #[test]
    fn service_time_formula() {
        let cfg = batching(0.5);
        assert_eq!(service_time(&cfg, 1, &mut rng()).unwrap(), Nanos::from_millis(2));
        assert_eq!(service_time(&cfg, 8, &mut rng()).unwrap(), Nanos::from_micros(5_500));
        assert!(service_time(&cfg, 0, &mut rng()).is_err());
        assert!(service_time(&cfg, 9, &mut rng()).is_err());
        let linear = SimConfig { fixed_overhead: Nanos::ZERO, ..batching(1.0) };
        for b in 1..=8 {
            assert_eq!(service_time(&linear, b, &mut rng()).unwrap(), Nanos::from_millis(b));
        }
    }

    #[test]
    fn batching_never_costs_more_than_serial() {
        let cfg = batching(0.3);
        let one = service_time(&cfg, 1, &mut rng()).unwrap();
        for b in 1..=8 {
            assert!(service_time(&cfg, b, &mut rng()).unwrap() <= one.saturating_mul(b));
        }
    }

    #[test]
    fn accuracy_response_rates() {
        let mut r = SeededRng::new(3, StreamLabel::SimAccuracy);
        assert!((0..1000).all(|i| sim_accuracy_response(0.0, i, &mut r) == reference_digest(i)));
        assert!((0..1000).all(|i| sim_accuracy_response(1.0, i, &mut r) == wrong_digest(i)));
        let n = 100_000u64;
        let correct = (0..n).filter(|&i| sim_accuracy_response(0.01, i, &mut r) == reference_digest(i)).count();
        let p = 0.99;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((correct as f64 / n as f64 - p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = SimConfig {
            jitter: Jitter::Exponential { mean: Nanos::from_micros(250) },
            adversary: Adversary::ScheduleKeyed { official_first_issue: Nanos(123_456), slowdown: 4.0 },
            ..batching(0.5)
        };
        assert_eq!(SimConfig::from_json_str(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(SimConfig::from_json_str("{}").unwrap(), SimConfig::default());
        assert!(SimConfig::from_json_str(r#"{"batch_efficiency": 0}"#).is_err());
        assert!(SimConfig::from_json_str(r#"{"max_batch": 0}"#).is_err());
        assert!(SimConfig::from_json_str(r#"{"speed": 1}"#).is_err());
    }

    fn settings(scenario: Scenario, edit: impl FnOnce(&mut TestSettings)) -> crate::scenario::ValidSettings {
        let mut s = TestSettings::new(scenario, "image-classification-heavy");
        edit(&mut s);
        validate_settings(&s, &ProfileSet::builtin()).unwrap()
    }

    #[test]
    fn single_server_fifo_completes_in_issue_order() {
        let cfg = SimConfig { jitter: Jitter::Exponential { mean: Nanos::from_millis(1) }, ..SimConfig::default() };
        let mut sut = VirtualSimSut::new(cfg).unwrap();
        let lib = InMemoryLibrary::new("lib", 1024);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(300.0);
            s.min_query_count = Some(5_000);
            s.min_duration = Some(Nanos::ZERO);
        });
        let log = run_performance(&mut sut, &lib, &s).unwrap();
        let completions: Vec<Nanos> = log.records.iter().map(|r| r.completion_time.unwrap()).collect();
        assert!(completions.windows(2).all(|w| w[0] <= w[1]));
        assert!(log.records.iter().all(|r| r.issue_time == r.scheduled_time));
    }

    #[test]
    fn caching_speeds_up_duplicates() {
        let cfg = SimConfig { caching_enabled: true, cache_hit_latency: Nanos::from_micros(100), ..SimConfig::default() };
        let lib = InMemoryLibrary::new("lib", 1024);
        let dup = settings(Scenario::SingleStream, |s| {
            s.min_query_count = Some(2_000);
            s.min_duration = Some(Nanos::ZERO);
            s.performance_sample_count = 10;
        });
        let unique = dup.with(|s| s.performance_sample_count = 1024).unwrap();
        let run = |s| {
            let mut sut = VirtualSimSut::new(cfg.clone()).unwrap();
            let log = run_performance(&mut sut, &lib, s).unwrap();
            log.summary.duration
        };
        assert!(run(&dup) < run(&unique));
    }

    #[test]
    fn offline_beats_server_when_batching_helps() {
        let cfg = SimConfig { max_batch: 64, ..batching(0.5) };
        let lib = InMemoryLibrary::new("lib", 1024);
        let offline = settings(Scenario::Offline, |s| s.min_duration = Some(Nanos::ZERO));
        let mut sut = VirtualSimSut::new(cfg.clone()).unwrap();
        let r = check_validity(&run_performance(&mut sut, &lib, &offline).unwrap()).unwrap();
        // 384 full batches of 64 at 33.5 ms each.
        let expected = 24_576.0 / (384.0 * 0.0335);
        assert!((r.metric_value - expected).abs() < 1e-6, "{}", r.metric_value);
    }

    #[test]
    fn accuracy_error_rate_shows_in_accuracy_runs() {
        let cfg = SimConfig { accuracy_error_rate: 0.02, base_latency_per_sample: Nanos::ZERO, ..SimConfig::default() };
        let lib = InMemoryLibrary::new("lib", 10_000);
        let s = settings(Scenario::SingleStream, |s| s.mode = TestMode::Accuracy);
        let mut sut = VirtualSimSut::new(cfg).unwrap();
        let log = run_accuracy(&mut sut, &lib, &s).unwrap();
        assert_eq!(log.records.len(), 10_000);
        let acc = digest_accuracy(&log).unwrap();
        let sigma = (0.98f64 * 0.02 / 10_000.0).sqrt();
        assert!((acc - 0.98).abs() <= 3.0 * sigma, "{acc}");
        assert_eq!(profile("image-classification-heavy").unwrap().task_name, log.profile.task_name);
    }

    #[test]
    fn batch_wait_delays_dispatch() {
        let cfg = SimConfig { max_batch: 4, max_batch_wait: Nanos::from_millis(3), ..SimConfig::default() };
        let lib = InMemoryLibrary::new("lib", 64);
        let s = settings(Scenario::SingleStream, |s| {
            s.min_query_count = Some(3);
            s.min_duration = Some(Nanos::ZERO);
            s.performance_sample_count = 64;
        });
        let mut sut = VirtualSimSut::new(cfg).unwrap();
        let log = run_performance(&mut sut, &lib, &s).unwrap();
        assert!(log.latencies().iter().all(|&l| l == Nanos::from_millis(4)));
    }

    #[test]
    fn wall_sim_completes_every_query() {
        let cfg = SimConfig { base_latency_per_sample: Nanos::from_micros(200), concurrency: 2, max_batch: 4, ..SimConfig::default() };
        let mut sut = WallSimSut::new(cfg).unwrap();
        let lib = InMemoryLibrary::new("lib", 64);
        let s = settings(Scenario::Server, |s| {
            s.target_qps = Some(2_000.0);
            s.min_query_count = Some(200);
            s.min_duration = Some(Nanos::ZERO);
            s.performance_sample_count = 64;
            s.clock = ClockMode::Wall;
        });
        let log = run_performance(&mut sut, &lib, &s).unwrap();
        assert!(log.summary.aborted.is_none(), "{:?}", log.summary.aborted);
        assert_eq!(log.summary.completed, log.summary.issued);
        assert!(log.records.iter().all(|r| r.completion_time.unwrap() >= r.issue_time));
    }
}
