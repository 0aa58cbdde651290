use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::scenario::{Query, QueryResponse, SampleIndex, Scenario, TestMode};
use crate::time::Nanos;

use super::clock::Clock;

/// What a SUT is told about the run it is about to serve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInfo {
    pub scenario: Scenario,
    pub mode: TestMode,
    pub samples_per_query: u64,
}

/// A system under test.
///
/// The harness calls `start_run` once, then `issue_query` for every query,
/// `flush` once issuance has ended, and `end_run` after the last completion.
/// Each issued query must be completed exactly once through the
/// [`Completer`] handed to `start_run`, from any thread.
///
/// SUTs that can run under the virtual clock expose their internal event
/// times: the harness advances the clock to `next_event_time()` and calls
/// `advance_to`, during which the SUT delivers the completions due at that
/// instant.
pub trait Sut {
    fn name(&self) -> &str;
    fn start_run(&mut self, info: &RunInfo, completer: Completer);
    fn issue_query(&mut self, query: Query);
    fn flush(&mut self) {}
    fn end_run(&mut self) {}

    fn supports_virtual_clock(&self) -> bool {
        false
    }
    fn next_event_time(&self) -> Option<Nanos> {
        None
    }
    fn advance_to(&mut self, _now: Nanos) {}
}

/// Builds fresh SUT instances, one per run, for multi-run drivers.
pub trait SutFactory: Sync {
    fn create(&self) -> Box<dyn Sut>;
}

impl<F> SutFactory for F
where
    F: Fn() -> Box<dyn Sut> + Sync,
{
    fn create(&self) -> Box<dyn Sut> {
        self()
    }
}

#[derive(Debug, Default)]
pub(crate) struct Inbox {
    queue: Mutex<Vec<QueryResponse>>,
    ready: Condvar,
}

impl Inbox {
    pub(crate) fn drain(&self) -> Vec<QueryResponse> {
        std::mem::take(&mut *self.queue.lock().expect("inbox poisoned"))
    }

    /// Blocks until a response is queued or `timeout` elapses.
    pub(crate) fn wait(&self, timeout: Duration) {
        let guard = self.queue.lock().expect("inbox poisoned");
        if guard.is_empty() {
            let _ = self.ready.wait_timeout(guard, timeout).expect("inbox poisoned");
        }
    }
}

/// Completion channel from a SUT back to the harness. Cheap to clone and
/// safe to use from any thread; completion time is stamped from the run
/// clock at the moment of the call.
#[derive(Clone)]
pub struct Completer {
    inbox: Arc<Inbox>,
    clock: Arc<dyn Clock>,
}

impl Completer {
    pub(crate) fn new(inbox: Arc<Inbox>, clock: Arc<dyn Clock>) -> Self {
        Self { inbox, clock }
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    pub fn complete(&self, query_id: u64, payload_digests: Vec<u64>) {
        let response = QueryResponse { query_id, completion_time: self.clock.now(), payload_digests };
        self.inbox.queue.lock().expect("inbox poisoned").push(response);
        self.inbox.ready.notify_one();
    }
}

impl std::fmt::Debug for Completer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Completer").field("clock", &self.clock.mode()).finish()
    }
}

/// The sample store the SUT loads before timing starts.
pub trait SampleLibrary: Sync {
    fn name(&self) -> &str;
    fn total_samples(&self) -> u64;
    fn load_samples(&self, indices: &[SampleIndex]);
    fn unload_samples(&self, indices: &[SampleIndex]);
}

/// A library that only tracks which indices are resident.
#[derive(Debug)]
pub struct InMemoryLibrary {
    name: String,
    total: u64,
    resident: Mutex<HashMap<SampleIndex, u32>>,
}

impl InMemoryLibrary {
    pub fn new(name: impl Into<String>, total: u64) -> Self {
        Self { name: name.into(), total, resident: Mutex::new(HashMap::new()) }
    }

    pub fn is_loaded(&self, index: SampleIndex) -> bool {
        self.resident.lock().expect("library poisoned").contains_key(&index)
    }

    pub fn loaded_count(&self) -> usize {
        self.resident.lock().expect("library poisoned").len()
    }
}

impl SampleLibrary for InMemoryLibrary {
    fn name(&self) -> &str {
        &self.name
    }

    fn total_samples(&self) -> u64 {
        self.total
    }

    fn load_samples(&self, indices: &[SampleIndex]) {
        let mut resident = self.resident.lock().expect("library poisoned");
        for &i in indices {
            *resident.entry(i).or_default() += 1;
        }
    }

    fn unload_samples(&self, indices: &[SampleIndex]) {
        let mut resident = self.resident.lock().expect("library poisoned");
        for i in indices {
            if let Some(n) = resident.get_mut(i) {
                *n -= 1;
                if *n == 0 {
                    resident.remove(i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::clock::VirtualClock;

    #[test]
    fn completer_stamps_clock_time() {
        let clock = Arc::new(VirtualClock::new());
        let inbox = Arc::new(Inbox::default());
        let c = Completer::new(inbox.clone(), clock.clone());
        clock.advance_to(Nanos(42));
        c.complete(3, vec![9]);
        let got = inbox.drain();
        assert_eq!(got, vec![QueryResponse { query_id: 3, completion_time: Nanos(42), payload_digests: vec![9] }]);
        assert!(inbox.drain().is_empty());
    }

    #[test]
    fn completions_from_many_threads_are_not_lost() {
        let clock = Arc::new(VirtualClock::new());
        let inbox = Arc::new(Inbox::default());
        let c = Completer::new(inbox.clone(), clock);
        std::thread::scope(|s| {
            for t in 0..8u64 {
                let c = c.clone();
                s.spawn(move || {
                    for i in 0..1000 {
                        c.complete(t * 1000 + i, vec![]);
                    }
                });
            }
        });
        let mut ids: Vec<u64> = inbox.drain().into_iter().map(|r| r.query_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..8000).collect::<Vec<_>>());
    }

    #[test]
    fn library_refcounts_loads() {
        let lib = InMemoryLibrary::new("lib", 10);
        lib.load_samples(&[SampleIndex(1), SampleIndex(2)]);
        lib.load_samples(&[SampleIndex(1)]);
        lib.unload_samples(&[SampleIndex(1), SampleIndex(2)]);
        assert!(lib.is_loaded(SampleIndex(1)));
        assert!(!lib.is_loaded(SampleIndex(2)));
        assert_eq!(lib.loaded_count(), 1);
    }
}
