//! Seeded query schedules and sample-index sequences.
//!
//! Every random stream is a xoshiro256** generator seeded from
//! `(seed, stream label)`. Timing and sample selection use distinct labels,
//! so changing the sample seed never perturbs issue times and vice versa.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{label_hash, mix64};
use crate::scenario::{SampleIndex, Scenario, ValidSettings};
use crate::time::Nanos;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("sample library is empty")]
    EmptyLibrary,
    #[error("arrival rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("arrival interval must be positive")]
    NonPositiveInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamLabel {
    Schedule,
    Samples,
    AccuracyLog,
    SimService,
    SimAccuracy,
}

impl StreamLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamLabel::Schedule => "schedule",
            StreamLabel::Samples => "samples",
            StreamLabel::AccuracyLog => "accuracy_log",
            StreamLabel::SimService => "sim_service",
            StreamLabel::SimAccuracy => "sim_accuracy",
        }
    }
}

/// Deterministic xoshiro256** stream for one `(seed, label)` pair.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
    seed: u64,
    label: StreamLabel,
}

impl SeededRng {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self::from_parts(seed, label.as_str(), label)
    }

    fn from_parts(seed: u64, label_text: &str, label: StreamLabel) -> Self {
        let inner = Xoshiro256StarStar::seed_from_u64(seed ^ label_hash(label_text));
        Self { inner, seed, label }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform double in (0, 1], built from the top 53 bits.
    pub fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by widening multiply with rejection.
    pub fn uniform_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "uniform_below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Exponential variate with the given mean, by inversion of (0, 1].
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -self.next_open_unit().ln() * mean
    }
}

/// Derives the seed for the `index`-th member of a family of runs.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    if index == 0 {
        return base;
    }
    mix64(base ^ mix64(index))
}

pub fn gen_sample_indices(
    rng: &mut SeededRng,
    count: usize,
    library_size: u64,
) -> Result<Vec<SampleIndex>, ScheduleError> {
    if library_size == 0 {
        return Err(ScheduleError::EmptyLibrary);
    }
    Ok((0..count).map(|_| SampleIndex(rng.uniform_below(library_size))).collect())
}

/// Poisson arrivals: cumulative sums of exponential gaps with mean `1/rate_qps`.
pub fn gen_poisson_schedule(
    rng: &mut SeededRng,
    rate_qps: f64,
    count: usize,
) -> Result<Vec<Nanos>, ScheduleError> {
    let mut arrivals = PoissonArrivals::new(rate_qps)?;
    Ok((0..count).map(|_| arrivals.next(rng)).collect())
}

/// Nominal multistream grid `k * interval` for `k = 0..count`.
pub fn gen_multistream_schedule(interval: Nanos, count: usize) -> Result<Vec<Nanos>, ScheduleError> {
    if interval == Nanos::ZERO {
        return Err(ScheduleError::NonPositiveInterval);
    }
    Ok((0..count as u64).map(|k| interval.saturating_mul(k)).collect())
}

#[derive(Debug, Clone)]
struct PoissonArrivals {
    mean_gap_secs: f64,
    elapsed_secs: f64,
}

impl PoissonArrivals {
    fn new(rate_qps: f64) -> Result<Self, ScheduleError> {
        if !(rate_qps.is_finite() && rate_qps > 0.0) {
            return Err(ScheduleError::NonPositiveRate(rate_qps));
        }
        Ok(Self { mean_gap_secs: 1.0 / rate_qps, elapsed_secs: 0.0 })
    }

    fn next(&mut self, rng: &mut SeededRng) -> Nanos {
        self.elapsed_secs += rng.exponential(self.mean_gap_secs);
        Nanos::from_secs_f64(self.elapsed_secs)
    }
}

/// Issue times and the sample indices each query carries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub issue_times: Vec<Nanos>,
    pub sample_plan: Vec<Vec<SampleIndex>>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.issue_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issue_times.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = PlannedQuery> + '_ {
        self.issue_times
            .iter()
            .zip(&self.sample_plan)
            .map(|(&scheduled, samples)| PlannedQuery { scheduled, samples: samples.clone() })
    }
}

/// One entry of a schedule.
///
/// `scheduled` is absolute for server queries, the nominal grid slot for
/// multistream, and an unused placeholder (zero) for single-stream and
/// offline, whose queries are issued on completion of their predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedQuery {
    pub scheduled: Nanos,
    pub samples: Vec<SampleIndex>,
}

/// Endless, deterministic producer of the schedule for a settings block.
///
/// [`build_schedule`] precomputes a prefix; the harness keeps drawing from
/// the same generator if minimum-duration rules require more queries.
#[derive(Debug, Clone)]
pub struct ScheduleGenerator {
    scenario: Scenario,
    timing_rng: SeededRng,
    sample_rng: SeededRng,
    arrivals: Option<PoissonArrivals>,
    interval: Nanos,
    samples_per_query: u64,
    library_size: u64,
    produced: u64,
}

impl ScheduleGenerator {
    pub fn new(settings: &ValidSettings) -> Result<Self, ScheduleError> {
        let raw = settings.settings();
        if raw.performance_sample_count == 0 {
            return Err(ScheduleError::EmptyLibrary);
        }
        let arrivals = match raw.scenario {
            Scenario::Server => Some(PoissonArrivals::new(raw.target_qps.unwrap_or(0.0))?),
            _ => None,
        };
        Ok(Self {
            scenario: raw.scenario,
            timing_rng: SeededRng::new(raw.schedule_seed, StreamLabel::Schedule),
            sample_rng: SeededRng::new(raw.sample_seed, StreamLabel::Samples),
            arrivals,
            interval: settings.profile().multistream_arrival_interval,
            samples_per_query: settings.samples_per_query(),
            library_size: raw.performance_sample_count,
            produced: 0,
        })
    }

    /// Number of queries [`build_schedule`] precomputes.
    pub fn initial_count(settings: &ValidSettings) -> u64 {
        let min = settings.min_query_count();
        match (settings.scenario(), settings.target_qps()) {
            (Scenario::Server, Some(qps)) => {
                let by_duration = (qps * settings.min_duration().as_secs_f64()).ceil() as u64;
                min.max(by_duration)
            }
            _ => min,
        }
    }

    pub fn next_query(&mut self) -> PlannedQuery {
        let scheduled = match self.scenario {
            Scenario::Server => self
                .arrivals
                .as_mut()
                .expect("server generator has arrivals")
                .next(&mut self.timing_rng),
            Scenario::MultiStream => self.interval.saturating_mul(self.produced),
            Scenario::SingleStream | Scenario::Offline => Nanos::ZERO,
        };
        let samples = (0..self.samples_per_query)
            .map(|_| SampleIndex(self.sample_rng.uniform_below(self.library_size)))
            .collect();
        self.produced += 1;
        PlannedQuery { scheduled, samples }
    }

    pub fn take(&mut self, count: u64) -> Schedule {
        let mut schedule = Schedule::default();
        for _ in 0..count {
            let q = self.next_query();
            schedule.issue_times.push(q.scheduled);
            schedule.sample_plan.push(q.samples);
        }
        schedule
    }
}

/// Precomputes the minimum schedule for a performance run.
pub fn build_schedule(settings: &ValidSettings) -> Result<Schedule, ScheduleError> {
    let mut generator = ScheduleGenerator::new(settings)?;
    Ok(generator.take(ScheduleGenerator::initial_count(settings)))
}
