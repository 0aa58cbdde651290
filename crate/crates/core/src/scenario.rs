//! Scenario vocabulary, benchmark profiles and run settings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{millis, Nanos};

/// Minimum run length for official performance runs.
pub const OFFICIAL_MIN_DURATION: Nanos = Nanos::from_secs(60);

pub const DEFAULT_SCHEDULE_SEED: u64 = 0x2b7e_1516_28ae_d2a6;
pub const DEFAULT_SAMPLE_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
pub const DEFAULT_PERFORMANCE_SAMPLE_COUNT: u64 = 1_024;

const BUILTIN_PROFILES: &str = include_str!("profiles.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SingleStream,
    MultiStream,
    Server,
    Offline,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::SingleStream, Scenario::MultiStream, Scenario::Server, Scenario::Offline];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SingleStream => "single_stream",
            Scenario::MultiStream => "multi_stream",
            Scenario::Server => "server",
            Scenario::Offline => "offline",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single_stream" | "singlestream" => Ok(Scenario::SingleStream),
            "multi_stream" | "multistream" => Ok(Scenario::MultiStream),
            "server" => Ok(Scenario::Server),
            "offline" => Ok(Scenario::Offline),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    Accuracy,
    #[default]
    Performance,
}

impl FromStr for TestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" => Ok(TestMode::Accuracy),
            "performance" => Ok(TestMode::Performance),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "virtual" => Ok(ClockMode::Virtual),
            "wall" => Ok(ClockMode::Wall),
            _ => Err(format!("unknown clock `{s}`")),
        }
    }
}

/// Per-scenario minimum query counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinQueries {
    pub single_stream: u64,
    pub multi_stream: u64,
    pub server: u64,
    pub offline: u64,
}

impl MinQueries {
    pub fn for_scenario(&self, scenario: Scenario) -> u64 {
        match scenario {
            Scenario::SingleStream => self.single_stream,
            Scenario::MultiStream => self.multi_stream,
            Scenario::Server => self.server,
            Scenario::Offline => self.offline,
        }
    }
}

/// Constants for one benchmark task. Durations serialize as milliseconds.
///
/// `accuracy_reference` is in the task's own units (Top-1 percent, mAP,
/// BLEU); the harness only ever compares a measured scalar against
/// `accuracy_target_fraction * accuracy_reference`.
///
/// The translation profile keeps `multistream_supported = true` even though
/// that combination drew no submissions in practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkProfile {
    pub task_name: String,
    #[serde(with = "millis")]
    pub server_qos_bound: Nanos,
    #[serde(with = "millis")]
    pub multistream_arrival_interval: Nanos,
    pub tail_percentile: f64,
    pub server_overtime_max: f64,
    pub accuracy_reference: f64,
    pub accuracy_target_fraction: f64,
    pub min_queries: MinQueries,
    pub offline_min_samples: u64,
    pub multistream_supported: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("profile `{task}`: {reason}")]
    Invalid { task: String, reason: String },
    #[error("malformed profile document: {0}")]
    Parse(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

impl BenchmarkProfile {
    pub fn check(&self) -> Result<(), ProfileError> {
        let bad = |reason: &str| ProfileError::Invalid {
            task: self.task_name.clone(),
            reason: reason.to_string(),
        };
        if self.task_name.is_empty() {
            return Err(bad("task_name is empty"));
        }
        if !(self.tail_percentile > 0.0 && self.tail_percentile < 1.0) {
            return Err(bad("tail_percentile must lie in (0, 1)"));
        }
        if self.server_qos_bound == Nanos::ZERO || self.multistream_arrival_interval == Nanos::ZERO {
            return Err(bad("latency bounds must be strictly positive"));
        }
        if !(0.0..1.0).contains(&self.server_overtime_max) {
            return Err(bad("server_overtime_max must lie in [0, 1)"));
        }
        if !(self.accuracy_target_fraction > 0.0 && self.accuracy_target_fraction <= 1.0) {
            return Err(bad("accuracy_target_fraction must lie in (0, 1]"));
        }
        if self.offline_min_samples == 0 {
            return Err(bad("offline_min_samples must be at least 1"));
        }
        Ok(())
    }
}

/// A lookup table of profiles keyed by task name.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: Vec<BenchmarkProfile>,
}

impl ProfileSet {
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_PROFILES).expect("embedded profile table is valid")
    }

    /// Accepts either a JSON array of profiles or one profile per line.
    pub fn from_json_str(text: &str) -> Result<Self, ProfileError> {
        let trimmed = text.trim_start();
        let profiles: Vec<BenchmarkProfile> = if trimmed.starts_with('[') {
            serde_json::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?
        } else {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l)
                        .map_err(|e| ProfileError::Parse(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?
        };
        for p in &profiles {
            p.check()?;
        }
        Ok(Self { profiles })
    }

    pub fn from_file(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    /// Replaces same-named profiles and appends new ones.
    pub fn merge(&mut self, other: ProfileSet) {
        for p in other.profiles {
            match self.profiles.iter_mut().find(|q| q.task_name == p.task_name) {
                Some(slot) => *slot = p,
                None => self.profiles.push(p),
            }
        }
    }

    pub fn insert(&mut self, profile: BenchmarkProfile) {
        self.merge(ProfileSet { profiles: vec![profile] });
    }

    pub fn get(&self, task_name: &str) -> Option<&BenchmarkProfile> {
        self.profiles.iter().find(|p| p.task_name == task_name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BenchmarkProfile> {
        self.profiles.iter()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.profiles).expect("profiles serialize")
    }
}

/// The five built-in task profiles.
pub fn builtin_profiles() -> Vec<BenchmarkProfile> {
    ProfileSet::builtin().profiles
}

/// Convenience lookup into the built-in table.
pub fn profile(task_name: &str) -> Option<BenchmarkProfile> {
    ProfileSet::builtin().get(task_name).cloned()
}

/// Configuration of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSettings {
    pub scenario: Scenario,
    #[serde(default)]
    pub mode: TestMode,
    pub profile: String,
    #[serde(default = "default_schedule_seed")]
    pub schedule_seed: u64,
    #[serde(default = "default_sample_seed")]
    pub sample_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_qps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_query: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "millis::option")]
    pub min_duration: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_query_count: Option<u64>,
    /// Hard cap on issued queries in performance mode. Guards against
    /// unbounded runs when the SUT completes in zero time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_query_count: Option<u64>,
    #[serde(default = "default_performance_sample_count")]
    pub performance_sample_count: u64,
    #[serde(default)]
    pub clock: ClockMode,
    /// Probability that a performance-mode response digest is logged.
    #[serde(default)]
    pub accuracy_log_sampling_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "millis::option")]
    pub watchdog: Option<Nanos>,
}

fn default_schedule_seed() -> u64 {
    DEFAULT_SCHEDULE_SEED
}
fn default_sample_seed() -> u64 {
    DEFAULT_SAMPLE_SEED
}
fn default_performance_sample_count() -> u64 {
    DEFAULT_PERFORMANCE_SAMPLE_COUNT
}

impl TestSettings {
    pub fn new(scenario: Scenario, profile: impl Into<String>) -> Self {
        Self {
            scenario,
            mode: TestMode::Performance,
            profile: profile.into(),
            schedule_seed: DEFAULT_SCHEDULE_SEED,
            sample_seed: DEFAULT_SAMPLE_SEED,
            target_qps: None,
            samples_per_query: None,
            min_duration: None,
            min_query_count: None,
            max_query_count: None,
            performance_sample_count: DEFAULT_PERFORMANCE_SAMPLE_COUNT,
            clock: ClockMode::Virtual,
            accuracy_log_sampling_rate: 0.0,
            watchdog: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, SettingsError> {
        serde_json::from_str(text).map_err(|e| SettingsError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettingsError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("target_qps required for the server scenario")]
    MissingTargetQps,
    #[error("target_qps must be a positive finite rate, got {0}")]
    NonPositiveRate(f64),
    #[error("samples_per_query required for the multistream scenario")]
    MissingSamplesPerQuery,
    #[error("samples_per_query must be at least 1")]
    ZeroSamplesPerQuery,
    #[error("`{field}` does not apply to the {scenario} scenario")]
    FieldNotAllowed { field: &'static str, scenario: Scenario },
    #[error("performance_sample_count must be at least 1")]
    EmptySampleSet,
    #[error("min_query_count must be at least 1")]
    ZeroMinQueryCount,
    #[error("profile `{0}` does not support the multistream scenario")]
    MultistreamUnsupported(String),
    #[error("accuracy_log_sampling_rate must lie in [0, 1], got {0}")]
    BadSamplingRate(f64),
    #[error("max_query_count {cap} is below min_query_count {min}")]
    CapBelowMinimum { cap: u64, min: u64 },
    #[error("watchdog must be positive")]
    ZeroWatchdog,
    #[error("malformed settings document: {0}")]
    Parse(String),
}

/// Settings that passed [`validate_settings`], with defaults filled in and
/// the profile resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidSettings {
    settings: TestSettings,
    profile: BenchmarkProfile,
}

impl ValidSettings {
    pub fn settings(&self) -> &TestSettings {
        &self.settings
    }

    pub fn profile(&self) -> &BenchmarkProfile {
        &self.profile
    }

    pub fn scenario(&self) -> Scenario {
        self.settings.scenario
    }

    pub fn min_query_count(&self) -> u64 {
        self.settings.min_query_count.expect("filled by validation")
    }

    pub fn min_duration(&self) -> Nanos {
        self.settings.min_duration.expect("filled by validation")
    }

    pub fn samples_per_query(&self) -> u64 {
        match self.settings.scenario {
            Scenario::MultiStream => self.settings.samples_per_query.expect("validated"),
            Scenario::Offline => self.profile.offline_min_samples,
            _ => 1,
        }
    }

    pub fn target_qps(&self) -> Option<f64> {
        self.settings.target_qps
    }

    /// Whether the minimums meet the published floor for this task.
    pub fn is_official(&self) -> bool {
        self.min_duration() >= OFFICIAL_MIN_DURATION
            && self.min_query_count() >= self.profile.min_queries.for_scenario(self.scenario())
    }

    pub fn watchdog(&self) -> Nanos {
        if let Some(w) = self.settings.watchdog {
            return w;
        }
        match self.settings.scenario {
            Scenario::Server => self.profile.server_qos_bound.saturating_mul(10),
            Scenario::MultiStream => self.profile.multistream_arrival_interval.saturating_mul(10),
            Scenario::SingleStream | Scenario::Offline => Nanos::from_secs(60),
        }
    }

    /// Returns a copy with a modified raw settings block, re-validated
    /// against the already resolved profile.
    pub fn with(&self, edit: impl FnOnce(&mut TestSettings)) -> Result<ValidSettings, Vec<SettingsError>> {
        let mut raw = self.settings.clone();
        edit(&mut raw);
        validate_against(raw, self.profile.clone())
    }
}

/// Fills defaults and rejects contradictory settings.
pub fn validate_settings(
    settings: &TestSettings,
    profiles: &ProfileSet,
) -> Result<ValidSettings, Vec<SettingsError>> {
    let Some(profile) = profiles.get(&settings.profile) else {
        return Err(vec![SettingsError::UnknownProfile(settings.profile.clone())]);
    };
    validate_against(settings.clone(), profile.clone())
}

fn validate_against(
    mut s: TestSettings,
    profile: BenchmarkProfile,
) -> Result<ValidSettings, Vec<SettingsError>> {
    let mut errors = Vec::new();
    match (s.scenario, s.target_qps) {
        (Scenario::Server, None) => errors.push(SettingsError::MissingTargetQps),
        (Scenario::Server, Some(q)) if !(q.is_finite() && q > 0.0) => {
            errors.push(SettingsError::NonPositiveRate(q))
        }
        (Scenario::Server, Some(_)) => {}
        (scenario, Some(_)) => {
            errors.push(SettingsError::FieldNotAllowed { field: "target_qps", scenario })
        }
        (_, None) => {}
    }
    match (s.scenario, s.samples_per_query) {
        (Scenario::MultiStream, None) => errors.push(SettingsError::MissingSamplesPerQuery),
        (Scenario::MultiStream, Some(0)) => errors.push(SettingsError::ZeroSamplesPerQuery),
        (Scenario::MultiStream, Some(_)) => {}
        (scenario, Some(_)) => {
            errors.push(SettingsError::FieldNotAllowed { field: "samples_per_query", scenario })
        }
        (_, None) => {}
    }
    if s.scenario == Scenario::MultiStream && !profile.multistream_supported {
        errors.push(SettingsError::MultistreamUnsupported(profile.task_name.clone()));
    }
    if s.performance_sample_count == 0 {
        errors.push(SettingsError::EmptySampleSet);
    }
    if s.min_query_count == Some(0) {
        errors.push(SettingsError::ZeroMinQueryCount);
    }
    if let (Some(cap), Some(min)) = (s.max_query_count, s.min_query_count) {
        if cap < min {
            errors.push(SettingsError::CapBelowMinimum { cap, min });
        }
    }
    if !(0.0..=1.0).contains(&s.accuracy_log_sampling_rate) {
        errors.push(SettingsError::BadSamplingRate(s.accuracy_log_sampling_rate));
    }
    if s.watchdog == Some(Nanos::ZERO) {
        errors.push(SettingsError::ZeroWatchdog);
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    s.min_query_count.get_or_insert(profile.min_queries.for_scenario(s.scenario));
    s.min_duration.get_or_insert(OFFICIAL_MIN_DURATION);
    Ok(ValidSettings { settings: s, profile })
}

/// Index of one sample in the sample library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleIndex(pub u64);

/// A scheduled request for inference on one or more samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: u64,
    pub sample_indices: Vec<SampleIndex>,
    pub scheduled_time: Nanos,
}

/// Completion record for a query: one payload digest per sample, in the
/// order the samples appeared in the query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResponse {
    pub query_id: u64,
    pub completion_time: Nanos,
    pub payload_digests: Vec<u64>,
}

impl QueryResponse {
    /// A single 64-bit digest over all sample payloads.
    pub fn payload_digest(&self) -> u64 {
        crate::digest::combine(&self.payload_digests)
    }
}
