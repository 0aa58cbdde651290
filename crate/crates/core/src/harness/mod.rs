//! Drives a SUT through a scenario and records what happened.

pub mod bridge;
pub mod clock;
pub mod run;
pub mod search;
pub mod sut;

use thiserror::Error;

use crate::report::ValidityError;
use crate::scenario::{SettingsError, TestMode};
use crate::schedule::ScheduleError;

pub use clock::{Clock, VirtualClock, WallClock};
pub use run::{run_accuracy, run_performance, run_plan, QueryRecord, RunLog, RunSummary};
pub use search::{
    find_max_qps, find_max_streams, run_server_official, select_official, OfficialServerResult, QpsSearch,
};
pub use sut::{Completer, InMemoryLibrary, RunInfo, SampleLibrary, Sut, SutFactory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("this operation requires {expected:?} mode")]
    WrongMode { expected: TestMode },
    #[error("SUT `{0}` cannot run under the virtual clock")]
    VirtualClockUnsupported(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("sample library too small: need {needed} samples, have {available}")]
    LibraryTooSmall { needed: u64, available: u64 },
    #[error("invalid settings: {}", join(.0))]
    Settings(Vec<SettingsError>),
    #[error(transparent)]
    Validity(#[from] ValidityError),
    #[error("this operation requires the {0} scenario")]
    WrongScenario(&'static str),
    #[error("invalid search range: {0}")]
    InvalidSearch(String),
    #[error("no valid rate: the run at {0} QPS is already invalid")]
    NoValidRate(f64),
    #[error("no valid stream count: the run at N = 1 is already invalid")]
    StreamsInvalidAtOne,
}

impl From<Vec<SettingsError>> for HarnessError {
    fn from(errors: Vec<SettingsError>) -> Self {
        HarnessError::Settings(errors)
    }
}

fn join(errors: &[SettingsError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
