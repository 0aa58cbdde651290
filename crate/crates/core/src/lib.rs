//! Scenario-driven load generator and measurement harness for inference
//! systems.
//!
//! A run pairs a [`scenario::TestSettings`] block with a SUT behind the
//! [`harness::Sut`] trait. The harness issues queries under one of four
//! traffic patterns, records per-query timing, and [`report::check_validity`]
//! turns the resulting log into a metric and a verdict.

pub mod audit;
pub mod digest;
pub mod harness;
pub mod par;
pub mod report;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod stats;
pub mod time;

pub use harness::{RunLog, SampleLibrary, Sut, SutFactory};
pub use report::{check_accuracy, check_validity, RunResult};
pub use scenario::{BenchmarkProfile, ProfileSet, Scenario, TestMode, TestSettings, ValidSettings};
pub use time::Nanos;
