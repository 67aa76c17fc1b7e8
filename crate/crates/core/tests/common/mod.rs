//! Independent oracles and property checks shared by the integration tests
//! and the acceptance runner. Each check returns a one-line summary on
//! success and the first counterexample on failure.
#![allow(dead_code)]

pub mod codec;
pub mod metrics;
pub mod neural;
pub mod signal;
pub mod store;
pub mod vitals;

use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub type Check = Result<String, String>;

/// Deterministic runner with `cases` cases and no regression files.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
