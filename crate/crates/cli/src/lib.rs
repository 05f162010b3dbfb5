//! Scenario language and runner for the Guardian simulation, shared by the
//! `guardian` binary and the acceptance tests.

pub mod bundled;
pub mod runner;
pub mod scenario;
