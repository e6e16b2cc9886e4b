//! Experiment harness around the parabolic optimal control solvers:
//! configuration files, built-in presets, sweep execution and CSV/JSON
//! report emission.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;
pub mod verify;
