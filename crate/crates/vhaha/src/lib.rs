//! Host-side tooling around the simulator: scenario files, reports,
//! registration transcripts and mode comparison.

pub mod cli;
pub mod compare;
pub mod decompose;
pub mod report;
pub mod scenario_file;
pub mod transcript;
