//! Configuration, orchestration and artifact handling behind the `lace-lab`
//! command-line tool.

pub mod config;
pub mod output;
pub mod report;
pub mod run;
pub mod stages;
pub mod suite;
