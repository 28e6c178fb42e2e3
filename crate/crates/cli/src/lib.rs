//! Experiment side of the fault-isolation workspace: JSON configs, file
//! formats, and the scenario/Monte Carlo pipelines gluing the core library
//! into reproducible runs.

pub mod config;
pub mod experiment;
pub mod io;
