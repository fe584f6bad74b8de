//! Report formats and run-configuration plumbing shared by the `memdse`
//! binary and its tests.

pub mod pareto;
pub mod settings;
