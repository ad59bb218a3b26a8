//! placeholder
pub struct ExperimentReport;
