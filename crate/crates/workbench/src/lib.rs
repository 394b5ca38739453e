//! Annotation workbench: pipeline runs, the refinement service and reports.

pub mod pipeline;
pub mod report;
pub mod server;
pub mod store;
