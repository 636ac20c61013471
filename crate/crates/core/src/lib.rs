//! Temporal provenance tracking for interaction networks.

pub mod engine;
pub mod error;
pub mod index;
pub mod model;
pub mod oracle;
pub mod query;
pub mod validate;
pub mod verify;
pub mod workload;
