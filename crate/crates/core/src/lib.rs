#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod baseline;
pub mod error;
pub mod ingest;
pub mod linkage;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
