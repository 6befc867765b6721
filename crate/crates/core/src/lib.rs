//! Trace-driven simulator for probabilistic, delay- and mobility-aware
//! service assignment and migration across edge servers co-located with
//! cellular base stations.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builder;
pub mod cli;
pub mod error;
pub mod model;
pub mod network;
pub mod policy;
pub mod sim;
pub mod traces;
pub mod world;

pub use error::{Error, Result};
pub use policy::PolicyKind;
pub use sim::{compare_policies, run, MetricsReport};
pub use traces::TraceBundle;
