//! Partitioning an entity-resolution workload between machine and human so
//! that precision and recall targets hold at a requested confidence.

pub mod blocking;
pub mod error;
pub mod eval;
pub mod gp;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod similarity;
pub mod solvers;
pub mod stratified;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    InstancePair, Label, LabelAssignment, Partition, Provenance, QualityRequirement, Solution,
    SolverKind, Workload, DEFAULT_SUBSET_SIZE,
};
