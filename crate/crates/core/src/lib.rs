//! flowdeck: a small unified batch/stream dataflow engine.
//!
//! Programs are written against a declarative operator algebra
//! ([`program`]) or as explicit spout/bolt topologies ([`topology`]). Both
//! lower to a [`graph::SemanticGraph`], which [`plan::expand`] turns into a
//! parallel [`plan::ExecutionPlan`]. The [`runtime`] executes plans as
//! process networks over FIFO channels, either through a master–workers
//! scheduler or with one long-lived process per actor, and records a trace
//! that the [`harness`] checks for determinism and barrier invariants.

pub mod collection;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ingest;
pub mod json;
pub mod kernel;
pub mod plan;
pub mod program;
pub mod reference;
pub mod runtime;
pub mod token;
pub mod topology;
pub mod value;

pub use collection::{bag_equal, discretize, windows, Multiset, StreamChunk, WindowSpec};
pub use error::{Error, Result};
pub use graph::{translate, ActorId, ConsumePolicy, OutputPolicy, SemanticGraph};
pub use kernel::{Kernel, KernelFn, Predicate};
pub use plan::{expand, ExecutionPlan, PlanMode};
pub use program::{lift_to_stream, LogicalProgram, OpId, ProgramMode};
pub use dataset::{InputData, Inputs, Outputs, SinkOutput};
pub use runtime::{run, Dispatch, RunConfig, RunOutput, RuntimeKind};
pub use token::{Granularity, Token};
pub use topology::Topology;
pub use value::{Record, Value};
