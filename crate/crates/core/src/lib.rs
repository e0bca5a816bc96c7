//! Core model and analysis for process-level oversight of agentic coding sessions.
//!
//! The crate is `no_std` (with `alloc`) and free of IO. It covers:
//!
//! - [`trace`]: the Standardized Agentic Trace (SAT) line format, its canonical
//!   serialization and stream validation.
//! - [`seeds`]: the architectural seed language (layers, conformance rules) and
//!   its compiled, evaluable form.
//! - [`graph`]: the causal reasoning DAG built from a validated stream, the
//!   principal chain and DOT / JSON exports.
//! - [`deviation`]: change-fact extraction from recorded diffs and the
//!   deviation detector.
//! - [`cdi`]: reviewer comprehension scoring (the cognitive debt index) and
//!   threshold alerting.
//!
//! IO, the instrumented tool proxy, persistence and the HTTP/CLI surfaces live
//! in the `sentinel` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod cdi;
pub mod deviation;
pub mod diff;
pub mod doc;
pub mod glob;
pub mod graph;
pub mod json;
pub mod seeds;
pub mod time;
pub mod trace;

#[cfg(feature = "testing")]
pub mod testing;

pub use analysis::{analyze, Analysis};
pub use deviation::{detect, Conformance, DeviationReport, ToolCatalog};
pub use graph::{build_graph, CausalGraph, NodeId};
pub use seeds::{compile, parse_seeds, CompiledSeeds, SeedDocument};
pub use trace::{parse_stream, SatStream, Seq, TraceEvent};
