//! Static analysis and simulation for networks of IoT nodes.
//!
//! A system is a parallel composition of labelled nodes. Each node owns a
//! store shared by its control processes, sensors that write readings into
//! reserved locations, and actuators that wait for trigger commands. Nodes
//! talk to each other by asynchronous multi-party messages with
//! pattern-matched reception, and values can be protected by symmetric
//! encryption with atomic keys.
//!
//! The crate provides, over one syntax tree:
//!
//! * [`parser`]: concrete syntax to [`ast::System`];
//! * [`semantics`]: a seeded, deterministic small-step interpreter whose
//!   store carries concrete values paired with their abstractions, producing
//!   replayable NDJSON traces;
//! * [`cfa`]: a flow analysis computing the least [`cfa::Estimate`] of every
//!   store content, message, computed value, and actuator action, with an
//!   independent validator and a trace cross-checker;
//! * [`security`]: secrecy classification of values, confinement and leak
//!   detection, clearance levels, communication policies, and actuator usage
//!   reports;
//! * [`report`]: stable machine-readable reports for the command line tool.
//!
//! ```
//! use iotlysa::{analyze, parse_system, AnalysisConfig};
//!
//! let system = parse_system("l1 : [ store || x := 7 . <<x>> : {l2} . 0 ] | l2 : [ store || (; y) . 0 ]").unwrap();
//! let mut cfg = AnalysisConfig::default();
//! cfg.resolve_for(&system).unwrap();
//! let estimate = analyze(&system, &cfg);
//! assert_eq!(iotlysa::validate(&system, &cfg, &estimate), vec![]);
//! ```

pub mod ast;
pub mod cfa;
pub mod config;
pub mod parser;
pub mod report;
pub mod security;
pub mod semantics;

pub use ast::{AbstractValue, Label, System};
pub use cfa::{analyze, cross_check, generate, solve, validate, Estimate};
pub use config::AnalysisConfig;
pub use parser::{parse_system, ParseError};
pub use security::{Classification, Verdict};
pub use semantics::{run_system, Trace};
