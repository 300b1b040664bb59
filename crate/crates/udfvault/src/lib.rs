//! Storage-embedded user-defined functions for a hierarchical scientific
//! data container.
//!
//! A dataset in a container file is normally a grid of values pushed through
//! a filter pipeline on its way to disk. This crate adds one more kind of
//! dataset: one whose stored bytes are a signed, self-describing program.
//! Reading such a dataset decodes the program, checks its signature against
//! a local trust store, and executes it in a sandbox to materialize the
//! values on the fly. Derived quantities can then ship inside the file that
//! holds their inputs, at a cost that does not grow with the grid.
//!
//! The pieces:
//!
//! * [`container`]: the on-disk container format (header, data region,
//!   serialized index, footer) and dataset/group/attribute bookkeeping.
//! * [`filters`]: the chunk filter pipeline (shuffle, deflate) applied
//!   symmetrically on write and read.
//! * [`exprlang`]: a small arithmetic expression language compiled to
//!   stack-machine bytecode, plus the virtual machine that evaluates it.
//! * [`runtime`]: the execution environment handed to a running function:
//!   buffer access, dtype introspection, string and compound views, and the
//!   sandbox that enforces resource limits and capabilities.
//! * [`trust`]: Ed25519 signing identities and the profile store that maps
//!   public keys to capability and limit grants.
//! * [`engine`]: the glue that attaches a function as a dataset, decodes a
//!   stored payload, verifies it, prefetches its inputs, and runs it.
//! * [`bench`]: reproducible storage and read-path measurements.

pub mod bench;
pub mod container;
pub mod dtype;
pub mod engine;
mod error;
pub mod exprlang;
pub mod filters;
pub mod instrument;
pub mod runtime;
pub mod trust;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
