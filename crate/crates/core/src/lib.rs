//! Allocation-only core of the typeforge type-error detector.
//!
//! Everything here is pure: source text goes in, structured results come out.
//! Language-model access and test execution are abstracted behind the
//! [`llm::ChatModel`] and [`pipeline::Executor`] traits so that the std
//! companion crate can plug in HTTP, cassettes and subprocesses.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod prelude;

pub mod analysis;
pub mod constraint;
pub mod diag;
pub mod evaluation;
pub mod llm;
pub mod outcome;
pub mod pipeline;
pub mod project;
pub mod prompts;
pub mod python;
pub mod reflection;
pub mod sanitize;
pub mod testgen;
pub mod text;

/// Version of every persisted JSON artifact produced by this crate.
pub const SCHEMA_VERSION: u32 = 1;
