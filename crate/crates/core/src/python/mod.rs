//! A small Python front end: tokenizer, statement tree and per-file
//! definition/call extraction. It validates structure rather than full
//! grammar, which is what indexing and test sanitation need.

use core::fmt;

use crate::prelude::*;

pub mod lexer;
pub mod module;
pub mod syntax;

pub use module::{analyze, CallSite, CallTarget, ClassDef, FunctionDef, ImportBinding, ModuleInfo, Param, ParamKind};
pub use syntax::{check, parse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: u32,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl core::error::Error for SyntaxError {}

/// True for `__name__`-style identifiers.
pub fn is_dunder(name: &str) -> bool {
    name.len() > 4 && name.starts_with("__") && name.ends_with("__")
}
