//! Batch runner for homogenization experiments: configuration, stages and
//! artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barenblatt;
pub mod config;
pub mod pipeline;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("diagnostics tolerance failed: {0}")]
    Tolerance(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Tolerance(_) => 4,
        }
    }
}
