//! Std side of guidestage: file formats, JSON schemas, the synthetic toy
//! task, training and sampling drivers, self-check and the CLI.

// `!(x < tol)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod dto;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod manifest;
pub mod oracle;
pub mod sample;
pub mod selfcheck;
pub mod toy;
pub mod train;

pub use error::{CliError, CliResult};
