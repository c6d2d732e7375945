// SPDX-License-Identifier: MIT OR Apache-2.0

//! Graph-structure inference diagnostics for in-context learners.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod belief;
pub mod config;
pub mod error;
pub mod graph;
pub mod intervention;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod repr;
pub mod rng;
pub mod surrogate;
pub mod walk;

pub use error::{Error, Result};
