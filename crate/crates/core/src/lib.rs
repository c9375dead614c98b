#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulation and numerical toolkit for an energy-neutral UWB localization tag.

pub mod energy;
pub mod classify;
pub mod commands;
pub mod config;
pub mod error;
pub mod multilateration;
pub mod office;
pub mod ranging;
pub mod tag;
pub mod trace;

pub use error::{Error, Result};
