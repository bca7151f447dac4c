//! Design of calibration sub-studies that pair a cheap indirect exposure
//! measure with replicated direct measurements on a subsample.

// negated comparisons are used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod model;
pub mod optimizer;
pub mod pilot;
pub mod requests;
pub mod simulation;
pub mod sweeps;
