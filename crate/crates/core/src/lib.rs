#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod data;
pub mod dist;
pub mod estimands;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod simgen;
