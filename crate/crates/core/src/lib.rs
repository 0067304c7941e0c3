#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
pub mod mapgraph;
pub mod initializer;
pub mod matcher;
pub mod fusion;
pub mod eval;
pub mod sim;
pub mod formats;
pub mod config;
pub mod cli;
