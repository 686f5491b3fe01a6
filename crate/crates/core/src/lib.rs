#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod column;
pub mod config;
pub mod constitutive;
pub mod element;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod memtier;
pub mod mesh;
pub mod model;
pub mod par;
pub mod postproc;
pub mod sparse;
pub mod timestep;

pub use error::{Error, ErrorKind, Result};
