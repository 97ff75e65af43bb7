//! Uplink toolkit for cell-free networks whose access points receive through
//! stacked intelligent metasurfaces.

pub mod channel;
pub mod complexity;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod linklevel;
pub mod local_opt;
pub mod rng;
pub mod scenario;
pub mod sim_stack;
pub mod validation;

pub use error::{Error, Result};
