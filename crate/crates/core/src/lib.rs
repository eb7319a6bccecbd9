//! Early at-risk student prediction with attention-augmented recurrent
//! classifiers and cross-length knowledge distillation.

pub mod attention;
pub mod distill;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numerics;
pub mod recurrent;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
