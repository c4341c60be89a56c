//! Discrete estimators for quantitative rectifiability of point clouds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balanced;
pub mod curvature;
pub mod energy;
pub mod error;
pub mod generators;
pub mod geom;
pub mod measure;
pub mod parallel;
pub mod report;
pub mod tangent;

pub use error::{Error, Result};
