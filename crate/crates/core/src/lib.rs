//! Predictive distributions of exchangeable sequences conditioned on affine
//! moment constraints over a finite alphabet.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod betel;
pub mod curvature;
pub mod error;
pub mod experiment;
mod lp;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod projection;
mod serde_rows;

pub use error::{Error, Result};
pub use model::{empirical_measure, feasibility_check, ConstrainedModel, FeasibilityReport, ModelDoc, TypeVector};
pub use projection::{dual_newton, kl_divergence, project, tilted_distribution, Projection};
