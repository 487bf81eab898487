//! Exact enumeration engine: feasible empirical types, their conditional law,
//! the exact predictive distribution and its approximations.

mod diagnostics;
mod gaussian;
mod law;
mod types;

pub use diagnostics::{
    bound_terms, collapse_bound, lanford_fixed_point, quadratic_residual, window_partition, CollapseBoundInputs,
    LanfordFixedPoint, ResidualReport, WindowMass,
};
pub use gaussian::{gaussian_mixture_approx, MixtureApprox, GRID_DIVISIONS, MAX_QUADRATURE_DIM};
pub use law::{
    hypergeometric_bound_check, predictive_exact, product_law, table_len, tv_distance, without_replacement_law,
    HypergeometricCheck, LawKind, PredictiveLaw, TABLE_GUARD,
};
pub(crate) use law::{fill_product, mix_tables};
pub use types::{default_tau, enumerate_types, feasible_types, type_count, TypeEnsemble, TypeIter, TYPE_GUARD};
