//! Information projection of a base law onto `{P : A P = α}` through the
//! exponential-tilt dual.
//!
//! The dual `g(λ) = λᵀα − log Σ_x base(x) exp(λᵀh(x))` is concave with gradient
//! `α − E_λ[h]` and Hessian `−Cov_λ(h)`, so damped Newton from `λ = 0` converges
//! whenever `α` is an interior point of the feature hull. The multiplier uses the
//! positive-tilt convention `P*(x) ∝ base(x)·exp(λᵀh(x))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{feasibility_check, ConstrainedModel};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lambda_star: Vec<f64>,
    pub p_star: Vec<f64>,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub dual_value: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl Projection {
    pub fn p_min(&self) -> f64 {
        self.p_star.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn p_max(&self) -> f64 {
        self.p_star.iter().copied().fold(0.0, f64::max)
    }
}

/// Projects the model's own reference law with default tolerances.
pub fn project(model: &ConstrainedModel) -> Result<Projection> {
    dual_newton(model, model.reference(), DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Damped Newton ascent on the dual. `base` must be strictly positive; it need
/// not be normalized (the partition function absorbs any scale).
pub fn dual_newton(model: &ConstrainedModel, base: &[f64], tol: f64, max_iter: usize) -> Result<Projection> {
    let k = model.k();
    if base.len() != k {
        return Err(Error::LengthMismatch {
            what: "base",
            got: base.len(),
            expected: k,
        });
    }
    for (index, &value) in base.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveReference { index, value });
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }

    let d = model.d();
    let a = model.features();
    let alpha = DVector::from_column_slice(model.alpha());

    if d > 0 {
        let report = feasibility_check(model);
        if !report.alpha_in_hull {
            return Err(Error::NotInHull);
        }
        if !report.interior {
            return Err(Error::BoundaryAlpha);
        }
    }

    let blowup = 1e3 * (1.0 / tol).ln().max(1.0);
    let mut lambda = DVector::<f64>::zeros(d);
    let mut state = TiltState::at(a, base, &lambda);
    let mut iterations = 0;

    loop {
        let grad = &alpha - &state.mean;
        let gnorm = grad.amax();
        if gnorm <= tol {
            // one extra Newton step lands at roundoff level; keep it only if it helps
            if let Some(chol) = state.covariance(a).cholesky() {
                let candidate = &lambda + chol.solve(&grad);
                let next = TiltState::at(a, base, &candidate);
                if (&alpha - &next.mean).amax() < gnorm {
                    lambda = candidate;
                    state = next;
                }
            }
            break;
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterations {
                iterations,
                gradient_norm: gnorm,
            });
        }
        let cov = state.covariance(a);
        let chol = cov.cholesky().ok_or(Error::SingularHessian)?;
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        let value = lambda.dot(&alpha) - state.log_z;

        let mut s = 1.0;
        let mut candidate = &lambda + &step;
        let mut next = TiltState::at(a, base, &candidate);
        // inside the quadratic region the ascent is below roundoff; take the full step
        if slope > 1e-14 * (1.0 + value.abs()) {
            for _ in 0..MAX_HALVINGS {
                let new_value = candidate.dot(&alpha) - next.log_z;
                if new_value.is_finite() && new_value >= value + ARMIJO_C * s * slope {
                    break;
                }
                s *= 0.5;
                candidate = &lambda + s * &step;
                next = TiltState::at(a, base, &candidate);
            }
        }
        lambda = candidate;
        state = next;
        iterations += 1;
        if lambda.amax() > blowup {
            return Err(Error::BoundaryAlpha);
        }
    }

    let p_star = state.probabilities;
    let kkt_residual = model.moment_residual(&p_star);
    let dual_value = lambda.dot(&alpha) - state.log_z;
    Ok(Projection {
        lambda_star: lambda.iter().copied().collect(),
        p_star,
        log_z: state.log_z,
        dual_value,
        iterations,
        kkt_residual,
    })
}

struct TiltState {
    probabilities: Vec<f64>,
    log_z: f64,
    mean: DVector<f64>,
}

impl TiltState {
    fn at(a: &DMatrix<f64>, base: &[f64], lambda: &DVector<f64>) -> Self {
        let (probabilities, log_z) = tilt(a, base, lambda.as_slice());
        let mean = a * DVector::from_column_slice(&probabilities);
        Self {
            probabilities,
            log_z,
            mean,
        }
    }

    /// `Σ_x p(x) (h(x) − μ)(h(x) − μ)ᵀ`
    fn covariance(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = a.nrows();
        let mut cov = DMatrix::zeros(d, d);
        for (x, &p) in self.probabilities.iter().enumerate() {
            let centered = a.column(x) - &self.mean;
            cov.ger(p, &centered, &centered, 1.0);
        }
        cov
    }
}

/// Log-space tilt; returns the normalized law and `log Σ base·exp(λᵀh)`.
fn tilt(a: &DMatrix<f64>, base: &[f64], lambda: &[f64]) -> (Vec<f64>, f64) {
    let logits: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(x, b)| {
            let t: f64 = lambda.iter().enumerate().map(|(i, l)| l * a[(i, x)]).sum();
            b.ln() + t
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let log_z = max + total.ln();
    (weights.into_iter().map(|w| w / total).collect(), log_z)
}

/// `base(x)·exp(λᵀh(x))`, normalized.
pub fn tilted_distribution(model: &ConstrainedModel, base: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    if base.len() != model.k() {
        return Err(Error::LengthMismatch {
            what: "base",
            got: base.len(),
            expected: model.k(),
        });
    }
    if lambda.len() != model.d() {
        return Err(Error::LengthMismatch {
            what: "lambda",
            got: lambda.len(),
            expected: model.d(),
        });
    }
    for (index, &value) in base.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveReference { index, value });
        }
    }
    Ok(tilt(model.features(), base, lambda).0)
}

/// `D(P‖Q) = Σ P log(P/Q)` with `0·log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "Q",
            got: q.len(),
            expected: p.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::SupportMismatch { index });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point(alpha: f64) -> ConstrainedModel {
        ConstrainedModel::new(2, vec![0.5, 0.5], vec![vec![1.0, 2.0]], vec![alpha]).unwrap()
    }

    #[test]
    fn feasible_reference_needs_no_tilt() {
        let p = project(&two_point(1.5)).unwrap();
        assert_eq!(p.iterations, 0);
        assert_abs_diff_eq!(p.lambda_star[0], 0.0);
        assert_abs_diff_eq!(p.p_star[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_point_closed_form() {
        let p = project(&two_point(1.7)).unwrap();
        assert_abs_diff_eq!(p.p_star[0], 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(p.p_star[1], 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(p.lambda_star[0], (7.0f64 / 3.0).ln(), epsilon = 1e-9);
        assert!(p.kkt_residual <= 1e-10);
    }

    #[test]
    fn dual_value_is_divergence_at_optimum() {
        let m = ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![vec![1.0, 2.0, 3.0]], vec![2.3]).unwrap();
        let p = project(&m).unwrap();
        let kl = kl_divergence(&p.p_star, m.reference()).unwrap();
        let gap = p.lambda_star.iter().map(|l| l.abs()).sum::<f64>() * p.kkt_residual;
        assert!((p.dual_value - kl).abs() <= gap + 1e-14);
        assert_abs_diff_eq!(p.dual_value, kl, epsilon = 1e-9);
    }

    #[test]
    fn boundary_and_outside_are_rejected() {
        assert!(matches!(project(&two_point(2.0)), Err(Error::BoundaryAlpha)));
        assert!(matches!(project(&two_point(2.5)), Err(Error::NotInHull)));
    }

    #[test]
    fn unconstrained_model_returns_base() {
        let m = ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![], vec![]).unwrap();
        let p = project(&m).unwrap();
        for (a, b) in p.p_star.iter().zip([0.2, 0.5, 0.3]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(p.lambda_star.is_empty());
    }

    #[test]
    fn zero_dimensional_manifold_ignores_reference() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![1.0, 4.0, 9.0]];
        let target = [0.2, 0.3, 0.5];
        let alpha = vec![
            target.iter().zip(&rows[0]).map(|(p, h)| p * h).sum(),
            target.iter().zip(&rows[1]).map(|(p, h)| p * h).sum(),
        ];
        for q in [vec![0.2, 0.5, 0.3], vec![0.6, 0.3, 0.1]] {
            let m = ConstrainedModel::new(3, q, rows.clone(), alpha.clone()).unwrap();
            let p = project(&m).unwrap();
            for (a, b) in p.p_star.iter().zip(&target) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn tilt_identity_and_overflow() {
        let m = two_point(1.5);
        assert_eq!(tilted_distribution(&m, &[0.5, 0.5], &[0.0]).unwrap(), vec![0.5, 0.5]);
        let t = tilted_distribution(&m, &[0.5, 0.5], &[(7.0f64 / 3.0).ln()]).unwrap();
        assert_abs_diff_eq!(t[0], 0.3, epsilon = 1e-15);
        let huge = tilted_distribution(&m, &[0.5, 0.5], &[1e6]).unwrap();
        assert!(huge.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(huge.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_basic_values() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportMismatch { index: 1 })
        ));
    }
}
