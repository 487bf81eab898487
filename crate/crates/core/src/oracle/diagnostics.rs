//! Finite-sample diagnostics on an exact type ensemble: the collapse bound,
//! window tail mass, the quadratic expansion residual of the log-weights and the
//! empirical Lanford radius.

use serde::{Deserialize, Serialize};

use crate::curvature::{euclidean_distance, lanford_radius, window_member, CurvatureReport, LanfordWindow};
use crate::error::{Error, Result};
use crate::oracle::types::TypeEnsemble;
use crate::projection::Projection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseBoundInputs {
    pub c_geo: f64,
    pub c_geo_prime: f64,
    pub p_star_min: f64,
    pub lambda_min: f64,
    pub n: usize,
    pub m: usize,
}

/// `C_geo·m·sqrt(ln n / (n λ_min)) + C'_geo·m² / (n p*_min)`.
pub fn collapse_bound(inputs: &CollapseBoundInputs) -> Result<f64> {
    let CollapseBoundInputs {
        c_geo,
        c_geo_prime,
        p_star_min,
        lambda_min,
        n,
        m,
    } = *inputs;
    if !(c_geo >= 0.0 && c_geo_prime >= 0.0) {
        return Err(Error::InvalidArgument("bound constants must be nonnegative".into()));
    }
    if !(p_star_min > 0.0) || !(lambda_min > 0.0) || n == 0 {
        return Err(Error::InvalidArgument(
            "collapse bound needs p*_min > 0, lambda_min > 0 and n >= 1".into(),
        ));
    }
    let (first, second) = bound_terms(n, m, lambda_min, p_star_min);
    Ok(c_geo * first + c_geo_prime * second)
}

/// The two unit-constant terms of the collapse bound.
pub fn bound_terms(n: usize, m: usize, lambda_min: f64, p_star_min: f64) -> (f64, f64) {
    let nf = n as f64;
    let mf = m as f64;
    (
        mf * (nf.ln() / (nf * lambda_min)).sqrt(),
        mf * mf / (nf * p_star_min),
    )
}

/// Conditional mass inside and outside the Lanford window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMass {
    pub mass_in: f64,
    pub mass_out: f64,
}

pub fn window_partition(ensemble: &TypeEnsemble, p_star: &[f64], window: &LanfordWindow) -> WindowMass {
    let mut mass_in = 0.0;
    let mut mass_out = 0.0;
    for (t, w) in ensemble.types.iter().zip(&ensemble.weights) {
        if window_member(t, p_star, window) {
            mass_in += w;
        } else {
            mass_out += w;
        }
    }
    WindowMass { mass_in, mass_out }
}

/// Tangent coordinates `√n Vᵀ(P − P*)` and the quadratic form `vᵀ H* v`.
fn tangent_quadratic(p: &[f64], projection: &Projection, curvature: &CurvatureReport, n: usize) -> f64 {
    let r = curvature.tangent_dim;
    let root_n = (n as f64).sqrt();
    let v: Vec<f64> = (0..r)
        .map(|j| {
            root_n
                * p.iter()
                    .zip(&projection.p_star)
                    .enumerate()
                    .map(|(x, (a, b))| curvature.v[(x, j)] * (a - b))
                    .sum::<f64>()
        })
        .collect();
    let mut quad = 0.0;
    for i in 0..r {
        for j in 0..r {
            quad += v[i] * curvature.h_star[(i, j)] * v[j];
        }
    }
    quad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub n: usize,
    pub window_count: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    /// Index of the feasible type nearest to `P*` (the reference point).
    pub near_index: usize,
    /// `max_residual / (ln n / √n)`.
    pub scaled_max: f64,
}

/// Compares exact log-weight differences `ln w(P) − ln w(P_near)` with the
/// quadratic prediction `−½ vᵀH*v + ½ v_nearᵀH*v_near` for every type inside the
/// Lanford window.
pub fn quadratic_residual(
    ensemble: &TypeEnsemble,
    projection: &Projection,
    curvature: &CurvatureReport,
) -> Result<ResidualReport> {
    if ensemble.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = ensemble.n;
    let window = lanford_radius(curvature.lambda_min, n)?;
    let probs: Vec<Vec<f64>> = ensemble.types.iter().map(|t| t.probabilities()).collect();
    let near_index = probs
        .iter()
        .enumerate()
        .map(|(i, p)| (i, euclidean_distance(p, &projection.p_star)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    let near_quad = -0.5 * tangent_quadratic(&probs[near_index], projection, curvature, n);
    let near_lw = ensemble.log_weights[near_index];

    let mut residuals = Vec::new();
    for (i, t) in ensemble.types.iter().enumerate() {
        if !window_member(t, &projection.p_star, &window) {
            continue;
        }
        let quad = -0.5 * tangent_quadratic(&probs[i], projection, curvature, n);
        residuals.push(((ensemble.log_weights[i] - near_lw) - (quad - near_quad)).abs());
    }
    if residuals.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let mean_residual = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let nf = n as f64;
    Ok(ResidualReport {
        n,
        window_count: residuals.len(),
        max_residual,
        mean_residual,
        near_index,
        scaled_max: max_residual / (nf.ln() / nf.sqrt()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanfordFixedPoint {
    pub rho_empirical: f64,
    pub rho_formula: f64,
    /// `ρ_emp² λ_min / (2 ln n)`.
    pub ratio: f64,
}

/// Gaussian-weighted average of `n‖P − P*‖²` over the ensemble, with weights
/// `exp(−(n/2) uᵀH*u)`, `u = Vᵀ(P − P*)`, set against `2 ln n / λ_min`.
pub fn lanford_fixed_point(
    ensemble: &TypeEnsemble,
    projection: &Projection,
    curvature: &CurvatureReport,
) -> Result<LanfordFixedPoint> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let n = ensemble.n;
    let nf = n as f64;
    let mut log_g = Vec::with_capacity(ensemble.len());
    let mut sq = Vec::with_capacity(ensemble.len());
    for t in &ensemble.types {
        let p = t.probabilities();
        log_g.push(-0.5 * tangent_quadratic(&p, projection, curvature, n));
        let dist = euclidean_distance(&p, &projection.p_star);
        sq.push(nf * dist * dist);
    }
    let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (lg, s) in log_g.iter().zip(&sq) {
        let g = (lg - max).exp();
        num += g * s;
        den += g;
    }
    let rho_sq = num / den;
    let lambda_min = curvature.lambda_min;
    let rho_formula = if n >= 2 { lanford_radius(lambda_min, n)?.rho_n } else { f64::NAN };
    Ok(LanfordFixedPoint {
        rho_empirical: rho_sq.sqrt(),
        rho_formula,
        ratio: rho_sq * lambda_min / (2.0 * nf.ln()),
    })
}
