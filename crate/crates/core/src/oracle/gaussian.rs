//! Tilted Gaussian mixture approximation of the constrained predictive law.
//!
//! Tangent coordinates `v` are integrated on a regular grid against the Gaussian
//! density with precision `H*`; each node contributes the product law of
//! `P(v) = P* + n^{-1/2} V v`. Because `A V v = 0` and `1ᵀ V v = 0`, every chart
//! point is feasible exactly; nodes with a nonpositive coordinate are dropped and
//! the remaining weights renormalized.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::curvature::{lanford_radius, CurvatureReport};
use crate::error::{Error, Result};
use crate::oracle::law::{fill_product, mix_tables, product_law, table_len, LawKind, PredictiveLaw};
use crate::projection::Projection;

/// Grid spacing is `2ρ_n / GRID_DIVISIONS` along each tangent axis.
pub const GRID_DIVISIONS: f64 = 21.0;
/// Highest tangent dimension handled by grid quadrature.
pub const MAX_QUADRATURE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureApprox {
    pub law: PredictiveLaw,
    /// Zero-dimensional manifold: the law is exactly `(P*)^{⊗m}`.
    pub degenerate: bool,
    pub rho_n: f64,
    pub spacing: f64,
    pub nodes_used: usize,
    pub nodes_discarded: usize,
    /// Gaussian mass captured by the kept nodes before renormalization.
    pub captured_mass: f64,
}

pub fn gaussian_mixture_approx(
    projection: &Projection,
    curvature: &CurvatureReport,
    n: usize,
    m: usize,
) -> Result<MixtureApprox> {
    let r = curvature.tangent_dim;
    let p_star = &projection.p_star;
    let k = p_star.len();
    if curvature.v.nrows() != k {
        return Err(Error::ShapeMismatch(format!(
            "curvature basis has {} rows for a law on {k} symbols",
            curvature.v.nrows()
        )));
    }
    if r == 0 {
        let mut law = product_law(p_star, m)?;
        law.kind = LawKind::GaussianMixture;
        return Ok(MixtureApprox {
            law,
            degenerate: true,
            rho_n: 0.0,
            spacing: 0.0,
            nodes_used: 1,
            nodes_discarded: 0,
            captured_mass: 1.0,
        });
    }
    if r > MAX_QUADRATURE_DIM {
        return Err(Error::QuadratureDimension(r));
    }
    let len = table_len(k, m)?;
    let window = lanford_radius(curvature.lambda_min, n)?;
    let rho = window.rho_n;
    let spacing = 2.0 * rho / GRID_DIVISIONS;
    let half = (rho / spacing).ceil() as i64 + 2;
    let reach = rho + 2.0 * spacing;
    let scale = 1.0 / (n as f64).sqrt();

    let log_norm = 0.5 * curvature.det_h.ln() - 0.5 * r as f64 * (2.0 * PI).ln() + r as f64 * spacing.ln();
    let h = &curvature.h_star;
    let v = &curvature.v;

    let side = (2 * half + 1) as usize;
    let total_nodes = side.pow(r as u32);
    let mut nodes: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut discarded = 0;
    let mut coord = vec![0.0; r];
    for flat in 0..total_nodes {
        let mut rest = flat;
        for c in coord.iter_mut() {
            *c = ((rest % side) as i64 - half) as f64 * spacing;
            rest /= side;
        }
        let norm = coord.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > reach {
            continue;
        }
        let mut quad = 0.0;
        for i in 0..r {
            for j in 0..r {
                quad += coord[i] * h[(i, j)] * coord[j];
            }
        }
        let weight = (log_norm - 0.5 * quad).exp();
        let p: Vec<f64> = (0..k)
            .map(|x| p_star[x] + scale * (0..r).map(|j| v[(x, j)] * coord[j]).sum::<f64>())
            .collect();
        if p.iter().any(|&px| px <= 0.0) {
            discarded += 1;
            continue;
        }
        nodes.push((weight, p));
    }
    if nodes.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let captured_mass: f64 = nodes.iter().map(|(w, _)| w).sum();
    for (w, _) in nodes.iter_mut() {
        *w /= captured_mass;
    }
    let table = mix_tables(&nodes, len, |p, w, acc| fill_product(p, m, w, acc));
    Ok(MixtureApprox {
        law: PredictiveLaw {
            k,
            m,
            table,
            kind: LawKind::GaussianMixture,
        },
        degenerate: false,
        rho_n: rho,
        spacing,
        nodes_used: nodes.len(),
        nodes_discarded: discarded,
        captured_mass,
    })
}
