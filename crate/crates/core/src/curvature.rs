//! Tangent space of the constraint manifold, the projected information Hessian
//! `H* = Vᵀ diag(1/P*) V`, and the quantities derived from its spectrum.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstrainedModel, TypeVector};
use crate::projection::{dual_newton, project, Projection, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Eigenvalues below this are treated as a failure of positive definiteness.
const PD_TOL: f64 = 1e-10;

/// Orthonormal basis of the null space of `c` (columns), taken from the right
/// singular vectors of `c` zero-padded to a square matrix. `dim` fixes the
/// number of columns returned; `None` decides it from a relative singular
/// value threshold.
pub fn null_space(c: &DMatrix<f64>, dim: Option<usize>) -> DMatrix<f64> {
    let k = c.ncols();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let mut square = DMatrix::zeros(c.nrows().max(k), k);
    square.rows_mut(0, c.nrows()).copy_from(c);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let dim = dim.unwrap_or_else(|| {
        let smax = sv.max();
        let tol = smax.max(1.0) * k as f64 * 1e-12;
        sv.iter().filter(|&&s| s <= tol).count()
    });
    let mut picked: Vec<usize> = order[..dim].to_vec();
    picked.sort_unstable();
    DMatrix::from_fn(k, dim, |x, j| v_t[(picked[j], x)])
}

/// Basis `V` (k × r) of `T* = {v : 1ᵀv = 0, Av = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    pub v: DMatrix<f64>,
    /// Set when `r = 0`: the feasible set is a single point.
    pub zero_dimensional: bool,
}

pub fn tangent_basis(model: &ConstrainedModel) -> TangentBasis {
    let k = model.k();
    let d = model.d();
    let mut stacked = DMatrix::zeros(d + 1, k);
    stacked.row_mut(0).fill(1.0);
    if d > 0 {
        stacked.rows_mut(1, d).copy_from(model.features());
    }
    let r = model.tangent_dim();
    TangentBasis {
        v: null_space(&stacked, Some(r)),
        zero_dimensional: r == 0,
    }
}

/// `Vᵀ diag(1/p) V`, symmetrized.
pub fn projected_hessian(p_star: &[f64], v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != p_star.len() {
        return Err(Error::ShapeMismatch(format!(
            "basis has {} rows for a law on {} symbols",
            v.nrows(),
            p_star.len()
        )));
    }
    if let Some(index) = p_star.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::ZeroProbability { index });
    }
    let mut scaled = v.clone();
    for (x, &p) in p_star.iter().enumerate() {
        scaled.row_mut(x).scale_mut(1.0 / p);
    }
    let h = v.transpose() * scaled;
    Ok((&h + h.transpose()) * 0.5)
}

/// Smallest eigenvalue and the full spectrum in descending order. An empty
/// matrix has `λ_min = +∞`.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let spectrum = spectrum_desc(h);
    match spectrum.last() {
        None => Ok((f64::INFINITY, spectrum)),
        Some(&min) if min < -PD_TOL => Err(Error::NotPositiveDefinite { eigenvalue: min }),
        Some(&min) => Ok((min, spectrum)),
    }
}

pub(crate) fn spectrum_desc(h: &DMatrix<f64>) -> Vec<f64> {
    if h.nrows() == 0 {
        return Vec::new();
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Trace and harmonic-mean quantities of a positive-definite `H`.
///
/// `harmonic_mean = r / tr(H⁻¹)` is the harmonic mean of the spectrum, which is
/// never below `λ_min`; the two coincide exactly for isotropic spectra. Both
/// are reported side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub r: usize,
    pub harmonic_mean: f64,
    pub trace: f64,
    pub trace_inverse: f64,
    pub det: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub isotropic: bool,
    /// Whether `λ_min ≥ r / tr(H⁻¹)` holds (within 1e-9).
    pub lambda_min_dominates_harmonic: bool,
}

pub fn spectral_bounds(h: &DMatrix<f64>, r: usize) -> Result<SpectralBounds> {
    if h.nrows() != r || h.ncols() != r {
        return Err(Error::ShapeMismatch(format!("expected {r}x{r}, got {}x{}", h.nrows(), h.ncols())));
    }
    let (lambda_min, spectrum) = min_eigenvalue(h)?;
    let lambda_max = spectrum.first().copied().unwrap_or(f64::INFINITY);
    let trace = h.trace();
    let trace_inverse: f64 = spectrum.iter().map(|l| 1.0 / l).sum();
    let det: f64 = spectrum.iter().product();
    let harmonic_mean = if r == 0 { f64::NAN } else { r as f64 / trace_inverse };
    let isotropic = r > 0 && (lambda_max - lambda_min) <= 1e-9 * lambda_max.abs().max(1.0);
    Ok(SpectralBounds {
        r,
        harmonic_mean,
        trace,
        trace_inverse,
        det,
        lambda_min,
        lambda_max,
        isotropic,
        lambda_min_dominates_harmonic: r > 0 && lambda_min >= harmonic_mean - 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub tangent_dim: usize,
    #[serde(rename = "V", with = "crate::serde_rows")]
    pub v: DMatrix<f64>,
    #[serde(rename = "H_star", with = "crate::serde_rows")]
    pub h_star: DMatrix<f64>,
    /// Descending.
    pub spectrum: Vec<f64>,
    /// `+∞` (serialized as null) when the manifold is a point.
    pub lambda_min: f64,
    #[serde(rename = "trace_H")]
    pub trace_h: f64,
    #[serde(rename = "trace_Hinv")]
    pub trace_hinv: f64,
    #[serde(rename = "det_H")]
    pub det_h: f64,
    pub lower_bound_traceinv: f64,
    /// `(1/p*_max, 1/p*_min)`.
    pub compression_bounds: (f64, f64),
}

impl CurvatureReport {
    pub fn lambda_max(&self) -> f64 {
        self.spectrum.first().copied().unwrap_or(f64::INFINITY)
    }
}

pub fn curvature_report(model: &ConstrainedModel, projection: &Projection) -> Result<CurvatureReport> {
    let basis = tangent_basis(model);
    report_from_basis(basis.v, projection)
}

pub(crate) fn report_from_basis(v: DMatrix<f64>, projection: &Projection) -> Result<CurvatureReport> {
    let r = v.ncols();
    let h_star = projected_hessian(&projection.p_star, &v)?;
    let bounds = spectral_bounds(&h_star, r)?;
    let (lambda_min, spectrum) = min_eigenvalue(&h_star)?;
    Ok(CurvatureReport {
        tangent_dim: r,
        v,
        h_star,
        spectrum,
        lambda_min,
        trace_h: bounds.trace,
        trace_hinv: bounds.trace_inverse,
        det_h: bounds.det,
        lower_bound_traceinv: bounds.harmonic_mean,
        compression_bounds: (1.0 / projection.p_max(), 1.0 / projection.p_min()),
    })
}

/// Radius `ρ_n = sqrt(2 ln n / λ_min)` of the curvature-adaptive window, in
/// `√n`-scaled tangent units; the Euclidean radius is `ρ_n / √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanfordWindow {
    pub rho_n: f64,
    pub radius_euclidean: f64,
    pub n: usize,
}

pub fn lanford_radius(lambda_min: f64, n: usize) -> Result<LanfordWindow> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("window needs n >= 2, got {n}")));
    }
    if !(lambda_min > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_min must be positive, got {lambda_min}")));
    }
    let rho_n = (2.0 * (n as f64).ln() / lambda_min).sqrt();
    Ok(LanfordWindow {
        rho_n,
        radius_euclidean: rho_n / (n as f64).sqrt(),
        n,
    })
}

pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖P − P*‖₂ ≤ ρ_n n^{-1/2}`, boundary included.
pub fn window_member(t: &TypeVector, p_star: &[f64], window: &LanfordWindow) -> bool {
    euclidean_distance(&t.probabilities(), p_star) <= window.radius_euclidean
}

/// Smallest `n` with `n ≥ m² ln(1/ε) / (ε² λ_min)`.
pub fn sample_size_plan(m: usize, epsilon: f64, lambda_min: f64) -> Result<u64> {
    if m == 0 {
        return Err(Error::InvalidArgument("prediction horizon m must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(lambda_min > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_min must be positive, got {lambda_min}")));
    }
    let m = m as f64;
    Ok((m * m * (1.0 / epsilon).ln() / (epsilon * epsilon * lambda_min)).ceil() as u64)
}

pub const DEFAULT_TEMPER_BETA: f64 = 1.0;
pub const DEFAULT_TEMPER_LAMBDA0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tempering {
    pub temperature: f64,
    pub effective_lambda_min: f64,
}

/// `T = 1 + β ln(1 + λ̂/λ₀)`; the tempered Hessian is `H*/T`.
pub fn temper(lambda_hat: f64, beta: f64, lambda0: f64) -> Result<Tempering> {
    if !(lambda_hat >= 0.0) || !(beta >= 0.0) || !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tempering needs lambda_hat >= 0, beta >= 0, lambda0 > 0 (got {lambda_hat}, {beta}, {lambda0})"
        )));
    }
    let temperature = 1.0 + beta * (lambda_hat / lambda0).ln_1p();
    Ok(Tempering {
        temperature,
        effective_lambda_min: lambda_hat / temperature,
    })
}

/// Geometric term `m·sqrt(ln n / (n λ_min))` of the collapse bound.
pub fn collapse_rate_term(m: usize, n: usize, lambda_min: f64) -> f64 {
    m as f64 * ((n as f64).ln() / (n as f64 * lambda_min)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    /// `alpha+`, `alpha-` or `reference`.
    pub kind: String,
    pub index: usize,
    pub delta_lambda_min: f64,
    /// Spectral norm of the Hessian change.
    pub delta_h_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delta: f64,
    pub lambda_min: f64,
    pub max_abs_delta_lambda_min: f64,
    /// `max |Δλ_min| / δ` over the perturbations (0 when δ = 0).
    pub lipschitz: f64,
    /// `|Δλ_min| ≤ ‖ΔH‖₂ + 1e-10` on every perturbation.
    pub weyl_consistent: bool,
    pub records: Vec<PerturbationRecord>,
}

/// Deterministic sensitivity of `λ_min`: each target moment is moved by `±δ`
/// and the reference law takes a step `(1−δ)Q + δ e_x` toward every vertex.
/// The tangent basis only depends on `A`, so all Hessians share one basis and
/// Weyl's inequality applies directly.
pub fn perturbation_stability(model: &ConstrainedModel, delta: f64) -> Result<StabilityReport> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    let basis = tangent_basis(model).v;
    let base_projection = project(model)?;
    let h0 = projected_hessian(&base_projection.p_star, &basis)?;
    let (lambda0, _) = min_eigenvalue(&h0)?;

    let mut candidates: Vec<(String, usize, ConstrainedModel)> = Vec::new();
    for i in 0..model.d() {
        for (kind, sign) in [("alpha+", 1.0), ("alpha-", -1.0)] {
            let mut alpha = model.alpha().to_vec();
            alpha[i] += sign * delta;
            candidates.push((kind.to_string(), i, model.with_alpha(alpha)?));
        }
    }
    for x in 0..model.k() {
        let q: Vec<f64> = model
            .reference()
            .iter()
            .enumerate()
            .map(|(y, &qy)| (1.0 - delta) * qy + if x == y { delta } else { 0.0 })
            .collect();
        candidates.push(("reference".to_string(), x, model.with_reference(q)?));
    }

    let mut records = Vec::with_capacity(candidates.len());
    for (kind, index, perturbed) in candidates {
        let p = dual_newton(&perturbed, perturbed.reference(), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let h = projected_hessian(&p.p_star, &basis)?;
        let (lambda, _) = min_eigenvalue(&h)?;
        let diff = &h - &h0;
        let delta_h_norm = spectrum_desc(&diff).iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        let delta_lambda_min = if basis.ncols() == 0 { 0.0 } else { lambda - lambda0 };
        records.push(PerturbationRecord {
            kind,
            index,
            delta_lambda_min,
            delta_h_norm,
        });
    }

    let max_abs = records.iter().fold(0.0_f64, |m, r| m.max(r.delta_lambda_min.abs()));
    Ok(StabilityReport {
        delta,
        lambda_min: lambda0,
        max_abs_delta_lambda_min: max_abs,
        lipschitz: if delta > 0.0 { max_abs / delta } else { 0.0 },
        weyl_consistent: records
            .iter()
            .all(|r| r.delta_lambda_min.abs() <= r.delta_h_norm + 1e-10),
        records,
    })
}
