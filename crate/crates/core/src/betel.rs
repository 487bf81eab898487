//! Tilted parametric families on a finite θ grid and their exponentially tilted
//! empirical likelihood posteriors.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{curvature_report, euclidean_distance, CurvatureReport};
use crate::error::{Error, Result};
use crate::model::{empirical_measure, ConstrainedModel, TypeVector};
use crate::oracle::{fill_product, mix_tables, table_len, LawKind, PredictiveLaw};
use crate::projection::{dual_newton, kl_divergence, Projection, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Relative tolerance under which two divergences count as tied.
const TIE_TOL: f64 = 1e-12;

/// Grid file contents: parameter points, optional moment targets (defaulting to
/// the parameter itself) and an optional prior (defaulting to uniform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub theta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

impl GridDoc {
    pub fn alpha_map(&self) -> Vec<Vec<f64>> {
        self.alpha.clone().unwrap_or_else(|| self.theta.clone())
    }

    pub fn prior_or_flat(&self) -> Vec<f64> {
        self.prior.clone().unwrap_or_else(|| flat_prior(self.theta.len()))
    }
}

pub fn flat_prior(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedFamily {
    pub theta_grid: Vec<Vec<f64>>,
    pub alpha_map: Vec<Vec<f64>>,
    /// Constraint rows `h_i(x)` shared by every member.
    pub features: Vec<Vec<f64>>,
    pub projections: Vec<Projection>,
    pub curvatures: Vec<CurvatureReport>,
}

impl TiltedFamily {
    pub fn len(&self) -> usize {
        self.theta_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_grid.is_empty()
    }

    pub fn k(&self) -> usize {
        self.projections.first().map_or(0, |p| p.p_star.len())
    }
}

type Member = (Vec<Vec<f64>>, Projection, CurvatureReport);

pub fn build_family(
    template: &ConstrainedModel,
    theta_grid: Vec<Vec<f64>>,
    alpha_map: Vec<Vec<f64>>,
) -> Result<TiltedFamily> {
    build_family_with_base(template, template.reference(), theta_grid, alpha_map)
}

/// As [`build_family`], tilting an arbitrary positive `base` (not necessarily
/// normalized) instead of the template's reference law.
pub fn build_family_with_base(
    template: &ConstrainedModel,
    base: &[f64],
    theta_grid: Vec<Vec<f64>>,
    alpha_map: Vec<Vec<f64>>,
) -> Result<TiltedFamily> {
    if theta_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if theta_grid.len() != alpha_map.len() {
        return Err(Error::LengthMismatch {
            what: "alpha map",
            got: alpha_map.len(),
            expected: theta_grid.len(),
        });
    }
    let solved: Vec<Result<Member>> = alpha_map
        .par_iter()
        .enumerate()
        .map(|(index, alpha)| {
            let at = |source: Error| Error::AtGridPoint {
                index,
                source: Box::new(source),
            };
            let model = template.with_alpha(alpha.clone()).map_err(at)?;
            let projection = dual_newton(&model, base, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(at)?;
            let curvature = curvature_report(&model, &projection).map_err(at)?;
            Ok((model.feature_rows(), projection, curvature))
        })
        .collect();
    let mut features = Vec::new();
    let mut projections = Vec::with_capacity(solved.len());
    let mut curvatures = Vec::with_capacity(solved.len());
    for item in solved {
        let (rows, p, c) = item?;
        features = rows;
        projections.push(p);
        curvatures.push(c);
    }
    Ok(TiltedFamily {
        theta_grid,
        alpha_map,
        features,
        projections,
        curvatures,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `∏ P*_θ(X_i)`.
    #[default]
    Canonical,
    /// `∏ P*_θ(X_i) · exp(λ_θᵀ Σ h(X_i))`.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub prior: Vec<f64>,
    /// Normalized log posterior; `-inf` where the prior vanishes.
    pub log_posterior: Vec<f64>,
    pub posterior: Vec<f64>,
    pub variant: Variant,
    pub n: usize,
}

/// Posterior from a sample of 1-based symbols.
pub fn betel_posterior(
    family: &TiltedFamily,
    sample: &[usize],
    prior: &[f64],
    variant: Variant,
) -> Result<GridPosterior> {
    if family.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let counts = empirical_measure(sample, family.k())?;
    betel_posterior_from_counts(family, &counts, prior, variant)
}

/// Posterior from the empirical type alone.
pub fn betel_posterior_from_counts(
    family: &TiltedFamily,
    counts: &TypeVector,
    prior: &[f64],
    variant: Variant,
) -> Result<GridPosterior> {
    if family.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if prior.len() != family.len() {
        return Err(Error::LengthMismatch {
            what: "prior",
            got: prior.len(),
            expected: family.len(),
        });
    }
    if prior.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || prior.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("prior must be nonnegative with positive mass".into()));
    }
    if counts.k() != family.k() {
        return Err(Error::LengthMismatch {
            what: "counts",
            got: counts.k(),
            expected: family.k(),
        });
    }
    let sum_h: Vec<f64> = family
        .features
        .iter()
        .map(|row| row.iter().zip(&counts.counts).map(|(h, &c)| h * c as f64).sum())
        .collect();
    let log_unnorm: Vec<f64> = family
        .projections
        .iter()
        .zip(prior)
        .map(|(proj, &w)| {
            if w == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut ll: f64 = counts
                .counts
                .iter()
                .zip(&proj.p_star)
                .filter(|(&c, _)| c > 0)
                .map(|(&c, p)| c as f64 * p.ln())
                .sum();
            if variant == Variant::AsPrinted {
                ll += proj.lambda_star.iter().zip(&sum_h).map(|(l, s)| l * s).sum::<f64>();
            }
            w.ln() + ll
        })
        .collect();
    let max = log_unnorm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + log_unnorm.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_posterior: Vec<f64> = log_unnorm.iter().map(|l| l - log_norm).collect();
    let posterior = log_posterior.iter().map(|l| l.exp()).collect();
    Ok(GridPosterior {
        prior: prior.to_vec(),
        log_posterior,
        posterior,
        variant,
        n: counts.n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    /// Grid index nearest to the supplied `θ₀`.
    pub theta0_index: usize,
    pub radii: Vec<f64>,
    /// Posterior mass with `‖θ − θ₀‖₂ > r`, one entry per radius.
    pub tail_mass: Vec<f64>,
    /// `C·sqrt(ln n / (n λ_min(H*_θ₀)))`.
    pub reference_radius: f64,
}

pub fn concentration_profile(
    posterior: &GridPosterior,
    family: &TiltedFamily,
    theta0: &[f64],
    radii: &[f64],
    c: f64,
) -> Result<ConcentrationProfile> {
    if family.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let dist: Vec<f64> = family.theta_grid.iter().map(|t| euclidean_distance(t, theta0)).collect();
    let theta0_index = dist
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &d)| if d < best.1 { (i, d) } else { best })
        .0;
    let tail_mass = radii
        .iter()
        .map(|&r| {
            dist.iter()
                .zip(&posterior.posterior)
                .filter(|(&d, _)| d > r)
                .map(|(_, w)| w)
                .sum()
        })
        .collect();
    let n = posterior.n as f64;
    let lambda_min = family.curvatures[theta0_index].lambda_min;
    let reference_radius = if posterior.n >= 2 {
        c * (n.ln() / (n * lambda_min)).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ConcentrationProfile {
        theta0_index,
        radii: radii.to_vec(),
        tail_mass,
        reference_radius,
    })
}

/// Posterior mixture of the product laws `(P*_θ)^{⊗m}`.
pub fn betel_predictive(posterior: &GridPosterior, family: &TiltedFamily, m: usize) -> Result<PredictiveLaw> {
    if family.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if posterior.posterior.len() != family.len() {
        return Err(Error::LengthMismatch {
            what: "posterior",
            got: posterior.posterior.len(),
            expected: family.len(),
        });
    }
    let k = family.k();
    let len = table_len(k, m)?;
    let items: Vec<(f64, &[f64])> = posterior
        .posterior
        .iter()
        .zip(&family.projections)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, p)| (w, p.p_star.as_slice()))
        .collect();
    let table = mix_tables(&items, len, |p, w, acc| fill_product(p, m, w, acc));
    Ok(PredictiveLaw {
        k,
        m,
        table,
        kind: LawKind::BetelMixture,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Minimize `D(P₀ ‖ P*_θ)`.
    #[default]
    Forward,
    /// Minimize `D(P*_θ ‖ P₀)`.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTrue {
    pub index: usize,
    pub divergence: f64,
    /// Another grid point attains the same divergence; the smallest index wins.
    pub tie: bool,
    pub divergences: Vec<f64>,
}

pub fn pseudo_true(family: &TiltedFamily, p0: &[f64], direction: Direction) -> Result<PseudoTrue> {
    if family.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if p0.len() != family.k() {
        return Err(Error::LengthMismatch {
            what: "p0",
            got: p0.len(),
            expected: family.k(),
        });
    }
    if let Some(index) = p0.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::ZeroProbability { index });
    }
    let divergences = family
        .projections
        .iter()
        .map(|proj| match direction {
            Direction::Forward => kl_divergence(p0, &proj.p_star),
            Direction::Reverse => kl_divergence(&proj.p_star, p0),
        })
        .collect::<Result<Vec<f64>>>()?;
    let (index, divergence) = divergences
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
    let tol = TIE_TOL * (1.0 + divergence.abs());
    let tie = divergences
        .iter()
        .enumerate()
        .any(|(i, &d)| i != index && (d - divergence).abs() <= tol);
    Ok(PseudoTrue {
        index,
        divergence,
        tie,
        divergences,
    })
}

/// `n` i.i.d. draws from `p` as 1-based symbols, reproducible from `seed`.
pub fn simulate_sample(p: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng) + 1).collect())
}
