//! Finite probability model with affine moment constraints.
//!
//! Symbols are labelled `1..=k` at the API boundary (sample files, CLI) and
//! indexed `0..k` internally.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};

/// Accepted deviation of the raw reference distribution from total mass one.
const NORMALIZATION_SLACK: f64 = 1e-9;
/// Relative residual below which a constraint row counts as dependent.
const RANK_TOL: f64 = 1e-9;
/// LP margin above which the target counts as an interior point.
const INTERIOR_TOL: f64 = 1e-12;

/// JSON document describing a model; the field names are part of the CLI contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(default)]
    pub features: Vec<Vec<f64>>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

impl ModelDoc {
    pub fn validate(&self) -> Result<ConstrainedModel> {
        ConstrainedModel::new(self.k, self.q.clone(), self.features.clone(), self.alpha.clone())
    }
}

/// Reference law `Q` on `k` symbols, feature matrix `A` (d × k, column x is h(x))
/// and target moments `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedModel {
    k: usize,
    q: Vec<f64>,
    features: DMatrix<f64>,
    alpha: Vec<f64>,
    bound: f64,
    dropped_rows: Vec<usize>,
    warnings: Vec<String>,
}

impl ConstrainedModel {
    /// Validates raw inputs. Dependent constraint rows are dropped (after checking
    /// that their target moment is implied by the kept rows) so that `A` has full
    /// row rank and `rank [1; A] = d + 1` downstream.
    pub fn new(k: usize, q: Vec<f64>, features: Vec<Vec<f64>>, alpha: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::EmptyAlphabet(k));
        }
        if q.len() != k {
            return Err(Error::LengthMismatch {
                what: "Q",
                got: q.len(),
                expected: k,
            });
        }
        if features.len() != alpha.len() {
            return Err(Error::LengthMismatch {
                what: "alpha",
                got: alpha.len(),
                expected: features.len(),
            });
        }
        for row in &features {
            if row.len() != k {
                return Err(Error::LengthMismatch {
                    what: "feature row",
                    got: row.len(),
                    expected: k,
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("features"));
            }
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("alpha"));
        }
        for (index, &value) in q.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveReference { index, value });
            }
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_SLACK {
            return Err(Error::NotNormalized { sum });
        }
        let q = if (sum - 1.0).abs() > 4.0 * f64::EPSILON * k as f64 {
            q.iter().map(|v| v / sum).collect()
        } else {
            q
        };

        let (kept, dropped) = independent_rows(k, &features, &alpha)?;
        let warnings = dropped
            .iter()
            .map(|i| format!("dropped dependent constraint row {i}"))
            .collect();
        let d = kept.len();
        let features = DMatrix::from_fn(d, k, |i, x| features[kept[i]][x]);
        let alpha: Vec<f64> = kept.iter().map(|&i| alpha[i]).collect();
        let bound = features.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

        Ok(Self {
            k,
            q,
            features,
            alpha,
            bound,
            dropped_rows: dropped,
            warnings,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        doc.validate()
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            k: self.k,
            q: self.q.clone(),
            features: self.feature_rows(),
            alpha: self.alpha.clone(),
        }
    }

    /// Same feature map with a different target.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        Self::new(self.k, self.q.clone(), self.feature_rows(), alpha)
    }

    /// Same constraints with a different reference law.
    pub fn with_reference(&self, q: Vec<f64>) -> Result<Self> {
        Self::new(self.k, q, self.feature_rows(), self.alpha.clone())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of (independent) constraint rows.
    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    /// Dimension of the feasible manifold, `k - 1 - d`.
    pub fn tangent_dim(&self) -> usize {
        self.k - 1 - self.d()
    }

    pub fn is_zero_dimensional(&self) -> bool {
        self.tangent_dim() == 0
    }

    pub fn reference(&self) -> &[f64] {
        &self.q
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d())
            .map(|i| self.features.row(i).iter().copied().collect())
            .collect()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Largest absolute feature entry.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dropped_rows(&self) -> &[usize] {
        &self.dropped_rows
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `A p` for a vector on the alphabet.
    pub fn moments(&self, p: &[f64]) -> Vec<f64> {
        let p = DVector::from_column_slice(p);
        (&self.features * p).iter().copied().collect()
    }

    /// `‖A p − α‖∞`.
    pub fn moment_residual(&self, p: &[f64]) -> f64 {
        self.moments(p)
            .iter()
            .zip(&self.alpha)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Splits rows into a maximal independent set (relative to the all-ones row)
/// and the dependent remainder.
fn independent_rows(k: usize, rows: &[Vec<f64>], alpha: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(k, 1.0 / (k as f64).sqrt())];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let a = DVector::from_column_slice(row);
        let mut r = a.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for e in &basis {
                let c = r.dot(e);
                r.axpy(-c, e, 1.0);
            }
        }
        let scale = a.norm().max(1.0);
        if r.norm() <= RANK_TOL * scale {
            check_implied_target(k, rows, alpha, &kept, i)?;
            dropped.push(i);
        } else {
            let norm = r.norm();
            basis.push(r / norm);
            kept.push(i);
        }
    }
    Ok((kept, dropped))
}

fn check_implied_target(k: usize, rows: &[Vec<f64>], alpha: &[f64], kept: &[usize], row: usize) -> Result<()> {
    let m = DMatrix::from_fn(k, kept.len() + 1, |x, j| if j == 0 { 1.0 } else { rows[kept[j - 1]][x] });
    let target = DVector::from_column_slice(&rows[row]);
    let coeffs = m
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|_| Error::SingularMatrix)?;
    let implied = coeffs[0]
        + kept
            .iter()
            .enumerate()
            .map(|(j, &r)| coeffs[j + 1] * alpha[r])
            .sum::<f64>();
    if (implied - alpha[row]).abs() > 1e-8 * (1.0 + alpha[row].abs()) {
        return Err(Error::InconsistentConstraints { row });
    }
    Ok(())
}

/// Result of the hull-membership linear program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub alpha_in_hull: bool,
    /// A strictly positive feasible `p` exists.
    pub interior: bool,
    /// Largest achievable `min_x p(x)` over feasible `p` (0 when infeasible).
    pub interior_margin: f64,
    pub rank_a: usize,
    pub reduced_rows: Vec<usize>,
    pub tangent_dim: usize,
}

/// Decides `α ∈ conv{h(x)}` through the LP `p ≥ 0, 1ᵀp = 1, Ap = α`, written as
/// `max t` over `p = t·1 + s` with `s, t ≥ 0`, so one solve settles both
/// membership and interiority.
pub fn feasibility_check(model: &ConstrainedModel) -> FeasibilityReport {
    let k = model.k();
    let d = model.d();
    let a = model.features();
    let mut rows = Vec::with_capacity(d + 1);
    let mut rhs = Vec::with_capacity(d + 1);
    let mut first = vec![1.0; k + 1];
    first[0] = k as f64;
    rows.push(first);
    rhs.push(1.0);
    for i in 0..d {
        let mut row = Vec::with_capacity(k + 1);
        row.push(a.row(i).sum());
        row.extend(a.row(i).iter().copied());
        rows.push(row);
        rhs.push(model.alpha()[i]);
    }
    let mut cost = vec![0.0; k + 1];
    cost[0] = -1.0;

    let (alpha_in_hull, margin) = match lp::minimize(&rows, &rhs, &cost) {
        LpOutcome::Optimal { x, .. } => (true, x[0]),
        LpOutcome::Infeasible => (false, 0.0),
        // t ≤ 1/k, so the program is always bounded
        LpOutcome::Unbounded => unreachable!("hull program is bounded"),
    };
    FeasibilityReport {
        alpha_in_hull,
        interior: alpha_in_hull && margin > INTERIOR_TOL,
        interior_margin: margin,
        rank_a: d,
        reduced_rows: model.dropped_rows().to_vec(),
        tangent_dim: model.tangent_dim(),
    }
}

/// Count vector of an `n`-point sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeVector {
    pub counts: Vec<usize>,
    pub n: usize,
}

impl TypeVector {
    pub fn new(counts: Vec<usize>) -> Self {
        let n = counts.iter().sum();
        Self { counts, n }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// `counts / n`; all zeros for the empty sample.
    pub fn probabilities(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.counts.len()];
        }
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Tallies a sample of 1-based symbols.
pub fn empirical_measure(sample: &[usize], k: usize) -> Result<TypeVector> {
    let mut counts = vec![0usize; k];
    for &s in sample {
        if s == 0 || s > k {
            return Err(Error::SymbolOutOfRange { symbol: s, k });
        }
        counts[s - 1] += 1;
    }
    Ok(TypeVector::new(counts))
}
