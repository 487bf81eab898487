use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstrainedModel, TypeVector};

/// Refuse to enumerate more than this many compositions.
pub const TYPE_GUARD: u128 = 100_000_000;

/// Feasibility comparisons get this much relative slack for float roundoff in `A·(c/n)`.
const FEASIBILITY_SLACK: f64 = 1e-12;

const CHUNK: usize = 8192;

/// `C(n + k − 1, k − 1)`, saturating.
pub fn type_count(n: usize, k: usize) -> u128 {
    if k == 0 {
        return 0;
    }
    let r = (k - 1) as u128;
    let mut acc: u128 = 1;
    for i in 1..=r {
        acc = match acc.checked_mul(n as u128 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    acc
}

/// All compositions of `n` into `k` parts, in descending lexicographic order
/// (`(n,0,…,0)` first, `(0,…,0,n)` last).
#[derive(Debug, Clone)]
pub struct TypeIter {
    counts: Vec<usize>,
    done: bool,
}

impl Iterator for TypeIter {
    type Item = TypeVector;

    fn next(&mut self) -> Option<TypeVector> {
        if self.done {
            return None;
        }
        let current = TypeVector::new(self.counts.clone());
        let k = self.counts.len();
        let tail = self.counts[k - 1];
        match (0..k - 1).rev().find(|&i| self.counts[i] > 0) {
            None => self.done = true,
            Some(i) => {
                self.counts[i] -= 1;
                self.counts[k - 1] = 0;
                self.counts[i + 1] = tail + 1;
            }
        }
        Some(current)
    }
}

pub fn enumerate_types(n: usize, k: usize) -> Result<TypeIter> {
    if n == 0 {
        return Err(Error::InvalidArgument("enumeration needs n >= 1".into()));
    }
    if k == 0 {
        return Err(Error::EmptyAlphabet(0));
    }
    let count = type_count(n, k);
    if count > TYPE_GUARD {
        return Err(Error::EnumerationGuard {
            count,
            limit: TYPE_GUARD,
        });
    }
    let mut counts = vec![0; k];
    counts[0] = n;
    Ok(TypeIter { counts, done: false })
}

/// `ln i!` for `i = 0..=n`.
pub(crate) fn log_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// Log multinomial mass of a type under `q`.
pub(crate) fn log_multinomial(t: &TypeVector, log_q: &[f64], lf: &[f64]) -> f64 {
    let mut lw = lf[t.n];
    for (&c, &lq) in t.counts.iter().zip(log_q) {
        lw -= lf[c];
        if c > 0 {
            lw += c as f64 * lq;
        }
    }
    lw
}

/// Feasible empirical types with their conditional multinomial weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEnsemble {
    pub n: usize,
    pub tau: f64,
    pub types: Vec<TypeVector>,
    /// Unnormalized `ln n! − Σ ln c_x! + Σ c_x ln Q(x)`.
    pub log_weights: Vec<f64>,
    /// Conditional probabilities given feasibility.
    pub weights: Vec<f64>,
}

impl TypeEnsemble {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Builds an ensemble from explicit types and log-weights.
    pub fn from_log_weights(n: usize, tau: f64, types: Vec<TypeVector>, log_weights: Vec<f64>) -> Result<Self> {
        if types.is_empty() || types.len() != log_weights.len() {
            return Err(Error::InvalidArgument("ensemble needs matching nonempty types and weights".into()));
        }
        if let Some(t) = types.iter().find(|t| t.n != n) {
            return Err(Error::ShapeMismatch(format!("type with n = {} in an ensemble of n = {n}", t.n)));
        }
        let weights = normalize_log(&log_weights);
        Ok(Self {
            n,
            tau,
            types,
            log_weights,
            weights,
        })
    }
}

fn normalize_log(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Default lattice tolerance `B / (2n)`.
pub fn default_tau(model: &ConstrainedModel, n: usize) -> f64 {
    model.bound() / (2.0 * n as f64)
}

/// Types with `‖A·(c/n) − α‖∞ ≤ τ`, weighted by their multinomial mass under `Q`
/// and normalized. `tau = None` selects [`default_tau`].
pub fn feasible_types(model: &ConstrainedModel, n: usize, tau: Option<f64>) -> Result<TypeEnsemble> {
    let tau = tau.unwrap_or_else(|| default_tau(model, n));
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    let iter = enumerate_types(n, model.k())?;
    let lf = log_factorials(n);
    let log_q: Vec<f64> = model.reference().iter().map(|q| q.ln()).collect();
    let slack = FEASIBILITY_SLACK * (1.0 + model.bound());

    let mut types = Vec::new();
    let mut log_weights = Vec::new();
    let mut min_dev = f64::INFINITY;
    let mut iter = iter.peekable();
    while iter.peek().is_some() {
        let chunk: Vec<TypeVector> = iter.by_ref().take(CHUNK).collect();
        let evaluated: Vec<(TypeVector, f64, f64)> = chunk
            .into_par_iter()
            .map(|t| {
                let dev = model.moment_residual(&t.probabilities());
                let lw = if dev <= tau + slack {
                    log_multinomial(&t, &log_q, &lf)
                } else {
                    f64::NAN
                };
                (t, dev, lw)
            })
            .collect();
        for (t, dev, lw) in evaluated {
            min_dev = min_dev.min(dev);
            if !lw.is_nan() {
                types.push(t);
                log_weights.push(lw);
            }
        }
    }
    if types.is_empty() {
        return Err(Error::EmptyFeasibleSet { tau, min_tau: min_dev });
    }
    let weights = normalize_log(&log_weights);
    Ok(TypeEnsemble {
        n,
        tau,
        types,
        log_weights,
        weights,
    })
}
