use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TypeVector;
use crate::oracle::types::TypeEnsemble;

/// Largest dense table `k^m` we are willing to allocate.
pub const TABLE_GUARD: usize = 10_000_000;

/// Fixed work unit for parallel mixtures; partial tables are summed in chunk
/// order so results do not depend on the number of workers.
pub(crate) const MIX_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Exact,
    GaussianMixture,
    ProductBenchmark,
    BetelMixture,
}

/// Probability table over `𝒳^m`, lexicographic with the first coordinate most
/// significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveLaw {
    pub k: usize,
    pub m: usize,
    pub table: Vec<f64>,
    pub kind: LawKind,
}

impl PredictiveLaw {
    /// Probability of a 0-based sequence.
    pub fn prob(&self, seq: &[usize]) -> f64 {
        self.table[encode(seq, self.k)]
    }

    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }

    /// Law of coordinate `i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        let mut seq = vec![0; self.m];
        for (idx, &p) in self.table.iter().enumerate() {
            decode(idx, self.k, &mut seq);
            out[seq[i]] += p;
        }
        out
    }
}

pub fn table_len(k: usize, m: usize) -> Result<usize> {
    let mut len: usize = 1;
    for _ in 0..m {
        len = len.checked_mul(k).filter(|&l| l <= TABLE_GUARD).ok_or(Error::EnumerationGuard {
            count: (k as u128).saturating_pow(m as u32),
            limit: TABLE_GUARD as u128,
        })?;
    }
    Ok(len)
}

pub(crate) fn encode(seq: &[usize], k: usize) -> usize {
    seq.iter().fold(0, |acc, &x| acc * k + x)
}

pub(crate) fn decode(mut idx: usize, k: usize, seq: &mut [usize]) {
    for slot in seq.iter_mut().rev() {
        *slot = idx % k;
        idx /= k;
    }
}

/// Probability of drawing `x_1..x_m` in order without replacement from an urn
/// with composition `t`.
pub fn without_replacement_law(t: &TypeVector, m: usize) -> Result<PredictiveLaw> {
    if m > t.n {
        return Err(Error::DrawsExceedPopulation { m, n: t.n });
    }
    let k = t.k();
    let mut table = vec![0.0; table_len(k, m)?];
    fill_without_replacement(t, m, 1.0, &mut table);
    Ok(PredictiveLaw {
        k,
        m,
        table,
        kind: LawKind::Exact,
    })
}

/// Adds `scale · Pr(sequence | urn t)` to every cell.
fn fill_without_replacement(t: &TypeVector, m: usize, scale: f64, table: &mut [f64]) {
    let k = t.k();
    let n = t.n as f64;
    let mut seq = vec![0; m];
    let mut used = vec![0usize; k];
    for (idx, cell) in table.iter_mut().enumerate() {
        decode(idx, k, &mut seq);
        used.iter_mut().for_each(|u| *u = 0);
        let mut p = scale;
        for (i, &x) in seq.iter().enumerate() {
            let avail = t.counts[x] - used[x].min(t.counts[x]);
            if avail == 0 {
                p = 0.0;
                break;
            }
            p *= avail as f64 / (n - i as f64);
            used[x] += 1;
        }
        *cell += p;
    }
}

fn check_probability(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("probability vector has a negative or non-finite entry".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

/// `P^{⊗m}`.
pub fn product_law(p: &[f64], m: usize) -> Result<PredictiveLaw> {
    check_probability(p)?;
    let k = p.len();
    let mut table = vec![0.0; table_len(k, m)?];
    fill_product(p, m, 1.0, &mut table);
    Ok(PredictiveLaw {
        k,
        m,
        table,
        kind: LawKind::ProductBenchmark,
    })
}

pub(crate) fn fill_product(p: &[f64], m: usize, scale: f64, table: &mut [f64]) {
    let k = p.len();
    let mut seq = vec![0; m];
    for (idx, cell) in table.iter_mut().enumerate() {
        decode(idx, k, &mut seq);
        *cell += seq.iter().fold(scale, |acc, &x| acc * p[x]);
    }
}

/// Weighted sum of per-item tables, reduced in a worker-independent order.
pub(crate) fn mix_tables<T, F>(items: &[(f64, T)], len: usize, fill: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&T, f64, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = items
        .par_chunks(MIX_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; len];
            for (w, item) in chunk {
                fill(item, *w, &mut acc);
            }
            acc
        })
        .collect();
    let mut table = vec![0.0; len];
    for partial in partials {
        for (t, p) in table.iter_mut().zip(partial) {
            *t += p;
        }
    }
    table
}

/// Heath–Sudderth mixture `Σ_P Pr(x_{1:m} | P_n = P) · w(P)` over the ensemble.
pub fn predictive_exact(ensemble: &TypeEnsemble, m: usize) -> Result<PredictiveLaw> {
    let Some(first) = ensemble.types.first() else {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    };
    if m > ensemble.n {
        return Err(Error::DrawsExceedPopulation { m, n: ensemble.n });
    }
    let k = first.k();
    let len = table_len(k, m)?;
    let items: Vec<(f64, &TypeVector)> = ensemble.weights.iter().copied().zip(ensemble.types.iter()).collect();
    let table = mix_tables(&items, len, |t, w, acc| fill_without_replacement(t, m, w, acc));
    Ok(PredictiveLaw {
        k,
        m,
        table,
        kind: LawKind::Exact,
    })
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &PredictiveLaw, q: &PredictiveLaw) -> Result<f64> {
    if p.k != q.k || p.m != q.m || p.table.len() != q.table.len() {
        return Err(Error::ShapeMismatch(format!(
            "laws on {}^{} and {}^{} sequences",
            p.k, p.m, q.k, q.m
        )));
    }
    Ok(0.5 * p.table.iter().zip(&q.table).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypergeometricCheck {
    pub tv: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Compares sampling without replacement from `t` with i.i.d. sampling from
/// `t/n` against `m(m−1) / (2 n p_min)`.
pub fn hypergeometric_bound_check(t: &TypeVector, m: usize) -> Result<HypergeometricCheck> {
    if let Some(index) = t.counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroProbability { index });
    }
    let urn = without_replacement_law(t, m)?;
    let p = t.probabilities();
    let iid = product_law(&p, m)?;
    let tv = tv_distance(&urn, &iid)?;
    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let m = m as f64;
    let bound = m * (m - 1.0) / (2.0 * t.n as f64 * p_min);
    Ok(HypergeometricCheck {
        tv,
        bound,
        ok: tv <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn urn_of_two_distinct_balls() {
        let law = without_replacement_law(&TypeVector::new(vec![1, 1]), 2).unwrap();
        assert_eq!(law.table, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn urn_five_five() {
        let law = without_replacement_law(&TypeVector::new(vec![5, 5]), 2).unwrap();
        assert_abs_diff_eq!(law.prob(&[0, 0]), 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(law.prob(&[0, 1]), 5.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(law.prob(&[1, 0]), 5.0 / 18.0, epsilon = 1e-15);
        let iid = product_law(&[0.5, 0.5], 2).unwrap();
        assert_eq!(iid.table, vec![0.25; 4]);
        assert_abs_diff_eq!(tv_distance(&law, &iid).unwrap(), 1.0 / 18.0, epsilon = 1e-15);
    }

    #[test]
    fn single_draw_is_type_frequency() {
        let t = TypeVector::new(vec![3, 1, 6]);
        let law = without_replacement_law(&t, 1).unwrap();
        assert_eq!(law.table, t.probabilities());
        assert!(matches!(
            without_replacement_law(&t, 11),
            Err(Error::DrawsExceedPopulation { m: 11, n: 10 })
        ));
    }

    #[test]
    fn product_marginals() {
        let p = [0.2, 0.3, 0.5];
        let law = product_law(&p, 3).unwrap();
        for i in 0..3 {
            for (a, b) in law.marginal(i).iter().zip(p) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
            }
        }
        assert_eq!(product_law(&p, 1).unwrap().table, p.to_vec());
    }

    #[test]
    fn tv_extremes() {
        let a = PredictiveLaw {
            k: 2,
            m: 1,
            table: vec![1.0, 0.0],
            kind: LawKind::Exact,
        };
        let b = PredictiveLaw {
            table: vec![0.0, 1.0],
            ..a.clone()
        };
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        let c = product_law(&[0.5, 0.5], 2).unwrap();
        assert!(matches!(tv_distance(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn hypergeometric_cases() {
        let c = hypergeometric_bound_check(&TypeVector::new(vec![5, 5]), 2).unwrap();
        assert_abs_diff_eq!(c.tv, 1.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.bound, 0.2, epsilon = 1e-15);
        assert!(c.ok);
        let one = hypergeometric_bound_check(&TypeVector::new(vec![5, 5]), 1).unwrap();
        assert_eq!((one.tv, one.bound), (0.0, 0.0));
        assert!(one.ok);
        // (3,7), m = 2: same pairs 3·2/90 and 7·6/90 vs .09 and .49, cross 21/90 vs .21
        let c = hypergeometric_bound_check(&TypeVector::new(vec![3, 7]), 2).unwrap();
        let expected = 0.5 * ((6.0 / 90.0 - 0.09f64).abs() + (42.0 / 90.0 - 0.49f64).abs() + 2.0 * (21.0 / 90.0 - 0.21f64).abs());
        assert_abs_diff_eq!(c.tv, expected, epsilon = 1e-15);
        assert!(c.ok);
        assert!(hypergeometric_bound_check(&TypeVector::new(vec![0, 5]), 2).is_err());
    }

    #[test]
    fn single_type_ensemble_prediction() {
        let e = TypeEnsemble::from_log_weights(4, 0.0, vec![TypeVector::new(vec![2, 2])], vec![0.0]).unwrap();
        let law = predictive_exact(&e, 1).unwrap();
        assert_eq!(law.table, vec![0.5, 0.5]);
    }
}
