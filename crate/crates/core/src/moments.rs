//! Quadratic approximations of the conditional likelihood: the GMM weight
//! induced by the information metric and GEE sandwich diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{null_space, projected_hessian, spectrum_desc};
use crate::error::{Error, Result};
use crate::model::{ConstrainedModel, TypeVector};

/// Relative eigenvalue floor below which the pushforward counts as singular.
const SINGULAR_REL: f64 = 1e-12;
/// Semidefinite orderings hold when the margin eigenvalue is at least `-ORDER_TOL`.
const ORDER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentKind {
    /// `{v : 1ᵀv = 0}`.
    #[default]
    SimplexTangent,
    /// `{v : 1ᵀv = 0, Av = 0}`; annihilates every moment direction.
    ConstraintTangent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmWeight {
    #[serde(rename = "W_opt", with = "crate::serde_rows")]
    pub w_opt: DMatrix<f64>,
    #[serde(with = "crate::serde_rows")]
    pub pushforward: DMatrix<f64>,
    pub tangent_kind: TangentKind,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `W_opt = (A V H⁻¹ Vᵀ Aᵀ)⁻¹` with `H = Vᵀ diag(1/p*) V`.
pub fn gmm_weight(p_star: &[f64], a: &DMatrix<f64>, kind: TangentKind) -> Result<GmmWeight> {
    let k = p_star.len();
    if a.ncols() != k {
        return Err(Error::ShapeMismatch(format!("A has {} columns for {k} symbols", a.ncols())));
    }
    let d = a.nrows();
    if d == 0 {
        return Err(Error::InvalidArgument("GMM weight needs at least one moment row".into()));
    }
    let v = match kind {
        TangentKind::SimplexTangent => null_space(&DMatrix::from_element(1, k, 1.0), Some(k - 1)),
        TangentKind::ConstraintTangent => {
            let mut c = DMatrix::from_element(d + 1, k, 1.0);
            c.rows_mut(1, d).copy_from(a);
            null_space(&c, None)
        }
    };
    let pushforward = if v.ncols() == 0 {
        DMatrix::zeros(d, d)
    } else {
        let h = projected_hessian(p_star, &v)?;
        let h_inv = h.cholesky().ok_or(Error::SingularHessian)?.inverse();
        let av = a * &v;
        symmetrize(&(&av * h_inv * av.transpose()))
    };
    let eig = SymmetricEigen::new(pushforward.clone());
    let (imin, &min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("d >= 1");
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if min <= SINGULAR_REL * max.max(1.0) {
        return Err(Error::SingularPushforward {
            null_direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        });
    }
    let w_opt = symmetrize(&pushforward.clone().cholesky().ok_or(Error::SingularMatrix)?.inverse());
    Ok(GmmWeight {
        w_opt,
        pushforward,
        tangent_kind: kind,
    })
}

/// `(n/2) ḡᵀ W ḡ` with `ḡ = A·(c/n) − α`.
pub fn gmm_objective(data: &TypeVector, model: &ConstrainedModel, w: &DMatrix<f64>) -> Result<f64> {
    if data.k() != model.k() {
        return Err(Error::LengthMismatch {
            what: "counts",
            got: data.k(),
            expected: model.k(),
        });
    }
    let d = model.d();
    if w.nrows() != d || w.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "W is {}x{} for {d} moment rows",
            w.nrows(),
            w.ncols()
        )));
    }
    let moments = model.moments(&data.probabilities());
    let g = DVector::from_iterator(d, moments.iter().zip(model.alpha()).map(|(m, a)| m - a));
    Ok(0.5 * data.n as f64 * g.dot(&(w * &g)))
}

/// Per-cluster summaries: derivative `D_i` (q×p), working weight `W_i` (q×q)
/// and residual covariance `Σ_i` (q×q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    #[serde(rename = "D", with = "crate::serde_rows")]
    pub d: DMatrix<f64>,
    #[serde(rename = "W", with = "crate::serde_rows")]
    pub w: DMatrix<f64>,
    #[serde(rename = "Sigma", with = "crate::serde_rows")]
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeeCurvature {
    #[serde(rename = "J", with = "crate::serde_rows")]
    pub j: DMatrix<f64>,
    #[serde(rename = "K", with = "crate::serde_rows")]
    pub k: DMatrix<f64>,
    #[serde(with = "crate::serde_rows")]
    pub sandwich: DMatrix<f64>,
    #[serde(rename = "lambda_min_J")]
    pub lambda_min_j: f64,
    /// `sqrt(ln n / (n λ_min(J)))` when a sample size was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_proxy: Option<f64>,
}

pub fn gee_curvature(clusters: &[Cluster], n: Option<usize>) -> Result<GeeCurvature> {
    let first = clusters
        .first()
        .ok_or_else(|| Error::InvalidArgument("no clusters".into()))?;
    let p = first.d.ncols();
    for (i, c) in clusters.iter().enumerate() {
        let q = c.d.nrows();
        if c.d.ncols() != p || c.w.shape() != (q, q) || c.sigma.shape() != (q, q) {
            return Err(Error::ShapeMismatch(format!("cluster {i} has inconsistent dimensions")));
        }
    }
    let terms: Vec<(DMatrix<f64>, DMatrix<f64>)> = clusters
        .par_iter()
        .map(|c| {
            let dt_w = c.d.transpose() * &c.w;
            let j = &dt_w * &c.d;
            let k = &dt_w * &c.sigma * c.w.transpose() * &c.d;
            (j, k)
        })
        .collect();
    let count = clusters.len() as f64;
    let mut j = DMatrix::zeros(p, p);
    let mut k = DMatrix::zeros(p, p);
    for (tj, tk) in &terms {
        j += tj;
        k += tk;
    }
    let j = symmetrize(&(j / count));
    let k = symmetrize(&(k / count));
    let lambda_min_j = spectrum_desc(&j).last().copied().unwrap_or(f64::INFINITY);
    let j_inv = j.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    if !(lambda_min_j > 0.0) {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: lambda_min_j,
        });
    }
    let sandwich = symmetrize(&(&j_inv * &k * &j_inv));
    let rate_proxy = n.filter(|&n| n >= 2).map(|n| {
        let nf = n as f64;
        (nf.ln() / (nf * lambda_min_j)).sqrt()
    });
    Ok(GeeCurvature {
        j,
        k,
        sandwich,
        lambda_min_j,
        rate_proxy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparability {
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// Smallest eigenvalue of `J − aH`.
    pub lower_margin: f64,
    /// Smallest eigenvalue of `bH − J`.
    pub upper_margin: f64,
}

/// Checks `aH ⪯ J ⪯ bH`. With a chart `C` (r×p), `H` is first pulled back to
/// `Cᵀ H C`.
pub fn curvature_comparability(
    j: &DMatrix<f64>,
    h: &DMatrix<f64>,
    a: f64,
    b: f64,
    chart: Option<&DMatrix<f64>>,
) -> Result<Comparability> {
    let h = match chart {
        Some(c) => {
            if c.nrows() != h.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "chart has {} rows for a {}x{} Hessian",
                    c.nrows(),
                    h.nrows(),
                    h.ncols()
                )));
            }
            c.transpose() * h * c
        }
        None => h.clone(),
    };
    if j.shape() != h.shape() || !j.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "J is {:?} but H is {:?}",
            j.shape(),
            h.shape()
        )));
    }
    let margin = |m: DMatrix<f64>| spectrum_desc(&symmetrize(&m)).last().copied().unwrap_or(0.0);
    let lower_margin = margin(j - &h * a);
    let upper_margin = margin(&h * b - j);
    Ok(Comparability {
        lower_holds: lower_margin >= -ORDER_TOL,
        upper_holds: upper_margin >= -ORDER_TOL,
        lower_margin,
        upper_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn uniform_three_symbols() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let g = gmm_weight(&[1.0 / 3.0; 3], &a, TangentKind::SimplexTangent).unwrap();
        assert_abs_diff_eq!(g.pushforward[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.w_opt[(0, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn constraint_tangent_is_singular() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        match gmm_weight(&[0.2, 0.5, 0.3], &a, TangentKind::ConstraintTangent) {
            Err(Error::SingularPushforward { null_direction }) => {
                assert_eq!(null_direction.len(), 1);
                assert_abs_diff_eq!(null_direction[0].abs(), 1.0, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn objective_values() {
        let m = ConstrainedModel::new(2, vec![0.5, 0.5], vec![vec![1.0, 2.0]], vec![1.5]).unwrap();
        let data = TypeVector::new(vec![4, 6]);
        assert_abs_diff_eq!(gmm_objective(&data, &m, &scalar(1.0)).unwrap(), 0.05, epsilon = 1e-14);
        assert_abs_diff_eq!(gmm_objective(&data, &m, &scalar(3.0)).unwrap(), 0.15, epsilon = 1e-14);
        let exact = TypeVector::new(vec![5, 5]);
        assert_eq!(gmm_objective(&exact, &m, &scalar(1.0)).unwrap(), 0.0);
        assert!(gmm_objective(&data, &m, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn gee_scalar_fixtures() {
        let one = Cluster {
            d: scalar(1.0),
            w: scalar(1.0),
            sigma: scalar(1.0),
        };
        let g = gee_curvature(&[one], None).unwrap();
        assert_eq!(g.sandwich[(0, 0)], 1.0);
        let clusters = [
            Cluster {
                d: scalar(1.0),
                w: scalar(1.0),
                sigma: scalar(2.0),
            },
            Cluster {
                d: scalar(2.0),
                w: scalar(1.0),
                sigma: scalar(1.0),
            },
        ];
        let g = gee_curvature(&clusters, Some(100)).unwrap();
        assert_abs_diff_eq!(g.j[(0, 0)], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.k[(0, 0)], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.sandwich[(0, 0)], 0.48, epsilon = 1e-15);
        assert!(g.rate_proxy.is_some());
    }

    #[test]
    fn comparability_cases() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let same = curvature_comparability(&h, &h, 1.0, 1.0, None).unwrap();
        assert!(same.lower_holds && same.upper_holds);
        assert_abs_diff_eq!(same.lower_margin, 0.0, epsilon = 1e-12);
        let j = &h * 2.0;
        let ok = curvature_comparability(&j, &h, 1.0, 3.0, None).unwrap();
        assert!(ok.lower_holds && ok.upper_holds);
        let bad = curvature_comparability(&j, &h, 3.0, 3.0, None).unwrap();
        assert!(!bad.lower_holds && bad.lower_margin < 0.0);
        assert!(curvature_comparability(&scalar(1.0), &h, 1.0, 1.0, None).is_err());
    }
}
