//! Parameter sweeps over `(n, m)` against the exact oracle, with rate fitting
//! and CSV / JSON report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{curvature_report, lanford_radius, CurvatureReport};
use crate::error::{Error, Result};
use crate::model::{ConstrainedModel, ModelDoc};
use crate::oracle::{
    bound_terms, feasible_types, gaussian_mixture_approx, lanford_fixed_point, predictive_exact, product_law,
    tv_distance, window_partition,
};
use crate::projection::{project, Projection};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "n,m,tau,lambda_min,tv_exact,tv_gaussian,bound,mass_out,rho_ratio";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelDoc),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauPolicy {
    Fixed(f64),
    Named(TauKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauKeyword {
    Auto,
}

impl TauPolicy {
    pub fn value(&self) -> Option<f64> {
        match self {
            TauPolicy::Fixed(t) => Some(*t),
            TauPolicy::Named(TauKeyword::Auto) => None,
        }
    }
}

impl Default for TauPolicy {
    fn default() -> Self {
        TauPolicy::Named(TauKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstantsPolicy {
    Explicit { c_geo: f64, c_geo_prime: f64 },
    Named(ConstantsKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsKeyword {
    FitAtSmallestN,
}

impl Default for ConstantsPolicy {
    fn default() -> Self {
        ConstantsPolicy::Named(ConstantsKeyword::FitAtSmallestN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    #[serde(default)]
    pub tau: TauPolicy,
    #[serde(default)]
    pub constants: ConstantsPolicy,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Reads a config file; relative model and output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let ModelSource::Path(p) = &config.model {
            if p.is_relative() {
                config.model = ModelSource::Path(dir.join(p));
            }
        }
        if config.outputs.is_relative() {
            config.outputs = dir.join(&config.outputs);
        }
        Ok(config)
    }

    pub fn resolve_model(&self) -> Result<ConstrainedModel> {
        match &self.model {
            ModelSource::Inline(doc) => doc.validate(),
            ModelSource::Path(p) => ConstrainedModel::from_json(&fs::read_to_string(p)?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.m_grid.is_empty() {
            return Err(Error::InvalidArgument("n_grid and m_grid must be nonempty".into()));
        }
        let max_m = *self.m_grid.iter().max().expect("nonempty");
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < max_m) {
            return Err(Error::DrawsExceedPopulation { m: max_m, n });
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {n}")));
        }
        if let Some(t) = self.tau.value() {
            if !(t >= 0.0) {
                return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {t}")));
            }
        }
        if let ConstantsPolicy::Explicit { c_geo, c_geo_prime } = self.constants {
            if !(c_geo >= 0.0 && c_geo_prime >= 0.0) {
                return Err(Error::InvalidArgument("bound constants must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// One evaluated `(n, m)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    pub lambda_min: f64,
    /// `TV(μ_{n,m}, (P*)^{⊗m})`.
    pub tv_exact: f64,
    /// `TV(Gaussian mixture, μ_{n,m})`; NaN when the tangent dimension exceeds
    /// the quadrature limit.
    pub tv_gaussian: f64,
    pub bound: f64,
    pub mass_out: f64,
    pub rho_ratio: f64,
    /// Unit-constant bound terms, kept for constant fitting.
    #[serde(skip)]
    terms: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub n: usize,
    pub m: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedConstants {
    pub m: usize,
    pub c_geo: f64,
    pub c_geo_prime: f64,
    /// `n` the constants were fitted at (absent for explicit constants).
    pub fitted_at_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(ln x, ln y)` pairs.
    pub pairs: Vec<(f64, f64)>,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn rate_fit(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            what: "ys",
            got: ys.len(),
            expected: xs.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!("rate fit needs at least 3 points, got {}", xs.len())));
    }
    if let Some(v) = xs.iter().chain(ys).find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate fit needs positive finite values, got {v}")));
    }
    let pairs: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let len = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        pairs,
    })
}

/// The abscissa `sqrt(ln n / n)` of the leading collapse term.
pub fn rate_abscissa(n: usize) -> f64 {
    let nf = n as f64;
    (nf.ln() / nf).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRateFit {
    pub m: usize,
    pub fit: RateFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub rows: usize,
    pub skipped: Vec<SkippedCell>,
    pub constants: Vec<FittedConstants>,
    pub rate_fits: Vec<MRateFit>,
    /// Cells with `tv_exact > bound`.
    pub bound_violations: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    #[serde(rename = "P_star")]
    pub p_star: Vec<f64>,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<CellRow>,
    pub summary: ExperimentSummary,
}

impl ExperimentReport {
    pub fn is_partial(&self) -> bool {
        !self.summary.skipped.is_empty()
    }

    pub fn csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Writes `collapse.csv` and `summary.json` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("collapse.csv"), self.csv())?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

pub fn rows_to_csv(rows: &[CellRow]) -> String {
    let mut out = format!("# schema_version={CSV_SCHEMA_VERSION}\n{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            fmt_f64(r.tau),
            fmt_f64(r.lambda_min),
            fmt_f64(r.tv_exact),
            fmt_f64(r.tv_gaussian),
            fmt_f64(r.bound),
            fmt_f64(r.mass_out),
            fmt_f64(r.rho_ratio)
        );
    }
    out
}

fn evaluate_cell(
    model: &ConstrainedModel,
    projection: &Projection,
    curvature: &CurvatureReport,
    n: usize,
    m: usize,
    tau: Option<f64>,
) -> Result<CellRow> {
    let ensemble = feasible_types(model, n, tau)?;
    let exact = predictive_exact(&ensemble, m)?;
    let bench = product_law(&projection.p_star, m)?;
    let tv_exact = tv_distance(&exact, &bench)?;
    let tv_gaussian = match gaussian_mixture_approx(projection, curvature, n, m) {
        Ok(g) => tv_distance(&g.law, &exact)?,
        Err(Error::QuadratureDimension(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let window = lanford_radius(curvature.lambda_min, n)?;
    let mass = window_partition(&ensemble, &projection.p_star, &window);
    let rho_ratio = if curvature.tangent_dim == 0 {
        f64::NAN
    } else {
        lanford_fixed_point(&ensemble, projection, curvature)?.ratio
    };
    Ok(CellRow {
        n,
        m,
        tau: ensemble.tau,
        lambda_min: curvature.lambda_min,
        tv_exact,
        tv_gaussian,
        bound: f64::NAN,
        mass_out: mass.mass_out,
        rho_ratio,
        terms: bound_terms(n, m, curvature.lambda_min, projection.p_min()),
    })
}

/// Evaluates every `(n, m)` cell of the grid (n-major order) and applies the
/// constants policy. Cells refused by a guard or with an empty feasible set are
/// skipped and listed.
pub fn sweep(
    model: &ConstrainedModel,
    n_grid: &[usize],
    m_grid: &[usize],
    tau: Option<f64>,
    constants: ConstantsPolicy,
) -> Result<ExperimentReport> {
    let projection = project(model)?;
    let curvature = curvature_report(model, &projection)?;
    let cells: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|&n| m_grid.iter().map(move |&m| (n, m)))
        .collect();
    let results: Vec<Result<CellRow>> = cells
        .par_iter()
        .map(|&(n, m)| evaluate_cell(model, &projection, &curvature, n, m, tau))
        .collect();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (&(n, m), result) in cells.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(
                e @ (Error::EnumerationGuard { .. }
                | Error::EmptyFeasibleSet { .. }
                | Error::InvalidArgument(_)
                | Error::DrawsExceedPopulation { .. }),
            ) => skipped.push(SkippedCell {
                n,
                m,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }

    let mut ms: Vec<usize> = m_grid.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let mut constants_out = Vec::new();
    for &m in &ms {
        let fitted = match constants {
            ConstantsPolicy::Explicit { c_geo, c_geo_prime } => Some(FittedConstants {
                m,
                c_geo,
                c_geo_prime,
                fitted_at_n: None,
            }),
            ConstantsPolicy::Named(ConstantsKeyword::FitAtSmallestN) => rows
                .iter()
                .filter(|r| r.m == m)
                .min_by_key(|r| r.n)
                .map(|r| {
                    let unit = r.terms.0 + r.terms.1;
                    let c = if unit > 0.0 { r.tv_exact / unit } else { 0.0 };
                    FittedConstants {
                        m,
                        c_geo: c,
                        c_geo_prime: c,
                        fitted_at_n: Some(r.n),
                    }
                }),
        };
        if let Some(f) = fitted {
            for r in rows.iter_mut().filter(|r| r.m == m) {
                r.bound = f.c_geo * r.terms.0 + f.c_geo_prime * r.terms.1;
            }
            constants_out.push(f);
        }
    }

    let mut rate_fits = Vec::new();
    for &m in &ms {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.m == m && r.tv_exact > 0.0)
            .map(|r| (rate_abscissa(r.n), r.tv_exact))
            .unzip();
        if let Ok(fit) = rate_fit(&xs, &ys) {
            rate_fits.push(MRateFit { m, fit });
        }
    }
    let bound_violations = rows
        .iter()
        .filter(|r| r.tv_exact > r.bound)
        .map(|r| (r.n, r.m))
        .collect();

    let summary = ExperimentSummary {
        schema_version: CSV_SCHEMA_VERSION,
        rows: rows.len(),
        skipped,
        constants: constants_out,
        rate_fits,
        bound_violations,
        seeds: Vec::new(),
        p_star: projection.p_star.clone(),
        lambda_min: curvature.lambda_min,
    };
    Ok(ExperimentReport { rows, summary })
}

/// Runs a full experiment. `threads` sizes a dedicated worker pool; `None`
/// uses the global pool.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    config.validate()?;
    let model = config.resolve_model()?;
    let run = || -> Result<ExperimentReport> {
        let mut report = sweep(&model, &config.n_grid, &config.m_grid, config.tau.value(), config.constants)?;
        report.summary.seeds = config.seeds.clone();
        Ok(report)
    };
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rate_fit_exact_powers() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let id = rate_fit(&xs, &xs).unwrap();
        assert_abs_diff_eq!(id.slope, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.r_squared, 1.0, epsilon = 1e-14);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(rate_fit(&xs, &sq).unwrap().slope, 2.0, epsilon = 1e-14);
        assert!(rate_fit(&xs[..2], &xs[..2]).is_err());
        assert!(rate_fit(&[1.0, 0.0, 2.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn unconstrained_single_cell() {
        let model = ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![], vec![]).unwrap();
        let report = sweep(&model, &[20], &[1], None, ConstantsPolicy::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].tv_exact < 1e-14);
        let csv = report.csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# schema_version=1"));
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn ladder_yields_fit_with_all_pairs() {
        let model = ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![vec![1.0, 2.0, 3.0]], vec![2.0]).unwrap();
        let ns = [20, 30, 40, 50, 60];
        let report = sweep(&model, &ns, &[1], None, ConstantsPolicy::default()).unwrap();
        assert_eq!(report.summary.rate_fits.len(), 1);
        assert_eq!(report.summary.rate_fits[0].fit.pairs.len(), 5);
        let c = report.summary.constants[0];
        assert_eq!(c.fitted_at_n, Some(20));
        assert_abs_diff_eq!(report.rows[0].bound, report.rows[0].tv_exact, epsilon = 1e-15);
    }

    #[test]
    fn guard_refusals_are_skipped() {
        let model = ConstrainedModel::new(2, vec![0.5, 0.5], vec![vec![1.0, 2.0]], vec![1.5]).unwrap();
        let report = sweep(&model, &[3, 4], &[1], Some(0.0), ConstantsPolicy::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.summary.skipped.len(), 1);
        assert_eq!(report.summary.skipped[0].n, 3);
        assert!(report.is_partial());
    }

    #[test]
    fn config_parses_keywords_and_values() {
        let text = r#"{"model":{"k":2,"Q":[0.5,0.5],"features":[[1,2]],"alpha":[1.5]},
            "n_grid":[10],"m_grid":[1],"tau":"auto","constants":"fit_at_smallest_n","outputs":"o"}"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.tau.value(), None);
        assert!(matches!(c.model, ModelSource::Inline(_)));
        let text = r#"{"model":"m.json","n_grid":[10],"m_grid":[1],"tau":0.01,
            "constants":{"c_geo":1.0,"c_geo_prime":2.0}}"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.tau.value(), Some(0.01));
        assert!(matches!(c.constants, ConstantsPolicy::Explicit { c_geo_prime, .. } if c_geo_prime == 2.0));
    }
}
