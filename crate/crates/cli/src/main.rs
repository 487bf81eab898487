use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use collapse_core::betel::{betel_posterior, build_family, GridDoc, Variant};
use collapse_core::curvature::{curvature_report, perturbation_stability, sample_size_plan};
use collapse_core::experiment::{sweep, ConstantsPolicy, ExperimentConfig, ExperimentReport};
use collapse_core::moments::{gee_curvature, gmm_objective, gmm_weight, Cluster, TangentKind};
use collapse_core::{empirical_measure, project, ConstrainedModel};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "collapse-lab", version, about = "Constrained exchangeable prediction on finite alphabets")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "COLLAPSE_LAB_THREADS")]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ConfigArg {
    /// Input document (model, clusters or experiment, depending on the subcommand).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Information projection of the reference law onto the constraint set.
    Project(ConfigArg),
    /// Tangent basis, projected Hessian and spectral diagnostics.
    Curvature {
        #[command(flatten)]
        input: ConfigArg,
        /// Sample size needed for predictive error ε at m draws.
        #[arg(long, num_args = 2, value_names = ["M", "EPSILON"])]
        plan: Option<Vec<f64>>,
        /// Report sensitivity of λ_min to perturbations of this size instead.
        #[arg(long)]
        stability: Option<f64>,
    },
    /// Exact predictive collapse table over an (n, m) grid.
    Collapse {
        #[command(flatten)]
        input: ConfigArg,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        m: Vec<usize>,
        /// Lattice tolerance, or `auto` for B/(2n).
        #[arg(long, default_value = "auto")]
        tau: String,
        #[arg(long, requires = "cgeo2")]
        cgeo: Option<f64>,
        #[arg(long, requires = "cgeo")]
        cgeo2: Option<f64>,
    },
    /// Grid posterior over a tilted family.
    Betel {
        #[command(flatten)]
        input: ConfigArg,
        #[arg(long)]
        grid: PathBuf,
        /// One 1-based symbol per line.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "canonical")]
        variant: VariantArg,
    },
    /// Optimal GMM weight at the projection and the objective on a sample.
    Gmm {
        #[command(flatten)]
        input: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "simplex-tangent")]
        tangent: TangentArg,
    },
    /// Effective curvature and sandwich from cluster summaries.
    Gee {
        #[command(flatten)]
        input: ConfigArg,
        /// Sample size for the rate proxy.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Full experiment from a config file; writes collapse.csv and summary.json.
    Sweep {
        #[command(flatten)]
        input: ConfigArg,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Canonical,
    AsPrinted,
}

#[derive(Clone, Copy, ValueEnum)]
enum TangentArg {
    SimplexTangent,
    ConstraintTangent,
}

enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_model(path: &Path) -> Result<ConstrainedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model = ConstrainedModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))?;
    for w in model.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn read_sample(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .with_context(|| format!("{}: entry {} is not a symbol: {l:?}", path.display(), i + 1))
        })
        .collect()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let format = cli.format;
    match cli.command {
        Command::Project(input) => {
            let model = read_model(&input.config)?;
            let projection = project(&model)?;
            if format == Some(Format::Csv) {
                println!("symbol,p_star");
                for (x, p) in projection.p_star.iter().enumerate() {
                    println!("{},{}", x + 1, p);
                }
            } else {
                print_json(&projection)?;
            }
        }
        Command::Curvature {
            input,
            plan,
            stability,
        } => {
            let model = read_model(&input.config)?;
            let projection = project(&model)?;
            let report = curvature_report(&model, &projection)?;
            if let Some(plan) = plan {
                let (m, eps) = (plan[0], plan[1]);
                if m < 0.0 || m.fract() != 0.0 {
                    bail!("--plan M must be a nonnegative integer, got {m}");
                }
                let n = sample_size_plan(m as usize, eps, report.lambda_min)?;
                #[derive(Serialize)]
                struct Plan {
                    m: usize,
                    epsilon: f64,
                    lambda_min: f64,
                    n: u64,
                }
                let plan = Plan {
                    m: m as usize,
                    epsilon: eps,
                    lambda_min: report.lambda_min,
                    n,
                };
                if format == Some(Format::Csv) {
                    println!("m,epsilon,lambda_min,n\n{},{},{},{}", plan.m, plan.epsilon, plan.lambda_min, plan.n);
                } else {
                    print_json(&plan)?;
                }
            } else if let Some(delta) = stability {
                print_json(&perturbation_stability(&model, delta)?)?;
            } else if format == Some(Format::Csv) {
                println!("index,eigenvalue");
                for (i, e) in report.spectrum.iter().enumerate() {
                    println!("{},{}", i + 1, e);
                }
            } else {
                print_json(&report)?;
            }
        }
        Command::Collapse {
            input,
            n,
            m,
            tau,
            cgeo,
            cgeo2,
        } => {
            let model = read_model(&input.config)?;
            let tau = match tau.as_str() {
                "auto" => None,
                s => Some(s.parse::<f64>().with_context(|| format!("--tau expects `auto` or a number, got {s:?}"))?),
            };
            let constants = match (cgeo, cgeo2) {
                (Some(c_geo), Some(c_geo_prime)) => ConstantsPolicy::Explicit { c_geo, c_geo_prime },
                _ => ConstantsPolicy::default(),
            };
            let report = sweep(&model, &n, &m, tau, constants)?;
            emit_collapse(&report, format)?;
            return Ok(partial(&report));
        }
        Command::Betel {
            input,
            grid,
            data,
            variant,
        } => {
            let model = read_model(&input.config)?;
            let grid_text = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let grid: GridDoc = serde_json::from_str(&grid_text).context("parsing grid")?;
            let sample = read_sample(&data)?;
            let variant = match variant {
                VariantArg::Canonical => Variant::Canonical,
                VariantArg::AsPrinted => Variant::AsPrinted,
            };
            let family = build_family(&model, grid.theta.clone(), grid.alpha_map())?;
            let posterior = betel_posterior(&family, &sample, &grid.prior_or_flat(), variant)?;
            if format == Some(Format::Json) {
                print_json(&posterior)?;
            } else {
                let p = grid.theta.first().map_or(0, Vec::len);
                let mut out = String::new();
                let thetas: Vec<String> = (1..=p).map(|i| format!("theta{i}")).collect();
                let _ = writeln!(out, "{},log_posterior,posterior", thetas.join(","));
                for ((theta, lp), w) in grid.theta.iter().zip(&posterior.log_posterior).zip(&posterior.posterior) {
                    let cells: Vec<String> = theta.iter().map(|t| t.to_string()).collect();
                    let _ = writeln!(out, "{},{},{}", cells.join(","), lp, w);
                }
                print!("{out}");
            }
        }
        Command::Gmm { input, data, tangent } => {
            let model = read_model(&input.config)?;
            let projection = project(&model)?;
            let kind = match tangent {
                TangentArg::SimplexTangent => TangentKind::SimplexTangent,
                TangentArg::ConstraintTangent => TangentKind::ConstraintTangent,
            };
            let weight = gmm_weight(&projection.p_star, model.features(), kind)?;
            let counts = empirical_measure(&read_sample(&data)?, model.k())?;
            let objective = gmm_objective(&counts, &model, &weight.w_opt)?;
            #[derive(Serialize)]
            struct GmmOut<'a> {
                #[serde(flatten)]
                weight: &'a collapse_core::moments::GmmWeight,
                n: usize,
                objective: f64,
            }
            print_json(&GmmOut {
                weight: &weight,
                n: counts.n,
                objective,
            })?;
        }
        Command::Gee { input, n } => {
            let text = fs::read_to_string(&input.config).with_context(|| format!("reading {}", input.config.display()))?;
            let clusters: Vec<Cluster> = serde_json::from_str(&text).context("parsing clusters")?;
            print_json(&gee_curvature(&clusters, n)?)?;
        }
        Command::Sweep { input, out } => {
            let config = ExperimentConfig::load(&input.config)
                .with_context(|| format!("loading experiment {}", input.config.display()))?;
            config.validate()?;
            let model = config.resolve_model()?;
            let mut report = sweep(&model, &config.n_grid, &config.m_grid, config.tau.value(), config.constants)?;
            report.summary.seeds = config.seeds.clone();
            let dir = out.unwrap_or_else(|| config.outputs.clone());
            report.write(&dir).with_context(|| format!("writing outputs to {}", dir.display()))?;
            if format == Some(Format::Json) {
                print_json(&report.summary)?;
            } else {
                print!("{}", report.csv());
            }
            for s in &report.summary.skipped {
                eprintln!("skipped n={} m={}: {}", s.n, s.m, s.reason);
            }
            return Ok(partial(&report));
        }
    }
    Ok(Outcome::Done)
}

fn emit_collapse(report: &ExperimentReport, format: Option<Format>) -> Result<()> {
    if format == Some(Format::Json) {
        #[derive(Serialize)]
        struct Out<'a> {
            rows: &'a [collapse_core::experiment::CellRow],
            summary: &'a collapse_core::experiment::ExperimentSummary,
        }
        print_json(&Out {
            rows: &report.rows,
            summary: &report.summary,
        })?;
    } else {
        print!("{}", report.csv());
    }
    for s in &report.summary.skipped {
        eprintln!("skipped n={} m={}: {}", s.n, s.m, s.reason);
    }
    Ok(())
}

fn partial(report: &ExperimentReport) -> Outcome {
    if report.is_partial() {
        Outcome::Partial
    } else {
        Outcome::Done
    }
}
