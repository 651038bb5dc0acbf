//! Command-line front end: fit single problems from CSV files, run replicated
//! experiment configurations, and audit designs.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical
//! non-convergence. All randomness flows from `--seed` (or the config seed),
//! so identical invocations produce byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use quadlasso::diagnostics::{
    assumption_l, build_gram, coherence_check, estimate_phi, evaluate_bounds, BoundVariant,
    ConeKind, ConeSpec, DiagnosticsReport,
};
use quadlasso::numkernel::{sym_eigvals, DenseMatrix, DenseVector};
use quadlasso::simulate::{
    run_replications, Example, ExampleSpec, Method, RunConfig, TuningMode,
};
use quadlasso::solver::{fit, FitResult, PenaltyConfig, SolverSettings};
use quadlasso::structure::{
    build_structure, custom_from_csv_str, smoothness, weighted_fusion_from_design, StructureKind,
    StructureMatrix,
};
use quadlasso::tuning::k_nem;

#[derive(Parser)]
#[command(
    name = "quadlasso",
    about = "Sparse regression with an l1 penalty plus a quadratic structure penalty",
    version
)]
struct Cli {
    /// Cap on worker threads (defaults to the rayon environment settings).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one problem from CSV inputs and write the result as JSON.
    Fit(FitArgs),
    /// Run a replicated experiment described by a JSON config.
    Experiment(ExperimentArgs),
    /// Audit a design: restricted-eigenvalue estimates, coherence, bounds.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Design matrix CSV (one row per line, comma-separated).
    #[arg(long)]
    x: PathBuf,
    /// Response CSV (one value per line).
    #[arg(long)]
    y: PathBuf,
    /// Penalty structure: lasso | en | slasso | wfusion | custom:<path>.
    #[arg(long)]
    structure: String,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    mu: f64,
    /// KKT tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iter: usize,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration (strict JSON schema).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    x: PathBuf,
    /// Known truth vector CSV; enables bound evaluation.
    #[arg(long)]
    beta_star: Option<PathBuf>,
    /// Penalty structure: lasso | en | slasso | wfusion | custom:<path>.
    #[arg(long)]
    structure: String,
    #[arg(long)]
    mu: f64,
    /// Comma-separated 0-based support indices (used when beta-star is absent).
    #[arg(long)]
    astar: Option<String>,
    /// l1 weight used for the cone radius and bound evaluation.
    #[arg(long)]
    lambda: Option<f64>,
    /// Cone sample count for the restricted-constant estimate.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// experiment config (strict schema: unknown keys are rejected)

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    example: String,
    p: usize,
    n: usize,
    sigma: f64,
    #[serde(default)]
    rho: Option<f64>,
    seed: u64,
    methods: Vec<String>,
    tunings: Vec<String>,
    replications: usize,
    #[serde(default = "default_folds")]
    folds: usize,
    #[serde(default)]
    lambda_grid: Option<LambdaGridSpec>,
    #[serde(default)]
    mu_grid: Option<MuGridSpec>,
    /// Output prefix: writes `<output>.csv` and `<output>.summary.json`.
    output: String,
    #[serde(default)]
    include_timing: bool,
    #[serde(default)]
    solver: Option<SolverSpec>,
}

fn default_folds() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LambdaGridSpec {
    points: usize,
    min_ratio: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MuGridSpec {
    points: usize,
    min: f64,
    max: f64,
    #[serde(default = "default_true")]
    include_zero: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSpec {
    #[serde(default = "default_kkt_tol")]
    kkt_tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
}

fn default_kkt_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    50_000
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FitJson {
    beta: Vec<f64>,
    objective: f64,
    kkt_residual: f64,
    iterations: usize,
    active_set: Vec<usize>,
    converged: bool,
}

fn write_fit_json(path: &Path, fitres: &FitResult) -> Result<(), String> {
    let doc = FitJson {
        beta: fitres.beta.as_slice().to_vec(),
        objective: fitres.objective,
        kkt_residual: fitres.kkt_residual,
        iterations: fitres.iterations,
        active_set: fitres.active_set.clone(),
        converged: fitres.converged,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn parse_structure(spec: &str, x: &DenseMatrix) -> Result<StructureKind, String> {
    match spec.to_ascii_lowercase().as_str() {
        "lasso" => return Ok(StructureKind::Lasso),
        "en" | "elastic_net" => return Ok(StructureKind::ElasticNet),
        "slasso" | "smooth_lasso" => return Ok(StructureKind::SmoothLasso),
        "wfusion" | "weighted_fusion" => {
            return weighted_fusion_from_design(x, None).map_err(|e| e.to_string())
        }
        _ => {}
    }
    // the path after "custom:" keeps its original case
    if spec.len() >= 7 && spec[..7].eq_ignore_ascii_case("custom:") {
        let text = read_file(Path::new(&spec[7..]))?;
        custom_from_csv_str(&text).map_err(|e| e.to_string())
    } else {
        Err(format!(
            "unknown structure {spec:?}; expected lasso|en|slasso|wfusion|custom:<path>"
        ))
    }
}

fn cmd_fit(args: &FitArgs) -> Result<u8, String> {
    let x = DenseMatrix::from_csv_str(&read_file(&args.x)?)
        .map_err(|e| format!("{}: {e}", args.x.display()))?;
    let y = DenseVector::from_csv_str(&read_file(&args.y)?)
        .map_err(|e| format!("{}: {e}", args.y.display()))?;
    let kind = parse_structure(&args.structure, &x)?;
    let s = build_structure(kind.clone(), x.cols()).map_err(|e| e.to_string())?;
    let cfg = PenaltyConfig::new(args.lambda, args.mu, kind).map_err(|e| e.to_string())?;
    let settings = SolverSettings {
        max_iter: args.max_iter,
        kkt_tol: args.tol,
        restart: true,
    };
    let fitres = fit(&x, &y, &cfg, &s, &settings).map_err(|e| e.to_string())?;
    write_fit_json(&args.out, &fitres)?;
    Ok(if fitres.converged { 0 } else { 2 })
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<u8, String> {
    let text = read_file(&args.config)?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| format!("invalid config {}: {e}", args.config.display()))?;

    let example = Example::parse(&config.example).map_err(|e| e.to_string())?;
    let spec = ExampleSpec {
        example,
        p: config.p,
        n: config.n,
        sigma: config.sigma,
        rho: config.rho,
        seed: config.seed,
    };
    let methods = config
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let tunings = config
        .tunings
        .iter()
        .map(|t| TuningMode::parse(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;

    let defaults = RunConfig::default();
    let run_cfg = RunConfig {
        methods,
        tunings,
        replications: config.replications,
        folds: config.folds,
        lambda_points: config.lambda_grid.as_ref().map_or(defaults.lambda_points, |g| g.points),
        lambda_min_ratio: config
            .lambda_grid
            .as_ref()
            .map_or(defaults.lambda_min_ratio, |g| g.min_ratio),
        mu_points: config.mu_grid.as_ref().map_or(defaults.mu_points, |g| g.points),
        mu_min: config.mu_grid.as_ref().map_or(defaults.mu_min, |g| g.min),
        mu_max: config.mu_grid.as_ref().map_or(defaults.mu_max, |g| g.max),
        mu_include_zero: config.mu_grid.as_ref().map_or(true, |g| g.include_zero),
        include_timing: config.include_timing,
        solver: config.solver.as_ref().map_or(SolverSettings::default(), |s| SolverSettings {
            kkt_tol: s.kkt_tol,
            max_iter: s.max_iter,
            restart: true,
        }),
    };

    let report = run_replications(&spec, &run_cfg).map_err(|e| e.to_string())?;
    let csv_path = format!("{}.csv", config.output);
    fs::write(&csv_path, report.to_csv()).map_err(|e| format!("cannot write {csv_path}: {e}"))?;
    let summary = report.summary();
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
    text.push('\n');
    let summary_path = format!("{}.summary.json", config.output);
    fs::write(&summary_path, text).map_err(|e| format!("cannot write {summary_path}: {e}"))?;
    Ok(0)
}

fn parse_index_list(text: &str, p: usize) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for field in text.split(',') {
        let idx: usize = field
            .trim()
            .parse()
            .map_err(|_| format!("cannot parse index {:?}", field.trim()))?;
        if idx >= p {
            return Err(format!("index {idx} out of range for p = {p}"));
        }
        out.push(idx);
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err("empty index list".to_string());
    }
    Ok(out)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8, String> {
    let x = DenseMatrix::from_csv_str(&read_file(&args.x)?)
        .map_err(|e| format!("{}: {e}", args.x.display()))?;
    let p = x.cols();
    let kind = parse_structure(&args.structure, &x)?;
    let s: StructureMatrix = build_structure(kind, p).map_err(|e| e.to_string())?;
    let gram = build_gram(&x, &s, args.mu).map_err(|e| e.to_string())?;

    let beta_star = match &args.beta_star {
        Some(path) => Some(
            DenseVector::from_csv_str(&read_file(path)?)
                .map_err(|e| format!("{}: {e}", path.display()))?,
        ),
        None => None,
    };
    if let Some(b) = &beta_star {
        if b.len() != p {
            return Err(format!("beta-star has length {}, design has p = {p}", b.len()));
        }
    }

    let psi_eigs = sym_eigvals(&gram.psi).map_err(|e| e.to_string())?;
    let kn_eigs = sym_eigvals(&gram.kn).map_err(|e| e.to_string())?;
    let phi_lower = kn_eigs.get(0).max(0.0);

    let support: Option<Vec<usize>> = match (&beta_star, &args.astar) {
        (Some(b), _) => {
            let sup: Vec<usize> = (0..p).filter(|&j| b.get(j) != 0.0).collect();
            if sup.is_empty() {
                None
            } else {
                Some(sup)
            }
        }
        (None, Some(list)) => Some(parse_index_list(list, p)?),
        (None, None) => None,
    };

    // Restricted-constant estimate over the cone that matches the available
    // information: the quadratic cone when the truth and the l1 weight are
    // known, the linear comparison cone otherwise.
    let phi_estimate = match &support {
        Some(sup) => {
            let cone = match (&beta_star, args.lambda) {
                (Some(b), Some(lambda)) if lambda > 0.0 => {
                    let theta = quadlasso::diagnostics::enlarged_support(b, &s);
                    let jb = quadlasso::numkernel::matvec(&s.jtilde, b).map_err(|e| e.to_string())?;
                    let rho = 4.0 * (sup.len() as f64).sqrt()
                        + 4.0 * args.mu * jb.norm_l2() / lambda;
                    ConeSpec::new(theta, rho, ConeKind::Quadratic)
                }
                _ => ConeSpec::new(sup.clone(), 0.0, ConeKind::Linear),
            };
            Some(
                estimate_phi(&gram, &cone, args.samples, args.seed)
                    .map_err(|e| e.to_string())?
                    .upper_estimate,
            )
        }
        None => None,
    };

    let coherence = match &support {
        Some(sup) if sup.len() < p => {
            Some(coherence_check(&gram, sup).map_err(|e| e.to_string())?)
        }
        _ => None,
    };

    let bounds = match (&beta_star, args.lambda) {
        (Some(b), Some(lambda)) if phi_lower > 0.0 => Some(
            evaluate_bounds(b, &s, lambda, args.mu, phi_lower, BoundVariant::SparseRisk)
                .map_err(|e| e.to_string())?,
        ),
        _ => None,
    };

    let report = DiagnosticsReport {
        phi_estimate,
        phi_lower_bound: phi_lower,
        coherence_t: coherence.as_ref().map(|c| c.t),
        coherence_passes: coherence.as_ref().map(|c| c.passes),
        mutual_coherence_t: coherence.as_ref().map(|c| c.mutual_t),
        l_statistic: assumption_l(&x),
        k_nem: if p >= 2 { Some(k_nem(p).map_err(|e| e.to_string())?) } else { None },
        alpha: match &beta_star {
            Some(b) if b.len() >= 2 => Some(smoothness(b).map_err(|e| e.to_string())?),
            _ => None,
        },
        psi_eig_range: [psi_eigs.get(0), psi_eigs.get(psi_eigs.len() - 1)],
        kn_eig_range: [kn_eigs.get(0), kn_eigs.get(kn_eigs.len() - 1)],
        bounds,
    };

    let mut text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    text.push('\n');
    fs::write(&args.out, text).map_err(|e| format!("cannot write {}: {e}", args.out.display()))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    if let Some(threads) = cli.threads {
        // ignore failure when a pool already exists (only possible in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let outcome = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
