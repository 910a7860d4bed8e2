//! Command-line driver: ground-state solves, beta-classification sweeps,
//! sharp-constant estimation, time integration, and the invariant check
//! suite, with JSON/CSV reports and binary snapshots.
//!
//! Exit codes: 0 success, 1 usage, 2 validation error, 3 solver
//! non-convergence or failed check, 4 simulation abort or i/o failure.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Deserialize;
use serde_json::{json, Value};

use bcnls::dynamics::{self, evolve, kinetic_bound_check, MonitorConfig};
use bcnls::functionals::{FunctionalReport, Moments};
use bcnls::gn::{self, GnResult};
use bcnls::grid::{
    read_snapshot_file, write_snapshot_file, ComplexField, PeriodicGrid, RadialGrid, Snapshot,
};
use bcnls::groundstate::{
    self, solve_amplitudes, solve_scalar_w, solve_vector_direct, Normalization,
    PetviashviliOptions, VectorInit,
};
use bcnls::params::{
    validate_with, Coupling, ProblemParams, ReducedCoupling, ScalingPair, ValidatedParams,
    ValidationMode,
};
use report::{write_csv, write_json_report, Provenance};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Validation(String),
    Solver(String),
    Simulation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Simulation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Validation(m)
            | CliError::Solver(m)
            | CliError::Simulation(m) => m,
        }
    }
}

impl From<bcnls::params::ParamsError> for CliError {
    fn from(e: bcnls::params::ParamsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<bcnls::grid::GridError> for CliError {
    fn from(e: bcnls::grid::GridError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<bcnls::groundstate::SolveError> for CliError {
    fn from(e: bcnls::groundstate::SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<bcnls::dynamics::EvolveError> for CliError {
    fn from(e: bcnls::dynamics::EvolveError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

impl From<bcnls::functionals::FunctionalError> for CliError {
    fn from(e: bcnls::functionals::FunctionalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Simulation(format!("i/o failure: {e}"))
    }
}

#[derive(Parser)]
#[command(
    name = "bcnls",
    about = "Numerical laboratory for coupled fourth-order NLS systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a ground state of the stationary system and certify it.
    Groundstate(GroundstateArgs),
    /// Sweep the off-diagonal coupling and classify semi-trivial vs vector.
    ClassifyBeta(ClassifyBetaArgs),
    /// Estimate the sharp Gagliardo-Nirenberg constant.
    Gn(GnArgs),
    /// Integrate the time-dependent system on a periodic box.
    Evolve(EvolveArgs),
    /// Run the invariant suite for one (dimension, exponent) pair.
    Check(CheckArgs),
}

/// Problem parameters, inline or from a config file (exactly one source).
#[derive(Args, Clone)]
struct ParamArgs {
    /// TOML file with keys dimension, components, exponent, and either
    /// coupling_matrix (row-major) or mu + beta.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    exponent: Option<f64>,
    /// Diagonal couplings mu_1,..,mu_m (defines m).
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,
    /// Off-diagonal coupling.
    #[arg(long)]
    beta: Option<f64>,
    /// Full row-major coupling matrix (alternative to --mu/--beta).
    #[arg(long, value_delimiter = ',')]
    coupling_matrix: Option<Vec<f64>>,
    /// Component count; required with --coupling-matrix.
    #[arg(long)]
    components: Option<usize>,
    /// Admit exponents outside the admissible window (e.g. p = 1 + 4/N) and
    /// box dimensions below 4 for exploratory runs.
    #[arg(long)]
    allow_out_of_range: bool,
}

#[derive(Deserialize)]
struct FileConfig {
    dimension: usize,
    components: usize,
    exponent: f64,
    coupling_matrix: Option<Vec<f64>>,
    mu: Option<Vec<f64>>,
    beta: Option<f64>,
}

impl ParamArgs {
    fn mode(&self) -> ValidationMode {
        if self.allow_out_of_range {
            ValidationMode::AllowOutOfRange
        } else {
            ValidationMode::Strict
        }
    }

    fn resolve(&self) -> Result<(ValidatedParams, Value), CliError> {
        let inline_given = self.dimension.is_some()
            || self.exponent.is_some()
            || self.mu.is_some()
            || self.coupling_matrix.is_some();
        let (params, echo) = if let Some(path) = &self.config {
            if inline_given {
                return Err(CliError::Usage(
                    "give either --config or inline parameters, not both".into(),
                ));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let file: FileConfig = toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let coupling = match (&file.coupling_matrix, &file.mu, file.beta) {
                (Some(entries), None, None) => {
                    Coupling::from_row_major(file.components, entries.clone())?
                }
                (None, Some(mu), Some(beta)) => bcnls::params::expand_coupling(
                    &ReducedCoupling::new(mu.clone(), beta),
                    file.components,
                )?,
                _ => {
                    return Err(CliError::Validation(
                        "config needs either coupling_matrix or mu + beta".into(),
                    ))
                }
            };
            let echo = json!({
                "source": "file",
                "dimension": file.dimension,
                "components": file.components,
                "exponent": file.exponent,
                "coupling_matrix": file.coupling_matrix,
                "mu": file.mu,
                "beta": file.beta,
            });
            (
                ProblemParams::new(file.dimension, file.components, file.exponent, coupling),
                echo,
            )
        } else {
            let dimension = self
                .dimension
                .ok_or_else(|| CliError::Usage("missing --dimension".into()))?;
            let exponent = self
                .exponent
                .ok_or_else(|| CliError::Usage("missing --exponent".into()))?;
            let (m, coupling) = if let Some(matrix) = &self.coupling_matrix {
                let m = self.components.ok_or_else(|| {
                    CliError::Usage("--coupling-matrix requires --components".into())
                })?;
                (m, Coupling::from_row_major(m, matrix.clone())?)
            } else {
                let mu = self
                    .mu
                    .clone()
                    .ok_or_else(|| CliError::Usage("missing --mu (or --coupling-matrix)".into()))?;
                let m = mu.len();
                let beta = if m > 1 {
                    self.beta
                        .ok_or_else(|| CliError::Usage("missing --beta for m > 1".into()))?
                } else {
                    self.beta.unwrap_or(1.0)
                };
                (
                    m,
                    bcnls::params::expand_coupling(&ReducedCoupling::new(mu, beta), m)?,
                )
            };
            let echo = json!({
                "source": "inline",
                "dimension": dimension,
                "components": m,
                "exponent": exponent,
                "mu": self.mu,
                "beta": self.beta,
                "coupling_matrix": self.coupling_matrix,
                "allow_out_of_range": self.allow_out_of_range,
            });
            (ProblemParams::new(dimension, m, exponent, coupling), echo)
        };
        let validated = validate_with(&params, self.mode())?;
        Ok((validated, echo))
    }
}

#[derive(Args)]
struct GroundstateArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 15.0)]
    radius: f64,
    #[arg(long, default_value_t = 4000)]
    points: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 600)]
    max_iter: usize,
    /// Solve the coupled system directly instead of the amplitude route.
    #[arg(long)]
    direct: bool,
    /// Per-component normalization for the direct solve (holds the vector
    /// branch where it is a saddle of the shared-quotient map).
    #[arg(long)]
    per_component_norm: bool,
    /// Snapshot path for the converged profile.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyBetaArgs {
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,
    /// Sweep start:stop:count (inclusive endpoints).
    #[arg(long)]
    beta_grid: String,
    #[arg(long)]
    allow_out_of_range: bool,
    #[arg(long, default_value_t = 15.0)]
    radius: f64,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Run direct coupled solves per beta as well.
    #[arg(long)]
    direct: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GnArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 15.0)]
    radius: f64,
    #[arg(long, default_value_t = 3000)]
    points: usize,
    /// Cross-validate against the closed form and the product ansatz.
    #[arg(long)]
    validate: bool,
    /// Size of the random probe corpus for the inequality check.
    #[arg(long, default_value_t = 200)]
    probes: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Initial data: "gaussian", "groundstate", or a snapshot path.
    #[arg(long, default_value = "gaussian")]
    init: String,
    /// Amplitude(s) of the builtin data, one value or one per component.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    amplitude: Vec<f64>,
    /// Half period L of the box [-L, L)^d.
    #[arg(long = "box", default_value_t = 6.0)]
    box_half: f64,
    #[arg(long, default_value_t = 24)]
    points: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// Constraint pairs to track, e.g. "1:0,0:1,1:1".
    #[arg(long, default_value = "1:0,0:1")]
    pairs: String,
    /// Ground-state action level for stable-set classification.
    #[arg(long)]
    m_level: Option<f64>,
    /// Sharp constant for the mass-critical margin.
    #[arg(long)]
    gn_constant: Option<f64>,
    /// Fail fast when the mass-critical threshold inputs are missing.
    #[arg(long)]
    check_threshold: bool,
    #[arg(long, default_value_t = 10)]
    sample_every: usize,
    /// Radial domain used when --init groundstate solves the profile.
    #[arg(long, default_value_t = 15.0)]
    radius: f64,
    #[arg(long, default_value_t = 2000)]
    radial_points: usize,
    /// Deterministic reduction order (always on in this implementation).
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Snapshot path prefix; written every --snapshot-every steps.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    dimension: usize,
    #[arg(long)]
    exponent: f64,
    /// Smaller grids for a fast smoke pass.
    #[arg(long)]
    fast: bool,
}

fn parse_pairs(text: &str) -> Result<Vec<ScalingPair>, CliError> {
    text.split(',')
        .map(|part| {
            let mut it = part.split(':');
            let a: f64 = it
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("bad pair '{part}'")))?;
            let b: f64 = it
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("bad pair '{part}'")))?;
            ScalingPair::new(a, b).map_err(|e| CliError::Validation(e.to_string()))
        })
        .collect()
}

fn parse_beta_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "--beta-grid wants start:stop:count, got '{text}'"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Usage("bad beta-grid start".into()))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Usage("bad beta-grid stop".into()))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| CliError::Usage("bad beta-grid count".into()))?;
    if count < 1 {
        return Err(CliError::Usage("beta-grid count must be >= 1".into()));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (stop - start) / (count - 1) as f64;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn worker_count() -> usize {
    std::env::var("BCNLS_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn run_groundstate(args: &GroundstateArgs) -> Result<(), CliError> {
    let (params, echo) = args.params.resolve()?;
    let grid = RadialGrid::new(params.n_dim(), args.radius, args.points)?;
    let opts = PetviashviliOptions {
        max_iter: args.max_iter,
        tol: args.tol,
        normalization: if args.per_component_norm {
            Normalization::PerComponent
        } else {
            Normalization::Shared
        },
        ..Default::default()
    };

    let scalar = solve_scalar_w(&grid, params.p(), &opts)?;
    let mu: Vec<f64> = (0..params.m()).map(|j| params.a(j, j)).collect();
    let beta = if params.m() > 1 { params.a(0, 1) } else { 0.0 };
    let amps = solve_amplitudes(&mu, beta, params.p());
    let (profile, route, amplitudes) = match (&amps, args.direct) {
        (Ok(sol), false) => (
            groundstate::vector_from_amplitudes(&sol.c, &scalar.w),
            "amplitudes",
            Some(sol.c.clone()),
        ),
        _ => {
            let init = match &amps {
                Ok(sol) => VectorInit::Amplitudes(sol.c.clone()),
                Err(_) => VectorInit::PerturbedGaussian { delta: 0.1 },
            };
            let res = solve_vector_direct(&grid, &params, &opts, &init)?;
            (res.profile, "direct", amps.ok().map(|s| s.c))
        }
    };
    let result = groundstate::certify(&grid, profile, &params, scalar.iterations)?;

    println!(
        "action level m = {:.12e}  (residual {:.3e}, {} route)",
        result.action_level, result.residual_sup, route
    );
    for sample in &result.constraint_values {
        println!(
            "K_({}, {}) = {:+.3e}  (relative {:.3e})",
            sample.alpha, sample.beta, sample.k, sample.relative
        );
    }

    if let Some(path) = &args.out {
        let snap = Snapshot::RadialReal {
            n_dim: params.n_dim() as u32,
            m: params.m() as u32,
            n: grid.len() as u32,
            r_max: grid.r_max(),
            time: 0.0,
            components: result.profile.clone(),
        };
        write_snapshot_file(path, &snap).map_err(|e| CliError::Simulation(e.to_string()))?;
    }
    if let Some(path) = &args.report {
        let moments = Moments::radial(&grid, &result.profile, &params)?;
        let functional =
            FunctionalReport::new(&moments, &params, ScalingPair::new(1.0, 0.0).unwrap());
        let provenance = Provenance {
            command: "groundstate".into(),
            config: echo,
            seed: 0,
            grid_descriptor: format!(
                "radial:{}:{}:{}",
                params.n_dim(),
                grid.r_max(),
                grid.len()
            ),
        };
        let results = json!({
            "route": route,
            "amplitudes": amplitudes,
            "action_level": result.action_level,
            "residual_sup": result.residual_sup,
            "iterations": result.iterations,
            "component_masses": result.component_masses,
            "constraints": result.constraint_values,
            "pohozaev": result.pohozaev,
            "scalar_profile": {
                "l2": scalar.l2,
                "kinetic": scalar.kinetic,
                "l2p": scalar.i2p,
                "min_over_peak": scalar.min_over_peak,
            },
            "functionals": functional.to_json(),
        });
        write_json_report(path, &provenance, results)?;
    }
    Ok(())
}

fn run_classify_beta(args: &ClassifyBetaArgs) -> Result<(), CliError> {
    let dimension = args
        .dimension
        .ok_or_else(|| CliError::Usage("missing --dimension".into()))?;
    let exponent = args
        .exponent
        .ok_or_else(|| CliError::Usage("missing --exponent".into()))?;
    let mu = args
        .mu
        .clone()
        .ok_or_else(|| CliError::Usage("missing --mu".into()))?;
    let mode = if args.allow_out_of_range {
        ValidationMode::AllowOutOfRange
    } else {
        ValidationMode::Strict
    };
    let betas = parse_beta_grid(&args.beta_grid)?;
    let probe_beta = betas.iter().cloned().find(|&b| b > 0.0).unwrap_or(1.0);
    ProblemParams::reduced_with(
        dimension,
        exponent,
        &ReducedCoupling::new(mu.clone(), probe_beta),
        mode,
    )?;
    let grid = RadialGrid::new(dimension, args.radius, args.points)?;
    let opts = PetviashviliOptions::default();

    // independent per-beta work items, split across workers, merged in order
    let workers = worker_count().min(betas.len()).max(1);
    let chunks: Vec<Vec<f64>> = (0..workers)
        .map(|w| {
            betas
                .iter()
                .enumerate()
                .filter(|(i, _)| i % workers == w)
                .map(|(_, &b)| b)
                .collect()
        })
        .collect();
    let results: Result<Vec<groundstate::BetaSweep>, bcnls::groundstate::SolveError> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let grid = &grid;
                    let mu = &mu;
                    let opts = &opts;
                    scope.spawn(move || {
                        groundstate::classify_beta(
                            grid,
                            dimension,
                            exponent,
                            mu,
                            chunk,
                            opts,
                            args.direct,
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
    let mut merged: Vec<groundstate::BetaEntry> = Vec::new();
    for sweep in results? {
        merged.extend(sweep.entries);
    }
    merged.sort_by(|a, b| a.beta.partial_cmp(&b.beta).unwrap());
    let crossover = merged
        .iter()
        .find(|e| e.classification == groundstate::BetaClass::Vector)
        .map(|e| e.beta);

    for entry in &merged {
        println!(
            "beta = {:8.4}: semi-trivial S = {:.6e}, vector S = {}, class = {:?}",
            entry.beta,
            entry.semi_trivial_action,
            entry
                .vector_action
                .map(|v| format!("{v:.6e}"))
                .unwrap_or_else(|| "n/a".into()),
            entry.classification
        );
    }
    if let Some(b) = crossover {
        println!("crossover at beta = {b}");
    }

    if let Some(path) = &args.csv {
        let header = "beta,semi_trivial_action,vector_action,direct_action,classification";
        let rows: Vec<String> = merged
            .iter()
            .map(|e| {
                format!(
                    "{:.16e},{:.16e},{},{},{:?}",
                    e.beta,
                    e.semi_trivial_action,
                    e.vector_action
                        .map(|v| format!("{v:.16e}"))
                        .unwrap_or_default(),
                    e.direct_action
                        .map(|v| format!("{v:.16e}"))
                        .unwrap_or_default(),
                    e.classification
                )
            })
            .collect();
        write_csv(path, header, &rows)?;
    }
    if let Some(path) = &args.report {
        let provenance = Provenance {
            command: "classify-beta".into(),
            config: json!({
                "dimension": dimension,
                "exponent": exponent,
                "mu": mu,
                "beta_grid": args.beta_grid,
                "direct": args.direct,
            }),
            seed: 0,
            grid_descriptor: format!("radial:{dimension}:{}:{}", args.radius, args.points),
        };
        write_json_report(
            path,
            &provenance,
            json!({ "entries": merged, "crossover": crossover }),
        )?;
    }
    Ok(())
}

fn run_gn(args: &GnArgs) -> Result<(), CliError> {
    let (params, echo) = args.params.resolve()?;
    let grid = RadialGrid::new(params.n_dim(), args.radius, args.points)?;
    let opts = PetviashviliOptions::default();
    let mu: Vec<f64> = (0..params.m()).map(|j| params.a(j, j)).collect();
    let beta = if params.m() > 1 { params.a(0, 1) } else { 0.0 };

    let result: GnResult = gn::minimize_j(&grid, params.n_dim(), params.p(), &mu, beta, &opts)?;
    println!(
        "alpha = inf J = {:.12e}   C = {:.12e}   ({} branch)",
        result.alpha_min, result.c_best, result.winner
    );

    let probes = gn::probe_corpus(&grid, params.m(), args.probes, args.seed);
    let inequality = gn::inequality_check(&grid, &params, result.c_best, &probes, 1e-6)?;
    println!(
        "inequality over {} probes: {} violations, worst ratio {:.9}",
        inequality.probes, inequality.violations, inequality.worst_ratio
    );

    let validation = if args.validate {
        let scalar = solve_scalar_w(&grid, params.p(), &opts)?;
        let closed = gn::closed_form_c(params.n_dim(), params.p(), &mu, scalar.l2.sqrt());
        let cv =
            gn::cross_validate(&result, closed, &scalar, params.n_dim(), params.p(), &mu, beta);
        println!(
            "cross-validation [{:?}]: variational C = {:.6e}, closed form = {:.6e}, \
             ansatz = {:.6e}; closed gap {:.3e}, closed * alpha = {:.6}",
            cv.regime,
            cv.variational_c,
            cv.closed_form_c,
            cv.ansatz_c,
            cv.gap_closed_vs_variational,
            cv.closed_times_alpha
        );
        Some(cv)
    } else {
        None
    };

    if let Some(path) = &args.report {
        let provenance = Provenance {
            command: "gn".into(),
            config: echo,
            seed: args.seed,
            grid_descriptor: format!(
                "radial:{}:{}:{}",
                params.n_dim(),
                grid.r_max(),
                grid.len()
            ),
        };
        let results = json!({
            "alpha_min": result.alpha_min,
            "c_best": result.c_best,
            "winner": result.winner,
            "candidates": result.candidates,
            "el_residual": result.el_residual,
            "el_alpha_identity": result.el_alpha_identity,
            "gauge": result.gauge,
            "inequality": inequality,
            "cross_validation": validation,
        });
        write_json_report(path, &provenance, results)?;
    }
    Ok(())
}

fn run_evolve(args: &EvolveArgs) -> Result<(), CliError> {
    let (params, echo) = args.params.resolve()?;
    let d = params.n_dim();
    let grid = PeriodicGrid::new(d, args.points, args.box_half)?;
    let pairs = parse_pairs(&args.pairs)?;
    if args.check_threshold {
        let p_star = params.p_mass_critical();
        if (params.p() - p_star).abs() > 1e-12 {
            return Err(CliError::Validation(format!(
                "--check-threshold requires the mass-critical exponent p = {p_star}"
            )));
        }
        if args.gn_constant.is_none() {
            return Err(CliError::Validation(
                "--check-threshold needs --gn-constant (sharp constant at p = 1 + 4/N)".into(),
            ));
        }
    }

    let m = params.m();
    let amps: Vec<f64> = if args.amplitude.len() == 1 {
        vec![args.amplitude[0]; m]
    } else if args.amplitude.len() == m {
        args.amplitude.clone()
    } else {
        return Err(CliError::Usage(format!(
            "--amplitude wants 1 or {m} values, got {}",
            args.amplitude.len()
        )));
    };

    let init_field = match args.init.as_str() {
        "gaussian" => ComplexField::from_fn(&grid, m, |j, x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new(amps[j] * (-r2 / 2.0).exp(), 0.0)
        }),
        "groundstate" => {
            let radial = RadialGrid::new(d, args.radius, args.radial_points)?;
            let opts = PetviashviliOptions::default();
            let scalar = solve_scalar_w(&radial, params.p(), &opts)?;
            let mu: Vec<f64> = (0..m).map(|j| params.a(j, j)).collect();
            let beta = if m > 1 { params.a(0, 1) } else { 0.0 };
            let c = solve_amplitudes(&mu, beta, params.p())?;
            let profile = groundstate::vector_from_amplitudes(&c.c, &scalar.w);
            let scaled: Vec<Vec<f64>> = profile
                .iter()
                .zip(&amps)
                .map(|(comp, &a)| comp.iter().map(|&v| a * v).collect())
                .collect();
            ComplexField::from_radial_profiles(&grid, &radial, &scaled)?
        }
        path => {
            let snap =
                read_snapshot_file(path).map_err(|e| CliError::Validation(e.to_string()))?;
            match snap {
                Snapshot::PeriodicComplex { components, .. } => ComplexField { components },
                Snapshot::RadialReal {
                    components,
                    n_dim,
                    n,
                    r_max,
                    ..
                } => {
                    let radial = RadialGrid::new(n_dim as usize, r_max, n as usize)?;
                    ComplexField::from_radial_profiles(&grid, &radial, &components)?
                }
            }
        }
    };

    let monitors = MonitorConfig {
        sample_every: args.sample_every,
        pairs,
        m_level: args.m_level,
        gn_constant: args.gn_constant,
        kinetic_ceiling: None,
    };

    let (state, rep) = run_evolution_with_snapshots(args, &grid, init_field, &params, &monitors)?;

    println!(
        "evolved to t = {:.6} in {} steps; mass drift {:.3e}, energy drift {:.3e}",
        state.time,
        state.step_count,
        mass_drift(&rep),
        energy_drift(&rep)
    );
    if let Some(margin) = &rep.mass_critical {
        println!(
            "mass-critical margin: M = {:.6e}, threshold = {:.6e}, factor = {:.4}, ceiling = {:?}",
            margin.mass_total, margin.threshold, margin.factor, margin.kinetic_ceiling
        );
        if let Some(ceiling) = margin.kinetic_ceiling {
            let sup = rep.kinetic.iter().cloned().fold(0.0f64, f64::max);
            println!(
                "observed sup kinetic = {:.6e} ({}within the a priori ceiling)",
                sup,
                if sup <= ceiling * 1.01 { "" } else { "NOT " }
            );
        }
    }
    if let Some(m_level) = args.m_level {
        println!(
            "kinetic bound (2+N)m/2: {}",
            if kinetic_bound_check(&rep, m_level, d) {
                "satisfied"
            } else {
                "VIOLATED"
            }
        );
    }
    if let Some(warning) = &rep.initial_resolution_warning {
        println!("warning: {warning}");
    }

    if let Some(path) = &args.csv {
        write_csv(path, &rep.csv_header(), &rep.csv_rows())?;
    }
    if let Some(path) = &args.report {
        let provenance = Provenance {
            command: "evolve".into(),
            config: echo,
            seed: 0,
            grid_descriptor: format!("periodic:{d}:{}:{}", args.box_half, args.points),
        };
        let results =
            serde_json::to_value(&rep).map_err(|e| CliError::Simulation(e.to_string()))?;
        write_json_report(path, &provenance, results)?;
    }
    if let Some(abort) = &rep.abort {
        return Err(CliError::Simulation(format!("simulation aborted: {abort:?}")));
    }
    Ok(())
}

fn mass_drift(rep: &dynamics::TrajectoryReport) -> f64 {
    if rep.mass.is_empty() {
        return 0.0;
    }
    let m0 = &rep.mass[0];
    rep.mass
        .iter()
        .flat_map(|row| {
            row.iter()
                .zip(m0)
                .map(|(v, v0)| if *v0 > 0.0 { (v - v0).abs() / v0 } else { 0.0 })
        })
        .fold(0.0f64, f64::max)
}

fn energy_drift(rep: &dynamics::TrajectoryReport) -> f64 {
    if rep.energy.is_empty() {
        return 0.0;
    }
    let e0 = rep.energy[0];
    let scale = e0.abs().max(1e-300);
    rep.energy
        .iter()
        .map(|e| (e - e0).abs() / scale)
        .fold(0.0f64, f64::max)
}

/// Runs the evolution, optionally in segments with snapshots between them.
fn run_evolution_with_snapshots(
    args: &EvolveArgs,
    grid: &PeriodicGrid,
    init: ComplexField,
    params: &ValidatedParams,
    monitors: &MonitorConfig,
) -> Result<(dynamics::SimState, dynamics::TrajectoryReport), CliError> {
    match (&args.snapshot, args.snapshot_every) {
        (Some(prefix), Some(every)) if every >= 1 => {
            let seg_t = every as f64 * args.dt;
            let segments = ((args.horizon / seg_t).round() as usize).max(1);
            let mut field = init;
            let mut merged: Option<dynamics::TrajectoryReport> = None;
            let mut state = dynamics::SimState {
                field: ComplexField::zeros(grid, params.m()),
                time: 0.0,
                step_count: 0,
            };
            for seg in 0..segments {
                let (s, rep) = evolve(grid, field, params, seg_t, args.dt, monitors)?;
                let offset = seg as f64 * seg_t;
                let abort = rep.abort.clone();
                merge_reports(&mut merged, rep, offset);
                let snap = Snapshot::PeriodicComplex {
                    d: grid.dims() as u32,
                    m: params.m() as u32,
                    n_per_dim: grid.n_per_dim() as u32,
                    half_len: grid.half_len(),
                    time: offset + s.time,
                    components: s.field.components.clone(),
                };
                let path = prefix.with_extension(format!("t{:06}.bin", (seg + 1) * every));
                write_snapshot_file(&path, &snap)
                    .map_err(|e| CliError::Simulation(e.to_string()))?;
                state = dynamics::SimState {
                    time: offset + s.time,
                    step_count: (seg + 1) * every,
                    field: s.field,
                };
                field = state.field.clone();
                if abort.is_some() {
                    break;
                }
            }
            Ok((state, merged.expect("at least one segment")))
        }
        _ => Ok(evolve(grid, init, params, args.horizon, args.dt, monitors)?),
    }
}

fn merge_reports(
    merged: &mut Option<dynamics::TrajectoryReport>,
    mut rep: dynamics::TrajectoryReport,
    offset: f64,
) {
    for t in rep.times.iter_mut() {
        *t += offset;
    }
    match merged {
        None => *merged = Some(rep),
        Some(acc) => {
            // drop the duplicated segment-start sample
            acc.times.extend(rep.times.into_iter().skip(1));
            acc.mass.extend(rep.mass.into_iter().skip(1));
            acc.energy.extend(rep.energy.into_iter().skip(1));
            acc.kinetic.extend(rep.kinetic.into_iter().skip(1));
            acc.k_series.extend(rep.k_series.into_iter().skip(1));
            acc.k_scale.extend(rep.k_scale.into_iter().skip(1));
            acc.membership.extend(rep.membership.into_iter().skip(1));
            acc.spectral_tail
                .extend(rep.spectral_tail.into_iter().skip(1));
            acc.abort = rep.abort;
        }
    }
}

fn run_check(args: &CheckArgs) -> Result<(), CliError> {
    let n_dim = args.dimension;
    let p = args.exponent;
    let (radius, points) = if args.fast { (12.0, 1200) } else { (15.0, 2400) };
    let mut failures = 0usize;
    let pass = |failures: &mut usize, name: &str, ok: bool, detail: String| {
        println!("{}  {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            *failures += 1;
        }
    };

    let params = ProblemParams::reduced_with(
        n_dim,
        p,
        &ReducedCoupling::new(vec![1.0, 1.0], 0.5),
        ValidationMode::Strict,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let grid = RadialGrid::new(n_dim, radius, points)?;

    // quadrature exactness on Gaussians
    {
        let mut worst: f64 = 0.0;
        for &a in &[0.5, 1.0, 2.0] {
            let f: Vec<f64> = grid.nodes().iter().map(|&r| (-a * r * r).exp()).collect();
            let got = grid.integrate(&f);
            let want = (std::f64::consts::PI / a).powf(n_dim as f64 / 2.0);
            worst = worst.max(((got - want) / want).abs());
        }
        pass(
            &mut failures,
            "quadrature",
            worst < 1e-6,
            format!("worst Gaussian error {worst:.3e}"),
        );
    }

    // operator self-adjointness on decaying fields
    {
        let f: Vec<f64> = grid.nodes().iter().map(|&r| (-r * r / 2.0).exp()).collect();
        let g: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&r| (1.0 + r) * (-r * r / 3.0).exp())
            .collect();
        let lf = grid.laplacian(&f)?;
        let lg = grid.laplacian(&g)?;
        let lhs = grid.inner(&lf, &g);
        let rhs = grid.inner(&f, &lg);
        let rel = ((lhs - rhs) / lhs.abs().max(1e-300)).abs();
        pass(
            &mut failures,
            "self-adjointness",
            rel < 1e-10,
            format!("defect {rel:.3e}"),
        );
    }

    // scalar profile and its Pohozaev ratios
    let opts = PetviashviliOptions::default();
    let scalar = solve_scalar_w(&grid, p, &opts)?;
    {
        let n = n_dim as f64;
        let kappa = n - p * (n - 4.0);
        let want_kin = n * (p - 1.0) / kappa;
        let want_pot = 4.0 * p / kappa;
        let r1 = (scalar.kinetic / scalar.l2 - want_kin).abs() / want_kin;
        let r2 = (scalar.i2p / scalar.l2 - want_pot).abs() / want_pot;
        pass(
            &mut failures,
            "pohozaev-ratios",
            r1 < 1e-4 && r2 < 1e-4,
            format!("residuals {r1:.3e}, {r2:.3e}"),
        );
    }

    // constraint vanishing on a certified vector solution
    {
        let amps = solve_amplitudes(&[1.0, 1.0], 0.5, p)?;
        let profile = groundstate::vector_from_amplitudes(&amps.c, &scalar.w);
        let result = groundstate::certify(&grid, profile, &params, scalar.iterations)?;
        let worst = result
            .constraint_values
            .iter()
            .map(|s| s.relative)
            .fold(0.0f64, f64::max);
        pass(
            &mut failures,
            "constraint-vanishing",
            worst < 1e-4,
            format!("worst |K|/scale {worst:.3e}"),
        );
    }

    // Lie derivative identity on random probes
    {
        let mut rng = bcnls::rng::SplitMix64::new(7);
        let mut worst_order = f64::INFINITY;
        for _ in 0..5 {
            let probe: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    let amp = rng.uniform(0.3, 1.5);
                    let sigma = rng.uniform(0.8, 1.6);
                    grid.nodes()
                        .iter()
                        .map(|&r| amp * (-r * r / (2.0 * sigma * sigma)).exp())
                        .collect()
                })
                .collect();
            let moments = Moments::radial(&grid, &probe, &params)?;
            let rep = bcnls::functionals::lie_derivative_check(
                &moments,
                &params,
                ScalingPair::new(1.0, 1.0).unwrap(),
                &bcnls::functionals::DEFAULT_LIE_LAMBDAS,
            );
            if let Some(order) = rep.fitted_order {
                worst_order = worst_order.min(order);
            }
        }
        pass(
            &mut failures,
            "lie-derivative",
            worst_order > 1.9,
            format!("min fitted order {worst_order:.3}"),
        );
    }

    // sharp-constant machinery: gauge, equality, inequality on probes
    {
        let result = gn::minimize_j(&grid, n_dim, p, &[1.0, 1.0], 0.01, &opts)?;
        let gauge_ok = (result.normalized.kinetic_total() - 1.0).abs() < 1e-10
            && (result.normalized.l2_total() - 1.0).abs() < 1e-10;
        let probes = gn::probe_corpus(&grid, 2, 50, 11);
        let ineq = gn::inequality_check(&grid, &params, result.c_best, &probes, 1e-6)?;
        pass(
            &mut failures,
            "gn-constant",
            gauge_ok && ineq.violations == 0,
            format!(
                "C = {:.6e}, gauge ok = {gauge_ok}, violations {}",
                result.c_best, ineq.violations
            ),
        );
    }

    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} checks failed")));
    }
    println!("all checks passed for (N, p) = ({n_dim}, {p})");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Groundstate(args) => run_groundstate(args),
        Command::ClassifyBeta(args) => run_classify_beta(args),
        Command::Gn(args) => run_gn(args),
        Command::Evolve(args) => run_evolve(args),
        Command::Check(args) => run_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
