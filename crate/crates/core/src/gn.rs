//! Sharp constant of the vector Gagliardo-Nirenberg estimate
//!
//! ```text
//!     P(psi) <= C (sum ||lap psi_j||^2)^{(p-1)N/4} (sum ||psi_j||^2)^{(N-p(N-4))/4},
//! ```
//!
//! with 1/C = inf J over radial fields. The infimum is located through the
//! Euler-Lagrange fixed point
//!
//! ```text
//!     ((p-1)N/2) lap^2 psi_j + ((N-p(N-4))/2) psi_j = sum_k a_jk |psi_k|^p |psi_j|^{p-2} psi_j
//! ```
//!
//! solved per branch (each semi-trivial component and, when the amplitude
//! system admits one, the all-components vector state); the scale invariance
//! of J then renormalizes the winner to the unit-norm gauge. Three routes to
//! the constant exist — the variational value, the closed form in ||w||, and
//! a direct evaluation of J at the w-based product ansatz — and
//! `cross_validate` measures their mutual gaps. The measured, grid-stable
//! facts: the product-ansatz value coincides with the vector branch of the
//! variational solve; the closed form carries a constant normalization factor
//! of 2p against the quotient it bounds; and at small coupling the infimum is
//! attained on the semi-trivial branch, below the vector branch. The
//! variational value is the operative constant everywhere downstream.

use serde::Serialize;

use crate::functionals::{el_residual_with, gn_quotient, potential, Moments};
use crate::grid::RadialGrid;
use crate::groundstate::{
    petviashvili_coupled, solve_amplitudes, Normalization, PetviashviliOptions, ScalarSolution,
    SolveError, VectorInit,
};
use crate::params::{ProblemParams, ReducedCoupling, ValidatedParams, ValidationMode};
use crate::rng::SplitMix64;

/// Operator coefficients of the quotient-minimizer system.
pub fn el_coefficients(n_dim: usize, p: f64) -> (f64, f64) {
    let n = n_dim as f64;
    ((p - 1.0) * n / 2.0, (n - p * (n - 4.0)) / 2.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct GnCandidate {
    pub label: String,
    pub alpha: f64,
}

/// Amplitude/dilation gauge (nu, mu) mapping the raw minimizer onto the
/// double-unit-norm representative nu psi(mu x).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GnGauge {
    pub nu: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct GnResult {
    /// inf J over the discovered critical points.
    pub alpha_min: f64,
    /// Best constant 1/alpha_min = P(normalized minimizer).
    pub c_best: f64,
    /// Raw converged fields of the winning branch.
    pub minimizer: Vec<Vec<f64>>,
    pub gauge: GnGauge,
    /// Moments of the unit-norm representative.
    pub normalized: Moments,
    /// Sup-norm residual of the Euler-Lagrange system on the raw fields.
    pub el_residual: f64,
    /// (c4 D + c0 L) / (2p P) on the raw fields; 1 at an exact solution.
    pub el_alpha_identity: f64,
    pub candidates: Vec<GnCandidate>,
    pub winner: String,
    /// J on the vector (all-components) branch when it converged.
    pub vector_branch_alpha: Option<f64>,
}

impl GnResult {
    /// Unit-norm minimizer on the grid by interpolated transport; moments-
    /// level consumers should use `normalized` instead (exact gauge).
    pub fn normalized_field(&self, grid: &RadialGrid) -> Result<Vec<Vec<f64>>, SolveError> {
        self.minimizer
            .iter()
            .map(|c| Ok(grid.rescale(c, self.gauge.nu, self.gauge.mu)?.0))
            .collect()
    }
}

fn reduced_params(
    n_dim: usize,
    p: f64,
    mu: &[f64],
    beta: f64,
) -> Result<ValidatedParams, SolveError> {
    // the coupling type requires positive off-diagonals; beta = 0 (the
    // decoupled case) is represented by a 1e-300 stand-in whose cross terms
    // sit hundreds of orders below every other contribution
    let rc = ReducedCoupling::new(mu.to_vec(), if mu.len() > 1 { beta.max(1e-300) } else { 1.0 });
    Ok(ProblemParams::reduced_with(
        n_dim,
        p,
        &rc,
        ValidationMode::AllowOutOfRange,
    )?)
}

/// Minimizes J by solving the Euler-Lagrange system on every branch and
/// taking the lowest quotient.
pub fn minimize_j(
    grid: &RadialGrid,
    n_dim: usize,
    p: f64,
    mu: &[f64],
    beta: f64,
    opts: &PetviashviliOptions,
) -> Result<GnResult, SolveError> {
    let (c4, c0) = el_coefficients(n_dim, p);
    let m = mu.len();
    let mut candidates: Vec<GnCandidate> = Vec::new();
    let mut fields: Vec<(String, Vec<Vec<f64>>, ValidatedParams)> = Vec::new();
    let mut vector_branch_alpha = None;

    // semi-trivial branches: single-component solves padded with zeros
    for (j, &mu_j) in mu.iter().enumerate() {
        let single = reduced_params(n_dim, p, &[mu_j], beta)?;
        let (sol, _) = petviashvili_coupled(
            grid,
            &single,
            opts,
            &VectorInit::PerturbedGaussian { delta: 0.0 },
            c4,
            c0,
        )?;
        let full_params = reduced_params(n_dim, p, mu, beta)?;
        let mut padded = vec![vec![0.0; grid.len()]; m];
        padded[j] = sol.into_iter().next().unwrap();
        let moments = Moments::radial(grid, &padded, &full_params)?;
        let alpha = gn_quotient(&moments, &full_params)?;
        candidates.push(GnCandidate {
            label: format!("semi_trivial_{}", j + 1),
            alpha,
        });
        fields.push((format!("semi_trivial_{}", j + 1), padded, full_params));
    }

    // vector branch from the amplitude-informed start, held by per-component
    // normalization (it is a saddle of the shared-quotient map below the
    // coupling crossover)
    if m > 1 {
        if let Ok(amps) = solve_amplitudes(mu, beta, p) {
            let vec_opts = PetviashviliOptions {
                normalization: Normalization::PerComponent,
                ..opts.clone()
            };
            let full_params = reduced_params(n_dim, p, mu, beta)?;
            match petviashvili_coupled(
                grid,
                &full_params,
                &vec_opts,
                &VectorInit::Amplitudes(amps.c.clone()),
                c4,
                c0,
            ) {
                Ok((sol, _)) => {
                    let moments = Moments::radial(grid, &sol, &full_params)?;
                    let alpha = gn_quotient(&moments, &full_params)?;
                    vector_branch_alpha = Some(alpha);
                    candidates.push(GnCandidate {
                        label: "vector".into(),
                        alpha,
                    });
                    fields.push(("vector".into(), sol, full_params));
                }
                Err(SolveError::NonConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.alpha.partial_cmp(&b.alpha).unwrap())
        .map(|(i, _)| i)
        .expect("at least one branch");
    let (winner, minimizer, full_params) = fields.swap_remove(best);
    let alpha_min = candidates[best].alpha;

    let moments = Moments::radial(grid, &minimizer, &full_params)?;
    let d = moments.kinetic_total();
    let l = moments.l2_total();
    // nu psi(mu x) with mu^4 D = L and nu^2 mu^{-N} L = 1
    let mu_dil = (l / d).powf(0.25);
    let nu = (mu_dil.powi(n_dim as i32) / l).sqrt();
    let normalized = moments.amplitude_dilation(nu, mu_dil);
    let c_best = potential(&normalized, &full_params);
    let (_, el_res) = el_residual_with(grid, &minimizer, &full_params, c4, c0)?;
    let el_alpha_identity =
        (c4 * d + c0 * l) / (2.0 * p * potential(&moments, &full_params));

    Ok(GnResult {
        alpha_min,
        c_best,
        minimizer,
        gauge: GnGauge { nu, mu: mu_dil },
        normalized,
        el_residual: el_res,
        el_alpha_identity,
        candidates,
        winner,
        vector_branch_alpha,
    })
}

/// The closed-form constant evaluated verbatim:
/// ```text
///     C = min(mu) 4p (N - p(N-4))^{((p-1)N-4)/4} / ((N(p-1))^{((p-1)N)/4} ||w||^{2p-2}).
/// ```
/// Its normalization differs from 1/inf J by the constant factor 2p (see
/// `cross_validate`, which measures the gap rather than assuming either form).
pub fn closed_form_c(n_dim: usize, p: f64, mu: &[f64], w_l2_norm: f64) -> f64 {
    let n = n_dim as f64;
    let rho = n * (p - 1.0);
    let kappa = n - p * (n - 4.0);
    let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
    mu_min * 4.0 * p * kappa.powf((rho - 4.0) / 4.0)
        / (rho.powf(rho / 4.0) * w_l2_norm.powf(2.0 * p - 2.0))
}

/// J evaluated at the product ansatz psi_j = A_j w(sigma x) with amplitude
/// ratios A_j ~ mu_j^{-1/(2p-2)}; both the overall amplitude and the dilation
/// sigma drop out of J, so the value follows from the scalar moments alone.
pub fn ansatz_quotient(
    scalar: &ScalarSolution,
    n_dim: usize,
    p: f64,
    mu: &[f64],
    beta: f64,
) -> f64 {
    let n = n_dim as f64;
    let amps: Vec<f64> = mu.iter().map(|&v| v.powf(-1.0 / (2.0 * p - 2.0))).collect();
    let a2: f64 = amps.iter().map(|a| a * a).sum();
    let d = a2 * scalar.kinetic;
    let l = a2 * scalar.l2;
    let mut coupled = 0.0;
    for (j, &aj) in amps.iter().enumerate() {
        for (k, &ak) in amps.iter().enumerate() {
            let a_jk = if j == k { mu[j] } else { beta };
            coupled += a_jk * aj.powf(p) * ak.powf(p);
        }
    }
    let pot = coupled * scalar.i2p / (2.0 * p);
    let e_kin = (p - 1.0) * n / 4.0;
    let e_mass = (n - p * (n - 4.0)) / 4.0;
    d.powf(e_kin) * l.powf(e_mass) / pot
}

/// The amplitude gauge function f(beta) = (sum A_j^2)^p /
/// (sum mu_j A_j^{2p} + beta sum_{j != k} A_j^p A_k^p).
pub fn amplitude_gauge_function(amps: &[f64], mu: &[f64], beta: f64, p: f64) -> f64 {
    let a2: f64 = amps.iter().map(|a| a * a).sum();
    let mut denom = 0.0;
    for (j, &aj) in amps.iter().enumerate() {
        for (k, &ak) in amps.iter().enumerate() {
            if j == k {
                denom += mu[j] * aj.powf(2.0 * p);
            } else {
                denom += beta * aj.powf(p) * ak.powf(p);
            }
        }
    }
    a2.powf(p) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GnRegime {
    SmallBeta,
    OutOfRegime,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub regime: GnRegime,
    pub variational_c: f64,
    pub closed_form_c: f64,
    pub ansatz_c: f64,
    pub vector_branch_c: Option<f64>,
    /// |C_best - C_closed| / C_closed; the headline gap.
    pub gap_closed_vs_variational: f64,
    /// |C_best - C_ansatz| / C_ansatz.
    pub gap_ansatz_vs_variational: f64,
    /// Agreement of the ansatz with the vector branch it parameterizes.
    pub gap_ansatz_vs_vector_branch: Option<f64>,
    /// C_closed * alpha_min: 2p exactly when the closed form's normalization
    /// is the only discrepancy (the grid-stable finding).
    pub closed_times_alpha: f64,
    /// Within 1e-2 on the headline gap.
    pub pass: bool,
}

/// Three-way comparison of the constant. Out of the small-beta regime
/// (beta > 0.05 min mu) a large gap is expected and reported as such.
pub fn cross_validate(
    gn: &GnResult,
    closed: f64,
    scalar: &ScalarSolution,
    n_dim: usize,
    p: f64,
    mu: &[f64],
    beta: f64,
) -> CrossValidation {
    let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
    let regime = if beta <= 0.05 * mu_min {
        GnRegime::SmallBeta
    } else {
        GnRegime::OutOfRegime
    };
    let ansatz_alpha = ansatz_quotient(scalar, n_dim, p, mu, beta);
    let ansatz_c = 1.0 / ansatz_alpha;
    let gap_closed = (gn.c_best - closed).abs() / closed;
    let gap_ansatz = (gn.c_best - ansatz_c).abs() / ansatz_c;
    let vector_branch_c = gn.vector_branch_alpha.map(|a| 1.0 / a);
    let gap_ansatz_vector = vector_branch_c.map(|c| (c - ansatz_c).abs() / ansatz_c);
    CrossValidation {
        regime,
        variational_c: gn.c_best,
        closed_form_c: closed,
        ansatz_c,
        vector_branch_c,
        gap_closed_vs_variational: gap_closed,
        gap_ansatz_vs_variational: gap_ansatz,
        gap_ansatz_vs_vector_branch: gap_ansatz_vector,
        closed_times_alpha: closed * gn.alpha_min,
        pass: gap_closed <= 1e-2,
    }
}

/// Seeded radial probe corpus: Gaussians, Gaussian x even polynomial, and
/// two-Gaussian sums at random widths and amplitudes, per component.
pub fn probe_corpus(grid: &RadialGrid, m: usize, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let kind = rng.next_u64() % 3;
                    let amp = rng.uniform(0.2, 2.0);
                    let sigma = rng.uniform(0.6, 2.2);
                    match kind {
                        0 => grid
                            .nodes()
                            .iter()
                            .map(|&r| amp * (-r * r / (2.0 * sigma * sigma)).exp())
                            .collect(),
                        1 => {
                            let c = rng.uniform(-0.4, 0.8);
                            grid.nodes()
                                .iter()
                                .map(|&r| {
                                    amp * (1.0 + c * r * r)
                                        * (-r * r / (2.0 * sigma * sigma)).exp()
                                })
                                .collect()
                        }
                        _ => {
                            let amp2 = rng.uniform(0.1, 1.0);
                            let sigma2 = rng.uniform(0.4, 1.2);
                            grid.nodes()
                                .iter()
                                .map(|&r| {
                                    amp * (-r * r / (2.0 * sigma * sigma)).exp()
                                        + amp2 * (-r * r / (2.0 * sigma2 * sigma2)).exp()
                                })
                                .collect()
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub probes: usize,
    pub violations: usize,
    /// max over probes of P / (C D^{e1} L^{e2}); sharp at 1 on the minimizer.
    pub worst_ratio: f64,
}

/// Checks P(psi) <= C (sum ||lap psi||^2)^{e1} (sum ||psi||^2)^{e2} (1 + tol)
/// over a probe corpus.
pub fn inequality_check(
    grid: &RadialGrid,
    params: &ValidatedParams,
    c_best: f64,
    probes: &[Vec<Vec<f64>>],
    tol: f64,
) -> Result<InequalityReport, SolveError> {
    let n = params.n_dim() as f64;
    let p = params.p();
    let e_kin = (p - 1.0) * n / 4.0;
    let e_mass = (n - p * (n - 4.0)) / 4.0;
    let mut worst: f64 = 0.0;
    let mut violations = 0usize;
    for probe in probes {
        let moments = Moments::radial(grid, probe, params)?;
        let pot = potential(&moments, params);
        if pot <= 0.0 {
            continue;
        }
        let bound = c_best
            * moments.kinetic_total().powf(e_kin)
            * moments.l2_total().powf(e_mass);
        let ratio = pot / bound;
        worst = worst.max(ratio);
        if ratio > 1.0 + tol {
            violations += 1;
        }
    }
    Ok(InequalityReport {
        probes: probes.len(),
        violations,
        worst_ratio: worst,
    })
}

/// The residual floor for the EL system scales like the ground-state one.
pub use crate::groundstate::residual_floor as el_residual_floor;
