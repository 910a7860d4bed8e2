//! Time integration of
//!
//! ```text
//!     i du_j/dt + lap^2 u_j = sum_k a_jk |u_k|^p |u_j|^{p-2} u_j
//! ```
//!
//! on a periodic box by Strang splitting.
//!
//! Sign conventions, fixed once from the equation: the free flow
//! i du/dt = -lap^2 u gives d/dt u_hat = i |k|^4 u_hat, so each mode gains
//! the phase e^{+i |k|^4 t}. Along the nonlinear sub-flow the moduli are
//! constant, so theta_j = sum_k a_jk |u_k|^p |u_j|^{p-2} is frozen and the
//! exact solution is the rotation u_j -> e^{-i theta_j t} u_j. A stationary
//! profile Psi with lap^2 Psi + Psi = N(Psi) therefore evolves as
//! e^{-i t} Psi; the standing-wave run is the end-to-end check of both signs.
//!
//! Both sub-flows preserve every modulus, hence each component mass, to
//! roundoff; energy is conserved up to the O(tau^2) splitting error.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::functionals::{
    self, constraint_k, constraint_quadratic_scale, modulus_pow, Moments, MODULUS_FLOOR,
};
use crate::grid::{ComplexField, GridError, PeriodicGrid, Spectral};
use crate::params::{ParamsError, ScalingPair, ValidatedParams};

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Functional(#[from] functionals::FunctionalError),
    #[error("time step {tau} does not divide horizon {horizon}")]
    TimeMismatch { tau: f64, horizon: f64 },
    #[error("mass-critical analysis requires p = 1 + 4/N = {expected}, got p = {got}")]
    WrongRegime { expected: f64, got: f64 },
    #[error("field does not live on the grid: {0} components of wrong length")]
    FieldShape(usize),
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub field: ComplexField,
    pub time: f64,
    pub step_count: usize,
}

/// Why a trajectory stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Abort {
    NanDetected { time: f64 },
    ResolutionLoss { time: f64, tail: f64 },
    KineticCeiling { time: f64, kinetic: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Membership {
    APlus,
    AMinus,
    AboveM,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// Steps between samples; >= 1.
    pub sample_every: usize,
    /// Constraint pairs tracked along the trajectory.
    pub pairs: Vec<ScalingPair>,
    /// Ground-state action level, enabling stable-set classification.
    pub m_level: Option<f64>,
    /// Sharp constant at p = 1 + 4/N, enabling the mass-critical margin.
    pub gn_constant: Option<f64>,
    /// Hard abort when sum ||lap u_j||^2 exceeds this.
    pub kinetic_ceiling: Option<f64>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            sample_every: 10,
            pairs: vec![ScalingPair::new(1.0, 0.0).unwrap()],
            m_level: None,
            gn_constant: None,
            kinetic_ceiling: None,
        }
    }
}

/// Per-sample functional values along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryReport {
    pub times: Vec<f64>,
    /// mass[s][j] = ||u_j||^2 at sample s.
    pub mass: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// sum_j ||lap u_j||^2 per sample.
    pub kinetic: Vec<f64>,
    /// k[s][q] = K_{pair q} at sample s.
    pub k_series: Vec<Vec<f64>>,
    /// Quadratic scale of each K sample, for dimensionless smallness.
    pub k_scale: Vec<Vec<f64>>,
    /// Membership w.r.t. pairs[0] when m_level is configured.
    pub membership: Vec<Option<Membership>>,
    /// max |u_hat| in the outer frequency band over max |u_hat|.
    pub spectral_tail: Vec<f64>,
    pub initial_resolution_warning: Option<String>,
    pub abort: Option<Abort>,
    pub mass_critical: Option<MassCriticalMargin>,
}

impl TrajectoryReport {
    pub fn csv_header(&self) -> String {
        let m = self.mass.first().map_or(0, Vec::len);
        let pairs = self.k_series.first().map_or(0, Vec::len);
        let mut cols = vec!["time".to_string()];
        cols.extend((1..=m).map(|j| format!("mass_{j}")));
        cols.push("energy".into());
        cols.push("kinetic".into());
        cols.extend((0..pairs).map(|q| format!("K_{q}")));
        cols.push("spectral_tail".into());
        cols.push("membership".into());
        cols.join(",")
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let fmt = |v: f64| format!("{v:.16e}");
        (0..self.times.len())
            .map(|s| {
                let mut cols = vec![fmt(self.times[s])];
                cols.extend(self.mass[s].iter().map(|&v| fmt(v)));
                cols.push(fmt(self.energy[s]));
                cols.push(fmt(self.kinetic[s]));
                cols.extend(self.k_series[s].iter().map(|&v| fmt(v)));
                cols.push(fmt(self.spectral_tail[s]));
                cols.push(match self.membership[s] {
                    Some(Membership::APlus) => "A_plus".into(),
                    Some(Membership::AMinus) => "A_minus".into(),
                    Some(Membership::AboveM) => "above_m".into(),
                    None => String::new(),
                });
                cols.join(",")
            })
            .collect()
    }
}

fn check_field(grid: &PeriodicGrid, field: &ComplexField) -> Result<(), EvolveError> {
    let bad = field
        .components
        .iter()
        .filter(|c| c.len() != grid.len())
        .count();
    if bad > 0 {
        return Err(EvolveError::FieldShape(bad));
    }
    Ok(())
}

/// Exact free flow over dt: every mode multiplied by e^{+i |k|^4 dt}.
pub fn linear_step(
    grid: &PeriodicGrid,
    spectral: &Spectral,
    field: &mut ComplexField,
    dt: f64,
) -> Result<(), EvolveError> {
    check_field(grid, field)?;
    let symbol = grid.bilaplacian_symbol();
    let phases: Vec<Complex64> = symbol
        .iter()
        .map(|&s| Complex64::new(0.0, s * dt).exp())
        .collect();
    for comp in &mut field.components {
        spectral.forward(comp);
        for (v, ph) in comp.iter_mut().zip(&phases) {
            *v *= ph;
        }
        spectral.inverse(comp);
    }
    Ok(())
}

/// Exact nonlinear sub-flow over dt: u_j -> e^{-i theta_j dt} u_j with
/// theta_j = sum_k a_jk |u_k|^p |u_j|^{p-2} frozen along the flow.
pub fn nonlinear_step(field: &mut ComplexField, params: &ValidatedParams, dt: f64) {
    let m = field.m();
    let p = params.p();
    let n_pts = field.components.first().map_or(0, Vec::len);
    let mut msq = vec![0.0; m];
    let mut modp = vec![0.0; m];
    for i in 0..n_pts {
        for j in 0..m {
            let z = field.components[j][i];
            msq[j] = z.norm_sqr();
            modp[j] = modulus_pow(msq[j], p);
        }
        for j in 0..m {
            let factor = if p == 2.0 {
                1.0
            } else {
                modulus_pow(msq[j].max(MODULUS_FLOOR * MODULUS_FLOOR), p - 2.0)
            };
            let theta: f64 = (0..m).map(|k| params.a(j, k) * modp[k]).sum::<f64>() * factor;
            let rot = Complex64::new(0.0, -theta * dt).exp();
            field.components[j][i] *= rot;
        }
    }
}

/// One Strang step: linear half, nonlinear full, linear half.
pub fn strang_step(
    grid: &PeriodicGrid,
    spectral: &Spectral,
    field: &mut ComplexField,
    params: &ValidatedParams,
    tau: f64,
) -> Result<(), EvolveError> {
    linear_step(grid, spectral, field, 0.5 * tau)?;
    nonlinear_step(field, params, tau);
    linear_step(grid, spectral, field, 0.5 * tau)?;
    Ok(())
}

/// Triple-jump composition of Strang steps: fourth order in tau. Used for
/// long-horizon runs where the quadratic secular error of plain Strang would
/// dominate the quantity under study.
pub fn yoshida4_step(
    grid: &PeriodicGrid,
    spectral: &Spectral,
    field: &mut ComplexField,
    params: &ValidatedParams,
    tau: f64,
) -> Result<(), EvolveError> {
    let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
    let w0 = 1.0 - 2.0 * w1;
    strang_step(grid, spectral, field, params, w1 * tau)?;
    strang_step(grid, spectral, field, params, w0 * tau)?;
    strang_step(grid, spectral, field, params, w1 * tau)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepper {
    #[default]
    Strang,
    Yoshida4,
}

/// Refines a transplanted radial profile into the exact stationary state of
/// the discrete box operator by spectral Petviashvili iteration,
/// ```text
///     u <- M^gamma F^{-1}[ F[N(u)] / (|k|^4 + 1) ],
/// ```
/// so that e^{-it} u solves the discrete flow up to splitting error alone.
/// Interpolated transplants are only approximately stationary; their defect
/// radiates into the high-frequency band during evolution.
pub fn refine_stationary(
    grid: &PeriodicGrid,
    field: &mut ComplexField,
    params: &ValidatedParams,
    max_iter: usize,
    tol: f64,
) -> Result<usize, EvolveError> {
    check_field(grid, field)?;
    let spectral = Spectral::new(grid);
    let symbol = grid.bilaplacian_symbol();
    let p = params.p();
    let q = 2.0 * p - 1.0;
    let gamma = q / (q - 1.0);
    let m = field.m();
    let vol = grid.cell_volume();
    for iter in 1..=max_iter {
        // N_j(u) pointwise (real data: moduli are |values|)
        let n_pts = grid.len();
        let mut nonlin: Vec<Vec<Complex64>> =
            vec![vec![Complex64::new(0.0, 0.0); n_pts]; m];
        let mut denom = 0.0;
        for i in 0..n_pts {
            let msq: Vec<f64> = (0..m)
                .map(|j| field.components[j][i].norm_sqr())
                .collect();
            for j in 0..m {
                let factor = if p == 2.0 {
                    1.0
                } else {
                    modulus_pow(msq[j].max(MODULUS_FLOOR * MODULUS_FLOOR), p - 2.0)
                };
                let coef: f64 = (0..m)
                    .map(|k| params.a(j, k) * modulus_pow(msq[k], p))
                    .sum();
                let nj = coef * factor * field.components[j][i];
                denom += vol * (nj.conj() * field.components[j][i]).re;
                nonlin[j][i] = nj;
            }
        }
        // <(lap^2 + 1) u, u> via Parseval
        let mut numer = 0.0;
        let parseval = vol / grid.len() as f64;
        let mut hats: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        for comp in &field.components {
            let mut hat = comp.clone();
            spectral.forward(&mut hat);
            numer += parseval
                * hat
                    .iter()
                    .zip(&symbol)
                    .map(|(z, &s)| (s + 1.0) * z.norm_sqr())
                    .sum::<f64>();
            hats.push(hat);
        }
        if !(denom > 0.0) {
            return Err(EvolveError::FieldShape(0));
        }
        let quotient = numer / denom;
        let factor = quotient.powf(gamma);
        let mut increment = 0.0f64;
        let mut scale = 0.0f64;
        for (j, nl) in nonlin.iter_mut().enumerate() {
            spectral.forward(nl);
            for (z, &s) in nl.iter_mut().zip(&symbol) {
                *z /= s + 1.0;
            }
            spectral.inverse(nl);
            for (u, v) in field.components[j].iter_mut().zip(nl.iter()) {
                let next = factor * v;
                increment = increment.max((next - *u).norm());
                scale = scale.max(next.norm());
                *u = next;
            }
        }
        let _ = &hats;
        if (quotient - 1.0).abs() < tol && increment < tol * scale.max(1e-300) && iter > 3 {
            return Ok(iter);
        }
    }
    Ok(max_iter)
}

/// Classification against the stable set {S < m, K >= 0}.
pub fn stable_set_membership(
    moments: &Moments,
    params: &ValidatedParams,
    pair: ScalingPair,
    m_level: f64,
) -> Membership {
    let s = functionals::action(moments, params);
    if s >= m_level {
        return Membership::AboveM;
    }
    if constraint_k(moments, params, pair) >= 0.0 {
        Membership::APlus
    } else {
        Membership::AMinus
    }
}

/// sup of the kinetic series against the stable-set ceiling (2 + N) m / 2.
pub fn kinetic_bound_check(report: &TrajectoryReport, m_level: f64, n_dim: usize) -> bool {
    let ceiling = (2.0 + n_dim as f64) * m_level / 2.0;
    let max = report.kinetic.iter().cloned().fold(0.0f64, f64::max);
    max <= ceiling * (1.0 + 1e-2)
}

/// A priori kinetic bound in the mass-critical regime:
/// (1 - 2 C M_tot^{4/N}) sum ||lap u_j||^2 <= 2 E.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MassCriticalMargin {
    pub mass_total: f64,
    /// Global-existence mass threshold (1/(2C))^{N/4} = (alpha/2)^{N/4}.
    pub threshold: f64,
    /// 1 - 2 C M_tot^{4/N}.
    pub factor: f64,
    /// 2E / factor when the factor is positive.
    pub kinetic_ceiling: Option<f64>,
    pub energy: f64,
}

pub fn mass_critical_margin(
    moments: &Moments,
    params: &ValidatedParams,
    gn_constant: f64,
) -> Result<MassCriticalMargin, EvolveError> {
    let p_star = params.p_mass_critical();
    if (params.p() - p_star).abs() > 1e-12 {
        return Err(EvolveError::WrongRegime {
            expected: p_star,
            got: params.p(),
        });
    }
    let n = params.n_dim() as f64;
    let mass_total = moments.l2_total();
    let threshold = (1.0 / (2.0 * gn_constant)).powf(n / 4.0);
    let factor = 1.0 - 2.0 * gn_constant * mass_total.powf(4.0 / n);
    let energy = functionals::energy(moments, params);
    let kinetic_ceiling = if factor > 0.0 {
        Some(2.0 * energy / factor)
    } else {
        None
    };
    Ok(MassCriticalMargin {
        mass_total,
        threshold,
        factor,
        kinetic_ceiling,
        energy,
    })
}

/// Outer frequency band (any dimension's |signed index| in the top eighth).
fn tail_threshold(n: usize) -> usize {
    n / 2 - (n / 8).max(1)
}

struct Sampler<'a> {
    grid: &'a PeriodicGrid,
    spectral: &'a Spectral,
    params: &'a ValidatedParams,
    monitors: &'a MonitorConfig,
    tail_band: Vec<bool>,
}

impl<'a> Sampler<'a> {
    fn new(
        grid: &'a PeriodicGrid,
        spectral: &'a Spectral,
        params: &'a ValidatedParams,
        monitors: &'a MonitorConfig,
    ) -> Self {
        let n = grid.n_per_dim();
        let cut = tail_threshold(n);
        let tail_band = (0..grid.len())
            .map(|mut idx| {
                for _ in 0..grid.dims() {
                    let i = idx % n;
                    let signed = if i < n / 2 { i } else { n - i };
                    if signed >= cut {
                        return true;
                    }
                    idx /= n;
                }
                false
            })
            .collect();
        Self {
            grid,
            spectral,
            params,
            monitors,
            tail_band,
        }
    }

    /// Computes (moments, spectral tail) in one transform pass per component.
    fn measure(&self, field: &ComplexField) -> (Moments, f64) {
        let m = field.m();
        let p = self.params.p();
        let vol = self.grid.cell_volume();
        let parseval = vol / self.grid.len() as f64;
        let mut l2 = Vec::with_capacity(m);
        let mut kinetic = Vec::with_capacity(m);
        let mut mod_p: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut tail_peak = 0.0f64;
        let mut peak = 0.0f64;
        for comp in &field.components {
            l2.push(vol * comp.iter().map(|z| z.norm_sqr()).sum::<f64>());
            mod_p.push(comp.iter().map(|z| modulus_pow(z.norm_sqr(), p)).collect());
            let mut hat = comp.clone();
            self.spectral.forward(&mut hat);
            let mut kin = 0.0;
            for (idx, z) in hat.iter().enumerate() {
                let ksq = self.grid.k_sq(idx);
                kin += ksq * ksq * z.norm_sqr();
                let mag = z.norm();
                peak = peak.max(mag);
                if self.tail_band[idx] {
                    tail_peak = tail_peak.max(mag);
                }
            }
            kinetic.push(parseval * kin);
        }
        let mut pair = vec![0.0; m * m];
        for j in 0..m {
            for k in j..m {
                let v = vol
                    * mod_p[j]
                        .iter()
                        .zip(&mod_p[k])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                pair[j * m + k] = v;
                pair[k * m + j] = v;
            }
        }
        let moments = Moments {
            n_dim: self.params.n_dim(),
            p,
            l2,
            kinetic,
            pair,
        };
        let tail = if peak > 0.0 { tail_peak / peak } else { 0.0 };
        (moments, tail)
    }

    fn record(&self, report: &mut TrajectoryReport, time: f64, field: &ComplexField) -> bool {
        if !field.is_finite() {
            report.abort = Some(Abort::NanDetected { time });
            return false;
        }
        let (moments, tail) = self.measure(field);
        report.times.push(time);
        report.mass.push(moments.l2.clone());
        report.energy.push(functionals::energy(&moments, self.params));
        let kin = moments.kinetic_total();
        report.kinetic.push(kin);
        report.spectral_tail.push(tail);
        let mut ks = Vec::with_capacity(self.monitors.pairs.len());
        let mut scales = Vec::with_capacity(self.monitors.pairs.len());
        for &pair in &self.monitors.pairs {
            ks.push(constraint_k(&moments, self.params, pair));
            scales.push(constraint_quadratic_scale(&moments, self.params, pair).abs());
        }
        report.k_series.push(ks);
        report.k_scale.push(scales);
        report.membership.push(self.monitors.m_level.map(|m_level| {
            stable_set_membership(&moments, self.params, self.monitors.pairs[0], m_level)
        }));
        if tail > 1e-3 {
            report.abort = Some(Abort::ResolutionLoss { time, tail });
            return false;
        }
        if let Some(ceiling) = self.monitors.kinetic_ceiling {
            if kin > ceiling {
                report.abort = Some(Abort::KineticCeiling { time, kinetic: kin });
                return false;
            }
        }
        true
    }
}

/// Integrates the system from `init` over [0, T] with fixed step tau,
/// sampling the monitors every `sample_every` steps. Consecutive linear
/// half-steps between samples are fused into full steps.
pub fn evolve(
    grid: &PeriodicGrid,
    init: ComplexField,
    params: &ValidatedParams,
    horizon: f64,
    tau: f64,
    monitors: &MonitorConfig,
) -> Result<(SimState, TrajectoryReport), EvolveError> {
    evolve_with(grid, init, params, horizon, tau, monitors, Stepper::Strang)
}

pub fn evolve_with(
    grid: &PeriodicGrid,
    init: ComplexField,
    params: &ValidatedParams,
    horizon: f64,
    tau: f64,
    monitors: &MonitorConfig,
    stepper: Stepper,
) -> Result<(SimState, TrajectoryReport), EvolveError> {
    check_field(grid, &init)?;
    if !(tau > 0.0) || !(horizon > 0.0) {
        return Err(EvolveError::TimeMismatch { tau, horizon });
    }
    let steps_f = horizon / tau;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f {
        return Err(EvolveError::TimeMismatch { tau, horizon });
    }
    let sample_every = monitors.sample_every.max(1);
    let spectral = Spectral::new(grid);
    let sampler = Sampler::new(grid, &spectral, params, monitors);

    let mut report = TrajectoryReport {
        times: Vec::new(),
        mass: Vec::new(),
        energy: Vec::new(),
        kinetic: Vec::new(),
        k_series: Vec::new(),
        k_scale: Vec::new(),
        membership: Vec::new(),
        spectral_tail: Vec::new(),
        initial_resolution_warning: None,
        abort: None,
        mass_critical: None,
    };

    let mut field = init;
    let alive = sampler.record(&mut report, 0.0, &field);
    if let Some(tail) = report.spectral_tail.first() {
        if *tail > 1e-8 {
            report.initial_resolution_warning = Some(format!(
                "initial spectral tail {tail:.3e} exceeds 1e-8 of peak; \
                 the grid only marginally resolves the data"
            ));
        }
    }
    if let Some(c) = monitors.gn_constant {
        let (moments, _) = sampler.measure(&field);
        report.mass_critical = Some(mass_critical_margin(&moments, params, c)?);
    }
    if !alive {
        return Ok((
            SimState {
                field,
                time: 0.0,
                step_count: 0,
            },
            report,
        ));
    }

    // cached phase multipliers for tau/2 and tau
    let symbol = grid.bilaplacian_symbol();
    let half: Vec<Complex64> = symbol
        .iter()
        .map(|&s| Complex64::new(0.0, s * 0.5 * tau).exp())
        .collect();
    let full: Vec<Complex64> = symbol
        .iter()
        .map(|&s| Complex64::new(0.0, s * tau).exp())
        .collect();
    let apply = |field: &mut ComplexField, phases: &[Complex64]| {
        for comp in &mut field.components {
            spectral.forward(comp);
            for (v, ph) in comp.iter_mut().zip(phases) {
                *v *= ph;
            }
            spectral.inverse(comp);
        }
    };

    let mut step = 0usize;
    while step < steps {
        let block = sample_every.min(steps - step);
        match stepper {
            Stepper::Strang => {
                apply(&mut field, &half);
                for i in 0..block {
                    nonlinear_step(&mut field, params, tau);
                    if i + 1 < block {
                        apply(&mut field, &full);
                    }
                }
                apply(&mut field, &half);
            }
            Stepper::Yoshida4 => {
                // S(w1) S(w0) S(w1) with adjacent linear half-steps fused
                let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
                let w0 = 1.0 - 2.0 * w1;
                let make = |dt: f64| -> Vec<Complex64> {
                    symbol
                        .iter()
                        .map(|&s| Complex64::new(0.0, s * dt).exp())
                        .collect()
                };
                let ph_outer = make(0.5 * w1 * tau);
                let ph_mid = make(0.5 * (w1 + w0) * tau);
                let ph_join = make(w1 * tau);
                apply(&mut field, &ph_outer);
                for i in 0..block {
                    nonlinear_step(&mut field, params, w1 * tau);
                    apply(&mut field, &ph_mid);
                    nonlinear_step(&mut field, params, w0 * tau);
                    apply(&mut field, &ph_mid);
                    nonlinear_step(&mut field, params, w1 * tau);
                    if i + 1 < block {
                        apply(&mut field, &ph_join);
                    }
                }
                apply(&mut field, &ph_outer);
            }
        }
        step += block;
        let time = step as f64 * tau;
        if !sampler.record(&mut report, time, &field) {
            return Ok((
                SimState {
                    field,
                    time,
                    step_count: step,
                },
                report,
            ));
        }
    }
    Ok((
        SimState {
            field,
            time: steps as f64 * tau,
            step_count: steps,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ProblemParams, ReducedCoupling, ValidationMode};
    use approx::assert_relative_eq;

    fn params_d(n_dim: usize, m: usize, p: f64, beta: f64) -> ValidatedParams {
        ProblemParams::reduced_with(
            n_dim,
            p,
            &ReducedCoupling::new(vec![1.0; m], if m > 1 { beta } else { 1.0 }),
            ValidationMode::AllowOutOfRange,
        )
        .unwrap()
    }

    fn gaussian_field(grid: &PeriodicGrid, m: usize, amp: f64) -> ComplexField {
        ComplexField::from_fn(grid, m, |j, x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new(amp * (1.0 + 0.3 * j as f64) * (-r2 / 2.0).exp(), 0.0)
        })
    }

    fn total_mass(grid: &PeriodicGrid, field: &ComplexField) -> Vec<f64> {
        field
            .components
            .iter()
            .map(|c| grid.cell_volume() * c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .collect()
    }

    #[test]
    fn linear_zero_time_is_identity() {
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let spectral = Spectral::new(&grid);
        let mut field = gaussian_field(&grid, 1, 0.5);
        let orig = field.clone();
        linear_step(&grid, &spectral, &mut field, 0.0).unwrap();
        for (a, b) in field.components[0].iter().zip(&orig.components[0]) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn linear_single_mode_phase() {
        // e^{i k x} gains exactly the phase |k|^4 t
        let grid = PeriodicGrid::new(2, 16, 3.0).unwrap();
        let spectral = Spectral::new(&grid);
        let (j1, j2) = (2usize, 13usize);
        let k1 = grid.freqs()[j1];
        let k2 = grid.freqs()[j2];
        let mut coords = [0.0; 2];
        let mut field = ComplexField::from_fn(&grid, 1, |_, x| {
            coords.copy_from_slice(x);
            Complex64::new(0.0, k1 * x[0] + k2 * x[1]).exp()
        });
        let orig = field.clone();
        let t = 0.37;
        linear_step(&grid, &spectral, &mut field, t).unwrap();
        let ksq = k1 * k1 + k2 * k2;
        let expected_phase = Complex64::new(0.0, ksq * ksq * t).exp();
        for (a, b) in field.components[0].iter().zip(&orig.components[0]) {
            assert!((a - expected_phase * b).norm() < 1e-10);
        }
    }

    #[test]
    fn linear_preserves_mass() {
        let grid = PeriodicGrid::new(2, 32, 6.0).unwrap();
        let spectral = Spectral::new(&grid);
        let mut field = gaussian_field(&grid, 2, 0.7);
        let before = total_mass(&grid, &field);
        linear_step(&grid, &spectral, &mut field, 0.123).unwrap();
        let after = total_mass(&grid, &field);
        for (a, b) in before.iter().zip(&after) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn nonlinear_zero_time_is_identity() {
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let mut field = gaussian_field(&grid, 1, 0.5);
        let orig = field.clone();
        nonlinear_step(&mut field, &params, 0.0);
        assert_eq!(field, orig);
    }

    #[test]
    fn nonlinear_constant_amplitude_rotates_uniformly() {
        // |u| = A constant: u -> e^{-i mu A^{2p-2} tau} u
        let grid = PeriodicGrid::new(2, 8, 2.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let amp = 0.8;
        let mut field = ComplexField::from_fn(&grid, 1, |_, _| Complex64::new(amp, 0.0));
        let tau = 0.21;
        nonlinear_step(&mut field, &params, tau);
        let expected = Complex64::new(0.0, -amp * amp * tau).exp() * amp;
        for v in &field.components[0] {
            assert!((v - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn nonlinear_preserves_moduli_pointwise() {
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let params = params_d(2, 2, 3.0, 0.4);
        let mut field = gaussian_field(&grid, 2, 0.9);
        let orig = field.clone();
        nonlinear_step(&mut field, &params, 0.5);
        for (a, b) in field.components.iter().flatten().zip(orig.components.iter().flatten()) {
            assert!((a.norm() - b.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn strang_mass_drift_over_ten_thousand_steps() {
        // both sub-flows preserve moduli; only transform roundoff accumulates
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let spectral = Spectral::new(&grid);
        let params = params_d(2, 1, 2.0, 0.5);
        let mut field = gaussian_field(&grid, 1, 0.4);
        let before = total_mass(&grid, &field)[0];
        for _ in 0..10_000 {
            strang_step(&grid, &spectral, &mut field, &params, 1e-3).unwrap();
        }
        let after = total_mass(&grid, &field)[0];
        assert_relative_eq!(before, after, max_relative = 1e-10);
    }

    #[test]
    fn evolve_yoshida_matches_composed_steps() {
        // the fused evolve loop reproduces explicit yoshida4_step composition
        let grid = PeriodicGrid::new(2, 32, 6.0).unwrap();
        let spectral = Spectral::new(&grid);
        let params = params_d(2, 1, 2.0, 0.5);
        let init = gaussian_field(&grid, 1, 0.7);
        let tau = 2e-3;
        let mut manual = init.clone();
        for _ in 0..40 {
            yoshida4_step(&grid, &spectral, &mut manual, &params, tau).unwrap();
        }
        let monitors = MonitorConfig {
            sample_every: 13, // uneven blocks exercise the join logic
            ..MonitorConfig::default()
        };
        let (state, _) = evolve_with(
            &grid,
            init,
            &params,
            40.0 * tau,
            tau,
            &monitors,
            Stepper::Yoshida4,
        )
        .unwrap();
        let sup = state.field.components[0]
            .iter()
            .zip(&manual.components[0])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-12, "fused/composed disagreement {sup:.3e}");
    }

    #[test]
    fn yoshida_step_is_fourth_order_in_energy() {
        let grid = PeriodicGrid::new(2, 32, 6.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let mut drifts = Vec::new();
        for &tau in &[4e-3, 2e-3] {
            let field = gaussian_field(&grid, 1, 0.8);
            let monitors = MonitorConfig {
                sample_every: (0.25 / tau) as usize,
                ..MonitorConfig::default()
            };
            let (_, report) = evolve_with(
                &grid,
                field,
                &params,
                1.0,
                tau,
                &monitors,
                Stepper::Yoshida4,
            )
            .unwrap();
            let e0 = report.energy[0];
            let drift = report
                .energy
                .iter()
                .map(|e| (e - e0).abs())
                .fold(0.0f64, f64::max)
                / e0.abs();
            drifts.push(drift);
        }
        let q = drifts[0] / drifts[1];
        assert!(q > 10.0, "fourth-order ratio {q} (drifts {drifts:?})");
    }

    #[test]
    fn evolve_zero_data_stays_zero() {
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let params = params_d(2, 2, 2.0, 0.5);
        let field = ComplexField::zeros(&grid, 2);
        let (state, report) = evolve(
            &grid,
            field,
            &params,
            0.1,
            1e-2,
            &MonitorConfig::default(),
        )
        .unwrap();
        assert!(report.abort.is_none());
        assert!(report.energy.iter().all(|&e| e == 0.0));
        assert!(report.kinetic.iter().all(|&k| k == 0.0));
        assert!(state
            .field
            .components
            .iter()
            .all(|c| c.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn evolve_second_order_energy_drift() {
        // relative energy drift shrinks ~4x when tau halves
        let grid = PeriodicGrid::new(2, 32, 6.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let mut drifts = Vec::new();
        for &tau in &[4e-3, 2e-3, 1e-3] {
            let field = gaussian_field(&grid, 1, 0.8);
            let monitors = MonitorConfig {
                sample_every: (0.25 / tau) as usize,
                ..MonitorConfig::default()
            };
            let (_, report) = evolve(&grid, field, &params, 1.0, tau, &monitors).unwrap();
            assert!(report.abort.is_none());
            let e0 = report.energy[0];
            let drift = report
                .energy
                .iter()
                .map(|e| (e - e0).abs())
                .fold(0.0f64, f64::max)
                / e0.abs();
            drifts.push(drift);
        }
        let q1 = drifts[0] / drifts[1];
        let q2 = drifts[1] / drifts[2];
        assert!(q1 > 3.3 && q1 < 4.7, "ratio {q1} (drifts {drifts:?})");
        assert!(q2 > 3.3 && q2 < 4.7, "ratio {q2} (drifts {drifts:?})");
    }

    #[test]
    fn evolve_time_reversal() {
        // evolve, conjugate, evolve, conjugate returns the initial data
        let grid = PeriodicGrid::new(2, 32, 6.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let init = gaussian_field(&grid, 1, 0.6);
        let monitors = MonitorConfig::default();
        let (state, _) = evolve(&grid, init.clone(), &params, 0.5, 1e-3, &monitors).unwrap();
        let mut back = state.field;
        for c in &mut back.components {
            for z in c.iter_mut() {
                *z = z.conj();
            }
        }
        let (state2, _) = evolve(&grid, back, &params, 0.5, 1e-3, &monitors).unwrap();
        let sup = state2.field.components[0]
            .iter()
            .zip(&init.components[0])
            .map(|(a, b)| (a.conj() - b).norm())
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-8, "time-reversal defect {sup}");
    }

    #[test]
    fn membership_of_zero_field_is_a_plus() {
        let grid = PeriodicGrid::new(2, 8, 2.0).unwrap();
        let params = params_d(2, 1, 2.0, 0.5);
        let spectral = Spectral::new(&grid);
        let field = ComplexField::zeros(&grid, 1);
        let moments = Moments::periodic(&grid, &spectral, &field, &params).unwrap();
        let pair = ScalingPair::new(1.0, 0.0).unwrap();
        assert_eq!(
            stable_set_membership(&moments, &params, pair, 1.0),
            Membership::APlus
        );
    }

    #[test]
    fn kinetic_bound_check_negative_control() {
        let report = TrajectoryReport {
            times: vec![0.0, 1.0],
            mass: vec![vec![1.0], vec![1.0]],
            energy: vec![0.1, 0.1],
            kinetic: vec![0.5, 100.0],
            k_series: vec![vec![], vec![]],
            k_scale: vec![vec![], vec![]],
            membership: vec![None, None],
            spectral_tail: vec![0.0, 0.0],
            initial_resolution_warning: None,
            abort: None,
            mass_critical: None,
        };
        // ceiling (2+4)*1/2 = 3 < 100
        assert!(!kinetic_bound_check(&report, 1.0, 4));
        let ok = TrajectoryReport {
            kinetic: vec![0.5, 2.9],
            ..report
        };
        assert!(kinetic_bound_check(&ok, 1.0, 4));
    }

    #[test]
    fn mass_critical_margin_cases() {
        let grid = PeriodicGrid::new(2, 16, 6.0).unwrap();
        let spectral = Spectral::new(&grid);
        // p = 1 + 4/N with N = 2 under the exploratory flag: p = 3
        let params = params_d(2, 1, 3.0, 0.5);
        let c = 0.25;
        // zero data: factor 1, ceiling 2E = 0
        let zero = ComplexField::zeros(&grid, 1);
        let m0 = Moments::periodic(&grid, &spectral, &zero, &params).unwrap();
        let margin = mass_critical_margin(&m0, &params, c).unwrap();
        assert_eq!(margin.factor, 1.0);
        assert_eq!(margin.kinetic_ceiling, Some(0.0));
        // threshold mass: factor 0, ceiling undefined
        let threshold = (1.0 / (2.0 * c)).powf(2.0 / 4.0);
        let field = gaussian_field(&grid, 1, 1.0);
        let m1 = Moments::periodic(&grid, &spectral, &field, &params).unwrap();
        let scale = (threshold / m1.l2_total()).sqrt();
        let scaled = ComplexField {
            components: vec![field.components[0].iter().map(|z| z * scale).collect()],
        };
        let m2 = Moments::periodic(&grid, &spectral, &scaled, &params).unwrap();
        let margin2 = mass_critical_margin(&m2, &params, c).unwrap();
        assert!(margin2.factor.abs() < 1e-10);
        assert!(margin2.kinetic_ceiling.is_none());
        // wrong exponent is rejected
        let wrong = params_d(2, 1, 2.5, 0.5);
        let m3 = Moments::periodic(&grid, &spectral, &scaled, &wrong).unwrap();
        assert!(matches!(
            mass_critical_margin(&m3, &wrong, c),
            Err(EvolveError::WrongRegime { .. })
        ));
    }

    #[test]
    fn standing_wave_phase_convention_smoke() {
        // 1-d check of the derived sign: a stationary profile of
        // lap^2 psi + psi = mu psi^3 on the box evolves as e^{-it} psi.
        // Build an exact discrete stationary state from a single cosine mode
        // is impossible (nonlinearity mixes modes); instead verify that the
        // *linear* part alone rotates e^{ik x} by e^{+i|k|^4 t} (done above)
        // and that a constant-amplitude state rotates by e^{-i theta t}:
        // together these fix e^{-it} for stationary profiles. The full check
        // runs in the acceptance suite on a transplanted ground state.
        let grid = PeriodicGrid::new(1, 8, 1.0).unwrap();
        let params = params_d(1, 1, 2.0, 0.5);
        let amp = 1.0;
        let mut field = ComplexField::from_fn(&grid, 1, |_, _| Complex64::new(amp, 0.0));
        let tau = 0.05;
        // constant field: lap^2 u = 0, so i u_t = mu |u|^2 u and the exact
        // solution is e^{-i mu A^2 t} A
        let spectral = Spectral::new(&grid);
        for _ in 0..20 {
            strang_step(&grid, &spectral, &mut field, &params, tau).unwrap();
        }
        let t = 20.0 * tau;
        let expected = Complex64::new(0.0, -amp * amp * t).exp() * amp;
        for v in &field.components[0] {
            assert!((v - expected).norm() < 1e-12, "got {v}, want {expected}");
        }
    }
}
