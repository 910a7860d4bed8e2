//! Problem parameterization: spatial dimension, component count, nonlinearity
//! exponent and the symmetric coupling matrix, together with the admissible
//! exponent window and strict validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("invalid dimension: N = {0}, need N >= 4")]
    InvalidDimension(usize),
    #[error("invalid component count: m = {0}, need m >= 1")]
    InvalidComponentCount(usize),
    #[error("exponent out of range: p = {p}, admissible window is ({low}, {high})")]
    ExponentRange { p: f64, low: f64, high: f64 },
    #[error("coupling matrix is not symmetric at ({0},{1})")]
    CouplingSymmetry(usize, usize),
    #[error("coupling matrix entry ({0},{1}) is not strictly positive")]
    CouplingPositivity(usize, usize),
    #[error("coupling matrix has {got} entries, expected {want} for m = {m}")]
    CouplingShape { got: usize, want: usize, m: usize },
    #[error("invalid scaling pair: (alpha, beta) = (0, 0)")]
    ZeroScalingPair,
    #[error("2*alpha + N*beta = 0: pair ({0}, {1}) is outside the H domain")]
    DegeneratePair(f64, f64),
}

/// Symmetric m x m coupling matrix with strictly positive entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    m: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl Coupling {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ParamsError> {
        let m = rows.len();
        let mut entries = Vec::with_capacity(m * m);
        for row in &rows {
            if row.len() != m {
                return Err(ParamsError::CouplingShape {
                    got: rows.iter().map(Vec::len).sum(),
                    want: m * m,
                    m,
                });
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { m, entries })
    }

    pub fn from_row_major(m: usize, entries: Vec<f64>) -> Result<Self, ParamsError> {
        if entries.len() != m * m {
            return Err(ParamsError::CouplingShape {
                got: entries.len(),
                want: m * m,
                m,
            });
        }
        Ok(Self { m, entries })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.m + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.m..(j + 1) * self.m]
    }

    pub fn is_symmetric(&self) -> bool {
        for j in 0..self.m {
            for k in (j + 1)..self.m {
                if self.get(j, k) != self.get(k, j) {
                    return false;
                }
            }
        }
        true
    }
}

/// Reduced coupling form: diagonal mu_j, constant off-diagonal beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoupling {
    pub mu: Vec<f64>,
    pub beta: f64,
}

impl ReducedCoupling {
    pub fn new(mu: Vec<f64>, beta: f64) -> Self {
        Self { mu, beta }
    }
}

/// Expand a reduced coupling into the full matrix: a_jj = mu_j, a_jk = beta.
pub fn expand_coupling(rc: &ReducedCoupling, m: usize) -> Result<Coupling, ParamsError> {
    if m < 1 {
        return Err(ParamsError::InvalidComponentCount(m));
    }
    if rc.mu.len() != m {
        return Err(ParamsError::CouplingShape {
            got: rc.mu.len(),
            want: m,
            m,
        });
    }
    for (j, &mu) in rc.mu.iter().enumerate() {
        if !(mu > 0.0) {
            return Err(ParamsError::CouplingPositivity(j, j));
        }
    }
    // A single component never touches the off-diagonal value.
    if m > 1 && !(rc.beta > 0.0) {
        return Err(ParamsError::CouplingPositivity(0, 1));
    }
    let mut entries = vec![rc.beta; m * m];
    for j in 0..m {
        entries[j * m + j] = rc.mu[j];
    }
    Ok(Coupling { m, entries })
}

/// Mass-critical and energy-critical exponents (p_low, p_high) for dimension N.
/// p_high is `f64::INFINITY` at N = 4 so range checks stay exact.
pub fn critical_exponents(n_dim: usize) -> Result<(f64, f64), ParamsError> {
    if n_dim < 4 {
        return Err(ParamsError::InvalidDimension(n_dim));
    }
    let p_low = 1.0 + 4.0 / n_dim as f64;
    let p_high = if n_dim > 4 {
        n_dim as f64 / (n_dim - 4) as f64
    } else {
        f64::INFINITY
    };
    Ok((p_low, p_high))
}

/// Validation strictness. `Strict` enforces the admissible window
/// p_low < p < p_high and N >= 4; `AllowOutOfRange` waives the exponent window
/// (admitting e.g. the mass-critical p = p_low) and dimensions below 4 for
/// smoke runs. Symmetry and positivity of the coupling are always enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    #[default]
    Strict,
    AllowOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n_dim: usize,
    pub m: usize,
    pub p: f64,
    pub coupling: Coupling,
}

impl ProblemParams {
    pub fn new(n_dim: usize, m: usize, p: f64, coupling: Coupling) -> Self {
        Self {
            n_dim,
            m,
            p,
            coupling,
        }
    }

    /// Convenience constructor from the reduced (mu, beta) form.
    pub fn reduced(
        n_dim: usize,
        p: f64,
        rc: &ReducedCoupling,
    ) -> Result<ValidatedParams, ParamsError> {
        let m = rc.mu.len();
        let coupling = expand_coupling(rc, m)?;
        validate(&ProblemParams::new(n_dim, m, p, coupling))
    }

    pub fn reduced_with(
        n_dim: usize,
        p: f64,
        rc: &ReducedCoupling,
        mode: ValidationMode,
    ) -> Result<ValidatedParams, ParamsError> {
        let m = rc.mu.len();
        let coupling = expand_coupling(rc, m)?;
        validate_with(&ProblemParams::new(n_dim, m, p, coupling), mode)
    }
}

/// Parameters that passed `validate`; every solver and functional consumes
/// this type rather than raw `ProblemParams`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedParams(ProblemParams);

impl ValidatedParams {
    pub fn n_dim(&self) -> usize {
        self.0.n_dim
    }

    pub fn m(&self) -> usize {
        self.0.m
    }

    pub fn p(&self) -> f64 {
        self.0.p
    }

    pub fn coupling(&self) -> &Coupling {
        &self.0.coupling
    }

    pub fn inner(&self) -> &ProblemParams {
        &self.0
    }

    /// a_jk entry.
    pub fn a(&self, j: usize, k: usize) -> f64 {
        self.0.coupling.get(j, k)
    }

    /// Mass-critical exponent 1 + 4/N.
    pub fn p_mass_critical(&self) -> f64 {
        1.0 + 4.0 / self.0.n_dim as f64
    }
}

pub fn validate(params: &ProblemParams) -> Result<ValidatedParams, ParamsError> {
    validate_with(params, ValidationMode::Strict)
}

/// Checks, in order: dimension, component count, coupling shape, coupling
/// symmetry, coupling positivity, exponent range. The first violated
/// invariant is reported.
pub fn validate_with(
    params: &ProblemParams,
    mode: ValidationMode,
) -> Result<ValidatedParams, ParamsError> {
    if params.n_dim < 4 && mode == ValidationMode::Strict {
        return Err(ParamsError::InvalidDimension(params.n_dim));
    }
    if params.n_dim < 1 {
        return Err(ParamsError::InvalidDimension(params.n_dim));
    }
    if params.m < 1 {
        return Err(ParamsError::InvalidComponentCount(params.m));
    }
    let c = &params.coupling;
    if c.m != params.m {
        return Err(ParamsError::CouplingShape {
            got: c.entries.len(),
            want: params.m * params.m,
            m: params.m,
        });
    }
    for j in 0..c.m {
        for k in (j + 1)..c.m {
            if c.get(j, k) != c.get(k, j) {
                return Err(ParamsError::CouplingSymmetry(j, k));
            }
        }
    }
    for j in 0..c.m {
        for k in 0..c.m {
            let a = c.get(j, k);
            if !(a > 0.0) || !a.is_finite() {
                return Err(ParamsError::CouplingPositivity(j, k));
            }
        }
    }
    match mode {
        ValidationMode::Strict => {
            let (low, high) = critical_exponents(params.n_dim)?;
            if !(params.p > low && params.p < high) {
                return Err(ParamsError::ExponentRange {
                    p: params.p,
                    low,
                    high,
                });
            }
        }
        ValidationMode::AllowOutOfRange => {
            if !(params.p > 1.0) {
                return Err(ParamsError::ExponentRange {
                    p: params.p,
                    low: 1.0,
                    high: f64::INFINITY,
                });
            }
        }
    }
    Ok(ValidatedParams(params.clone()))
}

/// The (alpha, beta) pair indexing the scaling family and its constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPair {
    pub alpha: f64,
    pub beta: f64,
}

impl ScalingPair {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ParamsError> {
        if alpha == 0.0 && beta == 0.0 {
            return Err(ParamsError::ZeroScalingPair);
        }
        Ok(Self { alpha, beta })
    }

    /// 2*alpha + N*beta, the denominator of the H functional.
    pub fn h_denominator(&self, n_dim: usize) -> f64 {
        2.0 * self.alpha + n_dim as f64 * self.beta
    }
}
