//! Radial grid in dimension N with staggered nodes r_i = (i + 1/2) h.
//!
//! The Laplacian is discretized in flux form,
//! ```text
//!     (Lf)_i = [ c_i (f_{i+1} - f_i) - c_{i-1} (f_i - f_{i-1}) ] / v_i,
//! ```
//! with exact face areas c_i = ((i+1) h)^{N-1} / h. The zero face area at the
//! origin closes the stencil without a ghost node (the f'(0) = 0 symmetry
//! condition); the outer ghost f_n = -f_{n-1} places a homogeneous Dirichlet
//! value at r = R. The cell volumes v_i equal r_i^{N-1} h except for the first
//! cell, where the exact volume h^N / N keeps the stencil consistent at the
//! origin. With quadrature weights proportional to the same v_i, the operator
//! is self-adjoint to machine precision, and so is its square.

use super::GridError;

/// Surface area of the unit sphere in R^N: 2 pi^{N/2} / Gamma(N/2).
pub fn unit_sphere_area(n_dim: usize) -> f64 {
    let half = n_dim as f64 / 2.0;
    let gamma_half = if n_dim % 2 == 0 {
        // Gamma(k) = (k-1)!
        let k = n_dim / 2;
        (1..k).map(|i| i as f64).product::<f64>()
    } else {
        // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
        let k = (n_dim - 1) / 2;
        let mut val = std::f64::consts::PI.sqrt();
        for i in 1..=k {
            val *= (i as f64) - 0.5;
        }
        val
    };
    2.0 * std::f64::consts::PI.powf(half) / gamma_half
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    n_dim: usize,
    r_max: f64,
    n: usize,
    h: f64,
    nodes: Vec<f64>,
    /// Quadrature weights including the unit-sphere area.
    weights: Vec<f64>,
    /// Cell volumes v_i (weights / omega).
    cells: Vec<f64>,
    /// Face conductances c_i = ((i+1)h)^{N-1} / h, i = 0..n-1.
    faces: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n_dim: usize, r_max: f64, n: usize) -> Result<Self, GridError> {
        if n_dim < 1 {
            return Err(GridError::Invalid(format!("dimension {n_dim} < 1")));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(GridError::Invalid(format!("radius {r_max} not positive")));
        }
        if n < 8 {
            return Err(GridError::Invalid(format!("{n} nodes is too few")));
        }
        let h = r_max / n as f64;
        let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        let nm1 = (n_dim - 1) as i32;
        let faces: Vec<f64> = (0..n)
            .map(|i| ((i + 1) as f64 * h).powi(nm1) / h)
            .collect();
        let mut cells: Vec<f64> = nodes.iter().map(|&r| r.powi(nm1) * h).collect();
        cells[0] = h.powi(n_dim as i32) / n_dim as f64;
        let omega = unit_sphere_area(n_dim);
        let weights = cells.iter().map(|&v| omega * v).collect();
        Ok(Self {
            n_dim,
            r_max,
            n,
            h,
            nodes,
            weights,
            cells,
            faces,
        })
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, f: &[f64]) -> Result<(), GridError> {
        if f.len() != self.n {
            return Err(GridError::Mismatch {
                got: f.len(),
                want: self.n,
            });
        }
        Ok(())
    }

    /// Integral over R^N of the radial function sampled at the nodes.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Quadrature inner product of two node vectors.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        debug_assert_eq!(g.len(), self.n);
        self.weights
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    /// Emits a warning when the field has not decayed in the outer tenth of
    /// the domain (integrals are then polluted by domain truncation).
    pub fn decay_warning(&self, f: &[f64], tol: f64) -> Option<String> {
        let peak = f.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if peak == 0.0 {
            return None;
        }
        let start = (0.9 * self.n as f64) as usize;
        let tail = f[start..].iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if tail > tol * peak {
            Some(format!(
                "field tail {:.3e} exceeds {:.1e} of peak {:.3e} near r = {}; \
                 integrals may be truncated",
                tail, tol, peak, self.r_max
            ))
        } else {
            None
        }
    }

    /// Flux-form radial Laplacian.
    pub fn laplacian(&self, f: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check(f)?;
        Ok(self.laplacian_unchecked(f))
    }

    pub(crate) fn laplacian_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let up = if i + 1 < n {
                self.faces[i] * (f[i + 1] - f[i])
            } else {
                // ghost f_n = -f_{n-1}: zero Dirichlet value at r = R
                self.faces[i] * (-2.0 * f[i])
            };
            let down = if i > 0 {
                self.faces[i - 1] * (f[i] - f[i - 1])
            } else {
                0.0
            };
            out[i] = (up - down) / self.cells[i];
        }
        out
    }

    /// Bilaplacian as the squared Laplacian; returns (lap f, bilap f) since
    /// the intermediate field is needed by every functional anyway. The outer
    /// ghost of the second application imposes (lap f)(R) = 0.
    pub fn bilaplacian(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GridError> {
        self.check(f)?;
        let lap = self.laplacian_unchecked(f);
        let bilap = self.laplacian_unchecked(&lap);
        Ok((lap, bilap))
    }

    /// Symmetric tridiagonal representation T = V^{1/2} L V^{-1/2} of the
    /// Laplacian: (diagonal, off-diagonal).
    pub(crate) fn sym_tridiag(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for i in 0..n {
            let up = self.faces[i] * if i + 1 < n { 1.0 } else { 2.0 };
            let down = if i > 0 { self.faces[i - 1] } else { 0.0 };
            diag[i] = -(up + down) / self.cells[i];
        }
        for i in 0..n - 1 {
            off[i] = self.faces[i] / (self.cells[i] * self.cells[i + 1]).sqrt();
        }
        (diag, off)
    }

    /// Cubic interpolation of a node vector at radius r; even symmetry across
    /// the origin, zero beyond the domain.
    pub fn sample(&self, f: &[f64], r: f64) -> f64 {
        debug_assert_eq!(f.len(), self.n);
        let r = r.abs();
        let u = r / self.h - 0.5;
        let i1 = u.floor() as isize;
        let t = u - i1 as f64;
        let grab = |j: isize| -> f64 {
            // even reflection: node -1 mirrors node 0, node -2 mirrors node 1
            let j = if j < 0 { -j - 1 } else { j };
            if (j as usize) < self.n {
                f[j as usize]
            } else {
                0.0
            }
        };
        let (fm1, f0, f1, f2) = (grab(i1 - 1), grab(i1), grab(i1 + 1), grab(i1 + 2));
        // Lagrange cubic on equispaced samples
        let a = -fm1 / 6.0 + f0 / 2.0 - f1 / 2.0 + f2 / 6.0;
        let b = fm1 / 2.0 - f0 + f1 / 2.0;
        let c = -fm1 / 3.0 - f0 / 2.0 + f1 - f2 / 6.0;
        ((a * t + b) * t + c) * t + f0
    }

    /// nu f(mu r) evaluated at the nodes by cubic interpolation, with a report
    /// on how much of the dilated field falls outside the domain.
    pub fn rescale(
        &self,
        f: &[f64],
        nu: f64,
        mu: f64,
    ) -> Result<(Vec<f64>, RescaleReport), GridError> {
        self.check(f)?;
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(GridError::InvalidDilation(mu));
        }
        let out: Vec<f64> = self.nodes.iter().map(|&r| nu * self.sample(f, mu * r)).collect();
        let peak = f.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let boundary = self.sample(f, mu * self.r_max).abs();
        let boundary_ratio = if peak > 0.0 { boundary / peak } else { 0.0 };
        Ok((
            out,
            RescaleReport {
                boundary_ratio,
                truncated: boundary_ratio > 1e-8,
            },
        ))
    }
}

/// Diagnostics from an interpolated rescale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleReport {
    /// |f(mu R)| relative to the field peak: mass the dilation pushed against
    /// the domain boundary.
    pub boundary_ratio: f64,
    pub truncated: bool,
}

/// Direct banded factorization of (c4 lap^2 + c0) on a radial grid, reused
/// across solver iterations. Requires c4, c0 > 0, which makes the weighted
/// form symmetric positive definite.
#[derive(Debug, Clone)]
pub struct BiharmonicSolver {
    n: usize,
    sqrt_cells: Vec<f64>,
    // Cholesky factor bands of c4 T^2 + c0 I
    l0: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl BiharmonicSolver {
    pub fn new(grid: &RadialGrid, c4: f64, c0: f64) -> Result<Self, GridError> {
        if !(c4 > 0.0 && c0 > 0.0) {
            return Err(GridError::Invalid(format!(
                "operator coefficients c4 = {c4}, c0 = {c0} must be positive"
            )));
        }
        let n = grid.len();
        let (t0, t1) = grid.sym_tridiag();
        // pentadiagonal bands of B = c4 T^2 + c0 I
        let mut b0 = vec![0.0; n];
        let mut b1 = vec![0.0; n.saturating_sub(1)];
        let mut b2 = vec![0.0; n.saturating_sub(2)];
        for i in 0..n {
            let lo = if i > 0 { t1[i - 1] * t1[i - 1] } else { 0.0 };
            let hi = if i + 1 < n { t1[i] * t1[i] } else { 0.0 };
            b0[i] = c4 * (lo + t0[i] * t0[i] + hi) + c0;
        }
        for i in 0..n - 1 {
            b1[i] = c4 * t1[i] * (t0[i] + t0[i + 1]);
        }
        for i in 0..n - 2 {
            b2[i] = c4 * t1[i] * t1[i + 1];
        }
        // banded Cholesky, bandwidth 2
        let mut l0 = vec![0.0; n];
        let mut l1 = vec![0.0; n.saturating_sub(1)];
        let mut l2 = vec![0.0; n.saturating_sub(2)];
        for i in 0..n {
            let mut d = b0[i];
            if i >= 1 {
                d -= l1[i - 1] * l1[i - 1];
            }
            if i >= 2 {
                d -= l2[i - 2] * l2[i - 2];
            }
            if !(d > 0.0) {
                return Err(GridError::Invalid(format!(
                    "factorization lost positive definiteness at row {i}"
                )));
            }
            l0[i] = d.sqrt();
            if i + 1 < n {
                let mut v = b1[i];
                if i >= 1 {
                    v -= l1[i - 1] * l2[i - 1];
                }
                l1[i] = v / l0[i];
            }
            if i + 2 < n {
                l2[i] = b2[i] / l0[i];
            }
        }
        Ok(Self {
            n,
            sqrt_cells: grid.cells.iter().map(|&v| v.sqrt()).collect(),
            l0,
            l1,
            l2,
        })
    }

    /// Solves (c4 lap^2 + c0) x = rhs.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, GridError> {
        if rhs.len() != self.n {
            return Err(GridError::Mismatch {
                got: rhs.len(),
                want: self.n,
            });
        }
        let n = self.n;
        // y = V^{1/2} x solves B y = V^{1/2} rhs
        let mut y: Vec<f64> = rhs
            .iter()
            .zip(&self.sqrt_cells)
            .map(|(r, s)| r * s)
            .collect();
        // forward substitution L z = b
        for i in 0..n {
            let mut v = y[i];
            if i >= 1 {
                v -= self.l1[i - 1] * y[i - 1];
            }
            if i >= 2 {
                v -= self.l2[i - 2] * y[i - 2];
            }
            y[i] = v / self.l0[i];
        }
        // back substitution L^T y = z
        for i in (0..n).rev() {
            let mut v = y[i];
            if i + 1 < n {
                v -= self.l1[i] * y[i + 1];
            }
            if i + 2 < n {
                v -= self.l2[i] * y[i + 2];
            }
            y[i] = v / self.l0[i];
        }
        for (yi, s) in y.iter_mut().zip(&self.sqrt_cells) {
            *yi /= *s;
        }
        Ok(y)
    }
}
