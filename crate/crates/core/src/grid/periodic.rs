//! Periodic box [-L, L)^d with spectral differentiation. Wavenumbers are
//! pi/L times the standard signed integer frequencies, so the bilaplacian
//! acts in transform space as multiplication by |k|^4.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{GridError, RadialGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    d: usize,
    n: usize,
    half_len: f64,
    /// Signed wavenumber per 1-d index: pi/L * {0, 1, .., n/2-1, -n/2, .., -1}.
    freqs: Vec<f64>,
    total: usize,
}

impl PeriodicGrid {
    pub fn new(d: usize, n_per_dim: usize, half_len: f64) -> Result<Self, GridError> {
        if d < 1 || d > 4 {
            return Err(GridError::Invalid(format!("box dimension {d} unsupported")));
        }
        if n_per_dim < 4 || n_per_dim % 2 != 0 {
            return Err(GridError::Invalid(format!(
                "{n_per_dim} points per dimension; need an even count >= 4"
            )));
        }
        if !(half_len > 0.0) {
            return Err(GridError::Invalid(format!("half period {half_len}")));
        }
        let base = std::f64::consts::PI / half_len;
        let n = n_per_dim;
        let freqs = (0..n)
            .map(|i| {
                let signed = if i < n / 2 {
                    i as i64
                } else {
                    i as i64 - n as i64
                };
                base * signed as f64
            })
            .collect();
        let total = n.pow(d as u32);
        Ok(Self {
            d,
            n,
            half_len,
            freqs,
            total,
        })
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    pub fn half_len(&self) -> f64 {
        self.half_len
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_len / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Cartesian coordinates of the flat index (axis 0 varies fastest).
    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        let h = self.spacing();
        for slot in out.iter_mut() {
            let i = idx % self.n;
            *slot = -self.half_len + i as f64 * h;
            idx /= self.n;
        }
    }

    /// Squared distance from the box center (the origin).
    pub fn radius_sq(&self, mut idx: usize) -> f64 {
        let h = self.spacing();
        let mut acc = 0.0;
        for _ in 0..self.d {
            let i = idx % self.n;
            let x = -self.half_len + i as f64 * h;
            acc += x * x;
            idx /= self.n;
        }
        acc
    }

    /// |k|^2 at the flat transform index.
    pub fn k_sq(&self, mut idx: usize) -> f64 {
        let mut acc = 0.0;
        for _ in 0..self.d {
            let f = self.freqs[idx % self.n];
            acc += f * f;
            idx /= self.n;
        }
        acc
    }

    /// Fourier multiplier of the bilaplacian: (sum_i k_i^2)^2 per mode.
    pub fn bilaplacian_symbol(&self) -> Vec<f64> {
        (0..self.total)
            .map(|idx| {
                let ksq = self.k_sq(idx);
                ksq * ksq
            })
            .collect()
    }

    /// Integral over the box of pointwise values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.total);
        self.cell_volume() * values.iter().sum::<f64>()
    }

    fn check(&self, len: usize) -> Result<(), GridError> {
        if len != self.total {
            return Err(GridError::Mismatch {
                got: len,
                want: self.total,
            });
        }
        Ok(())
    }

    /// nu u(mu x) on the same lattice; exact only when mu is a positive
    /// integer (the dilation then maps the lattice onto itself).
    pub fn rescale(
        &self,
        values: &[Complex64],
        nu: f64,
        mu: f64,
    ) -> Result<Vec<Complex64>, GridError> {
        self.check(values.len())?;
        if !(mu > 0.0) || mu.fract() != 0.0 {
            return Err(GridError::InvalidDilation(mu));
        }
        let mu = mu as i64;
        let n = self.n as i64;
        let mut out = vec![Complex64::new(0.0, 0.0); self.total];
        let mut coords = vec![0usize; self.d];
        for (idx, slot) in out.iter_mut().enumerate() {
            let mut rem = idx;
            for c in coords.iter_mut() {
                *c = rem % self.n;
                rem /= self.n;
            }
            // x_i = (i - n/2) h; mu x_i wraps to lattice index below
            let mut src = 0usize;
            for &c in coords.iter().rev() {
                let j = (mu * (c as i64 - n / 2)).rem_euclid(n) as usize;
                let j = (j + self.n / 2) % self.n;
                src = src * self.n + j;
            }
            *slot = nu * values[src];
        }
        Ok(out)
    }
}

/// Cached FFT plans for one grid; forward/inverse across all axes.
pub struct Spectral {
    n: usize,
    d: usize,
    total: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n: grid.n,
            d: grid.d,
            total: grid.total,
            forward: planner.plan_fft_forward(grid.n),
            inverse: planner.plan_fft_inverse(grid.n),
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.total);
        let n = self.n;
        let mut lane = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut stride = 1usize;
        for _axis in 0..self.d {
            let block = stride * n;
            let blocks = self.total / block;
            for b in 0..blocks {
                let base = b * block;
                if stride == 1 {
                    // contiguous lanes along axis 0
                    fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
                } else {
                    for off in 0..stride {
                        for (j, slot) in lane.iter_mut().enumerate() {
                            *slot = data[base + off + j * stride];
                        }
                        fft.process_with_scratch(&mut lane, &mut scratch);
                        for (j, &v) in lane.iter().enumerate() {
                            data[base + off + j * stride] = v;
                        }
                    }
                }
            }
            stride *= n;
        }
    }

    /// Unnormalized forward transform along every axis.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward.clone());
    }

    /// Inverse transform, normalized so inverse(forward(u)) = u.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse.clone());
        let scale = 1.0 / self.total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// m-component complex field on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub components: Vec<Vec<Complex64>>,
}

impl ComplexField {
    pub fn zeros(grid: &PeriodicGrid, m: usize) -> Self {
        Self {
            components: vec![vec![Complex64::new(0.0, 0.0); grid.len()]; m],
        }
    }

    pub fn from_fn<F: FnMut(usize, &[f64]) -> Complex64>(
        grid: &PeriodicGrid,
        m: usize,
        mut f: F,
    ) -> Self {
        let mut coords = vec![0.0; grid.dims()];
        let mut components = Vec::with_capacity(m);
        for j in 0..m {
            let mut vals = Vec::with_capacity(grid.len());
            for idx in 0..grid.len() {
                grid.point(idx, &mut coords);
                vals.push(f(j, &coords));
            }
            components.push(vals);
        }
        Self { components }
    }

    /// Transplants radial profiles onto the box, centered at the origin.
    /// Components beyond the radial domain are zero.
    pub fn from_radial_profiles(
        grid: &PeriodicGrid,
        radial: &RadialGrid,
        profiles: &[Vec<f64>],
    ) -> Result<Self, GridError> {
        let components = profiles
            .iter()
            .map(|prof| {
                if prof.len() != radial.len() {
                    return Err(GridError::Mismatch {
                        got: prof.len(),
                        want: radial.len(),
                    });
                }
                Ok((0..grid.len())
                    .map(|idx| {
                        let r = grid.radius_sq(idx).sqrt();
                        Complex64::new(radial.sample(prof, r), 0.0)
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components })
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn is_finite(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn wavenumbers_follow_signed_layout() {
        let grid = PeriodicGrid::new(1, 8, 2.0).unwrap();
        let base = PI / 2.0;
        let want = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (f, w) in grid.freqs().iter().zip(want) {
            assert_relative_eq!(*f, base * w, max_relative = 1e-15);
        }
    }

    #[test]
    fn symbol_values() {
        let grid = PeriodicGrid::new(4, 8, 2.0).unwrap();
        let symbol = grid.bilaplacian_symbol();
        assert_eq!(symbol[0], 0.0);
        // k = (pi/L, 0, 0, 0)
        let want = (PI / 2.0).powi(4);
        assert_relative_eq!(symbol[1], want, max_relative = 1e-14);
    }

    #[test]
    fn fft_roundtrip() {
        let grid = PeriodicGrid::new(3, 8, 3.0).unwrap();
        let spectral = Spectral::new(&grid);
        let mut rng = crate::rng::SplitMix64::new(3);
        let orig: Vec<Complex64> = (0..grid.len())
            .map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        let mut data = orig.clone();
        spectral.forward(&mut data);
        spectral.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bilaplacian_is_exact_on_fourier_modes() {
        // lap^2 e^{i k x} = |k|^4 e^{i k x} to machine precision
        let grid = PeriodicGrid::new(2, 16, 2.5).unwrap();
        let spectral = Spectral::new(&grid);
        let (j1, j2) = (3usize, 14usize); // includes a negative frequency
        let k1 = grid.freqs()[j1];
        let k2 = grid.freqs()[j2];
        let mut coords = [0.0; 2];
        let mut u: Vec<Complex64> = (0..grid.len())
            .map(|idx| {
                grid.point(idx, &mut coords);
                Complex64::new(0.0, k1 * coords[0] + k2 * coords[1]).exp()
            })
            .collect();
        let orig = u.clone();
        let symbol = grid.bilaplacian_symbol();
        spectral.forward(&mut u);
        for (v, s) in u.iter_mut().zip(&symbol) {
            *v *= s;
        }
        spectral.inverse(&mut u);
        let want = (k1 * k1 + k2 * k2).powi(2);
        for (got, base) in u.iter().zip(&orig) {
            assert!((got - want * base).norm() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn integrate_gaussian_on_box() {
        let grid = PeriodicGrid::new(2, 64, 8.0).unwrap();
        let vals: Vec<f64> = (0..grid.len())
            .map(|idx| (-grid.radius_sq(idx)).exp())
            .collect();
        assert_relative_eq!(grid.integrate(&vals), PI, max_relative = 1e-10);
    }

    #[test]
    fn rescale_integer_dilation_is_exact() {
        let grid = PeriodicGrid::new(1, 16, 4.0).unwrap();
        let mut coords = [0.0];
        let u: Vec<Complex64> = (0..16)
            .map(|idx| {
                grid.point(idx, &mut coords);
                Complex64::new((PI / 4.0 * coords[0]).cos(), 0.0)
            })
            .collect();
        let scaled = grid.rescale(&u, 2.0, 2.0).unwrap();
        for (idx, v) in scaled.iter().enumerate() {
            grid.point(idx, &mut coords);
            let want = 2.0 * (PI / 4.0 * 2.0 * coords[0]).cos();
            assert!((v.re - want).abs() < 1e-12, "idx {idx}: {} vs {want}", v.re);
        }
        assert!(grid.rescale(&u, 1.0, 1.5).is_err());
    }

    #[test]
    fn odd_point_counts_rejected() {
        assert!(PeriodicGrid::new(2, 15, 1.0).is_err());
    }
}
