//! Numerical laboratory for the focusing coupled fourth-order nonlinear
//! Schrödinger system
//!
//! ```text
//!     i du_j/dt + lap^2 u_j = sum_k a_jk |u_k|^p |u_j|^{p-2} u_j,
//! ```
//!
//! with symmetric positive coupling a_jk. The crate computes radial ground
//! states of the associated elliptic system by Petviashvili iteration,
//! estimates the sharp vector Gagliardo-Nirenberg constant, integrates the
//! time-dependent system by Strang-split spectral stepping, and verifies the
//! structural identities these objects satisfy: conservation of mass and
//! energy, vanishing of the scaling constraints K on solutions, Pohozaev
//! ratios, stable-set invariance, and the mass-critical kinetic bound.

pub mod dynamics;
pub mod functionals;
pub mod gn;
pub mod grid;
pub mod groundstate;
pub mod params;
pub mod rng;
