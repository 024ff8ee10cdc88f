//! Eigenbasis of the periodic lattice Laplacian, heat semigroups and
//! Sobolev norms.
//!
//! Only even frequencies appear. On a lattice with an odd number of cells the
//! vectors `phi_m(x_j) = sqrt(2) cos(pi m j eps)` and
//! `psi_m(x_j) = sqrt(2) sin(pi m j eps)` for even `0 < m <= ell - 1`,
//! together with the constant, form an orthonormal basis of `ell` vectors.
//!
//! Modes are ordered `(0, cos), (2, cos), (2, sin), (4, cos), ...` and a
//! [`SpectralCoeffs`] stores one coefficient per mode in that order.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, Grid, LatticeField};

/// Largest mode index accepted by [`sobolev_norm_continuous`].
pub const MAX_CONTINUOUS_MODE: usize = 4096;

/// Default truncation of continuous Sobolev norms.
pub const DEFAULT_TRUNCATION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Cos,
    Sin,
}

impl ModeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeKind::Cos => "cos",
            ModeKind::Sin => "sin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mode {
    pub m: usize,
    pub kind: ModeKind,
}

impl Mode {
    pub fn new(m: usize, kind: ModeKind) -> Result<Self> {
        if m % 2 == 1 {
            return Err(Error::InvalidMode(format!("m = {m} is odd")));
        }
        if m == 0 && kind == ModeKind::Sin {
            return Err(Error::InvalidMode("the sine mode with m = 0 vanishes".into()));
        }
        Ok(Self { m, kind })
    }

    pub fn cos(m: usize) -> Result<Self> {
        Self::new(m, ModeKind::Cos)
    }

    pub fn sin(m: usize) -> Result<Self> {
        Self::new(m, ModeKind::Sin)
    }

    /// Position of this mode in the canonical ordering.
    pub fn position(&self) -> usize {
        match (self.m, self.kind) {
            (0, _) => 0,
            (m, ModeKind::Cos) => m - 1,
            (m, ModeKind::Sin) => m,
        }
    }

    fn check_grid(&self, grid: Grid) -> Result<()> {
        if self.m > grid.ell() - 1 {
            return Err(Error::InvalidMode(format!(
                "m = {} exceeds ell - 1 = {}",
                self.m,
                grid.ell() - 1
            )));
        }
        Ok(())
    }
}

/// All `ell` modes of a grid in canonical order.
pub fn modes(grid: Grid) -> Vec<Mode> {
    let mut out = Vec::with_capacity(grid.ell());
    out.push(Mode { m: 0, kind: ModeKind::Cos });
    for m in (2..grid.ell()).step_by(2) {
        out.push(Mode { m, kind: ModeKind::Cos });
        out.push(Mode { m, kind: ModeKind::Sin });
    }
    out
}

fn check_even(m: usize) -> Result<()> {
    if m % 2 == 1 {
        return Err(Error::InvalidMode(format!("m = {m} is odd")));
    }
    Ok(())
}

/// `2 eps^-2 (1 - cos(m pi eps))`.
pub fn eigenvalue_discrete(m: usize, eps: f64) -> Result<f64> {
    check_even(m)?;
    Ok(lambda_eps(m, eps))
}

#[inline]
fn lambda_eps(m: usize, eps: f64) -> f64 {
    // 1 - cos x = 2 sin^2(x/2) avoids cancellation for small x.
    let s = (0.5 * m as f64 * PI * eps).sin();
    4.0 * s * s / (eps * eps)
}

/// `pi^2 m^2`.
pub fn eigenvalue_continuous(m: usize) -> Result<f64> {
    check_even(m)?;
    Ok(PI * PI * (m * m) as f64)
}

/// Angle `pi m j / ell` reduced modulo `2 pi` in exact integer arithmetic.
#[inline]
fn angle(m: usize, j: usize, ell: usize) -> f64 {
    PI * ((m * j) % (2 * ell)) as f64 / ell as f64
}

fn mode_values(mode: Mode, grid: Grid) -> Vec<f64> {
    let ell = grid.ell();
    if mode.m == 0 {
        return vec![1.0; ell];
    }
    let r2 = std::f64::consts::SQRT_2;
    (0..ell)
        .map(|j| {
            let a = angle(mode.m, j, ell);
            match mode.kind {
                ModeKind::Cos => r2 * a.cos(),
                ModeKind::Sin => r2 * a.sin(),
            }
        })
        .collect()
}

pub fn basis_field(mode: Mode, grid: Grid) -> Result<LatticeField> {
    mode.check_grid(grid)?;
    LatticeField::new(grid, mode_values(mode, grid))
}

/// Precomputed basis vectors and eigenvalues for one grid.
#[derive(Debug, Clone)]
pub struct Basis {
    grid: Grid,
    modes: Vec<Mode>,
    vectors: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
}

impl Basis {
    pub fn new(grid: Grid) -> Self {
        let modes = modes(grid);
        let vectors = modes.iter().map(|&md| mode_values(md, grid)).collect();
        let lambdas = modes.iter().map(|md| lambda_eps(md.m, grid.eps())).collect();
        Self {
            grid,
            modes,
            vectors,
            lambdas,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Discrete eigenvalue of each mode, in canonical order.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn analyze(&self, f: &LatticeField) -> Result<SpectralCoeffs> {
        self.grid.ensure_same(&f.grid())?;
        let mut coeffs = vec![0.0; self.grid.ell()];
        self.analyze_into(f.values(), &mut coeffs);
        Ok(SpectralCoeffs {
            grid: self.grid,
            coeffs,
        })
    }

    /// Slice form of [`Basis::analyze`].
    pub fn analyze_into(&self, f: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.grid.ell() as f64;
        for (c, v) in out.iter_mut().zip(&self.vectors) {
            *c = dot(f, v) * inv;
        }
    }

    pub fn synthesize(&self, c: &SpectralCoeffs) -> Result<LatticeField> {
        self.grid.ensure_same(&c.grid)?;
        let mut out = vec![0.0; self.grid.ell()];
        self.synthesize_into(&c.coeffs, &mut out);
        LatticeField::new(self.grid, out)
    }

    /// Slice form of [`Basis::synthesize`].
    pub fn synthesize_into(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&ck, v) in c.iter().zip(&self.vectors) {
            for (o, b) in out.iter_mut().zip(v) {
                *o += ck * b;
            }
        }
    }

    /// `T_eps(mu t) f`: every coefficient damped by `exp(-mu lambda t)`.
    pub fn semigroup_apply(&self, t: f64, mu: f64, f: &LatticeField) -> Result<LatticeField> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("semigroup time must be >= 0, got {t}")));
        }
        if mu < 0.0 || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("diffusivity must be >= 0, got {mu}")));
        }
        let mut c = self.analyze(f)?;
        for (ck, l) in c.coeffs.iter_mut().zip(&self.lambdas) {
            *ck *= (-mu * l * t).exp();
        }
        self.synthesize(&c)
    }

    pub fn sobolev_norm_discrete(&self, f: &LatticeField, gamma: f64) -> Result<f64> {
        let c = self.analyze(f)?;
        Ok(c
            .coeffs
            .iter()
            .zip(&self.lambdas)
            .map(|(ck, l)| ck * ck * (1.0 + l).powf(gamma))
            .sum::<f64>()
            .sqrt())
    }

    /// `[sum_m c_m^2 lambda_m (1 + lambda_m)^-gamma]^(1/2)`, the `H^{-gamma, eps}`
    /// norm of either lattice gradient of `f`.
    pub fn grad_norm_spectral(&self, f: &LatticeField, gamma: f64) -> Result<f64> {
        let c = self.analyze(f)?;
        Ok(c
            .coeffs
            .iter()
            .zip(&self.lambdas)
            .map(|(ck, l)| ck * ck * l * (1.0 + l).powf(-gamma))
            .sum::<f64>()
            .sqrt())
    }
}

/// Coefficients of a lattice field in the canonical mode order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    grid: Grid,
    coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn new(grid: Grid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.ell() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for a grid of {} modes",
                coeffs.len(),
                grid.ell()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, mode: Mode) -> f64 {
        self.coeffs.get(mode.position()).copied().unwrap_or(0.0)
    }

    /// `(mode, coefficient)` pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        modes(self.grid).into_iter().zip(self.coeffs.iter().copied())
    }
}

pub fn analyze(f: &LatticeField) -> SpectralCoeffs {
    Basis::new(f.grid()).analyze(f).expect("same grid")
}

pub fn synthesize(c: &SpectralCoeffs) -> LatticeField {
    Basis::new(c.grid).synthesize(c).expect("same grid")
}

pub fn semigroup_apply(t: f64, mu: f64, f: &LatticeField) -> Result<LatticeField> {
    Basis::new(f.grid()).semigroup_apply(t, mu, f)
}

pub fn sobolev_norm_discrete(f: &LatticeField, gamma: f64) -> f64 {
    Basis::new(f.grid())
        .sobolev_norm_discrete(f, gamma)
        .expect("same grid")
}

pub fn grad_norm_spectral(f: &LatticeField, gamma: f64) -> f64 {
    Basis::new(f.grid()).grad_norm_spectral(f, gamma).expect("same grid")
}

/// Pairing of a step function with the continuous eigenfunction of `mode`,
/// using exact cell integrals.
pub fn continuous_coefficient(f: &LatticeField, mode: Mode) -> f64 {
    let grid = f.grid();
    if mode.m == 0 {
        return f.sum() * grid.eps();
    }
    let k = PI * mode.m as f64;
    let scale = std::f64::consts::SQRT_2 / k;
    let mut acc = 0.0;
    for (i, &v) in f.values().iter().enumerate() {
        let (a, b) = grid.cell(i);
        let cell = match mode.kind {
            ModeKind::Cos => (k * b).sin() - (k * a).sin(),
            ModeKind::Sin => (k * a).cos() - (k * b).cos(),
        };
        acc += v * cell;
    }
    acc * scale
}

/// `H^gamma` norm of a step function with the continuous basis truncated at
/// even `m <= truncation`.
pub fn sobolev_norm_continuous(f: &LatticeField, gamma: f64, truncation: usize) -> Result<f64> {
    if truncation < 2 || truncation % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "truncation must be an even integer >= 2, got {truncation}"
        )));
    }
    if truncation > MAX_CONTINUOUS_MODE {
        return Err(Error::InvalidArgument(format!(
            "truncation {truncation} exceeds the cap {MAX_CONTINUOUS_MODE}"
        )));
    }
    let c0 = continuous_coefficient(f, Mode { m: 0, kind: ModeKind::Cos });
    let mut acc = c0 * c0;
    for m in (2..=truncation).step_by(2) {
        let w = (1.0 + PI * PI * (m * m) as f64).powf(gamma);
        let c = continuous_coefficient(f, Mode { m, kind: ModeKind::Cos });
        let s = continuous_coefficient(f, Mode { m, kind: ModeKind::Sin });
        acc += (c * c + s * s) * w;
    }
    Ok(acc.sqrt())
}
