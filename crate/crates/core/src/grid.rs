//! Periodic lattice on the unit torus and its difference operators.
//!
//! The torus `[0, 1)` is cut into `ell` cells of width `eps = 1/ell`. Site
//! `x_i = i * eps` sits at the centre of cell `V_i = [x_i - eps/2, x_i + eps/2)`,
//! indices wrap modulo `ell`. A [`LatticeField`] holds one real value per cell
//! and is read as the step function that is constant on each cell, so the
//! L2 inner product is `eps * sum_i f_i g_i`.
//!
//! `ell` must be odd and at least 3: with fewer cells the two-neighbour
//! stencil degenerates, and the even-frequency eigenbasis only spans the
//! field space when `ell` is odd.
//!
//! All difference quotients multiply by `ell` instead of dividing by `eps`,
//! so `laplacian`, `grad_minus(grad_plus(.))` and `grad_plus(grad_minus(.))`
//! perform the same floating point operations and agree bit for bit.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the periodic lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    ell: usize,
}

impl Grid {
    pub fn new(ell: usize) -> Result<Self> {
        if ell < 3 {
            return Err(Error::InvalidGrid(format!(
                "ell = {ell}: at least 3 cells are needed for distinct left and right neighbours"
            )));
        }
        if ell % 2 == 0 {
            return Err(Error::InvalidGrid(format!(
                "ell = {ell} is even: the cosine/sine eigenbasis with even frequencies needs an odd cell count"
            )));
        }
        Ok(Self { ell })
    }

    #[inline]
    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Lattice spacing `1/ell`.
    #[inline]
    pub fn eps(&self) -> f64 {
        1.0 / self.ell as f64
    }

    /// `1/eps`, exactly representable.
    #[inline]
    pub fn inv_eps(&self) -> f64 {
        self.ell as f64
    }

    #[inline]
    pub fn inv_eps2(&self) -> f64 {
        let l = self.ell as f64;
        l * l
    }

    /// Site coordinate `x_i = i / ell`.
    #[inline]
    pub fn site(&self, i: usize) -> f64 {
        i as f64 / self.ell as f64
    }

    pub fn sites(&self) -> Vec<f64> {
        (0..self.ell).map(|i| self.site(i)).collect()
    }

    /// Bounds of cell `V_i` (the lower cell of site 0 starts below zero).
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let l = self.ell as f64;
        ((i as f64 - 0.5) / l, (i as f64 + 0.5) / l)
    }

    /// Index of the cell containing `x`, after wrapping onto `[0, 1)`.
    pub fn cell_index(&self, x: f64) -> usize {
        let w = x - x.floor();
        let k = (w * self.ell as f64 + 0.5).floor() as usize;
        k % self.ell
    }

    #[inline]
    pub fn right(&self, i: usize) -> usize {
        if i + 1 == self.ell {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn left(&self, i: usize) -> usize {
        if i == 0 {
            self.ell - 1
        } else {
            i - 1
        }
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.ell != other.ell {
            return Err(Error::GridMismatch {
                left: self.ell,
                right: other.ell,
            });
        }
        Ok(())
    }
}

/// One real value per cell of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    grid: Grid,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.ell() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.ell()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.ell()],
        }
    }

    /// Samples `f` at the sites `x_i`.
    pub fn from_sites(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.ell()).map(|i| f(grid.site(i))).collect(),
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of the step function at `x` (periodic).
    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.grid.cell_index(x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination. Panics on mismatched grids; use
    /// [`Grid::ensure_same`] first where the inputs are user supplied.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "zip_map on mismatched grids");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.grid, other.grid, "axpy on mismatched grids");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt() / (self.grid.ell() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Add for &LatticeField {
    type Output = LatticeField;
    fn add(self, rhs: &LatticeField) -> LatticeField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &LatticeField {
    type Output = LatticeField;
    fn sub(self, rhs: &LatticeField) -> LatticeField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &LatticeField {
    type Output = LatticeField;
    fn mul(self, rhs: &LatticeField) -> LatticeField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &LatticeField {
    type Output = LatticeField;
    fn neg(self) -> LatticeField {
        self.map(|v| -v)
    }
}

/// Periodic second difference `eps^-2 (f_{i+1} - 2 f_i + f_{i-1})`.
pub fn laplacian(f: &LatticeField) -> LatticeField {
    let mut out = LatticeField::zeros(f.grid);
    laplacian_into(f.values(), out.values_mut());
    out
}

/// Slice form of [`laplacian`]; `out` must have the same length as `f`.
pub fn laplacian_into(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let l = n as f64;
    for i in 0..n {
        let right = f[if i + 1 == n { 0 } else { i + 1 }];
        let left = f[if i == 0 { n - 1 } else { i - 1 }];
        let fwd = (right - f[i]) * l;
        let bwd = (f[i] - left) * l;
        out[i] = (fwd - bwd) * l;
    }
}

/// Forward difference `(f(x_i + eps) - f(x_i)) / eps`.
pub fn grad_plus(f: &LatticeField) -> LatticeField {
    let g = f.grid;
    let l = g.inv_eps();
    let v = f.values();
    LatticeField {
        grid: g,
        values: (0..g.ell()).map(|i| (v[g.right(i)] - v[i]) * l).collect(),
    }
}

/// Backward difference `(f(x_i) - f(x_i - eps)) / eps`.
pub fn grad_minus(f: &LatticeField) -> LatticeField {
    let g = f.grid;
    let l = g.inv_eps();
    let v = f.values();
    LatticeField {
        grid: g,
        values: (0..g.ell()).map(|i| (v[i] - v[g.left(i)]) * l).collect(),
    }
}

/// L2 inner product of two step functions, `eps * sum_i f_i g_i`.
pub fn inner(f: &LatticeField, g: &LatticeField) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(dot(f.values(), g.values()) / f.grid.ell() as f64)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum number of Simpson intervals per cell.
const MIN_SIMPSON_INTERVALS: usize = 32;
/// Simpson panels are refined until their width is at most `1/4096`, which
/// keeps the averaging error of smooth periodic presets near 1e-14.
const SIMPSON_RESOLUTION: usize = 4096;

/// Cell averages `eps^-1 * integral over V_i of fn`, by composite Simpson.
pub fn project(grid: Grid, f: impl Fn(f64) -> f64) -> Result<LatticeField> {
    let ell = grid.ell();
    let mut n = SIMPSON_RESOLUTION.div_ceil(ell).max(MIN_SIMPSON_INTERVALS);
    if n % 2 == 1 {
        n += 1;
    }
    let mut values = Vec::with_capacity(ell);
    for i in 0..ell {
        let (a, b) = grid.cell(i);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let x = a + k as f64 * h;
            let y = f(x);
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("projected function at x = {x}")));
            }
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * y;
        }
        // (h/3) * acc is the integral; divide by the cell width n*h.
        values.push(acc / (3.0 * n as f64));
    }
    Ok(LatticeField { grid, values })
}

/// Cell averages of `f` on a coarser grid whose cells are unions of an odd
/// number of cells of `f`'s grid.
pub fn coarsen(f: &LatticeField, target: Grid) -> Result<LatticeField> {
    let (lf, lc) = (f.grid.ell(), target.ell());
    if lf % lc != 0 || (lf / lc) % 2 == 0 {
        return Err(Error::GridMismatch { left: lf, right: lc });
    }
    let k = lf / lc;
    let half = (k - 1) / 2;
    let v = f.values();
    let values = (0..lc)
        .map(|j| {
            let s: f64 = (0..k).map(|d| v[(j * k + lf + d - half) % lf]).sum();
            s / k as f64
        })
        .collect();
    Ok(LatticeField {
        grid: target,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_field(grid: Grid, rng: &mut impl Rng) -> LatticeField {
        LatticeField::new(grid, (0..grid.ell()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = Grid::new(3).unwrap();
        assert_eq!(g.eps(), 1.0 / 3.0);
        assert_eq!(g.sites(), vec![0.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!(Grid::new(4).is_err());
        assert!(Grid::new(1).is_err());
        assert!(Grid::new(0).is_err());

        let g = Grid::new(101).unwrap();
        assert!((g.eps() - 0.00990099).abs() < 1e-8);
        assert_eq!(g.sites().len(), 101);
        assert_eq!(g.site(7), 7.0 / 101.0);
    }

    #[test]
    fn even_grid_error_mentions_parity() {
        let msg = Grid::new(4).unwrap_err().to_string();
        assert!(msg.contains("even"), "{msg}");
    }

    #[test]
    fn cell_lookup_wraps() {
        let g = Grid::new(5).unwrap();
        assert_eq!(g.cell_index(0.0), 0);
        assert_eq!(g.cell_index(0.95), 0);
        assert_eq!(g.cell_index(-0.05), 0);
        assert_eq!(g.cell_index(0.1), 1);
        assert_eq!(g.cell_index(0.099), 0);
        assert_eq!(g.cell_index(0.85), 4);
    }

    #[test]
    fn laplacian_examples() {
        let g = Grid::new(3).unwrap();
        let c = LatticeField::constant(g, 2.5);
        assert!(laplacian(&c).max_abs() == 0.0);
        let f = LatticeField::new(g, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(laplacian(&f).values(), &[-18.0, 9.0, 9.0]);
        assert_eq!(grad_plus(&f).values(), &[-3.0, 0.0, 3.0]);
        assert_eq!(grad_minus(&f).values(), &[3.0, -3.0, 0.0]);
    }

    #[test]
    fn inner_examples() {
        let g = Grid::new(3).unwrap();
        let one = LatticeField::constant(g, 1.0);
        assert!((inner(&one, &one).unwrap() - 1.0).abs() < 1e-15);
        let f = LatticeField::new(g, vec![1.0, 0.0, 0.0]).unwrap();
        let h = LatticeField::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(inner(&f, &h).unwrap(), 0.0);
        let g5 = LatticeField::zeros(Grid::new(5).unwrap());
        assert!(matches!(inner(&f, &g5), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn operator_identities_on_random_fields() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for ell in [3, 5, 31] {
            let g = Grid::new(ell).unwrap();
            for _ in 0..100 {
                let f = random_field(g, &mut rng);
                let h = random_field(g, &mut rng);
                let lhs = inner(&grad_plus(&f), &h).unwrap();
                let rhs = inner(&f, &grad_minus(&h)).unwrap();
                let scale = f.l2_norm() * h.l2_norm() * g.inv_eps();
                assert!((lhs + rhs).abs() <= 1e-12 * scale.max(1.0));

                let lap = laplacian(&f);
                assert_eq!(lap, grad_minus(&grad_plus(&f)));
                assert_eq!(lap, grad_plus(&grad_minus(&f)));
                assert!(lap.sum().abs() <= 1e-10 * g.inv_eps2() * f.max_abs());

                let d = inner(&lap, &f).unwrap();
                let gp = grad_plus(&f);
                let e = inner(&gp, &gp).unwrap();
                assert!((d + e).abs() <= 1e-10 * e.max(1.0));
                assert!(d <= 1e-12);
            }
        }
    }

    #[test]
    fn projection_of_constant_and_cosine() {
        let g = Grid::new(5).unwrap();
        let c = project(g, |_| 3.25).unwrap();
        for v in c.values() {
            assert!((v - 3.25).abs() < 1e-14);
        }
        let tau = 2.0 * std::f64::consts::PI;
        let p = project(g, |x| (tau * x).cos()).unwrap();
        let eps = g.eps();
        for i in 0..5 {
            let x = g.site(i);
            let exact = ((tau * (x + eps / 2.0)).sin() - (tau * (x - eps / 2.0)).sin()) / (tau * eps);
            assert!((p.values()[i] - exact).abs() < 1e-12, "{} vs {}", p.values()[i], exact);
        }
    }

    #[test]
    fn projection_preserves_integral() {
        let g = Grid::new(7).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        // integral over the torus of 1 + 0.3 sin(2 pi x) + x(1-x)... periodic part only
        let p = project(g, |x| 1.0 + 0.3 * (tau * x).sin() + 0.2 * (2.0 * tau * x).cos()).unwrap();
        let one = LatticeField::constant(g, 1.0);
        assert!((inner(&p, &one).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn projection_rejects_nan() {
        let g = Grid::new(3).unwrap();
        assert!(matches!(project(g, |_| f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn coarsen_averages_cells() {
        let fine = Grid::new(9).unwrap();
        let coarse = Grid::new(3).unwrap();
        let f = LatticeField::new(fine, (0..9).map(|k| k as f64).collect()).unwrap();
        let c = coarsen(&f, coarse).unwrap();
        assert_eq!(c.values(), &[(8.0 + 0.0 + 1.0) / 3.0, 3.0, 6.0]);
        assert!(coarsen(&f, Grid::new(5).unwrap()).is_err());
        let same = coarsen(&f, fine).unwrap();
        assert_eq!(same, f);
        let tau = 2.0 * std::f64::consts::PI;
        let pf = project(Grid::new(45).unwrap(), |x| (tau * x).sin()).unwrap();
        let pc = project(Grid::new(5).unwrap(), |x| (tau * x).sin()).unwrap();
        let cf = coarsen(&pf, Grid::new(5).unwrap()).unwrap();
        assert!(cf.zip_map(&pc, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn eval_step_function() {
        let g = Grid::new(3).unwrap();
        let f = LatticeField::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(0.9), 1.0);
        assert_eq!(f.eval(0.3), 2.0);
        assert_eq!(f.eval(0.6), 3.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = (LatticeField, LatticeField)> {
            (1usize..=50).prop_flat_map(|h| {
                let ell = 2 * h + 1;
                let v = prop::collection::vec(-1.0f64..1.0, ell);
                (v.clone(), v).prop_map(move |(a, b)| {
                    let g = Grid::new(ell).unwrap();
                    (LatticeField::new(g, a).unwrap(), LatticeField::new(g, b).unwrap())
                })
            })
        }

        proptest! {
            #[test]
            fn summation_by_parts((f, g) in pair()) {
                let a = inner(&grad_plus(&f), &g).unwrap();
                let b = inner(&f, &grad_minus(&g)).unwrap();
                prop_assert!((a + b).abs() <= 1e-10 * a.abs().max(1.0));
            }

            #[test]
            fn laplacian_factorizes((f, _g) in pair()) {
                prop_assert_eq!(laplacian(&f), grad_minus(&grad_plus(&f)));
                prop_assert_eq!(laplacian(&f), grad_plus(&grad_minus(&f)));
            }

            #[test]
            fn laplacian_is_symmetric_and_mass_neutral((f, g) in pair()) {
                let a = inner(&laplacian(&f), &g).unwrap();
                let b = inner(&f, &laplacian(&g)).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
                let scale = f.grid().inv_eps2();
                prop_assert!(laplacian(&f).sum().abs() <= 1e-12 * scale);
                prop_assert!(inner(&laplacian(&f), &f).unwrap() <= 1e-12 * scale);
            }

            #[test]
            fn coarsen_preserves_mean((f, _g) in pair()) {
                let g3 = Grid::new(f.grid().ell() * 3).unwrap();
                let fine = LatticeField::new(g3, f.values().iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
                let back = coarsen(&fine, f.grid()).unwrap();
                prop_assert!((back.sum() - f.sum()).abs() < 1e-10);
            }
        }
    }
}
