//! Deterministic lattice SIR system and its refinement toward the PDE.
//!
//! On every site
//!
//! ```text
//! S' = mu_S Lap S - beta S I / A
//! I' = mu_I Lap I + beta S I / A - alpha I
//! R' = mu_R Lap R + alpha I
//! ```
//!
//! with `A = S + I + R` and the convention `0/0 = 0` for the incidence on an
//! empty site. Time stepping is classical RK4 with a fixed step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, project, Grid, LatticeField};

/// Compartment labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    I,
    R,
}

impl Compartment {
    pub const ALL: [Compartment; 3] = [Compartment::S, Compartment::I, Compartment::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::I => "I",
            Compartment::R => "R",
        }
    }
}

/// Rates and diffusivities on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    beta: LatticeField,
    alpha: LatticeField,
    mu: [f64; 3],
}

impl ModelParams {
    pub fn new(beta: LatticeField, alpha: LatticeField, mu_s: f64, mu_i: f64, mu_r: f64) -> Result<Self> {
        beta.grid().ensure_same(&alpha.grid())?;
        if beta.values().iter().chain(alpha.values()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("infection and recovery rates must be finite and >= 0".into()));
        }
        for (name, mu) in [("mu_S", mu_s), ("mu_I", mu_i), ("mu_R", mu_r)] {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {mu}")));
            }
        }
        Ok(Self {
            beta,
            alpha,
            mu: [mu_s, mu_i, mu_r],
        })
    }

    pub fn grid(&self) -> Grid {
        self.beta.grid()
    }

    pub fn beta(&self) -> &LatticeField {
        &self.beta
    }

    pub fn alpha(&self) -> &LatticeField {
        &self.alpha
    }

    pub fn mu(&self, c: Compartment) -> f64 {
        self.mu[c.index()]
    }

    pub fn mus(&self) -> [f64; 3] {
        self.mu
    }

    pub fn max_mu(&self) -> f64 {
        self.mu.iter().copied().fold(0.0, f64::max)
    }

    /// Largest step accepted by the explicit integrators.
    pub fn stable_step(&self) -> f64 {
        0.1 * self.grid().eps().powi(2) / self.max_mu()
    }

    pub fn check_step(&self, h: f64) -> Result<()> {
        let bound = self.stable_step();
        if !(h > 0.0 && h.is_finite()) || h > bound * (1.0 + 1e-12) {
            return Err(Error::Unstable { h, bound });
        }
        Ok(())
    }
}

/// Proportions per site.
#[derive(Debug, Clone, PartialEq)]
pub struct SirState {
    pub s: LatticeField,
    pub i: LatticeField,
    pub r: LatticeField,
}

impl SirState {
    pub fn new(s: LatticeField, i: LatticeField, r: LatticeField) -> Result<Self> {
        s.grid().ensure_same(&i.grid())?;
        s.grid().ensure_same(&r.grid())?;
        Ok(Self { s, i, r })
    }

    pub fn grid(&self) -> Grid {
        self.s.grid()
    }

    pub fn field(&self, c: Compartment) -> &LatticeField {
        match c {
            Compartment::S => &self.s,
            Compartment::I => &self.i,
            Compartment::R => &self.r,
        }
    }

    /// Site totals `A = S + I + R`.
    pub fn total(&self) -> LatticeField {
        &(&self.s + &self.i) + &self.r
    }

    /// `[S | I | R]` as one vector of length `3 ell`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.grid().ell());
        v.extend_from_slice(self.s.values());
        v.extend_from_slice(self.i.values());
        v.extend_from_slice(self.r.values());
        v
    }

    pub fn from_flat(grid: Grid, y: &[f64]) -> Result<Self> {
        let l = grid.ell();
        if y.len() != 3 * l {
            return Err(Error::InvalidArgument(format!("state vector of length {} for ell = {l}", y.len())));
        }
        Ok(Self {
            s: LatticeField::new(grid, y[..l].to_vec())?,
            i: LatticeField::new(grid, y[l..2 * l].to_vec())?,
            r: LatticeField::new(grid, y[2 * l..].to_vec())?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite() && self.r.is_finite()
    }
}

/// Sampled path of any state type.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<f64>,
    pub states: Vec<T>,
}

impl<T> Trajectory<T> {
    pub fn new(times: Vec<f64>, states: Vec<T>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Misaligned(format!("{} times but {} states", times.len(), states.len())));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Misaligned("sample times must be strictly increasing".into()));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&T> {
        self.states.last()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.times.iter().copied().zip(self.states.iter())
    }
}

#[inline]
fn incidence(beta: f64, s: f64, i: f64, r: f64) -> f64 {
    let a = s + i + r;
    if a == 0.0 {
        0.0
    } else {
        beta * s * i / a
    }
}

/// Right-hand side on flat `[S | I | R]` vectors.
pub(crate) fn rhs_flat(params: &ModelParams, y: &[f64], out: &mut [f64]) {
    let l = params.grid().ell();
    let (ys, rest) = y.split_at(l);
    let (yi, yr) = rest.split_at(l);
    let (os, rest) = out.split_at_mut(l);
    let (oi, or) = rest.split_at_mut(l);
    laplacian_into(ys, os);
    laplacian_into(yi, oi);
    laplacian_into(yr, or);
    let [ms, mi, mr] = params.mu;
    let beta = params.beta.values();
    let alpha = params.alpha.values();
    for k in 0..l {
        let inc = incidence(beta[k], ys[k], yi[k], yr[k]);
        let rec = alpha[k] * yi[k];
        os[k] = ms * os[k] - inc;
        oi[k] = mi * oi[k] + inc - rec;
        or[k] = mr * or[k] + rec;
    }
}

/// The three right-hand sides of the lattice system.
pub fn reaction_rhs(state: &SirState, params: &ModelParams) -> Result<SirState> {
    state.grid().ensure_same(&params.grid())?;
    let y = state.to_flat();
    let mut out = vec![0.0; y.len()];
    rhs_flat(params, &y, &mut out);
    SirState::from_flat(state.grid(), &out)
}

/// Reusable RK4 workspace for the lattice system.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step(&mut self, params: &ModelParams, y: &mut [f64], h: f64) {
        rhs_flat(params, y, &mut self.k1);
        for ((t, a), b) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *t = a + 0.5 * h * b;
        }
        rhs_flat(params, &self.tmp, &mut self.k2);
        for ((t, a), b) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *t = a + 0.5 * h * b;
        }
        rhs_flat(params, &self.tmp, &mut self.k3);
        for ((t, a), b) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *t = a + h * b;
        }
        rhs_flat(params, &self.tmp, &mut self.k4);
        for (k, v) in y.iter_mut().enumerate() {
            *v += h / 6.0 * (self.k1[k] + 2.0 * self.k2[k] + 2.0 * self.k3[k] + self.k4[k]);
        }
    }
}

/// Number of steps of size `h` spanning `[0, t_end]`; `t_end` must be a
/// multiple of `h`.
pub fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {t_end}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end.max(h) {
        return Err(Error::Misaligned(format!("horizon {t_end} is not a multiple of the step {h}")));
    }
    Ok(n as usize)
}

/// Largest step not above `h_max` that divides `t_end` evenly.
pub fn aligned_step(t_end: f64, h_max: f64) -> f64 {
    t_end / (t_end / h_max).ceil().max(1.0)
}

/// Step indices of `sample_times`, which must be multiples of `h` inside
/// `[0, n h]` and strictly increasing.
pub fn sample_indices(sample_times: &[f64], h: f64, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let k = (t / h).round();
        if !(k >= 0.0) || (k * h - t).abs() > 1e-9 * t.abs().max(h) || k as usize > n {
            return Err(Error::Misaligned(format!("sample time {t} is not a step multiple inside the horizon")));
        }
        if out.last().is_some_and(|&p| p >= k as usize) {
            return Err(Error::Misaligned("sample times must be strictly increasing".into()));
        }
        out.push(k as usize);
    }
    Ok(out)
}

/// `0, stride h, 2 stride h, ...` up to and including `n h`.
pub fn uniform_sample_times(n: usize, h: f64, stride: usize) -> Vec<f64> {
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=n).step_by(stride).collect();
    if *ks.last().unwrap() != n {
        ks.push(n);
    }
    ks.into_iter().map(|k| k as f64 * h).collect()
}

/// Fixed-step RK4 on `[0, t_end]`, recording the state at `sample_times`.
pub fn integrate_ode(
    state0: &SirState,
    params: &ModelParams,
    t_end: f64,
    h: f64,
    sample_times: &[f64],
) -> Result<Trajectory<SirState>> {
    state0.grid().ensure_same(&params.grid())?;
    params.check_step(h)?;
    let n = step_count(t_end, h)?;
    let idx = sample_indices(sample_times, h, n)?;
    let grid = state0.grid();
    let mut y = state0.to_flat();
    let mut rk = Rk4::new(y.len());
    let mut states = Vec::with_capacity(idx.len());
    let mut next = 0;
    for k in 0..=n {
        while next < idx.len() && idx[next] == k {
            states.push(SirState::from_flat(grid, &y)?);
            next += 1;
        }
        if k == n || next == idx.len() {
            break;
        }
        rk.step(params, &mut y, h);
        if let Some(p) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "RK4 state became {} at t = {}, component {}, site {}",
                y[p],
                (k + 1) as f64 * h,
                ["S", "I", "R"][p / grid.ell()],
                p % grid.ell()
            )));
        }
    }
    Trajectory::new(idx.iter().map(|&k| k as f64 * h).collect(), states)
}

/// `f = beta S (S + R) / A^2` and `g = beta I (I + R) / A^2`.
pub fn coefficient_fields(state: &SirState, params: &ModelParams) -> Result<(LatticeField, LatticeField)> {
    let (f, g, _) = reaction_partials(state, params)?;
    Ok((f, g))
}

/// `(f, g, h)` with `h = beta S I / A^2`. The partial derivatives of the
/// incidence `beta S I / A` are `(g, f, -h)` with respect to `(S, I, R)`.
pub fn reaction_partials(
    state: &SirState,
    params: &ModelParams,
) -> Result<(LatticeField, LatticeField, LatticeField)> {
    state.grid().ensure_same(&params.grid())?;
    let grid = state.grid();
    let l = grid.ell();
    let (mut f, mut g, mut h) = (vec![0.0; l], vec![0.0; l], vec![0.0; l]);
    let beta = params.beta.values();
    let (s, i, r) = (state.s.values(), state.i.values(), state.r.values());
    for k in 0..l {
        let a = s[k] + i[k] + r[k];
        if !(a >= 1e-12) {
            return Err(Error::Degenerate(format!("site {k} has total A = {a} below the floor 1e-12")));
        }
        let a2 = a * a;
        f[k] = beta[k] * s[k] * (s[k] + r[k]) / a2;
        g[k] = beta[k] * i[k] * (i[k] + r[k]) / a2;
        h[k] = beta[k] * s[k] * i[k] / a2;
    }
    Ok((
        LatticeField::new(grid, f)?,
        LatticeField::new(grid, g)?,
        LatticeField::new(grid, h)?,
    ))
}

/// Minimum of `A = S + I + R` over all samples and sites.
pub fn lower_bound_certificate(traj: &Trajectory<SirState>) -> f64 {
    traj.states
        .iter()
        .map(|st| st.total().min())
        .fold(f64::INFINITY, f64::min)
}

/// The floor `c exp(-beta_bar T)` that `A` stays above on `[0, T]`.
pub fn lower_bound_floor(c: f64, beta_bar: f64, t_end: f64) -> f64 {
    c * (-beta_bar * t_end).exp()
}

/// Smooth periodic rates, diffusivities and initial data used throughout the
/// experiments. Every number is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preset {
    /// `beta(x) = b0 (1 + beta_amp cos 2 pi x)`.
    pub b0: f64,
    pub beta_amp: f64,
    /// `alpha(x) = a0 (1 + alpha_amp sin 2 pi x)`.
    pub a0: f64,
    pub alpha_amp: f64,
    pub mu_s: f64,
    pub mu_i: f64,
    pub mu_r: f64,
    /// `s(0, x) = s0 + s0_amp cos 2 pi x`.
    pub s0: f64,
    pub s0_amp: f64,
    /// `i(0, x) = i0 + i0_amp sin 2 pi x`.
    pub i0: f64,
    pub i0_amp: f64,
    /// Constant initial removed density.
    pub r0: f64,
}

impl Default for Preset {
    fn default() -> Self {
        Self {
            b0: 1.5,
            beta_amp: 0.5,
            a0: 0.5,
            alpha_amp: 0.5,
            mu_s: 0.01,
            mu_i: 0.015,
            mu_r: 0.005,
            s0: 0.6,
            s0_amp: 0.1,
            i0: 0.05,
            i0_amp: 0.01,
            r0: 0.35,
        }
    }
}

impl Preset {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b0, self.beta_amp, self.a0, self.alpha_amp, self.mu_s, self.mu_i, self.mu_r, self.s0,
            self.s0_amp, self.i0, self.i0_amp, self.r0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("preset values must be finite".into()));
        }
        if self.b0 < 0.0 || self.a0 < 0.0 || self.beta_amp.abs() > 1.0 || self.alpha_amp.abs() > 1.0 {
            return Err(Error::Config("rates must stay nonnegative: need b0, a0 >= 0 and |amp| <= 1".into()));
        }
        if self.mu_s <= 0.0 || self.mu_i <= 0.0 || self.mu_r <= 0.0 {
            return Err(Error::Config("diffusivities must be > 0".into()));
        }
        if self.s0 - self.s0_amp.abs() <= 0.0 || self.i0 - self.i0_amp.abs() < 0.0 || self.r0 < 0.0 {
            return Err(Error::Config("initial susceptible density must be positive and the others nonnegative".into()));
        }
        Ok(())
    }

    pub fn beta_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.b0 * (1.0 + self.beta_amp * (2.0 * PI * x).cos())
    }

    pub fn alpha_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.a0 * (1.0 + self.alpha_amp * (2.0 * PI * x).sin())
    }

    pub fn s0_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.s0 + self.s0_amp * (2.0 * PI * x).cos()
    }

    pub fn i0_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.i0 + self.i0_amp * (2.0 * PI * x).sin()
    }

    pub fn params(&self, grid: Grid) -> Result<ModelParams> {
        self.validate()?;
        ModelParams::new(
            project(grid, self.beta_fn())?,
            project(grid, self.alpha_fn())?,
            self.mu_s,
            self.mu_i,
            self.mu_r,
        )
    }

    /// Cell averages of the initial densities.
    pub fn initial_state(&self, grid: Grid) -> Result<SirState> {
        self.validate()?;
        let r0 = self.r0;
        SirState::new(
            project(grid, self.s0_fn())?,
            project(grid, self.i0_fn())?,
            project(grid, move |_| r0)?,
        )
    }

    /// `inf_x s(0, x)`.
    pub fn s_floor(&self) -> f64 {
        self.s0 - self.s0_amp.abs()
    }

    /// `sup_x beta(x)`.
    pub fn beta_bar(&self) -> f64 {
        self.b0 * (1.0 + self.beta_amp.abs())
    }
}

/// Largest absolute difference between two lattice trajectories compared as
/// step functions at the points `(j + 1/2) / (ell_a ell_b)`, over all sample
/// times and compartments.
pub fn step_function_distance(a: &Trajectory<SirState>, b: &Trajectory<SirState>) -> Result<f64> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::Misaligned("trajectories have different sample times".into()));
    }
    let (Some(sa), Some(sb)) = (a.states.first(), b.states.first()) else {
        return Ok(0.0);
    };
    let (la, lb) = (sa.grid().ell(), sb.grid().ell());
    let npts = la * lb;
    let (ga, gb) = (sa.grid(), sb.grid());
    let ia: Vec<usize> = (0..npts).map(|j| ga.cell_index((j as f64 + 0.5) / npts as f64)).collect();
    let ib: Vec<usize> = (0..npts).map(|j| gb.cell_index((j as f64 + 0.5) / npts as f64)).collect();
    let mut err: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        for c in Compartment::ALL {
            let (fa, fb) = (x.field(c).values(), y.field(c).values());
            for j in 0..npts {
                err = err.max((fa[ia[j]] - fb[ib[j]]).abs());
            }
        }
    }
    Ok(err)
}

/// Runs the preset on two grids with a common step and sample set and
/// returns their step-function distance. The finer run stands in for the PDE.
pub fn refine_compare(preset: &Preset, ell_coarse: usize, ell_fine: usize, t_end: f64, samples: usize) -> Result<f64> {
    let gc = Grid::new(ell_coarse)?;
    let gf = Grid::new(ell_fine)?;
    let pc = preset.params(gc)?;
    let pf = preset.params(gf)?;
    let h = aligned_step(t_end, pc.stable_step().min(pf.stable_step()));
    let n = step_count(t_end, h)?;
    let stride = n.div_ceil(samples.max(1));
    let times = uniform_sample_times(n, h, stride);
    let tc = integrate_ode(&preset.initial_state(gc)?, &pc, t_end, h, &times)?;
    let tf = integrate_ode(&preset.initial_state(gf)?, &pf, t_end, h, &times)?;
    step_function_distance(&tc, &tf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grad_plus, inner};
    use crate::spectral::{basis_field, Mode};
    use proptest::prelude::*;

    fn std_setup(ell: usize) -> (SirState, ModelParams) {
        let g = Grid::new(ell).unwrap();
        let p = Preset::default();
        (p.initial_state(g).unwrap(), p.params(g).unwrap())
    }

    fn mass(st: &SirState) -> f64 {
        inner(&st.total(), &LatticeField::constant(st.grid(), 1.0)).unwrap()
    }

    #[test]
    fn rhs_without_infected() {
        let (mut st, p) = std_setup(9);
        st.i = LatticeField::zeros(st.grid());
        let d = reaction_rhs(&st, &p).unwrap();
        assert_eq!(d.i.max_abs(), 0.0);
        let want = crate::grid::laplacian(&st.s).scale(p.mu(Compartment::S));
        assert!(d.s.zip_map(&want, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn rhs_reduces_to_classical_sir() {
        let g = Grid::new(5).unwrap();
        let p = ModelParams::new(LatticeField::constant(g, 1.2), LatticeField::constant(g, 0.3), 0.1, 0.1, 0.1).unwrap();
        let st = SirState::new(
            LatticeField::constant(g, 0.5),
            LatticeField::constant(g, 0.2),
            LatticeField::constant(g, 0.3),
        )
        .unwrap();
        let d = reaction_rhs(&st, &p).unwrap();
        for k in 0..5 {
            assert!((d.s.values()[k] + 1.2 * 0.5 * 0.2).abs() < 1e-14);
            assert!((d.i.values()[k] - (1.2 * 0.1 - 0.06)).abs() < 1e-14);
            assert!((d.r.values()[k] - 0.06).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_site_incidence_is_zero() {
        let g = Grid::new(3).unwrap();
        let p = ModelParams::new(LatticeField::constant(g, 1.0), LatticeField::constant(g, 1.0), 0.1, 0.1, 0.1).unwrap();
        let st = SirState::new(LatticeField::zeros(g), LatticeField::zeros(g), LatticeField::zeros(g)).unwrap();
        let d = reaction_rhs(&st, &p).unwrap();
        assert!(d.is_finite());
        assert_eq!(d.s.max_abs(), 0.0);
    }

    proptest! {
        #[test]
        fn rhs_total_is_zero(vals in proptest::collection::vec(0.0f64..1.0, 21), b in 0.0f64..3.0, a in 0.0f64..3.0) {
            let g = Grid::new(7).unwrap();
            let p = ModelParams::new(LatticeField::constant(g, b), LatticeField::constant(g, a), 0.01, 0.02, 0.03).unwrap();
            let st = SirState::from_flat(g, &vals).unwrap();
            let d = reaction_rhs(&st, &p).unwrap();
            let tot = d.s.sum() + d.i.sum() + d.r.sum();
            prop_assert!(tot.abs() < 1e-10 * g.inv_eps2());
        }

        #[test]
        fn f_plus_g_bounded_by_beta(vals in proptest::collection::vec(0.001f64..1.0, 15), b in 0.0f64..3.0) {
            let g = Grid::new(5).unwrap();
            let p = ModelParams::new(LatticeField::constant(g, b), LatticeField::constant(g, 0.1), 0.01, 0.01, 0.01).unwrap();
            let st = SirState::from_flat(g, &vals).unwrap();
            let (f, gg) = coefficient_fields(&st, &p).unwrap();
            for k in 0..5 {
                prop_assert!(f.values()[k] + gg.values()[k] <= b * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn coefficient_field_examples() {
        let g = Grid::new(3).unwrap();
        let p = ModelParams::new(LatticeField::constant(g, 2.0), LatticeField::constant(g, 0.1), 0.1, 0.1, 0.1).unwrap();
        let st = SirState::new(LatticeField::constant(g, 0.4), LatticeField::zeros(g), LatticeField::zeros(g)).unwrap();
        let (f, gg) = coefficient_fields(&st, &p).unwrap();
        assert!(f.values().iter().all(|v| (v - 2.0).abs() < 1e-15));
        assert_eq!(gg.max_abs(), 0.0);

        let p = ModelParams::new(LatticeField::constant(g, 1.0), LatticeField::constant(g, 0.1), 0.1, 0.1, 0.1).unwrap();
        let third = LatticeField::constant(g, 1.0 / 3.0);
        let st = SirState::new(third.clone(), third.clone(), third).unwrap();
        let (f, gg) = coefficient_fields(&st, &p).unwrap();
        assert!(f.values().iter().all(|v| (v - 2.0 / 9.0).abs() < 1e-15));
        assert!(gg.values().iter().all(|v| (v - 2.0 / 9.0).abs() < 1e-15));

        let z = SirState::new(LatticeField::zeros(g), LatticeField::zeros(g), LatticeField::zeros(g)).unwrap();
        assert!(matches!(coefficient_fields(&z, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn step_guard_and_alignment() {
        let (st, p) = std_setup(9);
        let h = p.stable_step();
        assert!(matches!(integrate_ode(&st, &p, 1.0, 2.0 * h, &[0.0]), Err(Error::Unstable { .. })));
        assert!(integrate_ode(&st, &p, 0.1, 0.03, &[0.0]).is_err());
        assert!(integrate_ode(&st, &p, 0.01, 0.001, &[0.0015]).is_err());
    }

    #[test]
    fn heat_flow_conserves_mass() {
        let g = Grid::new(9).unwrap();
        let p = ModelParams::new(LatticeField::zeros(g), LatticeField::zeros(g), 0.01, 0.01, 0.01).unwrap();
        let phi = basis_field(Mode::cos(2).unwrap(), g).unwrap();
        let s0 = phi.map(|v| v + 2.0);
        let st = SirState::new(s0.clone(), LatticeField::zeros(g), LatticeField::zeros(g)).unwrap();
        let h = 1e-3;
        let n = 1000;
        let tr = integrate_ode(&st, &p, 1.0, h, &uniform_sample_times(n, h, 100)).unwrap();
        let one = LatticeField::constant(g, 1.0);
        for (_, s) in tr.iter() {
            assert!((inner(&s.s, &one).unwrap() - 2.0).abs() < 1e-10);
        }
        let last = tr.last().unwrap();
        let spread = last.s.max() - last.s.min();
        assert!(spread < s0.max() - s0.min());
    }

    #[test]
    fn rk4_order() {
        let g = Grid::new(3).unwrap();
        let p = ModelParams::new(LatticeField::constant(g, 2.0), LatticeField::constant(g, 0.7), 0.01, 0.01, 0.01).unwrap();
        let st = SirState::new(
            LatticeField::constant(g, 0.9),
            LatticeField::constant(g, 0.1),
            LatticeField::zeros(g),
        )
        .unwrap();
        let run = |h: f64| integrate_ode(&st, &p, 1.0, h, &[1.0]).unwrap().states[0].i.values()[0];
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!(order >= 3.8, "observed order {order}");
    }

    #[test]
    fn standard_preset_invariants() {
        let (st, p) = std_setup(27);
        let h = 1.0 / (1.0 / p.stable_step()).ceil();
        let n = step_count(1.0, h).unwrap();
        let tr = integrate_ode(&st, &p, 1.0, h, &uniform_sample_times(n, h, 1)).unwrap();
        let m0 = mass(&st);
        let one = LatticeField::constant(st.grid(), 1.0);
        let mut prev_r = f64::NEG_INFINITY;
        for (_, s) in tr.iter() {
            assert!((mass(s) - m0).abs() <= 1e-9);
            assert!(s.s.min() >= -1e-12 && s.i.min() >= -1e-12 && s.r.min() >= -1e-12);
            let r = inner(&s.r, &one).unwrap();
            assert!(r >= prev_r - 1e-10);
            prev_r = r;
        }
        let pre = Preset::default();
        let floor = lower_bound_floor(pre.s_floor(), pre.beta_bar(), 1.0);
        assert!(lower_bound_certificate(&tr) >= floor);

        // Energy balance for S: |S(t)|^2 + 2 mu int |grad S|^2 <= |S0|^2.
        let mu = p.mu(Compartment::S);
        let dens: Vec<f64> = tr.states.iter().map(|s| {
            let gp = grad_plus(&s.s);
            inner(&gp, &gp).unwrap()
        }).collect();
        let mut integral = 0.0;
        for k in 1..tr.len() {
            integral += 0.5 * h * (dens[k] + dens[k - 1]);
            let s = &tr.states[k].s;
            let lhs = inner(s, s).unwrap() + 2.0 * mu * integral;
            assert!(lhs <= inner(&st.s, &st.s).unwrap() + 1e-6);
        }
    }

    #[test]
    fn beta_zero_preserves_lower_bound() {
        let g = Grid::new(9).unwrap();
        let pre = Preset { b0: 0.0, ..Preset::default() };
        let p = pre.params(g).unwrap();
        let st = pre.initial_state(g).unwrap();
        let a0 = st.total().min();
        let h = aligned_step(0.5, p.stable_step());
        let n = step_count(0.5, h).unwrap();
        let tr = integrate_ode(&st, &p, 0.5, h, &uniform_sample_times(n, h, 10)).unwrap();
        assert!(lower_bound_certificate(&tr) >= a0 - 1e-12);
    }

    #[test]
    fn refine_compare_identical_and_constant() {
        let pre = Preset::default();
        assert_eq!(refine_compare(&pre, 9, 9, 0.1, 5).unwrap(), 0.0);
        let flat = Preset { beta_amp: 0.0, alpha_amp: 0.0, s0_amp: 0.0, i0_amp: 0.0, ..Preset::default() };
        assert!(refine_compare(&flat, 5, 15, 0.1, 5).unwrap() < 1e-12);
    }

    #[test]
    fn projection_grid_gradients_bounded() {
        let pre = Preset::default();
        let mut sups = Vec::new();
        for ell in [9, 27, 81] {
            let g = Grid::new(ell).unwrap();
            let p = pre.params(g).unwrap();
            let st = pre.initial_state(g).unwrap();
            let t_end = 0.25;
            let h = t_end / (t_end / p.stable_step()).ceil();
            let n = step_count(t_end, h).unwrap();
            let tr = integrate_ode(&st, &p, t_end, h, &uniform_sample_times(n, h, n / 10)).unwrap();
            sups.push(tr.states.iter().map(|s| grad_plus(&s.s).max_abs()).fold(0.0, f64::max));
        }
        for s in &sups[1..] {
            assert!(*s <= 2.0 * sups[0] && *s >= 0.5 * sups[0]);
        }
    }
}
