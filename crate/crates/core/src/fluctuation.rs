//! Fluctuations at fixed lattice spacing: the rescaled deviation of the jump
//! process from the lattice ODE and its Ornstein-Uhlenbeck limit
//!
//! ```text
//! dPsi = A(t) Psi dt + sum_j h_j sqrt(beta_j(Z(t))) dB_j
//! ```
//!
//! where `A` is the Jacobian of the lattice vector field along the
//! deterministic path `Z`, `h_j` the jump vector of channel `j` and `beta_j`
//! its rate in proportion units. Vectors are laid out `[U | V | W]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deterministic::{reaction_partials, ModelParams, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{laplacian_into, Grid, LatticeField};
use crate::jump::{site_rates, JumpState, CHANNELS_PER_SITE};
use crate::rng::{normal, rng_from_seed, SimRng};

pub type CovarianceMatrix = DMatrix<f64>;

/// Which linearization of the incidence to use.
///
/// `Exact` is the Jacobian of `beta S I / A`. `Reduced` uses the
/// coefficient pairing of the limit equations, where the
/// `S`-coefficient `beta S (S + R) / A^2` multiplies `U`, the
/// `I`-coefficient multiplies `V`, and the dependence on `W` is dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    #[default]
    Exact,
    Reduced,
}

/// Signed deviation fields `(U, V, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationState {
    pub u: LatticeField,
    pub v: LatticeField,
    pub w: LatticeField,
}

impl FluctuationState {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            u: LatticeField::zeros(grid),
            v: LatticeField::zeros(grid),
            w: LatticeField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.u.grid()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [self.u.values(), self.v.values(), self.w.values()].concat()
    }

    pub fn from_flat(grid: Grid, y: &[f64]) -> Result<Self> {
        let s = SirState::from_flat(grid, y)?;
        Ok(Self {
            u: s.s,
            v: s.i,
            w: s.r,
        })
    }

    pub fn fields(&self) -> [&LatticeField; 3] {
        [&self.u, &self.v, &self.w]
    }
}

/// `sqrt(N) (Z_N - Z)` sample by sample.
pub fn psi(jump: &Trajectory<JumpState>, det: &Trajectory<SirState>) -> Result<Trajectory<FluctuationState>> {
    if jump.len() != det.len() || jump.times.iter().zip(&det.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Misaligned("jump and deterministic sample times differ".into()));
    }
    let mut out = Vec::with_capacity(jump.len());
    for (js, ds) in jump.states.iter().zip(&det.states) {
        js.grid().ensure_same(&ds.grid())?;
        let scale = (js.population() as f64).sqrt();
        let p = js.to_proportions()?;
        let d = |a: &LatticeField, b: &LatticeField| a.zip_map(b, |x, y| scale * (x - y));
        out.push(FluctuationState {
            u: d(&p.s, &ds.s),
            v: d(&p.i, &ds.i),
            w: d(&p.r, &ds.r),
        });
    }
    Trajectory::new(jump.times.clone(), out)
}

/// `eps^{-1/2} F`.
pub fn rescale_field(f: &LatticeField) -> LatticeField {
    f.scale(f.grid().inv_eps().sqrt())
}

/// Linearized drift: `mu_J Lap` on each compartment block plus one 3x3
/// reaction block per site.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftJacobian {
    grid: Grid,
    mu: [f64; 3],
    blocks: Vec<[[f64; 3]; 3]>,
}

impl DriftJacobian {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Reaction block of `site`, rows and columns ordered `(S, I, R)`.
    pub fn block(&self, site: usize) -> &[[f64; 3]; 3] {
        &self.blocks[site]
    }

    /// `out = A x` for flat vectors.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let l = self.grid.ell();
        for c in 0..3 {
            laplacian_into(&x[c * l..(c + 1) * l], &mut out[c * l..(c + 1) * l]);
            for v in &mut out[c * l..(c + 1) * l] {
                *v *= self.mu[c];
            }
        }
        self.add_reaction(x, out);
    }

    /// Adds the reaction blocks applied to `x` onto `out`, leaving out the
    /// diffusion part.
    pub fn add_reaction(&self, x: &[f64], out: &mut [f64]) {
        let l = self.grid.ell();
        for (i, b) in self.blocks.iter().enumerate() {
            let xi = [x[i], x[l + i], x[2 * l + i]];
            for (r, row) in b.iter().enumerate() {
                out[r * l + i] += row[0] * xi[0] + row[1] * xi[1] + row[2] * xi[2];
            }
        }
    }

    /// Entrywise mean of two Jacobians on the same grid.
    pub fn average(&self, other: &Self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                let mut m = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        m[r][c] = 0.5 * (a[r][c] + b[r][c]);
                    }
                }
                m
            })
            .collect();
        Self {
            grid: self.grid,
            mu: self.mu,
            blocks,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let l = self.grid.ell();
        let l2 = self.grid.inv_eps2();
        let mut a = DMatrix::zeros(3 * l, 3 * l);
        for c in 0..3 {
            for i in 0..l {
                let row = c * l + i;
                a[(row, row)] += -2.0 * l2 * self.mu[c];
                a[(row, c * l + self.grid.right(i))] += l2 * self.mu[c];
                a[(row, c * l + self.grid.left(i))] += l2 * self.mu[c];
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for r in 0..3 {
                for c in 0..3 {
                    a[(r * l + i, c * l + i)] += b[r][c];
                }
            }
        }
        a
    }
}

/// Jacobian of the lattice vector field at `state`.
pub fn drift_jacobian(state: &SirState, params: &ModelParams, convention: DriftConvention) -> Result<DriftJacobian> {
    let (f, g, h) = reaction_partials(state, params)?;
    let alpha = params.alpha().values();
    let blocks = (0..state.grid().ell())
        .map(|i| {
            let (f, g, h, a) = (f.values()[i], g.values()[i], h.values()[i], alpha[i]);
            match convention {
                DriftConvention::Exact => [[-g, -f, h], [g, f - a, -h], [0.0, a, 0.0]],
                DriftConvention::Reduced => [[-f, -g, 0.0], [f, g - a, 0.0], [0.0, a, 0.0]],
            }
        })
        .collect();
    Ok(DriftJacobian {
        grid: state.grid(),
        mu: params.mus(),
        blocks,
    })
}

/// Flat coordinates `(from, to)` touched by channel `k`; `from` loses one.
#[inline]
fn channel_coords(grid: Grid, k: usize) -> (usize, usize) {
    let l = grid.ell();
    let i = k / CHANNELS_PER_SITE;
    match k % CHANNELS_PER_SITE {
        0 => (i, l + i),
        1 => (l + i, 2 * l + i),
        c => {
            let comp = (c - 2) / 2;
            let j = if c % 2 == 0 { grid.right(i) } else { grid.left(i) };
            (comp * l + i, comp * l + j)
        }
    }
}

/// Channel rates in proportion units at every site, in layout order.
pub fn proportion_rates(state: &SirState, params: &ModelParams) -> Result<Vec<f64>> {
    state.grid().ensure_same(&params.grid())?;
    let g = state.grid();
    let mut out = Vec::with_capacity(CHANNELS_PER_SITE * g.ell());
    for i in 0..g.ell() {
        out.extend_from_slice(&site_rates(
            params.beta().values()[i],
            params.alpha().values()[i],
            params.mus(),
            g.inv_eps2(),
            state.s.values()[i],
            state.i.values()[i],
            state.r.values()[i],
        ));
    }
    Ok(out)
}

/// `Q = sum_j h_j h_j^T beta_j`.
pub fn diffusion_matrix(state: &SirState, params: &ModelParams) -> Result<CovarianceMatrix> {
    let rates = proportion_rates(state, params)?;
    let g = state.grid();
    let n = 3 * g.ell();
    let mut q = DMatrix::zeros(n, n);
    for (k, &r) in rates.iter().enumerate() {
        let (a, b) = channel_coords(g, k);
        q[(a, a)] += r;
        q[(b, b)] += r;
        q[(a, b)] -= r;
        q[(b, a)] -= r;
    }
    Ok(q)
}

/// Options for [`simulate_ou_fixed_eps`].
#[derive(Debug, Clone, Default)]
pub struct OuOptions {
    pub convention: DriftConvention,
    /// Initial condition; zero when absent.
    pub psi0: Option<FluctuationState>,
    /// When set, only the linear drift is integrated.
    pub noise_off: bool,
}

/// Drift and noise amplitudes along a deterministic path, one entry per
/// Euler-Maruyama step. Shared read-only by all paths.
#[derive(Debug, Clone)]
pub struct OuCoefficients {
    grid: Grid,
    dt: f64,
    drifts: Vec<DriftJacobian>,
    amplitudes: Vec<Vec<f64>>,
}

impl OuCoefficients {
    /// `det` must be sampled at `0, dt, ..., T`.
    pub fn new(det: &Trajectory<SirState>, params: &ModelParams, t_end: f64, dt: f64, convention: DriftConvention) -> Result<Self> {
        params.check_step(dt)?;
        let n = crate::deterministic::step_count(t_end, dt)?;
        if det.len() < n + 1 || (0..=n).any(|k| (det.times[k] - k as f64 * dt).abs() > 1e-9 * dt.max(1.0)) {
            return Err(Error::Misaligned(format!(
                "deterministic path must be sampled at every multiple of dt = {dt} up to {t_end}"
            )));
        }
        let mut drifts = Vec::with_capacity(n);
        let mut amplitudes = Vec::with_capacity(n);
        for st in &det.states[..n] {
            drifts.push(drift_jacobian(st, params, convention)?);
            let rates = proportion_rates(st, params)?;
            amplitudes.push(rates.iter().map(|r| (r.max(0.0) * dt).sqrt()).collect());
        }
        Ok(Self {
            grid: params.grid(),
            dt,
            drifts,
            amplitudes,
        })
    }

    pub fn steps(&self) -> usize {
        self.drifts.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// One path; returns the states at step indices `record` (sorted).
    pub fn simulate_path(&self, rng: &mut SimRng, psi0: &[f64], noise: bool, record: &[usize]) -> Vec<Vec<f64>> {
        let n = psi0.len();
        let mut y = psi0.to_vec();
        let mut ay = vec![0.0; n];
        let mut out = Vec::with_capacity(record.len());
        let mut next = 0;
        for k in 0..=self.steps() {
            while next < record.len() && record[next] == k {
                out.push(y.clone());
                next += 1;
            }
            if k == self.steps() || next == record.len() {
                break;
            }
            self.drifts[k].apply(&y, &mut ay);
            for (a, b) in y.iter_mut().zip(&ay) {
                *a += self.dt * b;
            }
            if noise {
                for (j, amp) in self.amplitudes[k].iter().enumerate() {
                    let xi = normal(rng);
                    let (from, to) = channel_coords(self.grid, j);
                    let d = amp * xi;
                    y[from] -= d;
                    y[to] += d;
                }
            }
        }
        out
    }
}

/// Euler-Maruyama for the fixed-spacing OU system along `det`, recording the
/// states at `sample_times`.
pub fn simulate_ou_fixed_eps(
    det: &Trajectory<SirState>,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    sample_times: &[f64],
    options: &OuOptions,
) -> Result<Trajectory<FluctuationState>> {
    let coeffs = OuCoefficients::new(det, params, t_end, dt, options.convention)?;
    let idx = crate::deterministic::sample_indices(sample_times, dt, coeffs.steps())?;
    let grid = params.grid();
    let psi0 = match &options.psi0 {
        Some(p) => {
            p.grid().ensure_same(&grid)?;
            p.to_flat()
        }
        None => vec![0.0; 3 * grid.ell()],
    };
    let mut rng = rng_from_seed(seed);
    let states = coeffs
        .simulate_path(&mut rng, &psi0, !options.noise_off, &idx)
        .iter()
        .map(|y| FluctuationState::from_flat(grid, y))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(sample_times.to_vec(), states)
}

/// `<Psi, phi>` summed over the three compartments for a flat vector and a
/// flat test vector of the same layout.
pub fn pair_flat(psi: &[f64], test: &[f64], grid: Grid) -> f64 {
    crate::grid::dot(psi, test) * grid.eps()
}

/// Dense vector view used by the covariance oracles.
pub fn to_dvector(y: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{integrate_ode, rhs_flat, uniform_sample_times, Preset};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_state(grid: Grid, rng: &mut impl Rng) -> SirState {
        let y: Vec<f64> = (0..3 * grid.ell()).map(|_| rng.random_range(0.05..1.0)).collect();
        SirState::from_flat(grid, &y).unwrap()
    }

    fn random_params(grid: Grid, rng: &mut impl Rng) -> ModelParams {
        let f = |rng: &mut dyn rand::RngCore| {
            LatticeField::new(grid, (0..grid.ell()).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap()
        };
        let b = f(rng);
        let a = f(rng);
        ModelParams::new(b, a, 0.01, 0.02, 0.005).unwrap()
    }

    #[test]
    fn psi_examples() {
        let g = Grid::new(3).unwrap();
        let js = JumpState::new(g, 10000, vec![5000, 100, 100], vec![100; 3], vec![0; 3]).unwrap();
        let p = js.to_proportions().unwrap();
        let jt = Trajectory::new(vec![0.0], vec![js.clone()]).unwrap();
        let dt = Trajectory::new(vec![0.0], vec![p.clone()]).unwrap();
        let z = psi(&jt, &dt).unwrap();
        assert_eq!(z.states[0].u.max_abs(), 0.0);

        let mut shifted = p.clone();
        shifted.s.values_mut()[1] -= 0.01;
        let dt = Trajectory::new(vec![0.0], vec![shifted]).unwrap();
        let z = psi(&jt, &dt).unwrap();
        assert!((z.states[0].u.values()[1] - 1.0).abs() < 1e-9);
        let bad = Trajectory::new(vec![0.5], vec![p]).unwrap();
        assert!(psi(&jt, &bad).is_err());
    }

    #[test]
    fn rescale_examples() {
        let g = Grid::new(9).unwrap();
        let f = LatticeField::new(g, (0..9).map(|k| k as f64).collect()).unwrap();
        let r = rescale_field(&f);
        assert!(r.values().iter().zip(f.values()).all(|(a, b)| (a - 3.0 * b).abs() < 1e-14));
        let n2 = crate::grid::inner(&r, &r).unwrap();
        assert!((n2 - 9.0 * crate::grid::inner(&f, &f).unwrap()).abs() < 1e-10);
        assert_eq!(rescale_field(&LatticeField::zeros(g)).max_abs(), 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        for _ in 0..10 {
            let g = Grid::new(5).unwrap();
            let st = random_state(g, &mut rng);
            let p = random_params(g, &mut rng);
            let a = drift_jacobian(&st, &p, DriftConvention::Exact).unwrap().to_dense();
            let y = st.to_flat();
            let n = y.len();
            let step = 1e-5;
            let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
            for c in 0..n {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[c] += step;
                ym[c] -= step;
                rhs_flat(&p, &yp, &mut fp);
                rhs_flat(&p, &ym, &mut fm);
                for r in 0..n {
                    let fd = (fp[r] - fm[r]) / (2.0 * step);
                    let scale = a[(r, c)].abs().max(1.0);
                    assert!((fd - a[(r, c)]).abs() <= 1e-6 * scale, "({r},{c}): {fd} vs {}", a[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn jacobian_structure() {
        let g = Grid::new(5).unwrap();
        let p = ModelParams::new(LatticeField::zeros(g), LatticeField::zeros(g), 0.1, 0.2, 0.3).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let st = random_state(g, &mut rng);
        let a = drift_jacobian(&st, &p, DriftConvention::Exact).unwrap().to_dense();
        for r in 0..15 {
            for c in 0..15 {
                if r / 5 != c / 5 {
                    assert_eq!(a[(r, c)], 0.0);
                }
            }
        }
        // With R = 0 the W coupling -beta S I / A^2 survives.
        let p = random_params(g, &mut rng);
        let mut st = random_state(g, &mut rng);
        st.r = LatticeField::zeros(g);
        let j = drift_jacobian(&st, &p, DriftConvention::Exact).unwrap();
        let (s, i) = (st.s.values()[2], st.i.values()[2]);
        let want = -p.beta().values()[2] * s * i / (s + i).powi(2);
        assert!((j.block(2)[1][2] - want).abs() < 1e-14);
        let lit = drift_jacobian(&st, &p, DriftConvention::Reduced).unwrap();
        assert_eq!(lit.block(2)[0][2], 0.0);
    }

    #[test]
    fn apply_matches_dense() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let g = Grid::new(7).unwrap();
        let st = random_state(g, &mut rng);
        let p = random_params(g, &mut rng);
        let j = drift_jacobian(&st, &p, DriftConvention::Exact).unwrap();
        let x: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; 21];
        j.apply(&x, &mut out);
        let want = j.to_dense() * to_dvector(&x);
        for k in 0..21 {
            assert!((out[k] - want[k]).abs() < 1e-10 * want[k].abs().max(1.0));
        }
    }

    #[test]
    fn diffusion_matrix_examples() {
        let g = Grid::new(3).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let p = random_params(g, &mut rng);
        let zero = SirState::from_flat(g, &[0.0; 9]).unwrap();
        assert_eq!(diffusion_matrix(&zero, &p).unwrap().abs().max(), 0.0);

        // Only recovery active at site 1: I present, no S, migration negligible.
        let p = ModelParams::new(LatticeField::constant(g, 1.0), LatticeField::constant(g, 0.7), 1e-300, 1e-300, 1e-300).unwrap();
        let mut y = [0.0; 9];
        y[3 + 1] = 0.4;
        let q = diffusion_matrix(&SirState::from_flat(g, &y).unwrap(), &p).unwrap();
        let ai = 0.7 * 0.4;
        assert!((q[(4, 4)] - ai).abs() < 1e-15 && (q[(7, 7)] - ai).abs() < 1e-15);
        assert!((q[(4, 7)] + ai).abs() < 1e-15 && (q[(7, 4)] + ai).abs() < 1e-15);

        for _ in 0..20 {
            let g = Grid::new(5).unwrap();
            let q = diffusion_matrix(&random_state(g, &mut rng), &random_params(g, &mut rng)).unwrap();
            assert!((&q - q.transpose()).abs().max() == 0.0);
            let ev = q.clone().symmetric_eigen().eigenvalues;
            assert!(ev.min() >= -1e-10 * q.norm());
        }
    }

    fn frozen_path(state: &SirState, n: usize, dt: f64) -> Trajectory<SirState> {
        Trajectory::new((0..=n).map(|k| k as f64 * dt).collect(), vec![state.clone(); n + 1]).unwrap()
    }

    #[test]
    fn inactive_compartments_stay_zero() {
        // Only R is present and there is no reaction, so every channel that
        // could move U or V has zero rate.
        let g = Grid::new(3).unwrap();
        let p = ModelParams::new(LatticeField::zeros(g), LatticeField::zeros(g), 0.01, 0.01, 0.01).unwrap();
        let st = SirState::from_flat(g, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.3, 0.4]).unwrap();
        let det = frozen_path(&st, 10, 0.01);
        let out = simulate_ou_fixed_eps(&det, &p, 0.1, 0.01, 1, &[0.1], &OuOptions::default()).unwrap();
        assert_eq!(out.states[0].u.max_abs(), 0.0);
        assert_eq!(out.states[0].v.max_abs(), 0.0);
        assert!(out.states[0].w.max_abs() > 0.0);
    }

    #[test]
    fn linear_flow_is_linear() {
        let g = Grid::new(5).unwrap();
        let pre = Preset::default();
        let p = pre.params(g).unwrap();
        let dt = 0.01;
        let det = integrate_ode(&pre.initial_state(g).unwrap(), &p, 0.5, dt, &uniform_sample_times(50, dt, 1)).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let y0: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let one = FluctuationState::from_flat(g, &y0).unwrap();
        let two = FluctuationState::from_flat(g, &y0.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        let run = |psi0| {
            let o = OuOptions { psi0: Some(psi0), noise_off: true, ..OuOptions::default() };
            simulate_ou_fixed_eps(&det, &p, 0.5, dt, 0, &[0.5], &o).unwrap().states[0].to_flat()
        };
        let a = run(one);
        let b = run(two);
        assert!(a.iter().zip(&b).all(|(x, y)| 2.0 * x == *y));
        assert!(a.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn recovery_only_matches_scalar_ou() {
        let g = Grid::new(3).unwrap();
        let alpha = 0.8;
        let i0 = 0.5;
        let p = ModelParams::new(LatticeField::zeros(g), LatticeField::constant(g, alpha), 1e-12, 1e-12, 1e-12).unwrap();
        let st = SirState::from_flat(g, &[0.0, 0.0, 0.0, i0, i0, i0, 0.0, 0.0, 0.0]).unwrap();
        let (dt, t) = (0.005, 1.0);
        let det = frozen_path(&st, 200, dt);
        let coeffs = OuCoefficients::new(&det, &p, t, dt, DriftConvention::Exact).unwrap();
        let paths = 4000;
        let xs: Vec<f64> = (0..paths)
            .map(|k| {
                let mut rng = crate::rng::replica_rng(31, k);
                coeffs.simulate_path(&mut rng, &[0.0; 9], true, &[200])[0][3]
            })
            .collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / paths as f64;
        let se = var * (2.0 / paths as f64).sqrt();
        // Euler-Maruyama variance of dV = -a V dt + sigma dB after n steps.
        let sigma2 = alpha * i0;
        let rho = (1.0 - alpha * dt).powi(2);
        let em = sigma2 * dt * (1.0 - rho.powi(200)) / (1.0 - rho);
        let exact = sigma2 * (1.0 - (-2.0 * alpha * t).exp()) / (2.0 * alpha);
        assert!((em - exact).abs() < 0.01 * exact);
        assert!((var - exact).abs() <= 4.0 * se, "{var} vs {exact} (se {se})");
    }

    #[test]
    fn misaligned_det_path_rejected() {
        let g = Grid::new(3).unwrap();
        let p = Preset::default().params(g).unwrap();
        let st = Preset::default().initial_state(g).unwrap();
        let det = frozen_path(&st, 5, 0.02);
        assert!(simulate_ou_fixed_eps(&det, &p, 0.1, 0.01, 0, &[0.1], &OuOptions::default()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state_and_params() -> impl Strategy<Value = (SirState, ModelParams)> {
            (1usize..=4).prop_flat_map(|h| {
                let ell = 2 * h + 1;
                let pos = prop::collection::vec(0.01f64..1.0, 3 * ell);
                let rates = prop::collection::vec(0.0f64..2.0, 2 * ell);
                (pos, rates).prop_map(move |(y, r)| {
                    let g = Grid::new(ell).unwrap();
                    let p = ModelParams::new(
                        LatticeField::new(g, r[..ell].to_vec()).unwrap(),
                        LatticeField::new(g, r[ell..].to_vec()).unwrap(),
                        0.01,
                        0.02,
                        0.005,
                    )
                    .unwrap();
                    (SirState::from_flat(g, &y).unwrap(), p)
                })
            })
        }

        proptest! {
            #[test]
            fn diffusion_matrix_is_symmetric_psd_and_mass_free((st, p) in state_and_params()) {
                let q = diffusion_matrix(&st, &p).unwrap();
                prop_assert!((&q - q.transpose()).amax() < 1e-12);
                let ev = q.clone().symmetric_eigenvalues();
                prop_assert!(ev.min() >= -1e-10 * q.amax().max(1.0));
                // Every jump conserves the total, so Q annihilates the ones vector.
                let ones = DVector::from_element(q.nrows(), 1.0);
                prop_assert!((&q * ones).amax() < 1e-9 * q.amax().max(1.0));
            }

            #[test]
            fn exact_drift_conserves_total((st, p) in state_and_params()) {
                for conv in [DriftConvention::Exact, DriftConvention::Reduced] {
                    let a = drift_jacobian(&st, &p, conv).unwrap().to_dense();
                    let ones = DVector::from_element(a.nrows(), 1.0);
                    let col_sums = a.transpose() * ones;
                    prop_assert!(col_sums.amax() < 1e-9 * a.amax().max(1.0));
                }
            }
        }
    }
}
