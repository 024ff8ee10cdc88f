//! The small-spacing limit of the rescaled fluctuations.
//!
//! The limit martingales are driven by five independent space-time white
//! noises `W1..W5`, discretized as one normal increment of variance
//! `dt * eps` per step and cell. Tested against a lattice field `phi`,
//!
//! ```text
//! <M^S, phi> = -int phi sqrt(beta s i / a) dW1 - int grad phi sqrt(2 mu_S s) dW2
//! <M^I, phi> =  int phi sqrt(beta s i / a) dW1 + int phi sqrt(alpha i) dW3 - ...
//! <M^R, phi> = -int phi sqrt(alpha i) dW3 - int grad phi sqrt(2 mu_R r) dW5
//! ```
//!
//! Migration noise lives on edges: the flux across edge `(i, i+1)` has
//! amplitude `sqrt(mu (X_i + X_{i+1}))` and enters the field through a
//! backward difference, so pairing with `phi` reproduces the discrete bracket
//! `mu <X, (grad+ phi)^2 + (grad- phi)^2>` exactly.
//!
//! The fluctuation limit splits into the stochastic convolution `(u, v, w)`,
//! solved mode by mode with exponential Euler, and a forced linear system
//! `(u_bar, v_bar, w_bar)` driven pathwise by the same `(u, v, w)`, solved
//! with RK4.

use rayon::prelude::*;

use crate::deterministic::{step_count, Compartment, ModelParams, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::fluctuation::{drift_jacobian, DriftConvention, DriftJacobian, FluctuationState};
use crate::grid::{coarsen, dot, grad_minus, grad_plus, Grid, LatticeField};
use crate::rng::{normal, replica_rng, rng_from_seed, SimRng};
use crate::spectral::{Basis, Mode, ModeKind};

pub const NOISE_STREAMS: usize = 5;

/// Cumulative `(M^S, M^I, M^R)` stored in the `(u, v, w)` slots.
pub type MartingaleFields = Trajectory<FluctuationState>;

/// Generator of white-noise increments on one grid and step.
#[derive(Debug, Clone, Copy)]
pub struct NoiseField {
    grid: Grid,
    dt: f64,
    sd: f64,
}

impl NoiseField {
    pub fn new(grid: Grid, dt: f64) -> Result<Self> {
        Self::scaled(grid, dt, 1.0)
    }

    /// Every increment multiplied by `scale`.
    pub fn scaled(grid: Grid, dt: f64, scale: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be > 0, got {dt}")));
        }
        if !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("noise scale must be finite, got {scale}")));
        }
        Ok(Self {
            grid,
            dt,
            sd: (dt * grid.eps()).sqrt() * scale,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Variance of one increment, scale included.
    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    /// One step of all five streams, stream-major: `out[s * ell + i]`.
    pub fn draw(&self, rng: &mut SimRng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), NOISE_STREAMS * self.grid.ell());
        for z in out.iter_mut() {
            *z = self.sd * normal(rng);
        }
    }
}

/// Deterministic states at `0, dt, ..., n dt`, cell-averaged onto `grid`.
/// `det` may be sampled more finely in time and live on a finer grid.
pub fn states_on_steps(det: &Trajectory<SirState>, grid: Grid, t_end: f64, dt: f64) -> Result<Vec<SirState>> {
    let n = step_count(t_end, dt)?;
    let mut out = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let t = k as f64 * dt;
        let tol = 1e-9 * t.max(dt);
        while j < det.len() && det.times[j] < t - tol {
            j += 1;
        }
        if j == det.len() || (det.times[j] - t).abs() > tol {
            return Err(Error::Misaligned(format!("deterministic path has no sample at t = {t}")));
        }
        let st = &det.states[j];
        out.push(if st.grid() == grid {
            st.clone()
        } else {
            SirState {
                s: coarsen(&st.s, grid)?,
                i: coarsen(&st.i, grid)?,
                r: coarsen(&st.r, grid)?,
            }
        });
    }
    Ok(out)
}

fn amplitude(x: f64, what: &str, site: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Degenerate(format!("{what} = {x} under a square root at site {site}")));
    }
    Ok(x.sqrt())
}

/// `beta s i / a`, taken as zero where the site is empty.
fn incidence(beta: f64, s: f64, i: f64, r: f64) -> f64 {
    let a = s + i + r;
    if s == 0.0 || i == 0.0 {
        0.0
    } else {
        beta * s * i / a
    }
}

/// Noise amplitudes along a deterministic path, one entry per step.
#[derive(Debug, Clone)]
pub struct MartingaleCoefficients {
    grid: Grid,
    dt: f64,
    infection: Vec<Vec<f64>>,
    recovery: Vec<Vec<f64>>,
    flux: Vec<[Vec<f64>; 3]>,
}

impl MartingaleCoefficients {
    pub fn new(det: &Trajectory<SirState>, params: &ModelParams, t_end: f64, dt: f64) -> Result<Self> {
        let grid = params.grid();
        let states = states_on_steps(det, grid, t_end, dt)?;
        let n = states.len() - 1;
        let (beta, alpha) = (params.beta().values(), params.alpha().values());
        let mus = params.mus();
        let mut infection = Vec::with_capacity(n);
        let mut recovery = Vec::with_capacity(n);
        let mut flux = Vec::with_capacity(n);
        for st in &states[..n] {
            let (s, i, r) = (st.s.values(), st.i.values(), st.r.values());
            let mut inf = Vec::with_capacity(grid.ell());
            let mut rec = Vec::with_capacity(grid.ell());
            for k in 0..grid.ell() {
                inf.push(amplitude(incidence(beta[k], s[k], i[k], r[k]), "beta s i / a", k)?);
                rec.push(amplitude(alpha[k] * i[k], "alpha i", k)?);
            }
            let mut fl: [Vec<f64>; 3] = Default::default();
            for c in Compartment::ALL {
                let x = st.field(c).values();
                fl[c.index()] = (0..grid.ell())
                    .map(|k| amplitude(mus[c.index()] * (x[k] + x[grid.right(k)]), "mu (X_i + X_i+1)", k))
                    .collect::<Result<_>>()?;
            }
            infection.push(inf);
            recovery.push(rec);
            flux.push(fl);
        }
        Ok(Self {
            grid,
            dt,
            infection,
            recovery,
            flux,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.infection.len()
    }

    /// Martingale increment of step `k` from the noise increments `z`
    /// (stream-major), written to `out` in `[S | I | R]` layout.
    pub fn increment(&self, k: usize, z: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let l = g.ell();
        let inv = g.inv_eps();
        let (inf, rec, fl) = (&self.infection[k], &self.recovery[k], &self.flux[k]);
        for i in 0..l {
            let a = inf[i] * z[i] * inv;
            let b = rec[i] * z[2 * l + i] * inv;
            out[i] = -a;
            out[l + i] = a + b;
            out[2 * l + i] = -b;
        }
        // Backward difference of the edge fluxes, one stream per compartment.
        for (c, stream) in [1usize, 3, 4].into_iter().enumerate() {
            let zs = &z[stream * l..(stream + 1) * l];
            let edge = |i: usize| fl[c][i] * zs[i];
            for i in 0..l {
                out[c * l + i] += (edge(i) - edge(g.left(i))) * inv * inv;
            }
        }
    }
}

/// Exponential-Euler propagator of the stochastic convolution, kept in the
/// eigenbasis.
struct LinearStepper<'a> {
    basis: &'a Basis,
    damping: [Vec<f64>; 3],
    coeffs: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> LinearStepper<'a> {
    fn new(basis: &'a Basis, mus: [f64; 3], dt: f64) -> Self {
        let l = basis.grid().ell();
        let damping = mus.map(|mu| basis.lambdas().iter().map(|lam| (-mu * lam * dt).exp()).collect());
        Self {
            basis,
            damping,
            coeffs: vec![0.0; 3 * l],
            scratch: vec![0.0; l],
        }
    }

    fn push(&mut self, dm: &[f64]) {
        let l = self.basis.grid().ell();
        for c in 0..3 {
            self.basis.analyze_into(&dm[c * l..(c + 1) * l], &mut self.scratch);
            let co = &mut self.coeffs[c * l..(c + 1) * l];
            for ((a, rho), d) in co.iter_mut().zip(&self.damping[c]).zip(&self.scratch) {
                *a = rho * *a + d;
            }
        }
    }

    fn physical(&self, out: &mut [f64]) {
        let l = self.basis.grid().ell();
        for c in 0..3 {
            self.basis
                .synthesize_into(&self.coeffs[c * l..(c + 1) * l], &mut out[c * l..(c + 1) * l]);
        }
    }
}

/// Linearized drift along the deterministic path at every step and step
/// midpoint.
#[derive(Debug, Clone)]
pub struct BarCoefficients {
    dt: f64,
    nodes: Vec<DriftJacobian>,
    mids: Vec<DriftJacobian>,
}

impl BarCoefficients {
    pub fn new(
        det: &Trajectory<SirState>,
        params: &ModelParams,
        t_end: f64,
        dt: f64,
        convention: DriftConvention,
    ) -> Result<Self> {
        params.check_step(dt)?;
        let states = states_on_steps(det, params.grid(), t_end, dt)?;
        let nodes = states
            .iter()
            .map(|st| drift_jacobian(st, params, convention))
            .collect::<Result<Vec<_>>>()?;
        let mids = nodes.windows(2).map(|w| w[0].average(&w[1])).collect();
        Ok(Self { dt, nodes, mids })
    }

    pub fn steps(&self) -> usize {
        self.mids.len()
    }

    /// Drift at step node `k`.
    pub fn node(&self, k: usize) -> &DriftJacobian {
        &self.nodes[k]
    }
}

struct BarWork {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl BarWork {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

fn bar_rhs(d: &DriftJacobian, y: &[f64], forcing: &[f64], out: &mut [f64]) {
    d.apply(y, out);
    d.add_reaction(forcing, out);
}

/// One RK4 step of `y' = A(t) y + B(t) forcing` over step `k` with the
/// forcing held fixed.
fn bar_step(c: &BarCoefficients, k: usize, y: &mut [f64], forcing: &[f64], ws: &mut BarWork) {
    let h = c.dt;
    let (d0, dm, d1) = (&c.nodes[k], &c.mids[k], &c.nodes[k + 1]);
    let [k1, k2, k3, k4] = &mut ws.k;
    let tmp = &mut ws.tmp;
    bar_rhs(d0, y, forcing, k1);
    for j in 0..y.len() {
        tmp[j] = y[j] + 0.5 * h * k1[j];
    }
    bar_rhs(dm, tmp, forcing, k2);
    for j in 0..y.len() {
        tmp[j] = y[j] + 0.5 * h * k2[j];
    }
    bar_rhs(dm, tmp, forcing, k3);
    for j in 0..y.len() {
        tmp[j] = y[j] + h * k3[j];
    }
    bar_rhs(d1, tmp, forcing, k4);
    for j in 0..y.len() {
        y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

/// Flat `[S | I | R]` snapshots of one limit path at the recorded steps.
#[derive(Debug, Clone, Default)]
pub struct PathRecord {
    pub martingale: Vec<Vec<f64>>,
    pub linear: Vec<Vec<f64>>,
    /// Empty when the forced system was not integrated.
    pub bar: Vec<Vec<f64>>,
}

/// Shared read-only data for many limit paths.
#[derive(Debug, Clone)]
pub struct LimitEngine {
    mart: MartingaleCoefficients,
    bar: Option<BarCoefficients>,
    basis: Basis,
    mus: [f64; 3],
    noise_scale: f64,
}

impl LimitEngine {
    /// `bar` is optional; without it only the martingales and the stochastic
    /// convolution are simulated.
    pub fn new(
        mart: MartingaleCoefficients,
        bar: Option<BarCoefficients>,
        params: &ModelParams,
        noise_scale: f64,
    ) -> Result<Self> {
        mart.grid().ensure_same(&params.grid())?;
        if let Some(b) = &bar {
            if b.steps() != mart.steps() || b.dt != mart.dt() {
                return Err(Error::Misaligned("martingale and forced-system steps differ".into()));
            }
        }
        Ok(Self {
            basis: Basis::new(mart.grid()),
            mart,
            bar,
            mus: params.mus(),
            noise_scale,
        })
    }

    pub fn grid(&self) -> Grid {
        self.mart.grid()
    }

    pub fn steps(&self) -> usize {
        self.mart.steps()
    }

    pub fn dt(&self) -> f64 {
        self.mart.dt()
    }

    /// One path recorded at the sorted step indices `record`.
    pub fn simulate_path(&self, rng: &mut SimRng, record: &[usize]) -> PathRecord {
        let grid = self.grid();
        let l = grid.ell();
        let noise = NoiseField::scaled(grid, self.dt(), self.noise_scale).expect("validated step");
        let mut z = vec![0.0; NOISE_STREAMS * l];
        let mut dm = vec![0.0; 3 * l];
        let mut m = vec![0.0; 3 * l];
        let mut lin = LinearStepper::new(&self.basis, self.mus, self.dt());
        let mut lin_phys = vec![0.0; 3 * l];
        let mut ybar = vec![0.0; 3 * l];
        let mut ws = BarWork::new(3 * l);
        let mut out = PathRecord::default();
        let mut next = 0;
        let n = self.steps();
        for k in 0..=n {
            if next < record.len() && record[next] == k {
                out.martingale.push(m.clone());
                out.linear.push(lin_phys.clone());
                if self.bar.is_some() {
                    out.bar.push(ybar.clone());
                }
                while next < record.len() && record[next] == k {
                    next += 1;
                }
            }
            if k == n || next == record.len() {
                break;
            }
            noise.draw(rng, &mut z);
            self.mart.increment(k, &z, &mut dm);
            if let Some(b) = &self.bar {
                bar_step(b, k, &mut ybar, &lin_phys, &mut ws);
            }
            lin.push(&dm);
            for (a, d) in m.iter_mut().zip(&dm) {
                *a += d;
            }
            if self.bar.is_some() || record.get(next) == Some(&(k + 1)) {
                lin.physical(&mut lin_phys);
            }
        }
        out
    }

    /// `paths` independent paths, path `p` seeded by replica `p` of `seed`,
    /// each reduced by `f` before the next is kept. Runs on the rayon pool.
    pub fn map_paths<R, F>(&self, paths: usize, seed: u64, record: &[usize], f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(PathRecord) -> R + Sync,
    {
        (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = replica_rng(seed, p as u64);
                f(self.simulate_path(&mut rng, record))
            })
            .collect()
    }
}

/// Settings for [`simulate_limit`].
#[derive(Debug, Clone, Copy)]
pub struct SpdeOptions {
    pub convention: DriftConvention,
    /// Multiplies all five noise streams.
    pub noise_scale: f64,
}

impl Default for SpdeOptions {
    fn default() -> Self {
        Self {
            convention: DriftConvention::Exact,
            noise_scale: 1.0,
        }
    }
}

/// Linear and forced parts of one limit path.
#[derive(Debug, Clone)]
pub struct LimitState {
    pub times: Vec<f64>,
    pub martingale: Vec<FluctuationState>,
    pub linear: Vec<FluctuationState>,
    pub bar: Vec<FluctuationState>,
}

impl LimitState {
    pub fn combined(&self) -> Vec<FluctuationState> {
        self.linear.iter().zip(&self.bar).map(|(a, b)| add_states(a, b)).collect()
    }
}

fn add_states(a: &FluctuationState, b: &FluctuationState) -> FluctuationState {
    FluctuationState {
        u: &a.u + &b.u,
        v: &a.v + &b.v,
        w: &a.w + &b.w,
    }
}

fn states_from_flat(grid: Grid, ys: &[Vec<f64>]) -> Result<Vec<FluctuationState>> {
    ys.iter().map(|y| FluctuationState::from_flat(grid, y)).collect()
}

fn sample_steps(sample_times: &[f64], dt: f64, n: usize) -> Result<Vec<usize>> {
    crate::deterministic::sample_indices(sample_times, dt, n)
}

/// One full limit path: martingales, stochastic convolution and forced
/// system, recorded at `sample_times`.
pub fn simulate_limit(
    det: &Trajectory<SirState>,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    sample_times: &[f64],
    options: &SpdeOptions,
) -> Result<LimitState> {
    let mart = MartingaleCoefficients::new(det, params, t_end, dt)?;
    let bar = BarCoefficients::new(det, params, t_end, dt, options.convention)?;
    let engine = LimitEngine::new(mart, Some(bar), params, options.noise_scale)?;
    let idx = sample_steps(sample_times, dt, engine.steps())?;
    let rec = engine.simulate_path(&mut rng_from_seed(seed), &idx);
    let grid = params.grid();
    Ok(LimitState {
        times: sample_times.to_vec(),
        martingale: states_from_flat(grid, &rec.martingale)?,
        linear: states_from_flat(grid, &rec.linear)?,
        bar: states_from_flat(grid, &rec.bar)?,
    })
}

/// Martingale fields at `sample_times`; uses the same noise draws as
/// [`simulate_limit`] with the same seed.
pub fn simulate_martingales(
    det: &Trajectory<SirState>,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    sample_times: &[f64],
) -> Result<MartingaleFields> {
    let mart = MartingaleCoefficients::new(det, params, t_end, dt)?;
    let engine = LimitEngine::new(mart, None, params, 1.0)?;
    let idx = sample_steps(sample_times, dt, engine.steps())?;
    let rec = engine.simulate_path(&mut rng_from_seed(seed), &idx);
    Trajectory::new(sample_times.to_vec(), states_from_flat(params.grid(), &rec.martingale)?)
}

fn check_every_step(traj: &Trajectory<FluctuationState>, grid: Grid, n: usize, dt: f64, what: &str) -> Result<()> {
    if traj.len() != n + 1 || (0..=n).any(|k| (traj.times[k] - k as f64 * dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Misaligned(format!("{what} must be sampled at every step 0, dt, ..., {n} dt")));
    }
    traj.states.iter().try_for_each(|s| s.grid().ensure_same(&grid))
}

/// Stochastic convolution driven by `mart`, which must be sampled at every
/// step. Returned at every step.
pub fn simulate_linear_system(
    mart: &MartingaleFields,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory<FluctuationState>> {
    let grid = params.grid();
    let n = step_count(t_end, dt)?;
    check_every_step(mart, grid, n, dt, "martingale path")?;
    let basis = Basis::new(grid);
    let mut lin = LinearStepper::new(&basis, params.mus(), dt);
    let mut phys = vec![0.0; 3 * grid.ell()];
    let mut states = vec![FluctuationState::zeros(grid)];
    for k in 0..n {
        let a = mart.states[k].to_flat();
        let b = mart.states[k + 1].to_flat();
        let dm: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        lin.push(&dm);
        lin.physical(&mut phys);
        states.push(FluctuationState::from_flat(grid, &phys)?);
    }
    Trajectory::new(mart.times.clone(), states)
}

/// Forced system driven by `linear` (sampled at every step), returned at
/// every step.
pub fn simulate_bar_system(
    linear: &Trajectory<FluctuationState>,
    det: &Trajectory<SirState>,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    convention: DriftConvention,
) -> Result<Trajectory<FluctuationState>> {
    let grid = params.grid();
    let coeffs = BarCoefficients::new(det, params, t_end, dt, convention)?;
    let n = coeffs.steps();
    check_every_step(linear, grid, n, dt, "linear path")?;
    let mut y = vec![0.0; 3 * grid.ell()];
    let mut ws = BarWork::new(y.len());
    let mut states = vec![FluctuationState::zeros(grid)];
    for k in 0..n {
        bar_step(&coeffs, k, &mut y, &linear.states[k].to_flat(), &mut ws);
        states.push(FluctuationState::from_flat(grid, &y)?);
    }
    Trajectory::new(linear.times.clone(), states)
}

/// Componentwise sum of the two parts.
pub fn combine(
    linear: &Trajectory<FluctuationState>,
    bar: &Trajectory<FluctuationState>,
) -> Result<Trajectory<FluctuationState>> {
    if linear.len() != bar.len() || linear.times.iter().zip(&bar.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Misaligned("linear and forced parts have different sample times".into()));
    }
    let states = linear
        .states
        .iter()
        .zip(&bar.states)
        .map(|(a, b)| {
            a.grid().ensure_same(&b.grid())?;
            Ok(add_states(a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(linear.times.clone(), states)
}

/// Sign of compartment `c` in the infection stream `W1` and the recovery
/// stream `W3`.
fn stream_signs(c: Compartment) -> (f64, f64) {
    match c {
        Compartment::S => (-1.0, 0.0),
        Compartment::I => (1.0, 1.0),
        Compartment::R => (0.0, -1.0),
    }
}

/// Rate of the discrete cross bracket of `<M^a, phi>` and `<M^b, psi>` at a
/// deterministic state:
///
/// ```text
/// sigma1(a) sigma1(b) <beta S I / A, phi psi> + sigma3(a) sigma3(b) <alpha I, phi psi>
///   + [a == b] mu_a <X_a, grad+ phi grad+ psi + grad- phi grad- psi>
/// ```
pub fn bracket_density(
    state: &SirState,
    params: &ModelParams,
    a: (Compartment, &LatticeField),
    b: (Compartment, &LatticeField),
) -> Result<f64> {
    let grid = state.grid();
    grid.ensure_same(&params.grid())?;
    grid.ensure_same(&a.1.grid())?;
    grid.ensure_same(&b.1.grid())?;
    let (sa, sb) = (stream_signs(a.0), stream_signs(b.0));
    let (phi, psi) = (a.1.values(), b.1.values());
    let (beta, alpha) = (params.beta().values(), params.alpha().values());
    let (s, i, r) = (state.s.values(), state.i.values(), state.r.values());
    let mut acc = 0.0;
    for k in 0..grid.ell() {
        let w = sa.0 * sb.0 * incidence(beta[k], s[k], i[k], r[k]) + sa.1 * sb.1 * alpha[k] * i[k];
        acc += w * phi[k] * psi[k];
    }
    let mut total = acc * grid.eps();
    if a.0 == b.0 {
        let x = state.field(a.0).values();
        let (pp, pm) = (grad_plus(a.1), grad_minus(a.1));
        let (qp, qm) = (grad_plus(b.1), grad_minus(b.1));
        let mut m = 0.0;
        for k in 0..grid.ell() {
            m += x[k] * (pp.values()[k] * qp.values()[k] + pm.values()[k] * qm.values()[k]);
        }
        total += params.mu(a.0) * m * grid.eps();
    }
    Ok(total)
}

/// Trapezoid rule over the sample times of `ys`.
fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    ts.windows(2)
        .zip(ys.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// Trapezoid quadrature over the samples of `det` of the cross bracket
/// density of `(a, phi)` and `(b, psi)`.
pub fn cross_bracket_quadrature(
    a: (Compartment, &LatticeField),
    b: (Compartment, &LatticeField),
    det: &Trajectory<SirState>,
    params: &ModelParams,
) -> Result<f64> {
    let ys = det
        .states
        .iter()
        .map(|st| bracket_density(st, params, a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&det.times, &ys))
}

/// Discrete bracket of `<M^S, phi>` over the span of `det`.
pub fn bracket_quadrature_discrete(phi: &LatticeField, det: &Trajectory<SirState>, params: &ModelParams) -> Result<f64> {
    cross_bracket_quadrature((Compartment::S, phi), (Compartment::S, phi), det, params)
}

/// Integrals of `phi^2` and `phi'^2` over `[lo, hi]` for the continuous
/// eigenfunction `sqrt 2 cos(pi m x)` or `sqrt 2 sin(pi m x)`.
fn mode_square_integrals(mode: Mode, lo: f64, hi: f64) -> (f64, f64) {
    if mode.m == 0 {
        return (hi - lo, 0.0);
    }
    let k = 2.0 * std::f64::consts::PI * mode.m as f64;
    let c = ((k * hi).sin() - (k * lo).sin()) / k;
    let sign = match mode.kind {
        ModeKind::Cos => 1.0,
        ModeKind::Sin => -1.0,
    };
    let w = 0.25 * k * k;
    (hi - lo + sign * c, w * (hi - lo - sign * c))
}

/// Limit bracket of `<M^S, phi>` for a continuous eigenfunction `phi`:
/// the trapezoid quadrature of `int beta s i / a phi^2 + 2 mu_S int s phi'^2`
/// with `(s, i, r)` the step functions of `det` and exact cell integrals of
/// `phi^2` and `phi'^2`.
pub fn limit_bracket_mode(mode: Mode, det: &Trajectory<SirState>, params: &ModelParams) -> Result<f64> {
    let grid = params.grid();
    let cells: Vec<(f64, f64)> = (0..grid.ell())
        .map(|k| {
            let (lo, hi) = grid.cell(k);
            mode_square_integrals(mode, lo, hi)
        })
        .collect();
    let beta = params.beta().values();
    let mu = params.mu(Compartment::S);
    let ys = det
        .states
        .iter()
        .map(|st| {
            st.grid().ensure_same(&grid)?;
            let (s, i, r) = (st.s.values(), st.i.values(), st.r.values());
            Ok((0..grid.ell())
                .map(|k| incidence(beta[k], s[k], i[k], r[k]) * cells[k].0 + 2.0 * mu * s[k] * cells[k].1)
                .sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(&det.times, &ys))
}

/// `Var <u(t), phi>` of the stochastic convolution: trapezoid quadrature in
/// `r` over the samples of `det` in `[0, t]` of the bracket density of
/// `T(mu_S (t - r)) phi`.
pub fn limit_cov_functional(phi: &LatticeField, det: &Trajectory<SirState>, params: &ModelParams, t: f64) -> Result<f64> {
    let grid = params.grid();
    grid.ensure_same(&phi.grid())?;
    let basis = Basis::new(grid);
    let c0 = basis.analyze(phi)?;
    let mu = params.mu(Compartment::S);
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut psi = vec![0.0; grid.ell()];
    for (r, st) in det.iter() {
        if r > t + 1e-12 {
            break;
        }
        let lag = (t - r).max(0.0);
        let damped: Vec<f64> = c0
            .coeffs()
            .iter()
            .zip(basis.lambdas())
            .map(|(c, l)| c * (-mu * l * lag).exp())
            .collect();
        basis.synthesize_into(&damped, &mut psi);
        let f = LatticeField::new(grid, psi.clone())?;
        ts.push(r);
        ys.push(bracket_density(st, params, (Compartment::S, &f), (Compartment::S, &f))?);
    }
    if ts.last().is_none_or(|&r| (r - t).abs() > 1e-9 * t.max(1.0)) {
        return Err(Error::Misaligned(format!("deterministic path has no sample at t = {t}")));
    }
    Ok(trapezoid(&ts, &ys))
}

/// Weak-form residual of the limit system for one test field.
#[derive(Debug, Clone, Copy)]
pub struct WeakResidual {
    /// Largest absolute residual over time and compartments.
    pub max_abs: f64,
    /// Largest `|<Y_c(t), phi>|` or `|<M_c(t), phi>|` seen, the scale the
    /// residual is measured against.
    pub scale: f64,
}

impl WeakResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_abs / self.scale
        } else {
            self.max_abs
        }
    }
}

/// Residual of
///
/// ```text
/// <Y(t), phi> - int_0^t [<Y, mu Lap phi> + <B(r) Y(r), phi>] dr - <M(t), phi>
/// ```
///
/// per compartment, with trapezoid quadrature over the steps. `combined` and
/// `mart` are sampled at every step and `bar` supplies the drift along the
/// deterministic path.
pub fn weak_residual(
    combined: &[FluctuationState],
    mart: &[FluctuationState],
    bar: &BarCoefficients,
    phi: &LatticeField,
) -> Result<WeakResidual> {
    let n = bar.steps();
    if combined.len() != n + 1 || mart.len() != n + 1 {
        return Err(Error::Misaligned("weak residual needs every step".into()));
    }
    let grid = phi.grid();
    let l = grid.ell();
    let pair = |y: &[f64], c: usize| dot(&y[c * l..(c + 1) * l], phi.values()) * grid.eps();
    // The drift includes mu Lap Y, whose pairing equals <Y, mu Lap phi>.
    let mut buf = vec![0.0; 3 * l];
    let mut integrand = |k: usize| {
        bar.node(k).apply(&combined[k].to_flat(), &mut buf);
        [pair(&buf, 0), pair(&buf, 1), pair(&buf, 2)]
    };
    let mut integral = [0.0; 3];
    let mut prev = integrand(0);
    let mut max_abs: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..=n {
        if k > 0 {
            let cur = integrand(k);
            for c in 0..3 {
                integral[c] += 0.5 * bar.dt * (prev[c] + cur[c]);
            }
            prev = cur;
        }
        let y = combined[k].to_flat();
        let m = mart[k].to_flat();
        for c in 0..3 {
            let (yc, mc) = (pair(&y, c), pair(&m, c));
            max_abs = max_abs.max((yc - integral[c] - mc).abs());
            scale = scale.max(yc.abs()).max(mc.abs());
        }
    }
    Ok(WeakResidual { max_abs, scale })
}
