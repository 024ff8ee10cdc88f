//! The acceptance experiments. Each check returns its verdicts together with
//! the numbers behind them as plain tables.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deterministic::{
    aligned_step, integrate_ode, lower_bound_certificate, lower_bound_floor, refine_compare, step_count,
    uniform_sample_times, Compartment, ModelParams, Preset, SirState, Trajectory,
};
use crate::error::{Error, Result};
use crate::fluctuation::{psi, DriftConvention, OuCoefficients};
use crate::grid::{grad_minus, grad_plus, inner, laplacian, Grid, LatticeField};
use crate::jump::{gillespie, JumpState};
use crate::rng::{derive_replica_seed, normal, replica_rng, rng_from_seed, uniform, SimRng};
use crate::spde_limit::{
    bracket_quadrature_discrete, limit_bracket_mode, limit_cov_functional, states_on_steps, weak_residual,
    BarCoefficients, LimitEngine, MartingaleCoefficients,
};
use crate::spectral::{basis_field, eigenvalue_discrete, modes, Basis, Mode};
use crate::stats::{
    band_fraction, empirical_moments, loglog_slope, lyapunov_cov, normality_test, sup_norm_error, Verdict,
    BOOTSTRAP_RESAMPLES,
};

/// Sizes of every acceptance experiment. The defaults are the full suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub identity_ells: Vec<usize>,
    pub identity_fields: usize,
    pub spectral_ell: usize,
    pub semigroup_times: Vec<f64>,
    pub refine_ells: Vec<usize>,
    pub refine_reference_ell: usize,
    pub refine_t: f64,
    pub lln_ell: usize,
    pub lln_t: f64,
    pub lln_populations: Vec<u64>,
    pub lln_replicas: usize,
    pub lln_dt: f64,
    pub clt_ell: usize,
    pub clt_population: u64,
    pub clt_t: f64,
    pub clt_replicas: usize,
    pub clt_dt: f64,
    pub functionals: usize,
    pub bracket_ells: Vec<usize>,
    pub bracket_reference_ell: usize,
    pub bracket_t: f64,
    pub bracket_dt: f64,
    pub mc_ell: usize,
    pub mc_dt: f64,
    pub mc_paths: usize,
    pub spde_ell: usize,
    pub spde_surrogate_ell: usize,
    pub spde_t: f64,
    pub spde_dt: f64,
    pub spde_paths: usize,
    pub spde_modes: Vec<usize>,
    pub residual_fields: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            identity_ells: vec![3, 5, 31, 101],
            identity_fields: 100,
            spectral_ell: 31,
            semigroup_times: vec![0.01, 0.1, 1.0],
            refine_ells: vec![9, 27, 81],
            refine_reference_ell: 243,
            refine_t: 1.0,
            lln_ell: 11,
            lln_t: 1.0,
            lln_populations: vec![1_000, 10_000, 100_000],
            lln_replicas: 20,
            lln_dt: 0.01,
            clt_ell: 5,
            clt_population: 100_000,
            clt_t: 0.5,
            clt_replicas: 2000,
            clt_dt: 1e-3,
            functionals: 20,
            bracket_ells: vec![9, 27, 81],
            bracket_reference_ell: 243,
            bracket_t: 0.5,
            bracket_dt: 1e-4,
            mc_ell: 27,
            mc_dt: 1e-3,
            mc_paths: 2000,
            spde_ell: 27,
            spde_surrogate_ell: 81,
            spde_t: 0.5,
            spde_dt: 1e-3,
            spde_paths: 2000,
            spde_modes: vec![2, 4],
            residual_fields: 5,
        }
    }
}

impl VerifySettings {
    /// A reduced suite that runs in seconds. Its Monte Carlo verdicts are
    /// not meaningful at these sizes.
    pub fn quick() -> Self {
        Self {
            identity_ells: vec![3, 5, 31],
            identity_fields: 10,
            refine_reference_ell: 81,
            refine_ells: vec![3, 9, 27],
            refine_t: 0.2,
            lln_t: 0.2,
            lln_populations: vec![100, 1_000, 10_000],
            lln_replicas: 4,
            clt_population: 10_000,
            clt_t: 0.1,
            clt_replicas: 40,
            functionals: 4,
            bracket_ells: vec![3, 9, 27],
            bracket_reference_ell: 81,
            bracket_t: 0.1,
            bracket_dt: 1e-3,
            mc_ell: 9,
            mc_paths: 40,
            spde_ell: 9,
            spde_surrogate_ell: 27,
            spde_t: 0.1,
            spde_dt: 2e-3,
            spde_paths: 40,
            ..Self::default()
        }
    }
}

/// Named numeric table; the first row of the CSV is `header`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Report {
    pub criterion: usize,
    pub title: String,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

fn seed_for(master: u64, criterion: u64) -> u64 {
    derive_replica_seed(master, criterion)
}

fn random_field(grid: Grid, rng: &mut SimRng) -> LatticeField {
    LatticeField::new(grid, (0..grid.ell()).map(|_| 2.0 * uniform(rng) - 1.0).collect()).expect("length matches")
}

fn rel(err: f64, scale: f64) -> f64 {
    err.abs() / scale.abs().max(1.0)
}

fn le_verdict(name: &str, stat: f64, tol: f64) -> Verdict {
    Verdict::new(name, stat, format!("<= {tol:e}"), stat <= tol)
}

/// Summation by parts, `Lap = grad- grad+`, mass neutrality and the
/// gradient-norm identity on random fields. Errors are relative to the size
/// of the terms, floored at one.
pub fn check_operator_identities(settings: &VerifySettings, master_seed: u64) -> Result<Report> {
    let mut rng = rng_from_seed(seed_for(master_seed, 1));
    let mut table = Table::new("identities", &["ell", "sbp", "lap_factor", "mass", "grad_norm"]);
    let mut worst = [0.0f64; 4];
    for &ell in &settings.identity_ells {
        let grid = Grid::new(ell)?;
        let basis = Basis::new(grid);
        let one = LatticeField::constant(grid, 1.0);
        let mut errs = [0.0f64; 4];
        for _ in 0..settings.identity_fields {
            let f = random_field(grid, &mut rng);
            let g = random_field(grid, &mut rng);
            let a = inner(&grad_plus(&f), &g)?;
            let b = inner(&f, &grad_minus(&g))?;
            errs[0] = errs[0].max(rel(a + b, a.abs().max(b.abs())));
            let lap = laplacian(&f);
            let composed = grad_minus(&grad_plus(&f));
            errs[1] = errs[1].max(rel(lap.zip_map(&composed, |x, y| x - y).max_abs(), lap.max_abs()));
            let mass = inner(&lap, &one)?;
            let abs_mass: f64 = lap.values().iter().map(|v| v.abs()).sum::<f64>() * grid.eps();
            errs[2] = errs[2].max(rel(mass, abs_mass));
            for gamma in [0.0, 1.0] {
                let direct = basis.sobolev_norm_discrete(&grad_plus(&f), -gamma)?;
                let spectral = basis.grad_norm_spectral(&f, gamma)?;
                errs[3] = errs[3].max(rel(direct * direct - spectral * spectral, direct * direct));
            }
        }
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        table.rows.push(vec![ell as f64, errs[0], errs[1], errs[2], errs[3]]);
    }
    let names = ["1 summation by parts", "1 Lap = grad- grad+", "1 mass neutrality", "1 gradient-norm identity"];
    Ok(Report {
        criterion: 1,
        title: "operator identities".into(),
        verdicts: names.iter().zip(worst).map(|(n, e)| le_verdict(n, e, 1e-10)).collect(),
        tables: vec![table],
    })
}

fn dense_laplacian(grid: Grid) -> DMatrix<f64> {
    let l = grid.ell();
    let mut m = DMatrix::zeros(l, l);
    for j in 0..l {
        let mut e = LatticeField::zeros(grid);
        e.values_mut()[j] = 1.0;
        let col = laplacian(&e);
        for i in 0..l {
            m[(i, j)] = col.values()[i];
        }
    }
    m
}

/// Eigen residuals of every mode and the semigroup against a dense matrix
/// exponential.
pub fn check_spectral(settings: &VerifySettings, master_seed: u64) -> Result<Report> {
    let grid = Grid::new(settings.spectral_ell)?;
    let basis = Basis::new(grid);
    let mut eig = Table::new("eigen_residuals", &["position", "m", "lambda", "residual"]);
    let mut worst_eig: f64 = 0.0;
    for (k, &mode) in basis.modes().iter().enumerate() {
        let phi = basis_field(mode, grid)?;
        let lam = eigenvalue_discrete(mode.m, grid.eps())?;
        let res = laplacian(&phi).zip_map(&phi, |a, b| a + lam * b).max_abs() / lam.max(1.0);
        worst_eig = worst_eig.max(res);
        eig.rows.push(vec![k as f64, mode.m as f64, lam, res]);
    }
    let mut rng = rng_from_seed(seed_for(master_seed, 2));
    let f = random_field(grid, &mut rng);
    let lap = dense_laplacian(grid);
    let fv = nalgebra::DVector::from_column_slice(f.values());
    let mut semi = Table::new("semigroup", &["t", "relative_error"]);
    let mut worst_semi: f64 = 0.0;
    for &t in &settings.semigroup_times {
        let oracle = (&lap * t).exp() * &fv;
        let got = basis.semigroup_apply(t, 1.0, &f)?;
        let diff = got.values().iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let e = diff / oracle.amax();
        worst_semi = worst_semi.max(e);
        semi.rows.push(vec![t, e]);
    }
    Ok(Report {
        criterion: 2,
        title: "spectral correctness".into(),
        verdicts: vec![
            le_verdict("2 eigen residual", worst_eig, 1e-10),
            le_verdict("2 semigroup vs matrix exponential", worst_semi, 1e-8),
        ],
        tables: vec![eig, semi],
    })
}

fn det_path(preset: &Preset, grid: Grid, t_end: f64, h: f64, stride: usize) -> Result<(ModelParams, Trajectory<SirState>)> {
    let params = preset.params(grid)?;
    let s0 = preset.initial_state(grid)?;
    let n = step_count(t_end, h)?;
    let det = integrate_ode(&s0, &params, t_end, h, &uniform_sample_times(n, h, stride))?;
    Ok((params, det))
}

/// Mass conservation, the lower bound on `A`, and refinement towards a fine
/// reference grid.
pub fn check_deterministic(settings: &VerifySettings, preset: &Preset) -> Result<Report> {
    let t_end = settings.refine_t;
    let mut verdicts = Vec::new();
    let mut mass_table = Table::new("mass", &["ell", "mass_drift", "min_a", "floor"]);
    let mut worst_mass: f64 = 0.0;
    let mut floor_ok = true;
    let mut floor_margin = f64::INFINITY;
    for &ell in &settings.refine_ells {
        let grid = Grid::new(ell)?;
        let h = aligned_step(t_end, preset.params(grid)?.stable_step().min(1e-2));
        let (_, det) = det_path(preset, grid, t_end, h, 1)?;
        let mass = |st: &SirState| st.total().sum() * grid.eps();
        let m0 = mass(&det.states[0]);
        let drift = det.states.iter().map(|st| (mass(st) - m0).abs()).fold(0.0, f64::max);
        let min_a = lower_bound_certificate(&det);
        let floor = lower_bound_floor(preset.s_floor(), preset.beta_bar(), t_end);
        worst_mass = worst_mass.max(drift);
        floor_ok &= min_a >= floor;
        floor_margin = floor_margin.min(min_a - floor);
        mass_table.rows.push(vec![ell as f64, drift, min_a, floor]);
    }
    verdicts.push(le_verdict("3 mass conservation", worst_mass, 1e-9));
    verdicts.push(Verdict::new("3 lower bound min A - c exp(-beta T)", floor_margin, ">= 0", floor_ok));
    let mut refine = Table::new("refinement", &["ell", "error"]);
    let errs = settings
        .refine_ells
        .iter()
        .map(|&ell| refine_compare(preset, ell, settings.refine_reference_ell, t_end, 11))
        .collect::<Result<Vec<_>>>()?;
    for (&ell, &e) in settings.refine_ells.iter().zip(&errs) {
        refine.rows.push(vec![ell as f64, e]);
    }
    for (k, w) in errs.windows(2).enumerate() {
        let ratio = w[0] / w[1];
        verdicts.push(Verdict::new(
            format!("3 refinement ratio {}->{}", settings.refine_ells[k], settings.refine_ells[k + 1]),
            ratio,
            ">= 2",
            ratio >= 2.0,
        ));
    }
    Ok(Report {
        criterion: 3,
        title: "deterministic integrity".into(),
        verdicts,
        tables: vec![mass_table, refine],
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Jump replicas started from the rounded initial data, with the
/// deterministic path started from the same proportions.
fn jump_ensemble(
    preset: &Preset,
    grid: Grid,
    population: u64,
    t_end: f64,
    h: f64,
    stride: usize,
    replicas: usize,
    seed: u64,
) -> Result<(Trajectory<SirState>, Vec<Trajectory<JumpState>>)> {
    let params = preset.params(grid)?;
    let js0 = JumpState::from_proportions(&preset.initial_state(grid)?, population)?;
    let n = step_count(t_end, h)?;
    let times = uniform_sample_times(n, h, stride);
    let det = integrate_ode(&js0.to_proportions()?, &params, t_end, h, &times)?;
    let runs = (0..replicas)
        .into_par_iter()
        .map(|r| gillespie(&js0, &params, t_end, derive_replica_seed(seed, r as u64), &times).map(|run| run.trajectory))
        .collect::<Result<Vec<_>>>()?;
    Ok((det, runs))
}

/// Median sup-norm distance to the deterministic path against population.
pub fn check_lln(settings: &VerifySettings, preset: &Preset, master_seed: u64) -> Result<Report> {
    let grid = Grid::new(settings.lln_ell)?;
    let h = aligned_step(settings.lln_t, preset.params(grid)?.stable_step().min(settings.lln_dt));
    let stride = (settings.lln_dt / h).round().max(1.0) as usize;
    let base = seed_for(master_seed, 4);
    let mut table = Table::new("lln", &["population", "replica", "sup_error"]);
    let mut medians = Vec::new();
    for (j, &pop) in settings.lln_populations.iter().enumerate() {
        let (det, runs) = jump_ensemble(
            preset,
            grid,
            pop,
            settings.lln_t,
            h,
            stride,
            settings.lln_replicas,
            derive_replica_seed(base, j as u64),
        )?;
        let mut errs = Vec::with_capacity(runs.len());
        for (r, run) in runs.iter().enumerate() {
            let props = Trajectory::new(
                run.times.clone(),
                run.states.iter().map(|s| s.to_proportions()).collect::<Result<Vec<_>>>()?,
            )?;
            let e = sup_norm_error(&props, &det)?;
            table.rows.push(vec![pop as f64, r as f64, e]);
            errs.push(e);
        }
        medians.push(median(errs));
    }
    let pops: Vec<f64> = settings.lln_populations.iter().map(|&p| p as f64).collect();
    let slope = loglog_slope(&pops, &medians)?;
    let mut med = Table::new("lln_medians", &["population", "median_sup_error"]);
    med.rows = pops.iter().zip(&medians).map(|(p, m)| vec![*p, *m]).collect();
    Ok(Report {
        criterion: 4,
        title: "law of large numbers".into(),
        verdicts: vec![Verdict::new(
            "4 log-log slope of median sup error",
            slope,
            "[-0.65, -0.35]",
            (-0.65..=-0.35).contains(&slope),
        )],
        tables: vec![table, med],
    })
}

fn cov_table(name: &str, emp: &crate::stats::Moments, oracle: &DMatrix<f64>) -> Table {
    let mut t = Table::new(name, &["i", "j", "empirical", "se", "oracle"]);
    for i in 0..oracle.nrows() {
        for j in 0..=i {
            t.rows.push(vec![i as f64, j as f64, emp.cov[(i, j)], emp.cov_se[(i, j)], oracle[(i, j)]]);
        }
    }
    t
}

/// Covariance of the rescaled jump deviation and of the fixed-spacing OU
/// system against the Lyapunov oracle, and normality of random linear
/// functionals of the jump deviation.
pub fn check_clt(settings: &VerifySettings, preset: &Preset, master_seed: u64) -> Result<(Report, Report)> {
    let grid = Grid::new(settings.clt_ell)?;
    let params = preset.params(grid)?;
    let t_end = settings.clt_t;
    let dt = aligned_step(t_end, params.stable_step().min(settings.clt_dt));
    let seed = seed_for(master_seed, 5);
    let (det_ends, runs) = jump_ensemble(
        preset,
        grid,
        settings.clt_population,
        t_end,
        dt,
        step_count(t_end, dt)?,
        settings.clt_replicas,
        derive_replica_seed(seed, 0),
    )?;
    let samples: Vec<Vec<f64>> = runs
        .iter()
        .map(|run| Ok(psi(run, &det_ends)?.last().expect("two samples").to_flat()))
        .collect::<Result<_>>()?;
    let z0 = &det_ends.states[0];
    let oracle = lyapunov_cov(z0, &params, t_end, dt, DriftConvention::Exact)?;
    let emp = empirical_moments(&samples, BOOTSTRAP_RESAMPLES, derive_replica_seed(seed, 1))?;
    let frac = band_fraction(&emp.cov, &emp.cov_se, &oracle, 4.0);

    let n = step_count(t_end, dt)?;
    let det_all = integrate_ode(z0, &params, t_end, dt, &uniform_sample_times(n, dt, 1))?;
    let ou = OuCoefficients::new(&det_all, &params, t_end, dt, DriftConvention::Exact)?;
    let ou_seed = derive_replica_seed(seed, 2);
    let zero = vec![0.0; 3 * grid.ell()];
    let ou_samples: Vec<Vec<f64>> = (0..settings.clt_replicas)
        .into_par_iter()
        .map(|p| {
            let mut rng = replica_rng(ou_seed, p as u64);
            ou.simulate_path(&mut rng, &zero, true, &[n]).pop().expect("one record")
        })
        .collect();
    let ou_emp = empirical_moments(&ou_samples, BOOTSTRAP_RESAMPLES, derive_replica_seed(seed, 3))?;
    let ou_frac = band_fraction(&ou_emp.cov, &ou_emp.cov_se, &oracle, 4.0);

    let reduced = lyapunov_cov(z0, &params, t_end, dt, DriftConvention::Reduced)?;
    let reduced_frac = band_fraction(&emp.cov, &emp.cov_se, &reduced, 4.0);
    let mut conv = Table::new("clt_conventions", &["convention", "jump_band_fraction"]);
    conv.rows.push(vec![0.0, frac]);
    conv.rows.push(vec![1.0, reduced_frac]);

    let clt = Report {
        criterion: 5,
        title: "central limit theorem at fixed spacing".into(),
        verdicts: vec![
            Verdict::new("5 jump covariance within 4 SE", frac, ">= 0.95", frac >= 0.95),
            Verdict::new("5 OU covariance within 4 SE", ou_frac, ">= 0.95", ou_frac >= 0.95),
        ],
        tables: vec![cov_table("clt_jump_cov", &emp, &oracle), cov_table("clt_ou_cov", &ou_emp, &oracle), conv],
    };

    let mut rng = rng_from_seed(derive_replica_seed(seed, 4));
    let mut jb = Table::new("normality", &["functional", "statistic", "skewness", "excess_kurtosis", "pass"]);
    let mut passed = 0;
    for k in 0..settings.functionals {
        let a: Vec<f64> = (0..samples[0].len()).map(|_| normal(&mut rng)).collect();
        let proj: Vec<f64> = samples.iter().map(|s| s.iter().zip(&a).map(|(x, y)| x * y).sum()).collect();
        let res = match normality_test(&proj) {
            Ok(r) => r,
            Err(Error::InvalidArgument(_)) if proj.len() < crate::stats::JB_MIN_SAMPLES => {
                return Ok((clt, too_few_for_normality(settings.functionals)));
            }
            Err(e) => return Err(e),
        };
        passed += res.pass as usize;
        jb.rows.push(vec![k as f64, res.statistic, res.skewness, res.excess_kurtosis, res.pass as u8 as f64]);
    }
    let need = (settings.functionals * 9).div_ceil(10);
    let gauss = Report {
        criterion: 6,
        title: "Gaussianity".into(),
        verdicts: vec![Verdict::new(
            "6 Jarque-Bera passes at 0.01",
            passed as f64,
            format!(">= {need} of {}", settings.functionals),
            passed >= need,
        )],
        tables: vec![jb],
    };
    Ok((clt, gauss))
}

fn too_few_for_normality(functionals: usize) -> Report {
    Report {
        criterion: 6,
        title: "Gaussianity".into(),
        verdicts: vec![Verdict::new(
            "6 Jarque-Bera passes at 0.01",
            0.0,
            format!("needs >= {} replicas for {functionals} functionals", crate::stats::JB_MIN_SAMPLES),
            false,
        )],
        tables: Vec::new(),
    }
}

/// Refinement of the discrete martingale bracket and its Monte Carlo check.
pub fn check_bracket(settings: &VerifySettings, preset: &Preset, master_seed: u64) -> Result<Report> {
    let mode = Mode::cos(2)?;
    let t_end = settings.bracket_t;
    let dt = settings.bracket_dt;
    let reference = Grid::new(settings.bracket_reference_ell)?;
    let (ref_params, ref_det) = det_path(preset, reference, t_end, dt, 1)?;
    let limit = limit_bracket_mode(mode, &ref_det, &ref_params)?;
    let mut table = Table::new("bracket_refinement", &["ell", "discrete", "limit", "error"]);
    let mut errs = Vec::new();
    for &ell in &settings.bracket_ells {
        let grid = Grid::new(ell)?;
        let (params, det) = det_path(preset, grid, t_end, dt, 1)?;
        let b = bracket_quadrature_discrete(&basis_field(mode, grid)?, &det, &params)?;
        errs.push((b - limit).abs());
        table.rows.push(vec![ell as f64, b, limit, (b - limit).abs()]);
    }
    let mut verdicts = Vec::new();
    for (k, w) in errs.windows(2).enumerate() {
        let ratio = w[0] / w[1];
        verdicts.push(Verdict::new(
            format!("7 bracket error ratio {}->{}", settings.bracket_ells[k], settings.bracket_ells[k + 1]),
            ratio,
            "[1.5, 3]",
            (1.5..=3.0).contains(&ratio),
        ));
    }

    let grid = Grid::new(settings.mc_ell)?;
    let (params, det) = det_path(preset, grid, t_end, settings.mc_dt, 1)?;
    let phi = basis_field(mode, grid)?;
    let quad = bracket_quadrature_discrete(&phi, &det, &params)?;
    let cross = crate::spde_limit::cross_bracket_quadrature(
        (Compartment::S, &phi),
        (Compartment::I, &phi),
        &det,
        &params,
    )?;
    let mart = MartingaleCoefficients::new(&det, &params, t_end, settings.mc_dt)?;
    let engine = LimitEngine::new(mart, None, &params, 1.0)?;
    let n = engine.steps();
    let l = grid.ell();
    let pairs = engine.map_paths(settings.mc_paths, seed_for(master_seed, 7), &[n], |rec| {
        let m = &rec.martingale[0];
        let p = |c: usize| crate::grid::dot(&m[c * l..(c + 1) * l], phi.values()) * grid.eps();
        vec![p(0), p(1)]
    });
    let emp = empirical_moments(&pairs, BOOTSTRAP_RESAMPLES, seed_for(master_seed, 70))?;
    let z_var = (emp.cov[(0, 0)] - quad).abs() / emp.cov_se[(0, 0)];
    let z_cross = (emp.cov[(1, 0)] - cross).abs() / emp.cov_se[(1, 0)];
    let mut mc = Table::new("bracket_monte_carlo", &["quantity", "empirical", "se", "quadrature"]);
    mc.rows.push(vec![0.0, emp.cov[(0, 0)], emp.cov_se[(0, 0)], quad]);
    mc.rows.push(vec![1.0, emp.cov[(1, 0)], emp.cov_se[(1, 0)], cross]);
    verdicts.push(Verdict::new("7 Monte Carlo bracket of <M^S, phi_2>", z_var, "<= 4 SE", z_var <= 4.0));
    verdicts.push(Verdict::new("7 Monte Carlo cross bracket of M^S and M^I", z_cross, "<= 4 SE", z_cross <= 4.0));
    Ok(Report {
        criterion: 7,
        title: "martingale covariance convergence".into(),
        verdicts,
        tables: vec![table, mc],
    })
}

fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Frozen-coefficient mode variances, the covariance functional along the
/// preset path, and the weak residual of the combined limit.
pub fn check_spde(settings: &VerifySettings, preset: &Preset, master_seed: u64) -> Result<Report> {
    let grid = Grid::new(settings.spde_ell)?;
    let t_end = settings.spde_t;
    let dt = settings.spde_dt;
    let n = step_count(t_end, dt)?;
    let seed = seed_for(master_seed, 8);
    let basis = Basis::new(grid);
    let l = grid.ell();
    let mut verdicts = Vec::new();

    // Frozen coefficients: constant rates and state.
    let frozen = Preset {
        beta_amp: 0.0,
        alpha_amp: 0.0,
        ..preset.clone()
    };
    let fparams = frozen.params(grid)?;
    let (s, i, r) = (frozen.s0, frozen.i0, frozen.r0);
    let st = SirState {
        s: LatticeField::constant(grid, s),
        i: LatticeField::constant(grid, i),
        r: LatticeField::constant(grid, r),
    };
    let fdet = Trajectory::new(uniform_sample_times(n, dt, 1), vec![st; n + 1])?;
    let engine = LimitEngine::new(MartingaleCoefficients::new(&fdet, &fparams, t_end, dt)?, None, &fparams, 1.0)?;
    let test_modes: Vec<Mode> = settings
        .spde_modes
        .iter()
        .flat_map(|&m| [Mode::cos(m), Mode::sin(m)])
        .collect::<Result<_>>()?;
    let coeffs = engine.map_paths(settings.spde_paths, derive_replica_seed(seed, 0), &[n], |rec| {
        let u = &rec.linear[0][..l];
        test_modes
            .iter()
            .map(|md| crate::grid::dot(u, basis.vector(md.position())) * grid.eps())
            .collect::<Vec<f64>>()
    });
    let mu = frozen.mu_s;
    let mut mode_table = Table::new("spde_frozen_modes", &["m", "empirical", "closed_form"]);
    for (k, &m) in settings.spde_modes.iter().enumerate() {
        let lam = eigenvalue_discrete(m, grid.eps())?;
        let q = frozen.b0 * s * i / (s + i + r) + 2.0 * mu * s * lam;
        let expect = q * (1.0 - (-2.0 * mu * lam * t_end).exp()) / (2.0 * mu * lam);
        let col = |j: usize| coeffs.iter().map(|c| c[j]).collect::<Vec<_>>();
        let pooled = 0.5 * (sample_var(&col(2 * k)) + sample_var(&col(2 * k + 1)));
        let dev = (pooled / expect - 1.0).abs();
        mode_table.rows.push(vec![m as f64, pooled, expect]);
        verdicts.push(Verdict::new(
            format!("8 frozen mode m={m} variance relative deviation"),
            dev,
            "<= 0.05",
            dev <= 0.05,
        ));
    }

    // Preset path with the surrogate deterministic solution.
    let params = preset.params(grid)?;
    let sgrid = Grid::new(settings.spde_surrogate_ell)?;
    let (_, sdet) = det_path(preset, sgrid, t_end, dt, 1)?;
    let coarse = Trajectory::new(uniform_sample_times(n, dt, 1), states_on_steps(&sdet, grid, t_end, dt)?)?;
    let bar = BarCoefficients::new(&coarse, &params, t_end, dt, DriftConvention::Exact)?;
    let engine = LimitEngine::new(
        MartingaleCoefficients::new(&coarse, &params, t_end, dt)?,
        Some(bar.clone()),
        &params,
        1.0,
    )?;
    let phi = basis_field(Mode::cos(2)?, grid)?;
    let us: Vec<Vec<f64>> = engine.map_paths(settings.spde_paths, derive_replica_seed(seed, 1), &[n], |rec| {
        vec![crate::grid::dot(&rec.linear[0][..l], phi.values()) * grid.eps()]
    });
    let emp = empirical_moments(&us, BOOTSTRAP_RESAMPLES, derive_replica_seed(seed, 2))?;
    let oracle = limit_cov_functional(&phi, &coarse, &params, t_end)?;
    let z = (emp.cov[(0, 0)] - oracle).abs() / emp.cov_se[(0, 0)];
    let mut cov = Table::new("spde_cov_functional", &["empirical", "se", "oracle"]);
    cov.rows.push(vec![emp.cov[(0, 0)], emp.cov_se[(0, 0)], oracle]);
    verdicts.push(Verdict::new("8 Var <u(T), phi_2> against covariance functional", z, "<= 4 SE", z <= 4.0));

    // Weak residual of one combined path.
    let all: Vec<usize> = (0..=n).collect();
    let rec = engine.simulate_path(&mut rng_from_seed(derive_replica_seed(seed, 3)), &all);
    let to_states = |ys: &[Vec<f64>]| -> Result<Vec<crate::fluctuation::FluctuationState>> {
        ys.iter().map(|y| crate::fluctuation::FluctuationState::from_flat(grid, y)).collect()
    };
    let combined: Vec<Vec<f64>> =
        rec.linear.iter().zip(&rec.bar).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let comb = to_states(&combined)?;
    let mart = to_states(&rec.martingale)?;
    let mut res_table = Table::new("spde_weak_residual", &["field", "max_abs", "scale", "relative"]);
    let mut worst: f64 = 0.0;
    for (k, &md) in modes(grid).iter().take(settings.residual_fields).enumerate() {
        let res = weak_residual(&comb, &mart, &bar, &basis_field(md, grid)?)?;
        worst = worst.max(res.relative());
        res_table.rows.push(vec![k as f64, res.max_abs, res.scale, res.relative()]);
    }
    verdicts.push(Verdict::new(
        "8 weak residual of the combined limit",
        worst,
        format!("<= 10 dt = {:e}", 10.0 * dt),
        worst <= 10.0 * dt,
    ));
    Ok(Report {
        criterion: 8,
        title: "limit SPDE".into(),
        verdicts,
        tables: vec![mode_table, cov, res_table],
    })
}

/// Criteria 1 to 8 in order.
pub fn run_all(settings: &VerifySettings, preset: &Preset, master_seed: u64) -> Result<Vec<Report>> {
    let (clt, gauss) = check_clt(settings, preset, master_seed)?;
    Ok(vec![
        check_operator_identities(settings, master_seed)?,
        check_spectral(settings, master_seed)?,
        check_deterministic(settings, preset)?,
        check_lln(settings, preset, master_seed)?,
        clt,
        gauss,
        check_bracket(settings, preset, master_seed)?,
        check_spde(settings, preset, master_seed)?,
    ])
}
