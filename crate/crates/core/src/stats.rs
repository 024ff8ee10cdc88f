//! Estimators and oracles: sample moments with bootstrap errors, the
//! Lyapunov covariance equation, error norms, slope fits and a normality
//! test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::deterministic::{rhs_flat, Compartment, ModelParams, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::fluctuation::{diffusion_matrix, drift_jacobian, CovarianceMatrix, DriftConvention};
use crate::grid::LatticeField;
use crate::rng::replica_rng;
use crate::spectral::sobolev_norm_continuous;

/// Critical value of chi-square with two degrees of freedom at level 0.01.
pub const JB_CRITICAL_001: f64 = 9.21;

/// Minimum sample size accepted by [`normality_test`].
pub const JB_MIN_SAMPLES: usize = 500;

/// Default number of bootstrap resamples.
pub const BOOTSTRAP_RESAMPLES: usize = 500;

/// Covariance `P(T)` of the linear SDE along the deterministic path started
/// at `z0`, from `P' = A P + P A^T + Q`, `P(0) = 0`.
///
/// The path and `P` are advanced together by RK4, so the stage states of the
/// path are available to the matrix equation.
pub fn lyapunov_cov(
    z0: &SirState,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    convention: DriftConvention,
) -> Result<CovarianceMatrix> {
    z0.grid().ensure_same(&params.grid())?;
    params.check_step(dt)?;
    let steps = crate::deterministic::step_count(t_end, dt)?;
    let grid = z0.grid();
    let n = 3 * grid.ell();
    let field = |z: &[f64]| {
        let mut dz = vec![0.0; n];
        rhs_flat(params, z, &mut dz);
        dz
    };
    let coeffs = |z: &[f64]| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let st = SirState::from_flat(grid, z)?;
        Ok((drift_jacobian(&st, params, convention)?.to_dense(), diffusion_matrix(&st, params)?))
    };
    lyapunov_rk4(z0.to_flat(), steps, dt, field, coeffs)
}

/// RK4 on the pair `z' = field(z)`, `P' = A(z) P + P A(z)^T + Q(z)`.
fn lyapunov_rk4(
    mut z: Vec<f64>,
    steps: usize,
    dt: f64,
    field: impl Fn(&[f64]) -> Vec<f64>,
    coeffs: impl Fn(&[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
) -> Result<CovarianceMatrix> {
    let n = z.len();
    let rhs = |z: &[f64], p: &DMatrix<f64>| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (a, q) = coeffs(z)?;
        let ap = &a * p;
        Ok((field(z), &ap + ap.transpose() + q))
    };
    let axpy = |z: &[f64], h: f64, d: &[f64]| -> Vec<f64> { z.iter().zip(d).map(|(a, b)| a + h * b).collect() };
    let mut p = DMatrix::<f64>::zeros(n, n);
    for k in 0..steps {
        let (z1, p1) = rhs(&z, &p)?;
        let (z2, p2) = rhs(&axpy(&z, 0.5 * dt, &z1), &(&p + &p1 * (0.5 * dt)))?;
        let (z3, p3) = rhs(&axpy(&z, 0.5 * dt, &z2), &(&p + &p2 * (0.5 * dt)))?;
        let (z4, p4) = rhs(&axpy(&z, dt, &z3), &(&p + &p3 * dt))?;
        for i in 0..n {
            z[i] += dt / 6.0 * (z1[i] + 2.0 * z2[i] + 2.0 * z3[i] + z4[i]);
        }
        p += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (dt / 6.0);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("Lyapunov solution at step {}", k + 1)));
        }
    }
    // Remove rounding asymmetry.
    Ok((&p + p.transpose()) * 0.5)
}

/// Sample moments with bootstrap standard errors.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub mean_se: Vec<f64>,
    pub cov_se: DMatrix<f64>,
    pub replicas: usize,
}

fn mean_cov(samples: &[Vec<f64>], idx: impl Iterator<Item = usize> + Clone) -> (Vec<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for k in idx.clone() {
        for (m, x) in mean.iter_mut().zip(&samples[k]) {
            *m += x;
        }
        count += 1;
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut cov = DMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for k in idx {
        for ((ci, x), m) in c.iter_mut().zip(&samples[k]).zip(&mean) {
            *ci = x - m;
        }
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let denom = (count - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Mean, unbiased covariance and bootstrap standard errors of both, over
/// replicas given in index order. Resample `b` draws its indices from the
/// generator of `derive_replica_seed(seed, b)`.
pub fn empirical_moments(samples: &[Vec<f64>], resamples: usize, seed: u64) -> Result<Moments> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replicas, got {n}")));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Misaligned("replicas have different dimensions".into()));
    }
    let (mean, cov) = mean_cov(samples, 0..n);
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut c1 = DMatrix::<f64>::zeros(d, d);
    let mut c2 = DMatrix::<f64>::zeros(d, d);
    for b in 0..resamples {
        let mut rng = replica_rng(seed, b as u64);
        let idx: Vec<usize> = (0..n).map(|_| (crate::rng::uniform(&mut rng) * n as f64) as usize).collect();
        let (bm, bc) = mean_cov(samples, idx.iter().copied());
        for i in 0..d {
            m1[i] += bm[i];
            m2[i] += bm[i] * bm[i];
        }
        c1 += &bc;
        c2 += bc.component_mul(&bc);
    }
    let r = resamples as f64;
    let sd = |s1: f64, s2: f64| {
        if resamples < 2 {
            return 0.0;
        }
        ((s2 - s1 * s1 / r) / (r - 1.0)).max(0.0).sqrt()
    };
    let mean_se = (0..d).map(|i| sd(m1[i], m2[i])).collect();
    let cov_se = DMatrix::from_fn(d, d, |i, j| sd(c1[(i, j)], c2[(i, j)]));
    Ok(Moments {
        mean,
        cov,
        mean_se,
        cov_se,
        replicas: n,
    })
}

/// Fraction of entries with `|emp - oracle| <= k se` over the lower
/// triangle including the diagonal.
pub fn band_fraction(emp: &DMatrix<f64>, se: &DMatrix<f64>, oracle: &DMatrix<f64>, k: f64) -> f64 {
    let d = emp.nrows();
    let mut hit = 0usize;
    let mut total = 0usize;
    for i in 0..d {
        for j in 0..=i {
            total += 1;
            if (emp[(i, j)] - oracle[(i, j)]).abs() <= k * se[(i, j)] {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

/// `sup_t (|S_a - S_b|_inf + |I_a - I_b|_inf + |R_a - R_b|_inf)`.
pub fn sup_norm_error(a: &Trajectory<SirState>, b: &Trajectory<SirState>) -> Result<f64> {
    if a.len() != b.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::Misaligned("trajectories have different sample times".into()));
    }
    let mut err: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        x.grid().ensure_same(&y.grid())?;
        let e: f64 = Compartment::ALL
            .iter()
            .map(|&c| x.field(c).zip_map(y.field(c), |p, q| p - q).max_abs())
            .sum();
        err = err.max(e);
    }
    Ok(err)
}

/// `|A - B|` in the truncated continuous `H^{-gamma}` norm.
pub fn neg_sobolev_distance(a: &LatticeField, b: &LatticeField, gamma: f64, truncation: usize) -> Result<f64> {
    a.grid().ensure_same(&b.grid())?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    sobolev_norm_continuous(&(a - b), -gamma, truncation)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidArgument("need at least 3 paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera {
    pub statistic: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Zero sample variance; the statistic is undefined and `pass` is false.
    pub degenerate: bool,
    pub pass: bool,
}

/// Jarque-Bera statistic `n/6 (S^2 + K^2/4)` against the 1% chi-square(2)
/// critical value.
pub fn normality_test(samples: &[f64]) -> Result<JarqueBera> {
    let n = samples.len();
    if n < JB_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Jarque-Bera needs at least {JB_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 > 0.0) || m2 <= 1e-300 {
        return Ok(JarqueBera {
            statistic: f64::NAN,
            skewness: f64::NAN,
            excess_kurtosis: f64::NAN,
            degenerate: true,
            pass: false,
        });
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let statistic = nf / 6.0 * (skew * skew + kurt * kurt / 4.0);
    Ok(JarqueBera {
        statistic,
        skewness: skew,
        excess_kurtosis: kurt,
        degenerate: false,
        pass: statistic <= JB_CRITICAL_001,
    })
}

/// One acceptance outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub statistic: f64,
    pub band: String,
    pub pass: bool,
}

impl Verdict {
    pub fn new(criterion: impl Into<String>, statistic: f64, band: impl Into<String>, pass: bool) -> Self {
        Self {
            criterion: criterion.into(),
            statistic,
            band: band.into(),
            pass,
        }
    }
}
