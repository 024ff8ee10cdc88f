//! Fixed-spacing covariance: Lyapunov oracle against the simulated OU system.

use sirlab::deterministic::{integrate_ode, step_count, uniform_sample_times, Preset};
use sirlab::fluctuation::{simulate_ou_fixed_eps, DriftConvention, OuOptions};
use sirlab::grid::Grid;
use sirlab::rng::derive_replica_seed;
use sirlab::stats::{band_fraction, empirical_moments, lyapunov_cov, BOOTSTRAP_RESAMPLES};

fn main() -> sirlab::Result<()> {
    let pre = Preset::default();
    let grid = Grid::new(5)?;
    let params = pre.params(grid)?;
    let (t_end, dt) = (0.5, 1e-3);
    let z0 = pre.initial_state(grid)?;
    let n = step_count(t_end, dt)?;
    let det = integrate_ode(&z0, &params, t_end, dt, &uniform_sample_times(n, dt, 1))?;
    let oracle = lyapunov_cov(&z0, &params, t_end, dt, DriftConvention::Exact)?;

    let paths = 400;
    let samples: Vec<Vec<f64>> = (0..paths)
        .map(|p| {
            let tr = simulate_ou_fixed_eps(&det, &params, t_end, dt, derive_replica_seed(3, p), &[t_end], &OuOptions::default())?;
            Ok(tr.states[0].to_flat())
        })
        .collect::<sirlab::Result<_>>()?;
    let emp = empirical_moments(&samples, BOOTSTRAP_RESAMPLES, 4)?;
    println!("P(T) diagonal, S block: {:?}", (0..5).map(|k| oracle[(k, k)]).collect::<Vec<_>>());
    println!("empirical diagonal:     {:?}", (0..5).map(|k| emp.cov[(k, k)]).collect::<Vec<_>>());
    println!("entries within 4 SE: {:.3}", band_fraction(&emp.cov, &emp.cov_se, &oracle, 4.0));
    Ok(())
}
