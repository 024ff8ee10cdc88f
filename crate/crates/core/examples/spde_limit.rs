//! One path of the limit fluctuation field with a nonzero forced part, and
//! its negative-order norm over time.

use sirlab::deterministic::{integrate_ode, step_count, uniform_sample_times, Preset};
use sirlab::grid::Grid;
use sirlab::spde_limit::{simulate_limit, SpdeOptions};
use sirlab::spectral::sobolev_norm_continuous;

fn main() -> sirlab::Result<()> {
    let pre = Preset::default();
    let (t_end, dt) = (0.5, 1e-3);
    let grid = Grid::new(27)?;
    let params = pre.params(grid)?;
    // Coefficients come from a finer deterministic surrogate.
    let fine = Grid::new(81)?;
    let n = step_count(t_end, dt)?;
    let det = integrate_ode(&pre.initial_state(fine)?, &pre.params(fine)?, t_end, dt, &uniform_sample_times(n, dt, 1))?;

    let times: Vec<f64> = (0..=5).map(|k| k as f64 * 0.1).collect();
    let lim = simulate_limit(&det, &params, t_end, dt, 42, &times, &SpdeOptions::default())?;
    for (k, u) in lim.combined().iter().enumerate() {
        let [s, i, r] = u.fields();
        println!(
            "t = {:.1}: |U|_-1 = {:.4}  |V|_-1 = {:.4}  |W|_-1 = {:.4}",
            times[k],
            sobolev_norm_continuous(s, -1.0, 64)?,
            sobolev_norm_continuous(i, -1.0, 64)?,
            sobolev_norm_continuous(r, -1.0, 64)?
        );
    }
    Ok(())
}
