//! Discrete bracket of the martingale field tested against the first cosine
//! mode, as the grid refines towards its limit.

use sirlab::deterministic::{integrate_ode, step_count, uniform_sample_times, Preset};
use sirlab::grid::Grid;
use sirlab::spde_limit::{bracket_quadrature_discrete, limit_bracket_mode};
use sirlab::spectral::{basis_field, Mode};

fn main() -> sirlab::Result<()> {
    let pre = Preset::default();
    let (t_end, dt) = (0.5, 1e-4);
    let mode = Mode::cos(2)?;
    let path = |ell| -> sirlab::Result<_> {
        let grid = Grid::new(ell)?;
        let params = pre.params(grid)?;
        let n = step_count(t_end, dt)?;
        let det = integrate_ode(&pre.initial_state(grid)?, &params, t_end, dt, &uniform_sample_times(n, dt, 1))?;
        Ok((grid, params, det))
    };
    let (_, ref_params, ref_det) = path(243)?;
    let limit = limit_bracket_mode(mode, &ref_det, &ref_params)?;
    println!("limit bracket: {limit:.6}");
    for ell in [9, 27, 81] {
        let (grid, params, det) = path(ell)?;
        let b = bracket_quadrature_discrete(&basis_field(mode, grid)?, &det, &params)?;
        println!("ell = {ell:>3}: discrete {b:.6}, error {:.3e}", (b - limit).abs());
    }
    Ok(())
}
