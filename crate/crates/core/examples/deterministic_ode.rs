//! The standard preset on a grid of 27 cells, and its refinement error
//! against a finer grid.

use sirlab::deterministic::{
    aligned_step, integrate_ode, lower_bound_certificate, refine_compare, step_count, uniform_sample_times, Preset,
};
use sirlab::grid::Grid;

fn main() -> sirlab::Result<()> {
    let pre = Preset::default();
    let grid = Grid::new(27)?;
    let params = pre.params(grid)?;
    let t_end = 1.0;
    let h = aligned_step(t_end, params.stable_step());
    let n = step_count(t_end, h)?;
    let traj = integrate_ode(&pre.initial_state(grid)?, &params, t_end, h, &uniform_sample_times(n, h, n / 10))?;
    for (t, st) in traj.iter() {
        println!(
            "t = {t:.2}  mean S = {:.5}  mean I = {:.5}  mean R = {:.5}  total = {:.12}",
            st.s.sum() / 27.0,
            st.i.sum() / 27.0,
            st.r.sum() / 27.0,
            st.total().sum() / 27.0
        );
    }
    println!("min A along the path: {:.4}", lower_bound_certificate(&traj));
    for (a, b) in [(9, 27), (27, 81)] {
        println!("step-function distance {a} -> {b}: {:.3e}", refine_compare(&pre, a, b, t_end, 11)?);
    }
    Ok(())
}
