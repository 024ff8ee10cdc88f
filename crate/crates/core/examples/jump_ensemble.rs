//! Exact simulation of the jump process and the LLN error at three
//! population sizes.

use sirlab::deterministic::{integrate_ode, step_count, uniform_sample_times, Preset, Trajectory};
use sirlab::grid::Grid;
use sirlab::jump::{gillespie, JumpState};
use sirlab::rng::derive_replica_seed;
use sirlab::stats::sup_norm_error;

fn main() -> sirlab::Result<()> {
    let pre = Preset::default();
    let grid = Grid::new(11)?;
    let params = pre.params(grid)?;
    let (t_end, h) = (0.5, 0.01);
    let n = step_count(t_end, h)?;
    let times = uniform_sample_times(n, h, 10);
    let z0 = pre.initial_state(grid)?;
    let det = integrate_ode(&z0, &params, t_end, h, &times)?;

    for pop in [1_000u64, 10_000, 100_000] {
        let start = JumpState::from_proportions(&z0, pop)?;
        let mut errs = Vec::new();
        let mut events = 0;
        for r in 0..5 {
            let run = gillespie(&start, &params, t_end, derive_replica_seed(1, r), &times)?;
            events += run.events;
            let states = run.trajectory.states.iter().map(|s| s.to_proportions()).collect::<Result<Vec<_>, _>>()?;
            errs.push(sup_norm_error(&Trajectory::new(times.clone(), states)?, &det)?);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        println!("N = {pop:>6}: mean sup error {mean:.4e}, {} events per run", events / 5);
    }
    Ok(())
}
