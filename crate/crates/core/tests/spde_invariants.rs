//! Statistical invariants of the limit fields: centred martingales,
//! uncorrelated increments, and negative-order norms that stay bounded as
//! the grid refines.

use sirlab::deterministic::{integrate_ode, step_count, uniform_sample_times, ModelParams, Preset, SirState, Trajectory};
use sirlab::grid::Grid;
use sirlab::spde_limit::{LimitEngine, MartingaleCoefficients};
use sirlab::spectral::{basis_field, sobolev_norm_continuous, Mode};
use sirlab::grid::LatticeField;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const T: f64 = 0.25;
const DT: f64 = 1e-3;

/// Deterministic path on a fine surrogate grid, sampled at every step.
fn surrogate(ell: usize) -> Trajectory<SirState> {
    let grid = Grid::new(ell).unwrap();
    let pre = Preset::default();
    let params = pre.params(grid).unwrap();
    let n = step_count(T, DT).unwrap();
    integrate_ode(&pre.initial_state(grid).unwrap(), &params, T, DT, &uniform_sample_times(n, DT, 1)).unwrap()
}

fn engine(ell: usize, det: &Trajectory<SirState>) -> (LimitEngine, ModelParams) {
    let grid = Grid::new(ell).unwrap();
    let params = Preset::default().params(grid).unwrap();
    let mart = MartingaleCoefficients::new(det, &params, T, DT).unwrap();
    (LimitEngine::new(mart, None, &params, 1.0).unwrap(), params)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn martingales_and_linear_part_are_centred() {
    let det = surrogate(81);
    let (eng, _) = engine(27, &det);
    let grid = eng.grid();
    let l = grid.ell();
    let phi = basis_field(Mode::cos(2).unwrap(), grid).unwrap();
    let n = eng.steps();
    let vals = eng.map_paths(800, 11, &[n], |rec| {
        let pair = |v: &[f64], c: usize| dot(&v[c * l..(c + 1) * l], phi.values()) * grid.eps();
        (0..3)
            .map(|c| pair(&rec.martingale[0], c))
            .chain((0..3).map(|c| pair(&rec.linear[0], c)))
            .collect::<Vec<f64>>()
    });
    for q in 0..6 {
        let xs: Vec<f64> = vals.iter().map(|v| v[q]).collect();
        let (m, se) = mean_se(&xs);
        assert!(m.abs() <= 4.0 * se, "quantity {q}: mean {m} with SE {se}");
    }
}

#[test]
fn martingale_increments_are_uncorrelated() {
    let det = surrogate(81);
    let (eng, _) = engine(27, &det);
    let grid = eng.grid();
    let l = grid.ell();
    let phi = basis_field(Mode::sin(2).unwrap(), grid).unwrap();
    let n = eng.steps();
    let pairs = eng.map_paths(1000, 12, &[n / 2, n], |rec| {
        let pair = |v: &[f64]| dot(&v[l..2 * l], phi.values()) * grid.eps();
        let a = pair(&rec.martingale[0]);
        (a, pair(&rec.martingale[1]) - a)
    });
    let k = pairs.len() as f64;
    let (ma, _) = mean_se(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let (mb, _) = mean_se(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / (k - 1.0);
    let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / (k - 1.0);
    let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / (k - 1.0);
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() <= 4.0 / k.sqrt(), "increment correlation {corr}");
}

#[test]
fn negative_sobolev_norm_stays_bounded_under_refinement() {
    let det = surrogate(81);
    let mut means = Vec::new();
    for ell in [9, 27, 81] {
        let (eng, _) = engine(ell, &det);
        let grid = eng.grid();
        let l = grid.ell();
        let n = eng.steps();
        let norms = eng.map_paths(200, 13, &[n], |rec| {
            let u = LatticeField::new(grid, rec.linear[0][..l].to_vec()).unwrap();
            sobolev_norm_continuous(&u, -1.0, 64).unwrap().powi(2)
        });
        let (m, _) = mean_se(&norms);
        assert!(m.is_finite() && m > 0.0);
        means.push(m);
    }
    // The mean square settles as cells shrink rather than blowing up.
    let growth = means[2] / means[1];
    assert!((0.8..=1.25).contains(&growth), "H^-1 mean squares {means:?}");
    assert!(means[2] <= 2.0 * means[0], "H^-1 mean squares {means:?}");
}
