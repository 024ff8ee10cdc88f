//! Difference operators on a small periodic grid.

use sirlab::grid::{grad_minus, grad_plus, inner, laplacian, Grid, LatticeField};

fn main() -> sirlab::Result<()> {
    let grid = Grid::new(7)?;
    let f = LatticeField::from_sites(grid, |x| (2.0 * std::f64::consts::PI * x).sin() + x * x);
    let g = LatticeField::from_sites(grid, |x| (4.0 * std::f64::consts::PI * x).cos());

    let lap = laplacian(&f);
    let factored = grad_minus(&grad_plus(&f));
    println!("max |Lap f - grad- grad+ f| = {:e}", lap.zip_map(&factored, |a, b| a - b).max_abs());
    println!("sum of Lap f               = {:e}", lap.sum());
    let lhs = inner(&grad_plus(&f), &g)?;
    let rhs = -inner(&f, &grad_minus(&g))?;
    println!("<grad+ f, g> = {lhs:.12}, -<f, grad- g> = {rhs:.12}");
    Ok(())
}
