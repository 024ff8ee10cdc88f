//! Eigenpairs of the discrete Laplacian and the heat semigroup.

use sirlab::grid::{Grid, LatticeField};
use sirlab::spectral::{eigenvalue_continuous, Basis};

fn main() -> sirlab::Result<()> {
    let grid = Grid::new(9)?;
    let basis = Basis::new(grid);
    println!("{:>4} {:>5} {:>14} {:>14}", "m", "kind", "lambda_eps", "lambda");
    for (mode, lam) in basis.modes().iter().zip(basis.lambdas()) {
        println!("{:>4} {:>5} {:>14.6} {:>14.6}", mode.m, mode.kind.as_str(), lam, eigenvalue_continuous(mode.m)?);
    }

    // A bump spreads out and keeps its mass.
    let f = LatticeField::from_sites(grid, |x| if (x - 0.5).abs() < 0.15 { 1.0 } else { 0.0 });
    for t in [0.0, 0.01, 0.1, 1.0] {
        let g = basis.semigroup_apply(t, 1.0, &f)?;
        println!("t = {t:<5} max = {:.4} sum = {:.4}", g.max(), g.sum());
    }
    Ok(())
}
