//! All acceptance checks at reduced sizes. Pass `full` to use the full sizes;
//! the reduced ensembles are too small for the statistical bands of 6 to 8.

use sirlab::deterministic::Preset;
use sirlab::verify::{run_all, VerifySettings};

fn main() -> sirlab::Result<()> {
    let full = std::env::args().any(|a| a == "full");
    let settings = if full { VerifySettings::default() } else { VerifySettings::quick() };
    for r in run_all(&settings, &Preset::default(), 20240917)? {
        println!("criterion {} {}: {}", r.criterion, r.title, if r.pass() { "PASS" } else { "FAIL" });
        for v in &r.verdicts {
            println!("    {} = {:.4e} ({})", v.criterion, v.statistic, v.band);
        }
    }
    Ok(())
}
