//! Run the gradient-check suite and print one row per case and seed.
//!
//! `cargo run --release --example grad_check -- [filter]`

use std::time::Instant;

use cirnet::gradsuite::{run, DEFAULT_TOL};

fn main() -> anyhow::Result<()> {
    let filter = std::env::args().nth(1);
    let start = Instant::now();
    let rows = run(&[0, 1, 2, 3, 4], DEFAULT_TOL, filter.as_deref())?;
    println!(
        "{:<28} {:>4} {:>12} {:>8} {:>8}  result",
        "case", "seed", "max_rel_err", "checked", "skipped"
    );
    for r in &rows {
        println!(
            "{:<28} {:>4} {:>12.3e} {:>8} {:>8}  {}",
            r.name,
            r.seed,
            r.report.max_rel_err,
            r.report.checked,
            r.report.skipped,
            if r.report.pass { "pass" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.report.pass).count();
    println!("{} checks, {failed} failed, {:.1?}", rows.len(), start.elapsed());
    Ok(())
}
