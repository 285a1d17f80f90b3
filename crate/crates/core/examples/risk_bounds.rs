//! Excess error of the historical cache as it fills, with and without boosting views.
//!
//! ```text
//! cargo run --release --example risk_bounds [seeds] [control]
//! ```
//!
//! With `control`, views keep all of the clutter and spread as widely as target
//! neighbors (`r_b = r_t`), so boosting has nothing to add.

use boostadapter::lab::bounds::RISK_MODES;
use boostadapter::lab::{bound_experiment, BoundGrid, ShiftStreamSpec};
use boostadapter::RunConfig;

fn main() -> boostadapter::Result<()> {
    let seeds = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let control = std::env::args().any(|a| a == "control");
    let grid = BoundGrid::with_seeds(seeds);
    let mut spec = ShiftStreamSpec::default();
    if control {
        spec.view_clutter = (1.0, 1.0);
        spec.r_b = spec.r_t;
    }
    let cfg = RunConfig {
        percentile: 0.25,
        ..RunConfig::default()
    };
    let table = bound_experiment(&spec, &grid, &cfg)?;

    println!(
        "{:>5} {:>16} {:>12} {:>8}",
        "n_t", "mode", "excess_err", "top1"
    );
    for &n_t in &grid.n_t {
        for mode in RISK_MODES {
            println!(
                "{n_t:>5} {:>16} {:>12.4} {:>8.4}",
                mode.to_string(),
                table.mean_excess(n_t, 3, mode).unwrap_or(f64::NAN),
                table.mean_top1(n_t, 3, mode).unwrap_or(f64::NAN),
            );
        }
    }
    Ok(())
}
