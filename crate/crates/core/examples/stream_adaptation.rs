//! Online adaptation on the default shifted stream, once per mode.
//!
//! ```text
//! cargo run --release --example stream_adaptation [percentile]
//! ```

use boostadapter::lab::{gen_shift_stream, ShiftStreamSpec};
use boostadapter::pipeline::run_stream;
use boostadapter::{Mode, RunConfig};

fn main() -> boostadapter::Result<()> {
    let percentile = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.1);
    let (bank, labeled) = gen_shift_stream(&ShiftStreamSpec::default())?;
    let records: Vec<_> = labeled.into_iter().map(|r| r.record).collect();

    println!(
        "{} records, {} views each, p = {percentile}",
        records.len(),
        records[0].views.len()
    );
    for mode in [
        Mode::ClipOnly,
        Mode::HistoricalOnly,
        Mode::BoostingOnly,
        Mode::BoostAdapter,
    ] {
        let cfg = RunConfig {
            mode,
            percentile,
            ..RunConfig::default()
        };
        let report = run_stream(records.iter().cloned(), &bank, &cfg)?;
        let boosted: usize = report.per_sample.iter().map(|s| s.n_boost).sum();
        println!(
            "{:>16}  top1 {:.4}  boosting views used {boosted}",
            mode.to_string(),
            report.top1.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
