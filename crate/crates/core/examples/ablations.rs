//! Ablations on the shifted stream: shot capacity, joint vs independent
//! boosting pool, the consistency filter, insertion order and view count.
//!
//! ```text
//! cargo run --release --example ablations
//! ```

use boostadapter::lab::{gen_shift_stream, ShiftStreamSpec};
use boostadapter::{run_stream, CacheMode, ClassBank, RunConfig, StreamRecord};

fn top1(records: &[StreamRecord], bank: &ClassBank, cfg: RunConfig) -> boostadapter::Result<f64> {
    Ok(run_stream(records.iter().cloned(), bank, &cfg)?
        .top1
        .unwrap_or(f64::NAN))
}

fn main() -> boostadapter::Result<()> {
    let spec = ShiftStreamSpec {
        records: 400,
        views: 32,
        ..Default::default()
    };
    let (bank, labeled) = gen_shift_stream(&spec)?;
    let records: Vec<_> = labeled.into_iter().map(|r| r.record).collect();
    let base = RunConfig::default();

    println!("shot capacity");
    for shots in [1, 3, 8, 16] {
        println!(
            "  k = {shots:<2}  {:.4}",
            top1(
                &records,
                &bank,
                RunConfig {
                    shots,
                    ..base.clone()
                }
            )?
        );
    }

    println!("boosting pool");
    for cache_mode in [CacheMode::Joint, CacheMode::Independent] {
        let cfg = RunConfig {
            cache_mode,
            ..base.clone()
        };
        println!(
            "  {:<12} {:.4}",
            cache_mode.to_string(),
            top1(&records, &bank, cfg)?
        );
    }

    println!("consistency filter");
    for consistency_filter in [false, true] {
        let cfg = RunConfig {
            consistency_filter,
            ..base.clone()
        };
        println!(
            "  {consistency_filter:<5}  {:.4}",
            top1(&records, &bank, cfg)?
        );
    }

    println!("insert after predicting");
    for insert_after in [false, true] {
        let cfg = RunConfig {
            insert_after,
            ..base.clone()
        };
        println!("  {insert_after:<5}  {:.4}", top1(&records, &bank, cfg)?);
    }

    println!("views per record (p = 0.1)");
    for v in [0, 4, 8, 16, 32] {
        let cut: Vec<StreamRecord> = records
            .iter()
            .map(|r| StreamRecord {
                views: r.views[..v].to_vec(),
                ..r.clone()
            })
            .collect();
        println!("  V = {v:<2}  {:.4}", top1(&cut, &bank, base.clone())?);
    }
    Ok(())
}
