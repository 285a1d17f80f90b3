//! Gradient-trained linear classifier vs the class-balanced cache classifier on
//! well-clustered data.
//!
//! ```text
//! cargo run --release --example prop1_agreement
//! ```

use boostadapter::lab::{prop1_agreement, ClusterSpec, GdParams};

fn main() -> boostadapter::Result<()> {
    println!("sigma  agreement");
    for sigma in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let spec = ClusterSpec::new(3, 16, sigma, 1)?;
        let a = prop1_agreement(&spec, 100, 1000, GdParams::default())?;
        println!("{sigma:<5}  {a:.4}");
    }
    Ok(())
}
