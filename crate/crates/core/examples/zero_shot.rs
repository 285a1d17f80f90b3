//! Zero-shot classification with a class bank: cosine logits, tempered
//! softmax and the entropy that drives every cache decision.
//!
//! ```text
//! cargo run --example zero_shot
//! ```

use boostadapter::math::{argmax, clip_logits, entropy, normalize, softmax};
use boostadapter::ClassBank;

fn main() -> boostadapter::Result<()> {
    let bank = ClassBank::new(
        vec!["cat".into(), "dog".into(), "car".into()],
        vec![
            normalize(&[1.0, 0.2, 0.0, 0.1])?,
            normalize(&[0.8, 0.7, 0.0, 0.1])?,
            normalize(&[0.0, 0.1, 1.0, 0.3])?,
        ],
    )?;

    let queries = [
        ("clear cat", [0.95, 0.1, 0.0, 0.1]),
        ("cat or dog", [0.9, 0.45, 0.0, 0.1]),
        ("car", [0.1, 0.0, 0.9, 0.2]),
    ];
    for (name, q) in queries {
        let z = clip_logits(&normalize(&q)?, &bank)?;
        let y = argmax(&z);
        print!("{name:<11} -> {:<4} logits {z:.3?}", bank.names()[y]);
        for t in [1.0, 0.01] {
            print!("  H(T={t}) {:.4}", entropy(&softmax(&z, t)?));
        }
        println!();
    }
    Ok(())
}
