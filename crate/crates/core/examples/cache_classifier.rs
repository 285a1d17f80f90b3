//! The entropy-prioritized cache: capacity-bounded inserts, evictions and the
//! affinity-weighted retrieval that turns cached samples into class logits.
//!
//! ```text
//! cargo run --example cache_classifier
//! ```

use boostadapter::math::{normalize, Affinity};
use boostadapter::{BoostCache, CacheEntry, Provenance};

fn main() -> boostadapter::Result<()> {
    let mut cache = BoostCache::new(2, 3, 2)?;
    let offers = [
        ([1.0, 0.1, 0.0], 0, 0.30),
        ([0.9, 0.0, 0.3], 0, 0.50),
        ([0.1, 1.0, 0.0], 1, 0.20),
        ([1.0, 0.0, 0.1], 0, 0.10),
        ([0.8, 0.2, 0.2], 0, 0.60),
    ];
    for (v, label, h) in offers {
        let seq = cache.next_seq();
        let outcome = cache.insert(CacheEntry {
            embedding: normalize(&v)?,
            pseudo_label: label,
            entropy: h,
            provenance: Provenance::Historical,
            seq,
        })?;
        println!("seq {seq}: class {label}, entropy {h:.2} -> {outcome:?}");
    }
    for c in 0..cache.n_classes() {
        let hs: Vec<_> = cache
            .class_entries(c)
            .iter()
            .map(|e| (e.seq, e.entropy))
            .collect();
        println!("class {c} holds (seq, entropy) {hs:?}");
    }

    let query = normalize(&[0.7, 0.7, 0.0])?;
    for (alpha, beta) in [(2.0, 5.0), (2.0, 1.0), (1.0, 10.0)] {
        let z = cache.logits(&query, &Affinity::new(alpha, beta)?)?;
        println!("alpha {alpha}, beta {beta:>4}: cache logits {z:.4?}");
    }
    Ok(())
}
