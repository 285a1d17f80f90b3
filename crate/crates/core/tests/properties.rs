mod common;

use boostadapter::cache::CacheEntry;
use boostadapter::io::{read_stream_all, write_stream, StreamHeader};
use boostadapter::math::{argmax, clip_logits, entropy, normalize, softmax, Affinity};
use boostadapter::pipeline::{filter_views, kept_view_count, StreamRun};
use boostadapter::{
    run_stream, Adapter, BoostCache, ClassBank, Embedding, Mode, Provenance, RunConfig,
    StreamRecord,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Embedding> {
    raw_vec(dim).prop_map(|v| normalize(&v).unwrap())
}

fn world() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..6, 2usize..8, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalize_is_unit_and_idempotent(v in raw_vec(7)) {
        let e = normalize(&v).unwrap();
        prop_assert!((boostadapter::math::norm(e.as_slice()) - 1.0).abs() <= 1e-12);
        let again = normalize(e.as_slice()).unwrap();
        for (a, b) in e.as_slice().iter().zip(again.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn clip_logits_are_bounded(rows in prop::collection::vec(unit_vec(5), 2..8), e in unit_vec(5)) {
        let bank = ClassBank::unnamed(rows).unwrap();
        for z in clip_logits(&e, &bank).unwrap() {
            prop_assert!(z.abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn softmax_sums_to_one(z in prop::collection::vec(-50.0f64..50.0, 1..12), t in 1e-4f64..1e2) {
        let p = softmax(&z, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert_eq!(argmax(&p), argmax(&z));
    }

    #[test]
    fn entropy_is_shift_invariant_and_bounded(
        z in prop::collection::vec(-1.0f64..1.0, 2..10),
        shift in -100.0f64..100.0,
        t in 0.01f64..10.0,
    ) {
        let h = entropy(&softmax(&z, t).unwrap());
        let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
        let hs = entropy(&softmax(&shifted, t).unwrap());
        prop_assert!((h - hs).abs() <= 1e-9);
        prop_assert!(h >= 0.0 && h <= (z.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn affinity_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, alpha in 0.01f64..10.0, beta in 0.01f64..20.0) {
        let f = Affinity::new(alpha, beta).unwrap();
        prop_assume!(a < b);
        prop_assert!(f.apply(a) <= f.apply(b));
        prop_assert!(f.apply(b) > 0.0 && f.apply(b) <= alpha);
    }

    #[test]
    fn cache_logits_ignore_insertion_order(seed in any::<u64>(), n in 2usize..5, len in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let entries: Vec<CacheEntry> = (0..len)
            .map(|i| CacheEntry {
                embedding: common::random_unit(&mut rng, dim),
                pseudo_label: i % n,
                entropy: 0.0,
                provenance: Provenance::Historical,
                seq: i as u64,
            })
            .collect();
        let mut a = BoostCache::new(n, dim, len).unwrap();
        let mut b = BoostCache::new(n, dim, len).unwrap();
        for e in &entries {
            a.insert(e.clone()).unwrap();
        }
        for e in entries.iter().rev() {
            b.insert(e.clone()).unwrap();
        }
        let q = common::random_unit(&mut rng, dim);
        let aff = Affinity::new(2.0, 5.0).unwrap();
        prop_assert_eq!(a.logits(&q, &aff).unwrap(), b.logits(&q, &aff).unwrap());
    }

    #[test]
    fn cache_keeps_lowest_entropies(seed in any::<u64>(), k in 1usize..6, len in 0usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let mut cache = BoostCache::new(n, 2, k).unwrap();
        let mut offered: Vec<Vec<(f64, u64)>> = vec![Vec::new(); n];
        for i in 0..len {
            let y = rand::Rng::random_range(&mut rng, 0..n);
            // coarse grid so ties are common
            let h = rand::Rng::random_range(&mut rng, 0..8) as f64 * 0.125;
            let prov = if i % 2 == 0 { Provenance::Historical } else { Provenance::Boosting };
            cache.insert(CacheEntry {
                embedding: common::random_unit(&mut rng, 2),
                pseudo_label: y,
                entropy: h,
                provenance: prov,
                seq: i as u64,
            }).unwrap();
            offered[y].push((h, i as u64));
        }
        for (c, offered_c) in offered.iter().enumerate() {
            let mut want = offered_c.clone();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            want.truncate(k);
            want.sort_by_key(|e| e.1);
            let got: Vec<(f64, u64)> = cache.class_entries(c).iter().map(|e| (e.entropy, e.seq)).collect();
            prop_assert_eq!(got, want);
        }
        prop_assert_eq!(cache.historical_count() + cache.boosting_count(), cache.len());
        prop_assert!(cache.len() <= n * k);
    }

    #[test]
    fn cache_logits_bounded_and_monotone(seed in any::<u64>(), len in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, dim) = (3, 4);
        let mut cache = BoostCache::new(n, dim, len).unwrap();
        let q = common::random_unit(&mut rng, dim);
        for i in 0..len {
            cache.insert(CacheEntry {
                embedding: common::random_unit(&mut rng, dim),
                pseudo_label: i % n,
                entropy: 0.1,
                provenance: Provenance::Historical,
                seq: i as u64,
            }).unwrap();
        }
        let aff = Affinity::new(2.0, 5.0).unwrap();
        let before = cache.logits(&q, &aff).unwrap();
        for (c, b) in before.iter().enumerate() {
            let cnt = cache.class_entries(c).len() as f64;
            prop_assert!(*b >= 0.0 && *b <= 2.0 * cnt + 1e-12);
        }
        // replacing one key by the query itself raises only its class
        let mut moved = BoostCache::new(n, dim, len).unwrap();
        for (j, e) in cache.entries().enumerate() {
            let mut e = e.clone();
            if j == 0 {
                e.embedding = q.clone();
            }
            moved.insert(e).unwrap();
        }
        let after = moved.logits(&q, &aff).unwrap();
        prop_assert!(after[0] >= before[0]);
    }

    #[test]
    fn filter_keeps_the_lowest(h in prop::collection::vec(0.0f64..3.0, 0..300), pi in 0usize..4) {
        let p = [0.05, 0.1, 0.5, 1.0][pi];
        let kept = filter_views(&h, p).unwrap();
        let m = if h.is_empty() { 0 } else { ((p * h.len() as f64 + 1e-9).floor() as usize).max(1) };
        prop_assert_eq!(kept.len(), m);
        prop_assert_eq!(kept_view_count(h.len(), p), m);
        let max_kept = kept.iter().map(|&i| h[i]).fold(f64::NEG_INFINITY, f64::max);
        for (i, hi) in h.iter().enumerate() {
            if !kept.contains(&i) {
                prop_assert!(max_kept <= *hi);
            }
        }
    }

    #[test]
    fn boosting_never_persists((n, dim, seed) in world(), views in 0usize..10, len in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = common::random_bank(&mut rng, n, dim);
        let recs: Vec<StreamRecord> = (0..len as u64).map(|i| common::random_record(&mut rng, i, dim, views, n)).collect();
        let final_cache = |mode| {
            let mut run = StreamRun::new(&bank, RunConfig { mode, ..RunConfig::default() }).unwrap();
            for r in &recs {
                run.observe(r).unwrap();
            }
            run.finish().unwrap().1
        };
        let hist = final_cache(Mode::HistoricalOnly);
        prop_assert_eq!(&hist, &final_cache(Mode::BoostAdapter));
        prop_assert_eq!(hist.boosting_count(), 0);
    }

    #[test]
    fn viewless_records_reduce_to_historical_only((n, dim, seed) in world(), len in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = common::random_bank(&mut rng, n, dim);
        let recs: Vec<StreamRecord> = (0..len as u64).map(|i| common::random_record(&mut rng, i, dim, 0, n)).collect();
        let mut a = Adapter::new(&bank, RunConfig::default()).unwrap();
        let mut b = Adapter::new(&bank, RunConfig { mode: Mode::HistoricalOnly, ..RunConfig::default() }).unwrap();
        for r in &recs {
            let pa = a.predict(r).unwrap();
            let pb = b.predict(r).unwrap();
            prop_assert_eq!(pa.final_logits, pb.final_logits);
        }
    }

    #[test]
    fn prediction_is_argmax_and_report_recomputes((n, dim, seed) in world(), views in 0usize..6, len in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = common::random_bank(&mut rng, n, dim);
        let recs: Vec<StreamRecord> = (0..len as u64).map(|i| common::random_record(&mut rng, i, dim, views, n)).collect();
        let mut ad = Adapter::new(&bank, RunConfig::default()).unwrap();
        for r in &recs {
            let p = ad.predict(r).unwrap();
            prop_assert_eq!(p.predicted, argmax(&p.final_logits));
        }
        let report = run_stream(recs.clone(), &bank, &RunConfig::default()).unwrap();
        let labeled: Vec<_> = report.per_sample.iter().filter(|s| s.truth.is_some()).collect();
        prop_assert_eq!(report.n, len);
        prop_assert_eq!(report.n_labeled, labeled.len());
        if labeled.is_empty() {
            prop_assert_eq!(report.top1, None);
        } else {
            let hits = labeled.iter().filter(|s| s.truth == Some(s.pred)).count();
            prop_assert_eq!(report.top1, Some(hits as f64 / labeled.len() as f64));
            prop_assert!(report.top1.unwrap() >= 0.0 && report.top1.unwrap() <= 1.0);
        }
    }

    #[test]
    fn persistent_cache_holds_lowest_clip_entropies((n, dim, seed) in world(), len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = common::random_bank(&mut rng, n, dim);
        let recs: Vec<StreamRecord> = (0..len as u64).map(|i| common::random_record(&mut rng, i, dim, 2, n)).collect();
        let cfg = RunConfig { temperature: 0.5, ..RunConfig::default() };
        let mut run = StreamRun::new(&bank, cfg.clone()).unwrap();
        for r in &recs {
            run.observe(r).unwrap();
        }
        let cache = run.finish().unwrap().1;
        let rows: Vec<Vec<f64>> = bank.rows().iter().map(|r| r.as_slice().to_vec()).collect();
        for c in 0..n {
            let mut want: Vec<f64> = recs
                .iter()
                .map(|r| rows.iter().map(|w| common::dot(w, r.original.as_slice())).collect::<Vec<_>>())
                .filter(|z| common::first_argmax(z) == c)
                .map(|z| common::entropy_of_logits(&z, cfg.temperature))
                .collect();
            want.sort_by(f64::total_cmp);
            want.truncate(cfg.shots);
            let mut got: Vec<f64> = cache.class_entries(c).iter().map(|e| e.entropy).collect();
            got.sort_by(f64::total_cmp);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embs_round_trip(seed in any::<u64>(), n in 1u32..6, dim in 1usize..9, len in 0usize..12, max_views in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<StreamRecord> = (0..len as u64)
            .map(|i| {
                let v = rand::Rng::random_range(&mut rng, 0..=max_views);
                let truth = rand::Rng::random_bool(&mut rng, 0.5).then(|| rand::Rng::random_range(&mut rng, 0..n as usize));
                StreamRecord::new(
                    i,
                    common::random_f32_unit(&mut rng, dim),
                    (0..v).map(|_| common::random_f32_unit(&mut rng, dim)).collect(),
                    truth,
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.embs");
        let header = StreamHeader::for_records(dim, n as usize, &recs);
        let bytes = write_stream(&p, &header, &recs).unwrap();
        prop_assert_eq!(bytes, std::fs::metadata(&p).unwrap().len());
        let (h2, back) = read_stream_all(&p).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(&back, &recs);
        let q = dir.path().join("b.embs");
        write_stream(&q, &h2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
}
