//! Independent reference implementations and random generators shared by the
//! integration tests and the acceptance suite. Nothing here calls the
//! library's numerical kernels.
#![allow(dead_code)]

use boostadapter::math::normalize;
use boostadapter::{ClassBank, Embedding, StreamRecord};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(e) = normalize(&v) {
            return e;
        }
    }
}

/// Unit vector whose components survive an f32 round trip unchanged.
pub fn random_f32_unit<R: Rng>(rng: &mut R, dim: usize) -> Embedding {
    let e = random_unit(rng, dim);
    let v: Vec<f64> = e.as_slice().iter().map(|&x| x as f32 as f64).collect();
    Embedding::from_unit(v, 1e-4).unwrap()
}

pub fn random_bank<R: Rng>(rng: &mut R, n: usize, dim: usize) -> ClassBank {
    ClassBank::unnamed((0..n).map(|_| random_unit(rng, dim)).collect()).unwrap()
}

pub fn random_record<R: Rng>(
    rng: &mut R,
    id: u64,
    dim: usize,
    views: usize,
    n: usize,
) -> StreamRecord {
    let truth = if rng.random_bool(0.7) {
        Some(rng.random_range(0..n))
    } else {
        None
    };
    StreamRecord::new(
        id,
        random_unit(rng, dim),
        (0..views).map(|_| random_unit(rng, dim)).collect(),
        truth,
    )
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Entropy (nats) of softmax(z / t), straight from the definition.
pub fn entropy_of_logits(z: &[f64], t: f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut total = 0.0;
    let mut e = vec![0.0; z.len()];
    for i in 0..z.len() {
        e[i] = ((z[i] - m) / t).exp();
        total += e[i];
    }
    let mut h = 0.0;
    for v in e {
        let p = v / total;
        if p > 1e-12 {
            h -= p * p.ln();
        }
    }
    h
}

pub fn first_argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

/// Cache classifier as a scalar double loop over (key, label) pairs.
pub fn cache_logits_oracle(
    keys: &[(Vec<f64>, usize)],
    query: &[f64],
    n: usize,
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, y) in keys {
        out[*y] += alpha * (-beta * (1.0 - dot(k, query))).exp();
    }
    out
}

/// Minimal per-class cache: (entropy, seq, key, label).
#[derive(Clone, Default)]
pub struct OracleCache {
    pub k: usize,
    pub classes: Vec<Vec<(f64, u64, Vec<f64>)>>,
    pub next_seq: u64,
}

impl OracleCache {
    pub fn new(n: usize, k: usize) -> Self {
        OracleCache {
            k,
            classes: vec![Vec::new(); n],
            next_seq: 0,
        }
    }

    pub fn offer(&mut self, key: Vec<f64>, label: usize, h: f64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let list = &mut self.classes[label];
        if list.len() < self.k {
            list.push((h, seq, key));
            return;
        }
        let mut worst = 0;
        for i in 1..list.len() {
            if (list[i].0, list[i].1) > (list[worst].0, list[worst].1) {
                worst = i;
            }
        }
        if h < list[worst].0 {
            list[worst] = (h, seq, key);
        }
    }

    pub fn pairs(&self) -> Vec<(Vec<f64>, usize)> {
        let mut all: Vec<(u64, Vec<f64>, usize)> = Vec::new();
        for (c, list) in self.classes.iter().enumerate() {
            for (_, seq, key) in list {
                all.push((*seq, key.clone(), c));
            }
        }
        all.sort_by_key(|e| e.0);
        all.into_iter().map(|(_, k, c)| (k, c)).collect()
    }
}

pub struct OracleParams {
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
    pub clip_scale: f64,
    pub p: f64,
}

/// Straight-line joint-cache prediction: historical insertion before
/// prediction, percentile filter, boosting views with their own labels in a
/// throwaway copy of the cache.
pub fn oracle_predict(
    rows: &[Vec<f64>],
    cache: &mut OracleCache,
    original: &[f64],
    views: &[Vec<f64>],
    prm: &OracleParams,
) -> Vec<f64> {
    let n = rows.len();
    let z0: Vec<f64> = rows.iter().map(|w| dot(w, original)).collect();
    let h0 = entropy_of_logits(&z0, prm.t);
    cache.offer(original.to_vec(), first_argmax(&z0), h0);

    let mut pool = cache.clone();
    if !views.is_empty() {
        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for (j, v) in views.iter().enumerate() {
            let z: Vec<f64> = rows.iter().map(|w| dot(w, v)).collect();
            scored.push((entropy_of_logits(&z, prm.t), j, first_argmax(&z)));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut m = (prm.p * views.len() as f64 + 1e-9).floor() as usize;
        if m < 1 {
            m = 1;
        }
        let mut kept: Vec<(f64, usize, usize)> = scored[..m].to_vec();
        kept.sort_by_key(|s| s.1);
        for (h, j, y) in kept {
            pool.offer(views[j].clone(), y, h);
        }
    }
    let c = cache_logits_oracle(&pool.pairs(), original, n, prm.alpha, prm.beta);
    (0..n).map(|i| prm.clip_scale * z0[i] + c[i]).collect()
}

/// Mean cross-entropy of logits `W x` (no shared code with the library).
pub fn ce_loss(w: &[Vec<f64>], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> = w.iter().map(|r| dot(r, x)).collect();
        let mut lse = 0.0;
        for v in &z {
            lse += v.exp();
        }
        total += lse.ln() - z[y];
    }
    total / xs.len() as f64
}

/// Central finite-difference gradient of [`ce_loss`].
pub fn fd_grad(w: &[Vec<f64>], xs: &[Vec<f64>], ys: &[usize], h: f64) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; w[0].len()]; w.len()];
    for i in 0..w.len() {
        for j in 0..w[0].len() {
            let mut plus = w.to_vec();
            plus[i][j] += h;
            let mut minus = w.to_vec();
            minus[i][j] -= h;
            g[i][j] = (ce_loss(&plus, xs, ys) - ce_loss(&minus, xs, ys)) / (2.0 * h);
        }
    }
    g
}

/// `||a - b|| / max(||a||, ||b||)` over flattened matrices.
pub fn rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            d += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    d.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-300)
}

/// Drops the `wall_time_s` line from a pretty-printed report.
pub fn strip_wall_time(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_time_s\""))
        .collect::<Vec<_>>()
        .join("\n")
}
