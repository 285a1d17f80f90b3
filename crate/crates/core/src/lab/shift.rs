//! A shifted test stream with a known posterior.
//!
//! The world is built on an orthonormal basis of `R^C`: `N` class directions
//! `mu_c`, a style direction `b`, a text-offset direction `m`, and the
//! remaining `C - N - 2` nuisance directions.
//!
//! * Class bank: `w_c = normalize(gap * m + mu_c + gamma * s_c * b)` with
//!   `s_0 = +1` and `s_c = -1` otherwise, so the zero-shot classifier leans
//!   towards class 0 on styled inputs.
//! * Semantic point: `s = normalize((1 - t) mu_c + t mu_o + r_t * ball)`, with
//!   `t ~ U(0, t_max)`, `o != c` and `ball` uniform in the unit ball of the
//!   nuisance subspace.
//! * Posterior: `eta = noise / N + (1 - noise) * softmax(kappa * s . mu)`; the
//!   truth is drawn from it and the Bayes label is `argmax s . mu`.
//! * Original embedding: `normalize(s + rho * b + clutter)`, where the clutter
//!   `d * normalize(mu_o2 + zeta * xi)` points at a wrong class `o2` plus a
//!   random nuisance direction `xi`, with `d ~ U(clutter)` (or 0 for a
//!   `clean_fraction` of records).
//! * View `j`: `normalize(s + rho * b + lambda_j * clutter + r_b * ball_j)`,
//!   `lambda_j ~ U(view_clutter)`: crops that drop part of the clutter and
//!   stay within `r_b` of the sample.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{argmax, dot, normalize, softmax, ClassBank, Embedding};
use crate::pipeline::StreamRecord;

use super::clusters::orthonormal_basis;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStreamSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// Augmented views per record.
    pub views: usize,
    pub records: usize,
    pub seed: u64,
    /// Label-noise rate mixed uniformly into the posterior.
    pub label_noise: f64,
    /// Posterior sharpness.
    pub kappa: f64,
    /// Largest blend towards a wrong class center.
    pub t_max: f64,
    /// Radius of target neighborhoods in the nuisance subspace.
    pub r_t: f64,
    /// Radius of boosting views around their sample; keep below `r_t`.
    pub r_b: f64,
    /// Style shift `rho` shared by all test embeddings.
    pub style: f64,
    /// Style bias `gamma` of the class bank.
    pub bank_bias: f64,
    /// Weight of the class-independent text offset.
    pub text_gap: f64,
    /// Range of the clutter magnitude `d`.
    pub clutter: (f64, f64),
    /// Weight `zeta` of the nuisance direction inside the clutter.
    pub clutter_spread: f64,
    /// Fraction of records without clutter.
    pub clean_fraction: f64,
    /// Range of the clutter fraction `lambda` a view keeps.
    pub view_clutter: (f64, f64),
}

impl Default for ShiftStreamSpec {
    fn default() -> Self {
        ShiftStreamSpec {
            n_classes: 2,
            dim: 16,
            views: 16,
            records: 200,
            seed: 7,
            label_noise: 0.05,
            kappa: 10.0,
            t_max: 0.4,
            r_t: 0.3,
            r_b: 0.075,
            style: 0.5,
            bank_bias: 0.3,
            text_gap: 20.0,
            clutter: (0.7, 1.0),
            clutter_spread: 2.0,
            clean_fraction: 0.02,
            view_clutter: (0.0, 1.0),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), max: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= max {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{name} range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= {max}"
        )))
    }
}

impl ShiftStreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("a shifted stream needs at least 2 classes"));
        }
        if self.dim < self.n_classes + 3 {
            return Err(Error::config(format!(
                "C = {} is too small for {} classes: need C >= N + 3 for the style, text and nuisance directions",
                self.dim, self.n_classes
            )));
        }
        if self.views > u16::MAX as usize {
            return Err(Error::config("at most 65535 views per record"));
        }
        let nonneg = [
            ("kappa", self.kappa),
            ("r_t", self.r_t),
            ("r_b", self.r_b),
            ("style", self.style),
            ("bank_bias", self.bank_bias),
            ("text_gap", self.text_gap),
            ("clutter_spread", self.clutter_spread),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("label_noise", self.label_noise),
            ("t_max", self.t_max),
            ("clean_fraction", self.clean_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.t_max >= 0.5 {
            return Err(Error::config(
                "t_max must stay below 0.5 so the sample keeps its class",
            ));
        }
        check_range("clutter", self.clutter, f64::MAX)?;
        check_range("view_clutter", self.view_clutter, 1.0)
    }
}

/// A generated record with its Bayes label and Bayes confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub record: StreamRecord,
    pub bayes: usize,
    /// Half the gap between the two largest posterior probabilities; `|eta - 1/2|` for two classes.
    pub confidence: f64,
}

/// Fixed geometry of one shifted world.
#[derive(Debug, Clone)]
pub struct ShiftWorld {
    spec: ShiftStreamSpec,
    centers: Vec<Vec<f64>>,
    style: Vec<f64>,
    nuisance: Vec<Vec<f64>>,
    bank: ClassBank,
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

impl ShiftWorld {
    /// Builds the geometry from stream 0 of `spec.seed`.
    pub fn new(spec: &ShiftStreamSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut basis = orthonormal_basis(spec.dim, spec.dim, &mut rng)?;
        let nuisance = basis.split_off(n + 2);
        let text = basis.pop().expect("text direction");
        let style = basis.pop().expect("style direction");
        let centers = basis;

        let rows = centers
            .iter()
            .enumerate()
            .map(|(c, mu)| {
                let sign = if c == 0 { 1.0 } else { -1.0 };
                let mut w = vec![0.0; spec.dim];
                axpy(&mut w, spec.text_gap, &text);
                axpy(&mut w, 1.0, mu);
                axpy(&mut w, spec.bank_bias * sign, &style);
                normalize(&w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShiftWorld {
            spec: spec.clone(),
            centers,
            style,
            nuisance,
            bank: ClassBank::unnamed(rows)?,
        })
    }

    pub fn spec(&self) -> &ShiftStreamSpec {
        &self.spec
    }

    pub fn bank(&self) -> &ClassBank {
        &self.bank
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Uniform point of the unit ball in the nuisance subspace, in ambient coordinates.
    fn nuisance_ball<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.nuisance.len();
        let dir: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let r = rng.random::<f64>().powf(1.0 / k as f64);
        let scale = r / dir
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        self.embed_nuisance(&dir, scale)
    }

    fn nuisance_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dir: Vec<f64> = (0..self.nuisance.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let scale = 1.0
            / dir
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
        self.embed_nuisance(&dir, scale)
    }

    fn embed_nuisance(&self, coords: &[f64], scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.dim];
        for (c, axis) in coords.iter().zip(&self.nuisance) {
            axpy(&mut v, c * scale, axis);
        }
        v
    }

    fn other_class<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> usize {
        let n = self.spec.n_classes;
        (c + rng.random_range(1..n)) % n
    }

    /// Draws one record.
    pub fn sample<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> Result<LabeledRecord> {
        let sp = &self.spec;
        let n = sp.n_classes;
        let c = rng.random_range(0..n);
        let o = self.other_class(c, rng);
        let t = sp.t_max * rng.random::<f64>();

        let mut s = vec![0.0; sp.dim];
        axpy(&mut s, 1.0 - t, &self.centers[c]);
        axpy(&mut s, t, &self.centers[o]);
        axpy(&mut s, sp.r_t, &self.nuisance_ball(rng));
        let s = normalize(&s)?.into_inner();

        let sims: Vec<f64> = self.centers.iter().map(|mu| dot(&s, mu)).collect();
        let eta: Vec<f64> = softmax(&sims, 1.0 / sp.kappa.max(f64::MIN_POSITIVE))?
            .into_iter()
            .map(|p| sp.label_noise / n as f64 + (1.0 - sp.label_noise) * p)
            .collect();
        let truth = WeightedIndex::new(&eta)
            .map_err(|e| Error::InvalidVector(format!("posterior: {e}")))?
            .sample(rng);
        let bayes = argmax(&sims);
        let mut sorted = eta.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let confidence = (sorted[0] - sorted[1]) / 2.0;

        let o2 = self.other_class(c, rng);
        let d = sp.clutter.0 + (sp.clutter.1 - sp.clutter.0) * rng.random::<f64>();
        let d = if rng.random::<f64>() < sp.clean_fraction {
            0.0
        } else {
            d
        };
        let xi = self.nuisance_direction(rng);
        let mut clutter = self.centers[o2].clone();
        axpy(&mut clutter, sp.clutter_spread, &xi);
        let clutter: Vec<f64> = normalize(&clutter)?
            .as_slice()
            .iter()
            .map(|x| d * x)
            .collect();

        let mut base = s.clone();
        axpy(&mut base, sp.style, &self.style);
        let mut x = base.clone();
        axpy(&mut x, 1.0, &clutter);
        let original = normalize(&x)?;

        let (lo, hi) = sp.view_clutter;
        let views = (0..sp.views)
            .map(|_| {
                let lambda = lo + (hi - lo) * rng.random::<f64>();
                let mut v = base.clone();
                axpy(&mut v, lambda, &clutter);
                axpy(&mut v, sp.r_b, &self.nuisance_ball(rng));
                normalize(&v)
            })
            .collect::<Result<Vec<Embedding>>>()?;

        Ok(LabeledRecord {
            record: StreamRecord::new(id, original, views, Some(truth)),
            bayes,
            confidence,
        })
    }

    /// `n` records with ids `0..n` from stream `stream` of the spec's seed.
    pub fn stream(&self, n: usize, stream: u64) -> Result<Vec<LabeledRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream);
        (0..n as u64).map(|id| self.sample(id, &mut rng)).collect()
    }
}

/// The class bank and `spec.records` records of the spec's world.
pub fn gen_shift_stream(spec: &ShiftStreamSpec) -> Result<(ClassBank, Vec<LabeledRecord>)> {
    let world = ShiftWorld::new(spec)?;
    let records = world.stream(spec.records, 1)?;
    Ok((world.bank.clone(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::clip_logits;

    #[test]
    fn deterministic_and_well_formed() {
        let spec = ShiftStreamSpec {
            records: 30,
            ..Default::default()
        };
        let (bank, a) = gen_shift_stream(&spec).unwrap();
        let (_, b) = gen_shift_stream(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(bank.n_classes(), 2);
        for r in &a {
            assert_eq!(r.record.views.len(), 16);
            assert!(r.confidence >= 0.0 && r.confidence <= 0.5);
            assert!(r.record.truth.unwrap() < 2);
        }
    }

    #[test]
    fn zero_shot_is_biased_but_informative() {
        let spec = ShiftStreamSpec {
            records: 400,
            ..Default::default()
        };
        let (bank, recs) = gen_shift_stream(&spec).unwrap();
        let hits = recs
            .iter()
            .filter(|r| argmax(&clip_logits(&r.record.original, &bank).unwrap()) == r.bayes)
            .count();
        let frac = hits as f64 / recs.len() as f64;
        assert!(
            frac > 0.55 && frac < 0.95,
            "zero-shot Bayes agreement {frac}"
        );
    }

    #[test]
    fn guards() {
        let bad = ShiftStreamSpec {
            dim: 4,
            ..Default::default()
        };
        assert!(matches!(gen_shift_stream(&bad), Err(Error::Config(_))));
        let bad = ShiftStreamSpec {
            view_clutter: (0.5, 0.2),
            ..Default::default()
        };
        assert!(matches!(gen_shift_stream(&bad), Err(Error::Config(_))));
    }
}
