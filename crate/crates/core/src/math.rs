//! Stateless numerical kernels shared by the cache, the pipeline and the lab.
//!
//! Everything here is a pure function of its inputs. Logit and probability
//! vectors are plain `Vec<f64>` / `&[f64]`; the invariant-carrying types are
//! [`Embedding`] (unit norm) and [`ClassBank`] (a set of unit-norm class rows).

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on `| ||v|| - 1 |` for a vector to count as unit-norm.
pub const UNIT_TOL: f64 = 1e-6;

/// Probabilities below this contribute nothing to [`entropy`].
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        normalize(&values)
    }

    /// Wraps `values` verbatim when they are already unit-norm within `tol`.
    pub fn from_unit(values: Vec<f64>, tol: f64) -> Result<Self> {
        check_finite(&values)?;
        let n = norm(&values);
        if (n - 1.0).abs() > tol {
            return Err(Error::InvalidVector(format!(
                "norm {n} is not within {tol} of 1"
            )));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `N` unit-norm class embeddings (the zero-shot text classifier) with display names.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBank {
    names: Vec<String>,
    rows: Vec<Embedding>,
}

impl ClassBank {
    pub fn new(names: Vec<String>, rows: Vec<Embedding>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::config(format!(
                "a class bank needs at least 2 classes, got {}",
                rows.len()
            )));
        }
        if names.len() != rows.len() {
            return Err(Error::Format(format!(
                "{} class names for {} class rows",
                names.len(),
                rows.len()
            )));
        }
        let dim = rows[0].dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(Error::Dim {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(ClassBank { names, rows })
    }

    /// Bank with generated names `class_0 .. class_{N-1}`.
    pub fn unnamed(rows: Vec<Embedding>) -> Result<Self> {
        let names = (0..rows.len()).map(|i| format!("class_{i}")).collect();
        Self::new(names, rows)
    }

    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Embedding] {
        &self.rows
    }

    pub fn row(&self, class: usize) -> &Embedding {
        &self.rows[class]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidVector("empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidVector("non-finite component".into()));
    }
    Ok(())
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    check_finite(v)?;
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidVector(format!(
            "cannot normalize, norm is {n}"
        )));
    }
    Ok(Embedding(v.iter().map(|x| x / n).collect()))
}

/// Zero-shot cosine logits: entry `i` is `w_i . e`.
pub fn clip_logits(e: &Embedding, bank: &ClassBank) -> Result<Vec<f64>> {
    if e.dim() != bank.dim() {
        return Err(Error::Dim {
            expected: bank.dim(),
            found: e.dim(),
        });
    }
    Ok(bank.rows.iter().map(|w| w.dot(e)).collect())
}

/// Tempered softmax of `logits / temperature`, computed with max-subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// Shannon entropy in nats, with `0 ln 0 := 0` (entries below [`ENTROPY_FLOOR`] are skipped).
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p >= ENTROPY_FLOOR)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Validated parameters of the affinity scaling `A(z) = alpha * exp(-beta * (1 - z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affinity {
    alpha: f64,
    beta: f64,
}

impl Affinity {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::config(format!(
                "beta must be non-negative, got {beta}"
            )));
        }
        Ok(Affinity { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        self.alpha * (-self.beta * (1.0 - z)).exp()
    }
}

/// `A(z) = alpha * exp(-beta * (1 - z))`.
pub fn scale_affinity(z: f64, alpha: f64, beta: f64) -> Result<f64> {
    Ok(Affinity::new(alpha, beta)?.apply(z))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
