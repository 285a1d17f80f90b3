use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::Provenance;
use crate::cache::{weighted_cache_logits, CacheEntry, Weighting};
use crate::error::{Error, Result};
use crate::math::{argmax, dot, softmax, Embedding};
use crate::pipeline::pseudo_label;

use super::clusters::{ClusterSpec, LabeledSet};

/// `N x C` weights; logits are `W x` with no bias and no temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<Vec<f64>>,
}

impl LinearClassifier {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights[0].is_empty() {
            return Err(Error::config("weights must be a non-empty N x C matrix"));
        }
        let dim = weights[0].len();
        if let Some(r) = weights.iter().find(|r| r.len() != dim) {
            return Err(Error::Dim {
                expected: dim,
                found: r.len(),
            });
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::InvalidVector("non-finite weight".into()));
        }
        Ok(LinearClassifier { weights })
    }

    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        LinearClassifier {
            weights: vec![vec![0.0; dim]; n_classes],
        }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| dot(w, x)).collect()
    }

    pub fn predict(&self, x: &Embedding) -> usize {
        argmax(&self.logits(x.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdParams {
    /// Default: 0.5.
    pub lr: f64,
    /// Default: 500.
    pub steps: usize,
}

impl Default for GdParams {
    fn default() -> Self {
        GdParams {
            lr: 0.5,
            steps: 500,
        }
    }
}

/// Mean softmax cross-entropy over `data` and its gradient with respect to the weights.
pub fn loss_and_grad(model: &LinearClassifier, data: &LabeledSet) -> Result<(f64, Vec<Vec<f64>>)> {
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; model.dim()]; model.n_classes()];
    for (x, &y) in data.points.iter().zip(&data.labels) {
        if x.dim() != model.dim() {
            return Err(Error::Dim {
                expected: model.dim(),
                found: x.dim(),
            });
        }
        if y >= model.n_classes() {
            return Err(Error::Label {
                label: y,
                n_classes: model.n_classes(),
            });
        }
        let z = model.logits(x.as_slice());
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        let p = softmax(&z, 1.0)?;
        for (i, g) in grad.iter_mut().enumerate() {
            let coef = p[i] - if i == y { 1.0 } else { 0.0 };
            g.iter_mut()
                .zip(x.as_slice())
                .for_each(|(gk, xk)| *gk += coef * xk);
        }
    }
    grad.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// loss before each step.
pub fn train_linear_ce_traced(
    data: &LabeledSet,
    params: GdParams,
) -> Result<(LinearClassifier, Vec<f64>)> {
    if params.steps == 0 {
        return Err(Error::config("at least one gradient step is required"));
    }
    if !params.lr.is_finite() || params.lr <= 0.0 {
        return Err(Error::config(format!(
            "learning rate must be positive, got {}",
            params.lr
        )));
    }
    let n_classes = data.labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let dim = data.points.first().map_or(0, |p| p.dim());
    if dim == 0 {
        return Err(Error::config("training set is empty"));
    }
    let mut model = LinearClassifier::zeros(n_classes, dim);
    let mut losses = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let (loss, grad) = loss_and_grad(&model, data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        losses.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            w.iter_mut()
                .zip(g)
                .for_each(|(wk, gk)| *wk -= params.lr * gk);
        }
        if model.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    Ok((model, losses))
}

/// Softmax cross-entropy linear classifier trained by gradient descent.
/// The number of classes is one more than the largest label (at least 2).
pub fn train_linear_ce(data: &LabeledSet, params: GdParams) -> Result<LinearClassifier> {
    train_linear_ce_traced(data, params).map(|(m, _)| m)
}

/// Class-balanced cache classifier over `data`: the score of class `c` is the
/// mean similarity of the query to the training points labeled `c`.
pub fn cache_classifier_entries(data: &LabeledSet) -> Vec<CacheEntry> {
    data.points
        .iter()
        .zip(&data.labels)
        .enumerate()
        .map(|(i, (x, &y))| CacheEntry {
            embedding: x.clone(),
            pseudo_label: y,
            entropy: 0.0,
            provenance: Provenance::Historical,
            seq: i as u64,
        })
        .collect()
}

/// Fraction of fresh points on which the trained linear classifier and the
/// class-balanced cache classifier pick the same class.
///
/// Training points come from [`super::gen_clusters`]; test labels are uniform and
/// drawn together with the test points from stream 2 of the spec's seed.
pub fn prop1_agreement(
    spec: &ClusterSpec,
    n_train_per_class: usize,
    n_test: usize,
    params: GdParams,
) -> Result<f64> {
    if n_test == 0 {
        return Err(Error::config("n_test must be at least 1"));
    }
    let train = super::gen_clusters(spec, n_train_per_class)?;
    let model = train_linear_ce(&train, params)?;
    let entries = cache_classifier_entries(&train);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    rng.set_stream(2);
    let mut agree = 0usize;
    for _ in 0..n_test {
        let y = rng.random_range(0..spec.n_classes());
        let x = spec.sample(y, &mut rng)?;
        let cache = weighted_cache_logits(&entries, spec.n_classes(), &x, Weighting::ClassBalance)?;
        if model.predict(&x) == pseudo_label(&cache) {
            agree += 1;
        }
    }
    Ok(agree as f64 / n_test as f64)
}
