use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{dot, norm, normalize, Embedding};

/// Largest `|cos|` allowed between two class centers.
pub const MAX_CENTER_COSINE: f64 = 0.1;

/// `N` near-orthogonal unit centers in `C` dimensions with isotropic noise `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    sigma: f64,
    seed: u64,
    centers: Vec<Embedding>,
}

impl ClusterSpec {
    /// Random orthonormal centers drawn from `seed`.
    pub fn new(n_classes: usize, dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("a cluster world needs at least 2 classes"));
        }
        if dim < n_classes {
            return Err(Error::config(format!(
                "cannot place {n_classes} near-orthogonal centers in {dim} dimensions (need C >= N)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = orthonormal_basis(n_classes, dim, &mut rng)?
            .into_iter()
            .map(|c| Embedding::from_unit(c, 1e-9))
            .collect::<Result<Vec<_>>>()?;
        Self::with_centers(centers, sigma, seed)
    }

    /// Explicit centers; rejects pairs with `|cos| > 0.1`.
    pub fn with_centers(centers: Vec<Embedding>, sigma: f64, seed: u64) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::config("a cluster world needs at least 2 classes"));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::config(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let dim = centers[0].dim();
        if dim < centers.len() {
            return Err(Error::config(format!(
                "cannot place {} near-orthogonal centers in {dim} dimensions (need C >= N)",
                centers.len()
            )));
        }
        for (i, a) in centers.iter().enumerate() {
            if a.dim() != dim {
                return Err(Error::Dim {
                    expected: dim,
                    found: a.dim(),
                });
            }
            for (j, b) in centers.iter().enumerate().skip(i + 1) {
                let c = a.dot(b);
                if c.abs() > MAX_CENTER_COSINE {
                    return Err(Error::config(format!(
                        "centers {i} and {j} have cosine {c:.4}, above {MAX_CENTER_COSINE}"
                    )));
                }
            }
        }
        Ok(ClusterSpec {
            sigma,
            seed,
            centers,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centers(&self) -> &[Embedding] {
        &self.centers
    }

    /// Draws one sample of class `label`.
    pub fn sample<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Result<Embedding> {
        let center = &self.centers[label];
        if self.sigma == 0.0 {
            return Ok(center.clone());
        }
        let v: Vec<f64> = center
            .as_slice()
            .iter()
            .map(|&c| c + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize(&v)
    }
}

/// Labeled points, parallel vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub points: Vec<Embedding>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Class-major sample set: `n_per_class` points of class 0, then class 1, and so on.
/// Draws from stream 1 of the spec's seed, so the centers (stream 0) are not reused.
pub fn gen_clusters(spec: &ClusterSpec, n_per_class: usize) -> Result<LabeledSet> {
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut set = LabeledSet::default();
    for label in 0..spec.n_classes() {
        for _ in 0..n_per_class {
            set.points.push(spec.sample(label, &mut rng)?);
            set.labels.push(label);
        }
    }
    Ok(set)
}

/// `n` orthonormal vectors in `dim` dimensions, Gram-Schmidt on Gaussian draws.
pub fn orthonormal_basis<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n > dim {
        return Err(Error::config(format!(
            "{n} orthonormal vectors do not fit in {dim} dimensions"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the result orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        if norm(&v) > 1e-6 {
            basis.push(normalize(&v)?.into_inner());
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_are_orthonormal() {
        let spec = ClusterSpec::new(5, 16, 0.05, 3).unwrap();
        for (i, a) in spec.centers().iter().enumerate() {
            assert!((a.dot(a) - 1.0).abs() < 1e-12);
            for b in &spec.centers()[i + 1..] {
                assert!(a.dot(b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_sigma_returns_centers() {
        let spec = ClusterSpec::new(3, 8, 0.0, 1).unwrap();
        let set = gen_clusters(&spec, 4).unwrap();
        for (p, &y) in set.points.iter().zip(&set.labels) {
            assert_eq!(p, &spec.centers()[y]);
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let spec = ClusterSpec::new(3, 16, 0.05, 9).unwrap();
        assert_eq!(
            gen_clusters(&spec, 10).unwrap(),
            gen_clusters(&spec, 10).unwrap()
        );
        let other = ClusterSpec::new(3, 16, 0.05, 10).unwrap();
        assert_ne!(
            gen_clusters(&spec, 10).unwrap(),
            gen_clusters(&other, 10).unwrap()
        );
    }

    #[test]
    fn guards() {
        assert!(matches!(
            ClusterSpec::new(4, 3, 0.1, 0),
            Err(Error::Config(_))
        ));
        let c = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            ClusterSpec::with_centers(vec![c.clone(), c], 0.1, 0),
            Err(Error::Config(_))
        ));
        let spec = ClusterSpec::new(2, 4, 0.1, 0).unwrap();
        assert!(matches!(gen_clusters(&spec, 0), Err(Error::Config(_))));
    }
}
