use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{Adapter, Mode, RunConfig};

use super::shift::{ShiftStreamSpec, ShiftWorld};

/// `2 * mean(confidence * [prediction != bayes])`.
pub fn excess_error(predictions: &[usize], bayes: &[usize], confidence: &[f64]) -> Result<f64> {
    if predictions.len() != bayes.len() {
        return Err(Error::Dim {
            expected: predictions.len(),
            found: bayes.len(),
        });
    }
    if predictions.len() != confidence.len() {
        return Err(Error::Dim {
            expected: predictions.len(),
            found: confidence.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::config("excess error of an empty prediction set"));
    }
    let total: f64 = predictions
        .iter()
        .zip(bayes)
        .zip(confidence)
        .filter(|((p, b), _)| p != b)
        .map(|(_, c)| c)
        .sum();
    Ok(2.0 * total / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundGrid {
    /// Number of adaptation samples seen before evaluation. Default: 50, 200, 800.
    pub n_t: Vec<usize>,
    /// Shot capacities. Default: 3.
    pub shots: Vec<usize>,
    /// World seeds; at least 5. Default: 0..20.
    pub seeds: Vec<u64>,
    /// Held-out evaluation records per seed. Default: 400.
    pub n_eval: usize,
}

impl Default for BoundGrid {
    fn default() -> Self {
        BoundGrid {
            n_t: vec![50, 200, 800],
            shots: vec![3],
            seeds: (0..20).collect(),
            n_eval: 400,
        }
    }
}

impl BoundGrid {
    pub fn with_seeds(n: usize) -> Self {
        BoundGrid {
            seeds: (0..n as u64).collect(),
            ..Default::default()
        }
    }
}

/// The two modes compared by [`bound_experiment`].
pub const RISK_MODES: [Mode; 2] = [Mode::HistoricalOnly, Mode::BoostAdapter];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub n_t: usize,
    pub k: usize,
    pub mode: Mode,
    pub seed: u64,
    pub excess_error: f64,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
}

impl RiskTable {
    /// Mean excess error over seeds at one grid point.
    pub fn mean_excess(&self, n_t: usize, k: usize, mode: Mode) -> Option<f64> {
        self.mean_of(n_t, k, mode, |r| r.excess_error)
    }

    pub fn mean_top1(&self, n_t: usize, k: usize, mode: Mode) -> Option<f64> {
        self.mean_of(n_t, k, mode, |r| r.top1)
    }

    fn mean_of(
        &self,
        n_t: usize,
        k: usize,
        mode: Mode,
        f: impl Fn(&RiskRow) -> f64,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.n_t == n_t && r.k == k && r.mode == mode)
            .map(f)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// CSV with header `n_t,k,mode,seed,excess_error,top1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n_t,k,mode,seed,excess_error,top1")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.n_t, r.k, r.mode, r.seed, r.excess_error, r.top1
            )?;
        }
        Ok(())
    }
}

/// Excess-error curves of the historical cache, with and without boosting views.
///
/// For every seed the world of `spec` is rebuilt with that seed. A
/// historical-only adapter consumes adaptation records (stream 1) in order;
/// once it has seen `n_t` of them, the frozen cache classifies `n_eval`
/// held-out records (stream 2) once per mode in [`RISK_MODES`]. `base` supplies
/// everything but the mode and shot capacity. Rows are ordered by
/// `(k, n_t, mode, seed)`.
pub fn bound_experiment(
    spec: &ShiftStreamSpec,
    grid: &BoundGrid,
    base: &RunConfig,
) -> Result<RiskTable> {
    if grid.seeds.len() < 5 {
        return Err(Error::config(format!(
            "the bound experiment averages over at least 5 seeds, got {}",
            grid.seeds.len()
        )));
    }
    if grid.n_t.is_empty() || grid.shots.is_empty() || grid.n_eval == 0 {
        return Err(Error::config("empty grid"));
    }
    if grid.n_t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("n_t grid must be strictly increasing"));
    }
    let mut n_t_sorted = grid.n_t.clone();
    n_t_sorted.sort_unstable();
    for &k in &grid.shots {
        RunConfig {
            shots: k,
            ..base.clone()
        }
        .validate()?;
    }
    spec.validate()?;

    let per_seed: Vec<Vec<RiskRow>> = grid
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, grid, base, seed))
        .collect::<Result<_>>()?;

    let mut rows: Vec<RiskRow> = per_seed.into_iter().flatten().collect();
    let shot_rank = |k: usize| {
        grid.shots
            .iter()
            .position(|&s| s == k)
            .unwrap_or(usize::MAX)
    };
    let mode_rank = |m: Mode| {
        RISK_MODES
            .iter()
            .position(|&x| x == m)
            .unwrap_or(usize::MAX)
    };
    let seed_rank = |s: u64| {
        grid.seeds
            .iter()
            .position(|&x| x == s)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_key(|r| (shot_rank(r.k), r.n_t, mode_rank(r.mode), seed_rank(r.seed)));
    Ok(RiskTable { rows })
}

fn run_seed(
    spec: &ShiftStreamSpec,
    grid: &BoundGrid,
    base: &RunConfig,
    seed: u64,
) -> Result<Vec<RiskRow>> {
    let world = ShiftWorld::new(&ShiftStreamSpec {
        seed,
        ..spec.clone()
    })?;
    let n_max = *grid.n_t.last().expect("non-empty grid");
    let adapt = world.stream(n_max, 1)?;
    let eval = world.stream(grid.n_eval, 2)?;
    let bayes: Vec<usize> = eval.iter().map(|r| r.bayes).collect();
    let conf: Vec<f64> = eval.iter().map(|r| r.confidence).collect();

    let mut rows = Vec::new();
    for &k in &grid.shots {
        let learn = RunConfig {
            shots: k,
            mode: Mode::HistoricalOnly,
            consistency_filter: false,
            ..base.clone()
        };
        let mut adapter = Adapter::new(world.bank(), learn)?;
        let mut seen = 0;
        for &n_t in &grid.n_t {
            for rec in &adapt[seen..n_t] {
                adapter.predict(&rec.record)?;
            }
            seen = n_t;
            for mode in RISK_MODES {
                let cfg = RunConfig {
                    shots: k,
                    mode,
                    consistency_filter: base.consistency_filter && mode.uses_boosting(),
                    ..base.clone()
                };
                let preds = eval
                    .iter()
                    .map(|r| adapter.evaluate_with(&r.record, &cfg).map(|p| p.predicted))
                    .collect::<Result<Vec<_>>>()?;
                let correct = preds
                    .iter()
                    .zip(&eval)
                    .filter(|(p, r)| Some(**p) == r.record.truth)
                    .count();
                rows.push(RiskRow {
                    n_t,
                    k,
                    mode,
                    seed,
                    excess_error: excess_error(&preds, &bayes, &conf)?,
                    top1: correct as f64 / eval.len() as f64,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excess_error_examples() {
        assert_eq!(
            excess_error(&[0, 1, 1], &[0, 1, 1], &[0.4; 3]).unwrap(),
            0.0
        );
        let e = excess_error(&[1, 0, 1, 0], &[0, 1, 0, 1], &[0.4; 4]).unwrap();
        assert!((e - 0.8).abs() < 1e-12);
        let e = excess_error(&[1, 0, 0, 1], &[0, 1, 0, 1], &[0.4; 4]).unwrap();
        assert!((e - 0.4).abs() < 1e-12);
        assert!(matches!(
            excess_error(&[0], &[0, 1], &[0.1]),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn grid_guards() {
        let spec = ShiftStreamSpec::default();
        let cfg = RunConfig::default();
        assert!(bound_experiment(&spec, &BoundGrid::with_seeds(4), &cfg).is_err());
        let grid = BoundGrid {
            n_t: vec![200, 50],
            ..Default::default()
        };
        assert!(bound_experiment(&spec, &grid, &cfg).is_err());
    }

    #[test]
    fn small_grid_row_layout() {
        let grid = BoundGrid {
            n_t: vec![10, 20],
            shots: vec![1, 3],
            seeds: (0..5).collect(),
            n_eval: 20,
        };
        let t =
            bound_experiment(&ShiftStreamSpec::default(), &grid, &RunConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * 2 * 5);
        assert_eq!(
            (t.rows[0].k, t.rows[0].n_t, t.rows[0].mode, t.rows[0].seed),
            (1, 10, Mode::HistoricalOnly, 0)
        );
        assert_eq!(t.rows.last().unwrap().k, 3);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 41);
    }
}
