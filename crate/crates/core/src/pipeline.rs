//! Online adaptation loop.
//!
//! For every record the adapter
//!
//! 1. scores the original embedding with the zero-shot classifier,
//! 2. offers it to the persistent cache as a historical sample,
//! 3. filters the augmented views by entropy and turns the survivors into
//!    boosting samples labeled with their own zero-shot argmax,
//! 4. predicts with `clip_scale * zero_shot + cache_logits` over a per-sample
//!    cache that holds the historical entries plus the boosting entries.
//!
//! Boosting entries only ever live in that per-sample cache, so the persistent
//! cache gains at most one historical entry per record.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{BoostCache, CacheEntry, InsertOutcome, Provenance};
use crate::error::{Error, Result};
use crate::math::{argmax, clip_logits, entropy, softmax, Affinity, ClassBank, Embedding};

/// One test event: the original embedding plus embeddings of its augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub id: u64,
    pub original: Embedding,
    pub views: Vec<Embedding>,
    pub truth: Option<usize>,
}

impl StreamRecord {
    pub fn new(id: u64, original: Embedding, views: Vec<Embedding>, truth: Option<usize>) -> Self {
        StreamRecord {
            id,
            original,
            views,
            truth,
        }
    }

    pub fn dim(&self) -> usize {
        self.original.dim()
    }

    pub(crate) fn check(&self, dim: usize, n_classes: usize) -> Result<()> {
        for e in std::iter::once(&self.original).chain(&self.views) {
            if e.dim() != dim {
                return Err(Error::Dim {
                    expected: dim,
                    found: e.dim(),
                });
            }
        }
        if let Some(t) = self.truth {
            if t >= n_classes {
                return Err(Error::Label {
                    label: t,
                    n_classes,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Historical and boosting samples.
    #[serde(rename = "boostadapter")]
    BoostAdapter,
    HistoricalOnly,
    BoostingOnly,
    ClipOnly,
}

impl Mode {
    pub fn uses_historical(self) -> bool {
        matches!(self, Mode::BoostAdapter | Mode::HistoricalOnly)
    }

    pub fn uses_boosting(self) -> bool {
        matches!(self, Mode::BoostAdapter | Mode::BoostingOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::BoostAdapter => "boostadapter",
            Mode::HistoricalOnly => "historical-only",
            Mode::BoostingOnly => "boosting-only",
            Mode::ClipOnly => "clip-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boostadapter" => Ok(Mode::BoostAdapter),
            "historical-only" => Ok(Mode::HistoricalOnly),
            "boosting-only" => Ok(Mode::BoostingOnly),
            "clip-only" => Ok(Mode::ClipOnly),
            other => Err(Error::config(format!(
                "unknown mode {other:?} (expected boostadapter, historical-only, boosting-only or clip-only)"
            ))),
        }
    }
}

/// Whether boosting samples compete with historical ones for the per-class capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    Joint,
    Independent,
}

impl CacheMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheMode::Joint => "joint",
            CacheMode::Independent => "independent",
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CacheMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(CacheMode::Joint),
            "independent" => Ok(CacheMode::Independent),
            other => Err(Error::config(format!(
                "unknown cache mode {other:?} (expected joint or independent)"
            ))),
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Affinity weight. Default: 2.0.
    pub alpha: f64,
    /// Affinity sharpness. Default: 5.0.
    pub beta: f64,
    /// Softmax temperature used for every entropy. Default: 0.01.
    pub temperature: f64,
    /// Weight of the zero-shot logits in the blend. Default: 100.
    pub clip_scale: f64,
    /// Fraction of views kept as boosting samples. Default: 0.1.
    pub percentile: f64,
    /// Per-class shot capacity. Default: 3.
    pub shots: usize,
    pub mode: Mode,
    pub cache_mode: CacheMode,
    /// Drop views whose cache prediction disagrees with their zero-shot prediction.
    pub consistency_filter: bool,
    /// Historical samples are admitted only when their entropy is at most
    /// `entropy_gate * ln N`. Default: 1.0 (no gating).
    pub entropy_gate: f64,
    /// Offer the historical sample to the cache after predicting it instead of before.
    pub insert_after: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 2.0,
            beta: 5.0,
            temperature: 0.01,
            clip_scale: 100.0,
            percentile: 0.1,
            shots: 3,
            mode: Mode::BoostAdapter,
            cache_mode: CacheMode::Joint,
            consistency_filter: false,
            entropy_gate: 1.0,
            insert_after: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        Affinity::new(self.alpha, self.beta)?;
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        if !self.clip_scale.is_finite() || self.clip_scale < 0.0 {
            return Err(Error::config("clip scale must be non-negative"));
        }
        if self.mode == Mode::ClipOnly && self.clip_scale == 0.0 {
            return Err(Error::config("clip-only mode needs a positive clip scale"));
        }
        check_percentile(self.percentile)?;
        if self.shots == 0 {
            return Err(Error::config("shot capacity must be at least 1"));
        }
        if !(self.entropy_gate > 0.0 && self.entropy_gate <= 1.0) {
            return Err(Error::config("entropy gate must lie in (0, 1]"));
        }
        if self.consistency_filter && !self.mode.uses_boosting() {
            return Err(Error::config(format!(
                "the consistency filter acts on boosting views, which mode {} does not use",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn affinity(&self) -> Result<Affinity> {
        Affinity::new(self.alpha, self.beta)
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "percentile must lie in (0, 1], got {p}"
        )))
    }
}

/// Number of views the percentile filter keeps: `max(1, floor(p * V))`, 0 when `V = 0`.
pub fn kept_view_count(n_views: usize, p: f64) -> usize {
    if n_views == 0 {
        return 0;
    }
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    let m = (p * n_views as f64 + 1e-9).floor() as usize;
    m.clamp(1, n_views)
}

/// Indices of the lowest-entropy views, ordered by ascending entropy then index.
pub fn filter_views(view_entropies: &[f64], p: f64) -> Result<Vec<usize>> {
    check_percentile(p)?;
    let m = kept_view_count(view_entropies.len(), p);
    let mut idx: Vec<usize> = (0..view_entropies.len()).collect();
    idx.sort_by(|&a, &b| {
        view_entropies[a]
            .total_cmp(&view_entropies[b])
            .then(a.cmp(&b))
    });
    idx.truncate(m);
    Ok(idx)
}

/// Argmax pseudo-label, ties to the lowest class index.
pub fn pseudo_label(logits: &[f64]) -> usize {
    argmax(logits)
}

/// Consistency filter for a view. `cache_label` is `None` when the historical
/// cache is empty, in which case every view passes.
pub fn consistency_keep(view_clip_label: usize, view_cache_label: Option<usize>) -> bool {
    view_cache_label.is_none_or(|c| c == view_clip_label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    pub id: u64,
    pub final_logits: Vec<f64>,
    pub predicted: usize,
    /// Zero-shot argmax of the original embedding.
    pub clip_label: usize,
    pub clip_entropy: f64,
    /// Boosting entries present in the prediction cache.
    pub n_boosting_used: usize,
    /// Result of offering the sample to the persistent cache, if it was offered.
    pub cache_outcome: Option<InsertOutcome>,
}

struct ZeroShot {
    logits: Vec<f64>,
    entropy: f64,
    label: usize,
}

fn zero_shot(e: &Embedding, bank: &ClassBank, temperature: f64) -> Result<ZeroShot> {
    let logits = clip_logits(e, bank)?;
    let entropy = entropy(&softmax(&logits, temperature)?);
    let label = pseudo_label(&logits);
    Ok(ZeroShot {
        logits,
        entropy,
        label,
    })
}

fn admits_historical(cfg: &RunConfig, h: f64, n_classes: usize) -> bool {
    cfg.mode.uses_historical() && h <= cfg.entropy_gate * (n_classes as f64).ln() + 1e-12
}

/// Filtered views as (embedding, label, entropy), in ascending view-index order.
fn boosting_candidates(
    persistent: &BoostCache,
    bank: &ClassBank,
    rec: &StreamRecord,
    cfg: &RunConfig,
    affinity: &Affinity,
) -> Result<Vec<(Embedding, usize, f64)>> {
    if rec.views.is_empty() {
        return Ok(Vec::new());
    }
    let scored = rec
        .views
        .iter()
        .map(|v| zero_shot(v, bank, cfg.temperature))
        .collect::<Result<Vec<_>>>()?;
    let entropies: Vec<f64> = scored.iter().map(|s| s.entropy).collect();
    let mut kept = filter_views(&entropies, cfg.percentile)?;
    kept.sort_unstable();

    let check_consistency = cfg.consistency_filter && !persistent.is_empty();
    let mut out = Vec::with_capacity(kept.len());
    for i in kept {
        let s = &scored[i];
        if check_consistency {
            let cache_label = pseudo_label(&persistent.logits(&rec.views[i], affinity)?);
            if !consistency_keep(s.label, Some(cache_label)) {
                continue;
            }
        }
        out.push((rec.views[i].clone(), s.label, s.entropy));
    }
    Ok(out)
}

fn cache_term(
    persistent: &BoostCache,
    boosting: Vec<(Embedding, usize, f64)>,
    query: &Embedding,
    cfg: &RunConfig,
    affinity: &Affinity,
) -> Result<(Vec<f64>, usize)> {
    if boosting.is_empty() {
        return Ok((persistent.logits(query, affinity)?, 0));
    }
    let into_entry = |pool: &mut BoostCache, (embedding, label, h): (Embedding, usize, f64)| {
        let seq = pool.next_seq();
        pool.insert(CacheEntry {
            embedding,
            pseudo_label: label,
            entropy: h,
            provenance: Provenance::Boosting,
            seq,
        })
    };
    match cfg.cache_mode {
        CacheMode::Joint => {
            let mut pool = persistent.snapshot();
            for b in boosting {
                into_entry(&mut pool, b)?;
            }
            Ok((pool.logits(query, affinity)?, pool.boosting_count()))
        }
        CacheMode::Independent => {
            let mut pool = BoostCache::new(
                persistent.n_classes(),
                persistent.dim(),
                persistent.capacity(),
            )?;
            for b in boosting {
                into_entry(&mut pool, b)?;
            }
            let hist = persistent.logits(query, affinity)?;
            let boost = pool.logits(query, affinity)?;
            let sum = hist.iter().zip(&boost).map(|(a, b)| a + b).collect();
            Ok((sum, pool.boosting_count()))
        }
    }
}

fn historical_entry(cache: &mut BoostCache, rec: &StreamRecord, zs: &ZeroShot) -> CacheEntry {
    CacheEntry {
        embedding: rec.original.clone(),
        pseudo_label: zs.label,
        entropy: zs.entropy,
        provenance: Provenance::Historical,
        seq: cache.next_seq(),
    }
}

fn check_shapes(cache: &BoostCache, bank: &ClassBank, rec: &StreamRecord) -> Result<()> {
    if cache.n_classes() != bank.n_classes() {
        return Err(Error::config(format!(
            "cache has {} classes, bank has {}",
            cache.n_classes(),
            bank.n_classes()
        )));
    }
    if cache.dim() != bank.dim() {
        return Err(Error::Dim {
            expected: bank.dim(),
            found: cache.dim(),
        });
    }
    rec.check(bank.dim(), bank.n_classes())
}

fn predict_impl(
    cache: &mut BoostCache,
    bank: &ClassBank,
    rec: &StreamRecord,
    cfg: &RunConfig,
    update: bool,
) -> Result<SamplePrediction> {
    check_shapes(cache, bank, rec)?;
    let affinity = cfg.affinity()?;
    let zs = zero_shot(&rec.original, bank, cfg.temperature)?;
    let offer = update && admits_historical(cfg, zs.entropy, bank.n_classes());

    let mut outcome = None;
    if offer && !cfg.insert_after {
        let entry = historical_entry(cache, rec, &zs);
        outcome = Some(cache.insert(entry)?);
    }

    let (final_logits, n_boosting_used) = if cfg.mode == Mode::ClipOnly {
        (
            zs.logits
                .iter()
                .map(|z| cfg.clip_scale * z)
                .collect::<Vec<_>>(),
            0,
        )
    } else {
        let boosting = if cfg.mode.uses_boosting() {
            boosting_candidates(cache, bank, rec, cfg, &affinity)?
        } else {
            Vec::new()
        };
        let (term, n_boost) = cache_term(cache, boosting, &rec.original, cfg, &affinity)?;
        let logits = zs
            .logits
            .iter()
            .zip(&term)
            .map(|(z, c)| cfg.clip_scale * z + c)
            .collect::<Vec<_>>();
        (logits, n_boost)
    };

    if offer && cfg.insert_after {
        let entry = historical_entry(cache, rec, &zs);
        outcome = Some(cache.insert(entry)?);
    }
    Ok(SamplePrediction {
        id: rec.id,
        predicted: argmax(&final_logits),
        final_logits,
        clip_label: zs.label,
        clip_entropy: zs.entropy,
        n_boosting_used,
        cache_outcome: outcome,
    })
}

/// Predicts one record, updating the persistent `cache` with its historical entry.
pub fn predict_sample(
    cache: &mut BoostCache,
    bank: &ClassBank,
    rec: &StreamRecord,
    cfg: &RunConfig,
) -> Result<SamplePrediction> {
    cfg.validate()?;
    predict_impl(cache, bank, rec, cfg, true)
}

/// Online adapter: a class bank, a configuration and the persistent cache.
#[derive(Debug, Clone)]
pub struct Adapter<'a> {
    bank: &'a ClassBank,
    cfg: RunConfig,
    cache: BoostCache,
}

impl<'a> Adapter<'a> {
    pub fn new(bank: &'a ClassBank, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = BoostCache::new(bank.n_classes(), bank.dim(), cfg.shots)?;
        Ok(Adapter { bank, cfg, cache })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &ClassBank {
        self.bank
    }

    pub fn cache(&self) -> &BoostCache {
        &self.cache
    }

    /// Predicts `rec` and lets it update the persistent cache.
    pub fn predict(&mut self, rec: &StreamRecord) -> Result<SamplePrediction> {
        predict_impl(&mut self.cache, self.bank, rec, &self.cfg, true)
    }

    /// Predicts `rec` against the current cache without modifying it, using `cfg`
    /// for everything but the shot capacity.
    pub fn evaluate_with(&self, rec: &StreamRecord, cfg: &RunConfig) -> Result<SamplePrediction> {
        cfg.validate()?;
        let mut cache = self.cache.clone();
        predict_impl(&mut cache, self.bank, rec, cfg, false)
    }

    /// Predicts `rec` without modifying the cache.
    pub fn evaluate(&self, rec: &StreamRecord) -> Result<SamplePrediction> {
        self.evaluate_with(rec, &self.cfg)
    }

    pub fn into_cache(self) -> BoostCache {
        self.cache
    }
}

/// Per-sample line of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: u64,
    pub pred: usize,
    pub truth: Option<usize>,
    pub clip_entropy: f64,
    pub n_boost: usize,
    pub outcome: &'static str,
}

impl From<&SamplePrediction> for SampleRecord {
    fn from(p: &SamplePrediction) -> Self {
        SampleRecord {
            id: p.id,
            pred: p.predicted,
            truth: None,
            clip_entropy: p.clip_entropy,
            n_boost: p.n_boosting_used,
            outcome: match p.cache_outcome {
                None => "none",
                Some(InsertOutcome::Inserted) => "inserted",
                Some(InsertOutcome::Replaced { .. }) => "replaced",
                Some(InsertOutcome::Rejected) => "rejected",
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Top-1 accuracy over labeled records; `None` when no record carries a label.
    pub top1: Option<f64>,
    pub n: usize,
    pub n_labeled: usize,
    pub per_class: Vec<Option<f64>>,
    pub config: RunConfig,
    pub wall_time_s: f64,
    pub per_sample: Vec<SampleRecord>,
}

/// Streaming evaluation: feed records in order, then [`StreamRun::finish`].
pub struct StreamRun<'a> {
    adapter: Adapter<'a>,
    samples: Vec<SampleRecord>,
    correct: Vec<usize>,
    labeled: Vec<usize>,
    started: Instant,
}

impl<'a> StreamRun<'a> {
    pub fn new(bank: &'a ClassBank, cfg: RunConfig) -> Result<Self> {
        let n = bank.n_classes();
        Ok(StreamRun {
            adapter: Adapter::new(bank, cfg)?,
            samples: Vec::new(),
            correct: vec![0; n],
            labeled: vec![0; n],
            started: Instant::now(),
        })
    }

    pub fn observe(&mut self, rec: &StreamRecord) -> Result<&SampleRecord> {
        let pred = self.adapter.predict(rec).map_err(|e| e.at_record(rec.id))?;
        let mut line = SampleRecord::from(&pred);
        line.truth = rec.truth;
        if let Some(t) = rec.truth {
            self.labeled[t] += 1;
            if pred.predicted == t {
                self.correct[t] += 1;
            }
        }
        self.samples.push(line);
        Ok(self.samples.last().expect("just pushed"))
    }

    pub fn adapter(&self) -> &Adapter<'a> {
        &self.adapter
    }

    pub fn finish(self) -> Result<(MetricsReport, BoostCache)> {
        if self.samples.is_empty() {
            return Err(Error::EmptyStream);
        }
        let n_labeled: usize = self.labeled.iter().sum();
        let n_correct: usize = self.correct.iter().sum();
        let top1 = (n_labeled > 0).then(|| n_correct as f64 / n_labeled as f64);
        let per_class = self
            .correct
            .iter()
            .zip(&self.labeled)
            .map(|(&c, &l)| (l > 0).then(|| c as f64 / l as f64))
            .collect();
        let report = MetricsReport {
            top1,
            n: self.samples.len(),
            n_labeled,
            per_class,
            config: self.adapter.cfg.clone(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            per_sample: self.samples,
        };
        Ok((report, self.adapter.cache))
    }
}

/// Runs the online protocol (batch size 1) over `records` in order.
pub fn run_stream<I>(records: I, bank: &ClassBank, cfg: &RunConfig) -> Result<MetricsReport>
where
    I: IntoIterator<Item = StreamRecord>,
{
    try_run_stream(records.into_iter().map(Ok), bank, cfg)
}

/// [`run_stream`] over fallible records, e.g. straight from a stream reader.
pub fn try_run_stream<I>(records: I, bank: &ClassBank, cfg: &RunConfig) -> Result<MetricsReport>
where
    I: IntoIterator<Item = Result<StreamRecord>>,
{
    let mut run = StreamRun::new(bank, cfg.clone())?;
    for rec in records {
        run.observe(&rec?)?;
    }
    run.finish().map(|(report, _)| report)
}
