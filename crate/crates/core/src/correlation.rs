//! Temporal correlation protocol: mints confidence-weighted cross-modal
//! pairs from two independent event streams.
//!
//! Events from different modalities are paired when they fall within a
//! temporal window `tau` and their combined confidence
//! `w = exp(-lambda * |dt|) * TypeSim(a, b)` clears `theta_min`. Pairs are
//! partitioned into contiguous equal-duration temporal folds so no pair can
//! straddle a train/test boundary, and each fold receives a quota of
//! uniformly sampled uncorrelated negatives (`w = 0`) on top of its
//! correlated set.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, StreamDataset};

/// One symmetric similarity entry between two type tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSimEntry {
    pub a: String,
    pub b: String,
    pub sim: f64,
}

/// Symmetric lookup table for type similarity.
///
/// Unlisted identical tags score `default_same`, unlisted distinct tags
/// score `default_diff`. Listed entries apply in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypeSimTable {
    pub entries: Vec<TypeSimEntry>,
    pub default_same: f64,
    pub default_diff: f64,
}

impl Default for TypeSimTable {
    fn default() -> Self {
        TypeSimTable {
            entries: Vec::new(),
            default_same: 1.0,
            default_diff: 0.0,
        }
    }
}

impl TypeSimTable {
    pub fn with_entry(mut self, a: &str, b: &str, sim: f64) -> Self {
        self.entries.push(TypeSimEntry {
            a: a.to_string(),
            b: b.to_string(),
            sim,
        });
        self
    }

    /// Checks entry ranges, conflicting duplicates, and that no cross-tag
    /// similarity exceeds either tag's self-similarity.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.default_same) || !in_unit(self.default_diff) {
            return Err(Error::config("type similarity defaults must lie in [0,1]".to_string()));
        }
        if self.default_diff > self.default_same {
            return Err(Error::config(
                "default_diff must not exceed default_same".to_string(),
            ));
        }
        let mut seen: BTreeMap<(String, String), f64> = BTreeMap::new();
        for e in &self.entries {
            if !in_unit(e.sim) {
                return Err(Error::config(format!(
                    "similarity ({}, {}) = {} outside [0,1]",
                    e.a, e.b, e.sim
                )));
            }
            let key = if e.a <= e.b {
                (e.a.clone(), e.b.clone())
            } else {
                (e.b.clone(), e.a.clone())
            };
            if let Some(&prev) = seen.get(&key) {
                if prev != e.sim {
                    return Err(Error::config(format!(
                        "conflicting similarity entries for ({}, {}): {} vs {}",
                        key.0, key.1, prev, e.sim
                    )));
                }
            }
            seen.insert(key, e.sim);
        }
        let lookup = SimLookup::build(self);
        for e in &self.entries {
            if e.a != e.b {
                let cap = lookup.sim(&e.a, &e.a).min(lookup.sim(&e.b, &e.b));
                if e.sim > cap {
                    return Err(Error::config(format!(
                        "similarity ({}, {}) = {} exceeds a self-similarity of {}",
                        e.a, e.b, e.sim, cap
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Resolved similarity map built once per correlation run.
struct SimLookup {
    map: BTreeMap<String, BTreeMap<String, f64>>,
    default_same: f64,
    default_diff: f64,
}

impl SimLookup {
    fn build(table: &TypeSimTable) -> Self {
        let mut map: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for e in &table.entries {
            map.entry(e.a.clone()).or_default().insert(e.b.clone(), e.sim);
            map.entry(e.b.clone()).or_default().insert(e.a.clone(), e.sim);
        }
        SimLookup {
            map,
            default_same: table.default_same,
            default_diff: table.default_diff,
        }
    }

    fn sim(&self, a: &str, b: &str) -> f64 {
        if let Some(v) = self.map.get(a).and_then(|inner| inner.get(b)) {
            return *v;
        }
        if a == b {
            self.default_same
        } else {
            self.default_diff
        }
    }
}

/// Parameters of the correlation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    /// Temporal window in seconds; only pairs with |dt| < tau are considered.
    pub tau: f64,
    /// Exponential decay rate in 1/seconds.
    pub lambda_decay: f64,
    /// Minimum confidence; pairs with w > theta_min are kept.
    pub theta_min: f64,
    /// Injected negatives per fold as a fraction of its correlated count.
    pub negative_fraction: f64,
    /// Number of contiguous temporal folds.
    pub folds: usize,
    pub type_similarity: TypeSimTable,
    pub rng_seed: u64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            tau: 300.0,
            lambda_decay: LN_2 / 60.0,
            theta_min: 0.5,
            negative_fraction: 0.30,
            folds: 5,
            type_similarity: TypeSimTable::default(),
            rng_seed: 0,
        }
    }
}

impl CorrelationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_decay >= 0.0) {
            return Err(Error::config(format!(
                "lambda_decay must be non-negative, got {}",
                self.lambda_decay
            )));
        }
        if !(self.theta_min > 0.0 && self.theta_min < 1.0) {
            return Err(Error::config(format!(
                "theta_min must lie in (0,1), got {}",
                self.theta_min
            )));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::config(format!(
                "negative_fraction must lie in [0,1], got {}",
                self.negative_fraction
            )));
        }
        if self.folds < 2 {
            return Err(Error::config(format!("folds must be at least 2, got {}", self.folds)));
        }
        self.type_similarity.validate()
    }
}

/// Confidence `exp(-lambda * |dt|)` of a temporal gap.
pub fn decay_weight(dt_seconds: f64, lambda_decay: f64) -> f64 {
    (-lambda_decay * dt_seconds.abs()).exp()
}

/// Decay rate giving the requested half-life in seconds.
pub fn half_life_decay(half_life_seconds: f64) -> f64 {
    LN_2 / half_life_seconds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    #[serde(rename = "CORRELATED")]
    Correlated,
    #[serde(rename = "INJECTED_NEGATIVE")]
    InjectedNegative,
}

/// Two cross-modal events with their correlation confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub left: String,
    pub right: String,
    pub w: f64,
    pub kind: PairKind,
}

/// Confidence band of a correlation weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "HIGH")]
    High,
    #[serde(rename = "MEDIUM")]
    Medium,
    #[serde(rename = "LOW")]
    Low,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Bucket::High => "HIGH",
            Bucket::Medium => "MEDIUM",
            Bucket::Low => "LOW",
        };
        write!(f, "{s}")
    }
}

/// HIGH for w > 0.8, MEDIUM for 0.5 < w <= 0.8, LOW otherwise.
pub fn confidence_bucket(w: f64) -> Bucket {
    if w > 0.8 {
        Bucket::High
    } else if w > 0.5 {
        Bucket::Medium
    } else {
        Bucket::Low
    }
}

/// Output of one correlation run: per-fold pair sets plus the fold intervals
/// and the configuration they were produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingScenario {
    pub config: CorrelationConfig,
    /// Contiguous `[start, end)` intervals; the final fold includes its end.
    pub fold_boundaries: Vec<(f64, f64)>,
    pub folds: Vec<Vec<CorrelatedPair>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TrainingScenario {
    /// Index of the fold whose interval contains `t`, if any.
    pub fn fold_of(&self, t: f64) -> Option<usize> {
        let last = self.fold_boundaries.len() - 1;
        for (k, &(start, end)) in self.fold_boundaries.iter().enumerate() {
            let inside = t >= start && (t < end || (k == last && t <= end));
            if inside {
                return Some(k);
            }
        }
        None
    }

    /// All pairs with their fold index, fold by fold.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, &CorrelatedPair)> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(k, fold)| fold.iter().map(move |p| (k, p)))
    }

    pub fn correlated_count(&self, fold: usize) -> usize {
        self.folds[fold]
            .iter()
            .filter(|p| p.kind == PairKind::Correlated)
            .count()
    }

    pub fn negative_count(&self, fold: usize) -> usize {
        self.folds[fold]
            .iter()
            .filter(|p| p.kind == PairKind::InjectedNegative)
            .count()
    }

    /// Pair counts per confidence bucket over all folds, negatives included.
    pub fn bucket_histogram(&self) -> BTreeMap<Bucket, usize> {
        let mut hist = BTreeMap::new();
        for (_, p) in self.iter_pairs() {
            *hist.entry(confidence_bucket(p.w)).or_insert(0) += 1;
        }
        hist
    }

    pub fn total_pairs(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize scenario: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, 1, format!("bad scenario file: {e}")))
    }
}

/// Computes the fold intervals and assigns each event index to a fold.
struct FoldPlan {
    boundaries: Vec<(f64, f64)>,
    t_min: f64,
    duration: f64,
}

impl FoldPlan {
    fn new(datasets: [&StreamDataset; 2], k: usize) -> Self {
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        for ds in datasets {
            for e in &ds.events {
                t_min = t_min.min(e.timestamp);
                t_max = t_max.max(e.timestamp);
            }
        }
        if !t_min.is_finite() {
            t_min = 0.0;
            t_max = 0.0;
        }
        let duration = (t_max - t_min) / k as f64;
        let mut boundaries = Vec::with_capacity(k);
        for i in 0..k {
            let start = t_min + i as f64 * duration;
            let end = if i == k - 1 { t_max } else { t_min + (i + 1) as f64 * duration };
            boundaries.push((start, end));
        }
        FoldPlan {
            boundaries,
            t_min,
            duration,
        }
    }

    fn fold_of(&self, t: f64) -> usize {
        let k = self.boundaries.len();
        if self.duration <= 0.0 {
            return k - 1;
        }
        let mut idx = (((t - self.t_min) / self.duration) as usize).min(k - 1);
        // Float rounding near a boundary can land one fold off; the interval
        // rule is authoritative.
        while idx > 0 && t < self.boundaries[idx].0 {
            idx -= 1;
        }
        while idx + 1 < k && t >= self.boundaries[idx + 1].0 {
            idx += 1;
        }
        idx
    }
}

/// Runs the correlation protocol over two streams of distinct modalities.
///
/// The scan walks both streams in time order with a sliding window, so cost
/// is proportional to events plus in-window pairs rather than the full cross
/// product. Output is a pure function of `(datasets, config)` including the
/// injected negatives, and is identical regardless of argument order.
pub fn correlate(
    da: &StreamDataset,
    db: &StreamDataset,
    cfg: &CorrelationConfig,
) -> Result<TrainingScenario> {
    cfg.validate()?;
    if da.modality == db.modality {
        return Err(Error::config(format!(
            "cannot correlate two {} streams; modalities must differ",
            da.modality
        )));
    }
    // Canonical orientation keeps the result independent of argument order.
    let (a, b) = if da.modality <= db.modality { (da, db) } else { (db, da) };

    let sim = SimLookup::build(&cfg.type_similarity);
    let plan = FoldPlan::new([a, b], cfg.folds);

    // Per-fold event index lists; input order is time order, so these are too.
    let mut a_folds: Vec<Vec<usize>> = vec![Vec::new(); cfg.folds];
    let mut b_folds: Vec<Vec<usize>> = vec![Vec::new(); cfg.folds];
    for (i, e) in a.events.iter().enumerate() {
        a_folds[plan.fold_of(e.timestamp)].push(i);
    }
    for (j, e) in b.events.iter().enumerate() {
        b_folds[plan.fold_of(e.timestamp)].push(j);
    }

    let passes = |ea: &Event, eb: &Event| -> Option<f64> {
        let dt = ea.timestamp - eb.timestamp;
        if dt.abs() >= cfg.tau {
            return None;
        }
        let w = decay_weight(dt, cfg.lambda_decay) * sim.sim(&ea.type_tag, &eb.type_tag);
        (w > cfg.theta_min).then_some(w)
    };

    let mut folds = Vec::with_capacity(cfg.folds);
    let mut warnings = Vec::new();
    for k in 0..cfg.folds {
        let a_idx = &a_folds[k];
        let b_idx = &b_folds[k];
        let mut pairs = Vec::new();
        let mut correlated_keys: BTreeSet<(usize, usize)> = BTreeSet::new();

        let mut lo = 0usize;
        for &i in a_idx {
            let ea = &a.events[i];
            // Advance the window start past events older than tau.
            while lo < b_idx.len() && ea.timestamp - b.events[b_idx[lo]].timestamp >= cfg.tau {
                lo += 1;
            }
            for &j in &b_idx[lo..] {
                let eb = &b.events[j];
                if eb.timestamp - ea.timestamp >= cfg.tau {
                    break;
                }
                if let Some(w) = passes(ea, eb) {
                    correlated_keys.insert((i, j));
                    pairs.push(CorrelatedPair {
                        left: ea.id.clone(),
                        right: eb.id.clone(),
                        w,
                        kind: PairKind::Correlated,
                    });
                }
            }
        }

        let n_corr = pairs.len();
        let n_neg = (cfg.negative_fraction * n_corr as f64).ceil() as usize;
        if n_neg > 0 {
            let mut rng =
                ChaCha12Rng::seed_from_u64(cfg.rng_seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
            let mut negatives = Vec::with_capacity(n_neg);
            let budget = 100 * n_neg + 1000;
            let mut attempts = 0usize;
            while negatives.len() < n_neg && attempts < budget {
                attempts += 1;
                let i = a_idx[rng.random_range(0..a_idx.len())];
                let j = b_idx[rng.random_range(0..b_idx.len())];
                if correlated_keys.contains(&(i, j)) || chosen.contains(&(i, j)) {
                    continue;
                }
                if passes(&a.events[i], &b.events[j]).is_some() {
                    continue;
                }
                chosen.insert((i, j));
                negatives.push(CorrelatedPair {
                    left: a.events[i].id.clone(),
                    right: b.events[j].id.clone(),
                    w: 0.0,
                    kind: PairKind::InjectedNegative,
                });
            }
            if negatives.len() < n_neg {
                warnings.push(format!(
                    "fold {k}: only {} of {} requested negatives available; truncated",
                    negatives.len(),
                    n_neg
                ));
            }
            pairs.extend(negatives);
        }
        folds.push(pairs);
    }

    Ok(TrainingScenario {
        config: cfg.clone(),
        fold_boundaries: plan.boundaries,
        folds,
        warnings,
    })
}
