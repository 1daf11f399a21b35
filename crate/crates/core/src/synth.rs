//! Synthetic multi-stream scenario generator with planted cross-modal attack
//! chains and a ground-truth pairing oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::correlation::{
    confidence_bucket, Bucket, CorrelationConfig, PairKind, TrainingScenario, TypeSimEntry,
    TypeSimTable,
};
use crate::error::{Error, Result};
use crate::events::{Event, ModalityId, StreamDataset};

const CHAIN_RETRIES: usize = 50;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// One stage of a planted attack chain. The delay is relative to the
/// previous stage and ignored for the first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStage {
    pub modality: ModalityId,
    pub type_tag: String,
    /// Inter-stage delay drawn uniformly from mean +/- jitter, floored at 0.
    pub delay_mean: f64,
    pub delay_jitter: f64,
}

/// Benign cross-modal co-occurrences planted to exercise spurious
/// correlation handling. Placed without timestamp noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderSpec {
    pub count: usize,
    pub a_modality: ModalityId,
    pub a_tag: String,
    pub b_modality: ModalityId,
    pub b_tag: String,
    /// Gap drawn uniformly from mean +/- jitter, floored at 0.
    pub gap_mean: f64,
    pub gap_jitter: f64,
}

/// Generator parameters for one synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Benign events per modality.
    pub n_benign: usize,
    pub n_chains: usize,
    pub chain_template: Vec<ChainStage>,
    /// Mean shift of threat features per modality; absent modalities shift 0.
    pub signal_strength: BTreeMap<ModalityId, f64>,
    /// Extra feature-mean shift for events carrying a tag, added on top of
    /// any threat shift. Lets benign tags mimic threat-grade features.
    pub tag_signal: BTreeMap<String, f64>,
    pub feature_dim: usize,
    /// Leading dimensions that carry the mean shift; 0 shifts every
    /// dimension. Sparse signals make encoders locate the informative axes.
    pub signal_dims: usize,
    /// Gaussian noise added to chain stage timestamps, seconds.
    pub timestamp_noise_sigma: f64,
    pub time_span: f64,
    pub benign_tags: BTreeMap<ModalityId, Vec<String>>,
    pub confounders: Vec<ConfounderSpec>,
    pub rng_seed: u64,
}

fn default_chain_template() -> Vec<ChainStage> {
    let stage = |modality, tag: &str| ChainStage {
        modality,
        type_tag: tag.to_string(),
        delay_mean: 30.0,
        delay_jitter: 10.0,
    };
    vec![
        stage(ModalityId::Email, "phishing"),
        stage(ModalityId::Network, "link_click"),
        stage(ModalityId::Log, "malware_download"),
        stage(ModalityId::Network, "c2_beacon"),
        stage(ModalityId::Log, "lateral_movement"),
    ]
}

fn default_benign_tags() -> BTreeMap<ModalityId, Vec<String>> {
    [
        (ModalityId::Network, vec!["flow", "dns_query", "cdn_fetch"]),
        (ModalityId::Email, vec!["newsletter", "invoice", "bulk_mail"]),
        (ModalityId::Log, vec!["login", "cron_job", "file_read"]),
    ]
    .into_iter()
    .map(|(m, v)| (m, v.into_iter().map(String::from).collect()))
    .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_benign: 100,
            n_chains: 10,
            chain_template: default_chain_template(),
            signal_strength: [(ModalityId::Network, 1.0), (ModalityId::Email, 1.0), (ModalityId::Log, 1.0)]
                .into_iter()
                .collect(),
            tag_signal: BTreeMap::new(),
            feature_dim: 6,
            signal_dims: 0,
            timestamp_noise_sigma: 5.0,
            time_span: 86_400.0,
            benign_tags: default_benign_tags(),
            confounders: Vec::new(),
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_span > 0.0 && self.time_span.is_finite()) {
            return Err(Error::config(format!("time_span must be positive, got {}", self.time_span)));
        }
        if !(self.timestamp_noise_sigma >= 0.0 && self.timestamp_noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "timestamp_noise_sigma must be >= 0, got {}",
                self.timestamp_noise_sigma
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be >= 1"));
        }
        if self.signal_dims > self.feature_dim {
            return Err(Error::config(format!(
                "signal_dims ({}) exceeds feature_dim ({})",
                self.signal_dims, self.feature_dim
            )));
        }
        if self.n_chains > 0 && self.chain_template.is_empty() {
            return Err(Error::config("n_chains > 0 requires a chain template"));
        }
        for (i, s) in self.chain_template.iter().enumerate() {
            if s.type_tag.is_empty() {
                return Err(Error::config(format!("chain stage {i} has an empty type tag")));
            }
            for (name, v) in [("delay_mean", s.delay_mean), ("delay_jitter", s.delay_jitter)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(format!("chain stage {i} {name} must be >= 0, got {v}")));
                }
            }
        }
        for v in self.signal_strength.values() {
            if !v.is_finite() {
                return Err(Error::config(format!("signal_strength must be finite, got {v}")));
            }
        }
        for (tag, v) in &self.tag_signal {
            if !v.is_finite() {
                return Err(Error::config(format!("tag_signal[{tag}] must be finite, got {v}")));
            }
        }
        if self.n_benign > 0 {
            for m in self.modalities() {
                match self.benign_tags.get(&m) {
                    Some(tags) if !tags.is_empty() => {}
                    _ => {
                        return Err(Error::config(format!("no benign tags configured for {m}")));
                    }
                }
            }
        }
        for (i, c) in self.confounders.iter().enumerate() {
            if c.a_modality == c.b_modality {
                return Err(Error::config(format!("confounder {i} sides share a modality")));
            }
            for (name, v) in [("gap_mean", c.gap_mean), ("gap_jitter", c.gap_jitter)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(format!("confounder {i} {name} must be >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Modalities this scenario emits, in id order.
    pub fn modalities(&self) -> Vec<ModalityId> {
        let mut set = BTreeSet::new();
        for s in &self.chain_template {
            set.insert(s.modality);
        }
        for c in &self.confounders {
            set.insert(c.a_modality);
            set.insert(c.b_modality);
        }
        if self.n_benign > 0 {
            if set.is_empty() {
                set.extend(self.benign_tags.keys().copied());
            }
        }
        set.into_iter().collect()
    }

    fn shift_for(&self, m: ModalityId) -> f64 {
        self.signal_strength.get(&m).copied().unwrap_or(0.0)
    }

    fn tag_shift(&self, tag: &str) -> f64 {
        self.tag_signal.get(tag).copied().unwrap_or(0.0)
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// The oracle: every cross-modal event-id pair belonging to one chain,
/// stored with the lower-ordered modality on the left.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&(a.to_string(), b.to_string()))
            || self.pairs.contains(&(b.to_string(), a.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks that every pair references known events of differing modality.
    pub fn validate(&self, datasets: &[StreamDataset]) -> Result<()> {
        let mut modality_of = BTreeMap::new();
        for ds in datasets {
            for e in &ds.events {
                modality_of.insert(e.id.as_str(), e.modality);
            }
        }
        for (a, b) in &self.pairs {
            let ma = modality_of
                .get(a.as_str())
                .ok_or_else(|| Error::config(format!("ground truth references unknown id {a}")))?;
            let mb = modality_of
                .get(b.as_str())
                .ok_or_else(|| Error::config(format!("ground truth references unknown id {b}")))?;
            if ma == mb {
                return Err(Error::config(format!("ground truth pair ({a}, {b}) is same-modality")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("ground truth serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, 0, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generated streams, the pairing oracle, and any truncation warnings.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// One dataset per modality, in modality id order.
    pub datasets: Vec<StreamDataset>,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
}

impl SynthOutput {
    pub fn dataset(&self, m: ModalityId) -> Result<&StreamDataset> {
        self.datasets
            .iter()
            .find(|d| d.modality == m)
            .ok_or_else(|| Error::config(format!("no {m} stream in this scenario")))
    }

    /// Writes one JSONL file per stream plus the ground truth; returns the
    /// written paths.
    pub fn save_all(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut written = Vec::new();
        for ds in &self.datasets {
            let path = dir.join(format!("{}.jsonl", ds.modality.key()));
            crate::events::save_stream(ds, &path)?;
            written.push(path);
        }
        let truth_path = dir.join("ground_truth.json");
        self.truth.save(&truth_path)?;
        written.push(truth_path);
        Ok(written)
    }
}

struct Emitter {
    feature_dim: usize,
    signal_dims: usize,
    span: f64,
    events: BTreeMap<ModalityId, Vec<Event>>,
    counters: BTreeMap<ModalityId, usize>,
}

impl Emitter {
    fn new(modalities: &[ModalityId], feature_dim: usize, signal_dims: usize, span: f64) -> Self {
        let signal_dims = if signal_dims == 0 { feature_dim } else { signal_dims };
        Emitter {
            feature_dim,
            signal_dims,
            span,
            events: modalities.iter().map(|&m| (m, Vec::new())).collect(),
            counters: modalities.iter().map(|&m| (m, 0)).collect(),
        }
    }

    fn emit(
        &mut self,
        m: ModalityId,
        t: f64,
        tag: &str,
        shift: f64,
        label: u8,
        rng: &mut ChaCha12Rng,
    ) -> String {
        let shifted = Normal::new(shift, 1.0).expect("unit sigma");
        let noise = Normal::new(0.0, 1.0).expect("unit sigma");
        let features: Vec<f64> = (0..self.feature_dim)
            .map(|i| if i < self.signal_dims { shifted.sample(rng) } else { noise.sample(rng) })
            .collect();
        let counter = self.counters.get_mut(&m).expect("known modality");
        let id = format!("{}-{:05}", m.key(), *counter);
        *counter += 1;
        self.events.get_mut(&m).expect("known modality").push(Event {
            id: id.clone(),
            modality: m,
            timestamp: t.clamp(0.0, self.span),
            type_tag: tag.to_string(),
            features,
            label,
        });
        id
    }
}

/// Draws a chain schedule; first stage at `start`, later stages at
/// cumulative jittered delays.
fn chain_schedule(cfg: &SynthConfig, start: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut times = Vec::with_capacity(cfg.chain_template.len());
    let mut t = start;
    for (i, stage) in cfg.chain_template.iter().enumerate() {
        if i > 0 {
            let delay = if stage.delay_jitter > 0.0 {
                rng.random_range(stage.delay_mean - stage.delay_jitter..stage.delay_mean + stage.delay_jitter)
            } else {
                stage.delay_mean
            };
            t += delay.max(0.0);
        }
        times.push(t);
    }
    times
}

/// Generates benign baselines, planted chains, and confounders, returning
/// independently sorted streams and the cross-modal pairing oracle.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let modalities = cfg.modalities();
    if modalities.is_empty() {
        return Err(Error::config("scenario produces no streams"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
    let mut emitter = Emitter::new(&modalities, cfg.feature_dim, cfg.signal_dims, cfg.time_span);
    let mut truth = GroundTruth::default();
    let mut warnings = Vec::new();

    for &m in &modalities {
        let tags = &cfg.benign_tags[&m];
        for _ in 0..cfg.n_benign {
            let t = rng.random_range(0.0..cfg.time_span);
            let tag = &tags[rng.random_range(0..tags.len())];
            emitter.emit(m, t, tag, cfg.tag_shift(tag), 0, &mut rng);
        }
    }

    let noise = if cfg.timestamp_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.timestamp_noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    for chain in 0..cfg.n_chains {
        let mut schedule = Vec::new();
        let mut fits = false;
        for _ in 0..CHAIN_RETRIES {
            let start = rng.random_range(0.0..cfg.time_span);
            schedule = chain_schedule(cfg, start, &mut rng);
            if *schedule.last().expect("non-empty template") <= cfg.time_span {
                fits = true;
                break;
            }
        }
        if !fits {
            let kept = schedule.iter().filter(|&&t| t <= cfg.time_span).count();
            warnings.push(format!(
                "chain {chain} does not fit in the time span; truncated to {kept} of {} stages",
                cfg.chain_template.len()
            ));
            schedule.truncate(kept);
        }
        let mut placed: Vec<(ModalityId, String)> = Vec::new();
        for (stage, &t) in cfg.chain_template.iter().zip(&schedule) {
            let noisy = match &noise {
                Some(n) => t + n.sample(&mut rng),
                None => t,
            };
            let id = emitter.emit(
                stage.modality,
                noisy,
                &stage.type_tag,
                cfg.shift_for(stage.modality) + cfg.tag_shift(&stage.type_tag),
                1,
                &mut rng,
            );
            placed.push((stage.modality, id));
        }
        for i in 0..placed.len() {
            for j in i + 1..placed.len() {
                let (ma, ia) = &placed[i];
                let (mb, ib) = &placed[j];
                if ma == mb {
                    continue;
                }
                let pair = if ma < mb {
                    (ia.clone(), ib.clone())
                } else {
                    (ib.clone(), ia.clone())
                };
                truth.pairs.insert(pair);
            }
        }
    }

    for spec in &cfg.confounders {
        for _ in 0..spec.count {
            let ta = rng.random_range(0.0..cfg.time_span);
            let gap = if spec.gap_jitter > 0.0 {
                rng.random_range(spec.gap_mean - spec.gap_jitter..spec.gap_mean + spec.gap_jitter)
            } else {
                spec.gap_mean
            };
            let tb = (ta + gap.max(0.0)).min(cfg.time_span);
            emitter.emit(spec.a_modality, ta, &spec.a_tag, cfg.tag_shift(&spec.a_tag), 0, &mut rng);
            emitter.emit(spec.b_modality, tb, &spec.b_tag, cfg.tag_shift(&spec.b_tag), 0, &mut rng);
        }
    }

    let mut datasets = Vec::with_capacity(modalities.len());
    for m in modalities {
        let events = emitter.events.remove(&m).expect("known modality");
        datasets.push(StreamDataset::from_events(m, events)?);
    }
    Ok(SynthOutput {
        datasets,
        truth,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Recovery scoring
// ---------------------------------------------------------------------------

/// How well a correlation scenario recovered the planted pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub tp: usize,
    pub predicted: usize,
    pub truth_size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of scenario pairs per confidence bucket that are planted
    /// pairs; injected negatives land in the low bucket at w = 0.
    pub bucket_tpr: BTreeMap<Bucket, Option<f64>>,
}

/// Scores declared correlations against the oracle. Only CORRELATED pairs
/// count as predictions; bucket rates cover every emitted pair.
pub fn recovery_score(scenario: &TrainingScenario, truth: &GroundTruth) -> RecoveryScore {
    let mut tp = 0;
    let mut predicted = 0;
    let mut bucket_counts: BTreeMap<Bucket, (usize, usize)> = BTreeMap::new();
    for (_, pair) in scenario.iter_pairs() {
        let hit = truth.contains(&pair.left, &pair.right);
        if pair.kind == PairKind::Correlated {
            predicted += 1;
            if hit {
                tp += 1;
            }
        }
        let entry = bucket_counts.entry(confidence_bucket(pair.w)).or_insert((0, 0));
        entry.1 += 1;
        if hit {
            entry.0 += 1;
        }
    }
    let precision = if predicted > 0 {
        tp as f64 / predicted as f64
    } else {
        0.0
    };
    let recall = if truth.len() > 0 {
        tp as f64 / truth.len() as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let mut bucket_tpr = BTreeMap::new();
    for b in [Bucket::High, Bucket::Medium, Bucket::Low] {
        let rate = bucket_counts
            .get(&b)
            .map(|(hits, n)| *hits as f64 / *n as f64);
        bucket_tpr.insert(b, rate);
    }
    RecoveryScore {
        tp,
        predicted,
        truth_size: truth.len(),
        precision,
        recall,
        f1,
        bucket_tpr,
    }
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

fn two_stage_template() -> Vec<ChainStage> {
    vec![
        ChainStage {
            modality: ModalityId::Email,
            type_tag: "phishing".to_string(),
            delay_mean: 0.0,
            delay_jitter: 0.0,
        },
        ChainStage {
            modality: ModalityId::Network,
            type_tag: "link_click".to_string(),
            delay_mean: 30.0,
            delay_jitter: 20.0,
        },
    ]
}

/// Benign tags deliberately absent from the similarity table, so spurious
/// correlations come only from planted confounders.
fn two_modal_benign_tags() -> BTreeMap<ModalityId, Vec<String>> {
    [
        (ModalityId::Network, vec!["flow", "dns_query"]),
        (ModalityId::Email, vec!["newsletter", "invoice"]),
    ]
    .into_iter()
    .map(|(m, v)| (m, v.into_iter().map(String::from).collect()))
    .collect()
}

fn chain_similarity_table() -> TypeSimTable {
    TypeSimTable {
        entries: vec![
            TypeSimEntry {
                a: "phishing".to_string(),
                b: "link_click".to_string(),
                sim: 0.95,
            },
            TypeSimEntry {
                a: "bulk_mail".to_string(),
                b: "cdn_fetch".to_string(),
                sim: 0.92,
            },
        ],
        default_same: 1.0,
        default_diff: 0.0,
    }
}

/// Recovery fixture: ten 2-stage chains with ~30 s delays and 5 s timestamp
/// noise among benign traffic, plus one planted benign coincidence.
pub fn standard_recovery_fixture(seed: u64) -> (SynthConfig, CorrelationConfig) {
    let synth = SynthConfig {
        n_benign: 150,
        n_chains: 10,
        chain_template: two_stage_template(),
        signal_strength: [(ModalityId::Network, 1.0), (ModalityId::Email, 1.0)]
            .into_iter()
            .collect(),
        tag_signal: BTreeMap::new(),
        feature_dim: 6,
        signal_dims: 0,
        timestamp_noise_sigma: 5.0,
        time_span: 86_400.0,
        benign_tags: two_modal_benign_tags(),
        confounders: vec![ConfounderSpec {
            count: 1,
            a_modality: ModalityId::Email,
            a_tag: "bulk_mail".to_string(),
            b_modality: ModalityId::Network,
            b_tag: "cdn_fetch".to_string(),
            gap_mean: 30.0,
            gap_jitter: 10.0,
        }],
        rng_seed: seed,
    };
    let correlation = CorrelationConfig {
        type_similarity: chain_similarity_table(),
        rng_seed: seed,
        ..CorrelationConfig::default()
    };
    (synth, correlation)
}

/// Training fixture built around three hard populations:
///
/// - Chains fire in both streams within seconds, so their pairs carry high
///   confidence. Both sides are feature-elevated.
/// - A both-sides-elevated benign coincidence (bulk mail against a DNS
///   burst) recurs at a fixed ~45 s gap, pairing at low-medium confidence.
///   Features alone cannot reject it; the confidence score can.
/// - Two one-sided families (an elevated list-serv blast next to a normal
///   CDN fetch, and a normal marketing drop next to an elevated scan) pair
///   at medium confidence with benign labels, punishing models that fire on
///   any single-stream elevation.
///
/// Feature signal lives in 2 of 12 dimensions, so per-modality supervision
/// helps encoders find the informative axes.
pub fn training_fixture(seed: u64) -> (SynthConfig, CorrelationConfig) {
    let confounder = |count: usize, a_tag: &str, b_tag: &str, gap: f64| ConfounderSpec {
        count,
        a_modality: ModalityId::Email,
        a_tag: a_tag.to_string(),
        b_modality: ModalityId::Network,
        b_tag: b_tag.to_string(),
        gap_mean: gap,
        gap_jitter: 6.0,
    };
    let synth = SynthConfig {
        n_benign: 280,
        n_chains: 470,
        chain_template: vec![
            ChainStage {
                modality: ModalityId::Email,
                type_tag: "phishing".to_string(),
                delay_mean: 0.0,
                delay_jitter: 0.0,
            },
            ChainStage {
                modality: ModalityId::Network,
                type_tag: "link_click".to_string(),
                delay_mean: 3.0,
                delay_jitter: 2.0,
            },
        ],
        signal_strength: [(ModalityId::Network, 1.1), (ModalityId::Email, 1.1)]
            .into_iter()
            .collect(),
        tag_signal: [
            ("bulk_mail".to_string(), 1.1),
            ("dns_burst".to_string(), 1.1),
            ("list_serv".to_string(), 1.1),
            ("scan_probe".to_string(), 1.1),
        ]
        .into_iter()
        .collect(),
        feature_dim: 12,
        signal_dims: 2,
        timestamp_noise_sigma: 2.0,
        time_span: 86_400.0,
        benign_tags: two_modal_benign_tags(),
        confounders: vec![
            confounder(140, "bulk_mail", "dns_burst", 45.0),
            confounder(200, "list_serv", "cdn_fetch", 30.0),
            confounder(200, "marketing", "scan_probe", 30.0),
        ],
        rng_seed: seed,
    };
    let correlation = CorrelationConfig {
        type_similarity: TypeSimTable::default()
            .with_entry("phishing", "link_click", 0.95)
            .with_entry("bulk_mail", "dns_burst", 0.92)
            .with_entry("list_serv", "cdn_fetch", 0.92)
            .with_entry("marketing", "scan_probe", 0.92),
        rng_seed: seed,
        ..CorrelationConfig::default()
    };
    (synth, correlation)
}

/// Like the training fixture, but only the network stream carries feature
/// signal; a trained controller should favor it.
pub fn network_dominant_fixture(seed: u64) -> (SynthConfig, CorrelationConfig) {
    let (mut synth, correlation) = training_fixture(seed);
    synth.signal_strength =
        [(ModalityId::Network, 1.2), (ModalityId::Email, 0.0)].into_iter().collect();
    synth.tag_signal.clear();
    (synth, correlation)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::correlate;

    #[test]
    fn default_config_is_valid() {
        assert!(SynthConfig::default().validate().is_ok());
        assert_eq!(
            SynthConfig::default().modalities(),
            vec![ModalityId::Network, ModalityId::Email, ModalityId::Log]
        );
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let cases = vec![
            SynthConfig { time_span: 0.0, ..SynthConfig::default() },
            SynthConfig { timestamp_noise_sigma: -1.0, ..SynthConfig::default() },
            SynthConfig { feature_dim: 0, ..SynthConfig::default() },
            SynthConfig { chain_template: vec![], n_chains: 3, ..SynthConfig::default() },
            SynthConfig { benign_tags: BTreeMap::new(), ..SynthConfig::default() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "accepted {c:?}");
        }
    }

    #[test]
    fn zero_chains_yield_empty_truth_and_benign_streams() {
        let cfg = SynthConfig { n_chains: 0, n_benign: 40, ..SynthConfig::default() };
        let out = generate(&cfg).unwrap();
        assert!(out.truth.is_empty());
        assert!(out.warnings.is_empty());
        for ds in &out.datasets {
            assert_eq!(ds.events.len(), 40);
            assert!(ds.events.iter().all(|e| e.label == 0));
        }
    }

    #[test]
    fn zero_signal_makes_threat_features_unshifted() {
        let cfg = SynthConfig {
            n_benign: 0,
            n_chains: 30,
            signal_strength: BTreeMap::new(),
            timestamp_noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let values: Vec<f64> = out
            .datasets
            .iter()
            .flat_map(|d| d.events.iter())
            .flat_map(|e| e.features.iter().copied())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // 900 standard normal draws; the mean should sit near zero.
        assert!(mean.abs() < 0.2, "threat feature mean {mean}");
    }

    #[test]
    fn noiseless_chain_follows_cumulative_delays_exactly() {
        let mut cfg = SynthConfig {
            n_benign: 0,
            n_chains: 1,
            timestamp_noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        for s in cfg.chain_template.iter_mut() {
            s.delay_jitter = 0.0;
        }
        let out = generate(&cfg).unwrap();
        let mut times: Vec<f64> = out
            .datasets
            .iter()
            .flat_map(|d| d.events.iter().map(|e| e.timestamp))
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(times.len(), 5);
        for w in times.windows(2) {
            assert!((w[1] - w[0] - 30.0).abs() < 1e-9, "gap {}", w[1] - w[0]);
        }
        // Five stages, two same-modality exclusions: C(5,2) - 2 = 8 pairs.
        assert_eq!(out.truth.len(), 8);
        out.truth.validate(&out.datasets).unwrap();
    }

    #[test]
    fn truth_pairs_are_cross_modal_and_reference_real_ids() {
        let out = generate(&SynthConfig::default()).unwrap();
        out.truth.validate(&out.datasets).unwrap();
        assert!(out.truth.len() >= 8);
    }

    #[test]
    fn generation_is_byte_identical_for_fixed_seed() {
        let cfg = SynthConfig { n_benign: 25, n_chains: 4, ..SynthConfig::default() };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let p1 = generate(&cfg).unwrap().save_all(dir1.path()).unwrap();
        let p2 = generate(&cfg).unwrap().save_all(dir2.path()).unwrap();
        assert_eq!(p1.len(), p2.len());
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?} differs");
        }
    }

    #[test]
    fn oversized_chains_truncate_with_warning() {
        let cfg = SynthConfig {
            n_benign: 0,
            n_chains: 2,
            time_span: 50.0,
            timestamp_noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.warnings.len(), 2, "{:?}", out.warnings);
        for ds in &out.datasets {
            assert!(ds.events.iter().all(|e| e.timestamp <= 50.0));
        }
        out.truth.validate(&out.datasets).unwrap();
    }

    #[test]
    fn confounders_are_coincident_benign_and_off_truth() {
        let cfg = SynthConfig {
            n_benign: 0,
            n_chains: 0,
            confounders: vec![ConfounderSpec {
                count: 5,
                a_modality: ModalityId::Email,
                a_tag: "bulk_mail".to_string(),
                b_modality: ModalityId::Network,
                b_tag: "cdn_fetch".to_string(),
                gap_mean: 10.0,
                gap_jitter: 0.0,
            }],
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert!(out.truth.is_empty());
        let email = out.dataset(ModalityId::Email).unwrap();
        let net = out.dataset(ModalityId::Network).unwrap();
        assert_eq!(email.events.len(), 5);
        assert_eq!(net.events.len(), 5);
        assert!(email.events.iter().all(|e| e.label == 0));
        // Each email event has a network partner exactly 10 s later.
        for e in &email.events {
            assert!(net
                .events
                .iter()
                .any(|n| (n.timestamp - e.timestamp - 10.0).abs() < 1e-9));
        }
    }

    #[test]
    fn chainless_streams_look_independent_uniform() {
        let cfg = SynthConfig {
            n_chains: 0,
            n_benign: 400,
            time_span: 10_000.0,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        // Marginal uniformity per stream, loose KS bound.
        for ds in &out.datasets {
            let n = ds.events.len() as f64;
            let mut d_max = 0.0f64;
            for (i, e) in ds.events.iter().enumerate() {
                let u = e.timestamp / cfg.time_span;
                let lo = i as f64 / n;
                let hi = (i + 1) as f64 / n;
                d_max = d_max.max((u - lo).abs()).max((u - hi).abs());
            }
            assert!(d_max < 2.0 / n.sqrt(), "{} KS statistic {d_max}", ds.modality);
        }
        // Cross-stream co-occurrence matches the independence rate.
        let net = out.dataset(ModalityId::Network).unwrap();
        let email = out.dataset(ModalityId::Email).unwrap();
        let window = 100.0;
        let mut close = 0usize;
        for a in &net.events {
            for b in &email.events {
                if (a.timestamp - b.timestamp).abs() < window {
                    close += 1;
                }
            }
        }
        let n_pairs = (net.events.len() * email.events.len()) as f64;
        let p = 2.0 * window / cfg.time_span;
        let expected = n_pairs * p;
        let sigma = (n_pairs * p * (1.0 - p)).sqrt();
        assert!(
            (close as f64 - expected).abs() < 6.0 * sigma,
            "close pairs {close}, expected {expected}"
        );
    }

    #[test]
    fn recovery_score_trivial_cases() {
        use crate::correlation::CorrelatedPair;
        let mut truth = GroundTruth::default();
        truth.pairs.insert(("a".to_string(), "b".to_string()));
        let scenario = TrainingScenario {
            config: CorrelationConfig::default(),
            fold_boundaries: vec![(0.0, 1.0)],
            folds: vec![vec![CorrelatedPair {
                left: "a".to_string(),
                right: "b".to_string(),
                w: 0.9,
                kind: PairKind::Correlated,
            }]],
            warnings: vec![],
        };
        let score = recovery_score(&scenario, &truth);
        assert_eq!((score.precision, score.recall, score.f1), (1.0, 1.0, 1.0));
        assert_eq!(score.bucket_tpr[&Bucket::High], Some(1.0));

        let empty = TrainingScenario {
            config: CorrelationConfig::default(),
            fold_boundaries: vec![(0.0, 1.0)],
            folds: vec![vec![]],
            warnings: vec![],
        };
        let score = recovery_score(&empty, &truth);
        assert_eq!(score.recall, 0.0);
        assert_eq!(score.f1, 0.0);
    }

    #[test]
    fn standard_fixture_recovers_planted_chains() {
        let (synth, correlation) = standard_recovery_fixture(3);
        let out = generate(&synth).unwrap();
        let scenario = correlate(&out.datasets[0], &out.datasets[1], &correlation).unwrap();
        let score = recovery_score(&scenario, &out.truth);
        assert!(score.f1 >= 0.85, "F1 {} ({score:?})", score.f1);
    }

    #[test]
    fn recovery_f1_degrades_with_timestamp_noise() {
        let sigmas = [1.0, 30.0, 90.0];
        let mut means = Vec::new();
        for sigma in sigmas {
            let mut total = 0.0;
            for seed in 0..5 {
                let (mut synth, correlation) = standard_recovery_fixture(seed);
                synth.timestamp_noise_sigma = sigma;
                let out = generate(&synth).unwrap();
                let scenario =
                    correlate(&out.datasets[0], &out.datasets[1], &correlation).unwrap();
                total += recovery_score(&scenario, &out.truth).f1;
            }
            means.push(total / 5.0);
        }
        assert!(means[0] >= means[1] - 0.02, "{means:?}");
        assert!(means[1] >= means[2] - 0.02, "{means:?}");
        // The sweep must span a real degradation, not a flat line.
        assert!(means[0] - means[2] > 0.1, "{means:?}");
    }
}
