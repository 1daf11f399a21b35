//! Domain model and ingestion of independent per-modality event streams.
//!
//! Each stream is a time-ordered sequence of [`Event`]s from exactly one
//! modality. Streams arrive as JSON Lines (one event object per line) or as
//! CSV with a header-mapping file. Preprocessing covers z-score / min-max
//! normalization and mutual-information feature selection; normalization
//! statistics record the fingerprint of the dataset they were fitted on so
//! train/test leakage is checkable by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identifier of an independent security data stream type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityId {
    #[serde(rename = "NETWORK")]
    Network,
    #[serde(rename = "EMAIL")]
    Email,
    #[serde(rename = "LOG")]
    Log,
}

impl ModalityId {
    pub const ALL: [ModalityId; 3] = [ModalityId::Network, ModalityId::Email, ModalityId::Log];

    /// Short lowercase key used in parameter names and file names.
    pub fn key(&self) -> &'static str {
        match self {
            ModalityId::Network => "network",
            ModalityId::Email => "email",
            ModalityId::Log => "log",
        }
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModalityId::Network => "NETWORK",
            ModalityId::Email => "EMAIL",
            ModalityId::Log => "LOG",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ModalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityId::ALL
            .into_iter()
            .find(|m| s.eq_ignore_ascii_case(m.key()))
            .ok_or_else(|| Error::config(format!("unknown modality {s:?}")))
    }
}

/// One timestamped observation in one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub modality: ModalityId,
    /// Seconds since epoch; finite and non-negative.
    pub timestamp: f64,
    /// Categorical attack/benign type from the run's taxonomy.
    pub type_tag: String,
    pub features: Vec<f64>,
    /// Binary label: 0 benign, 1 threat.
    pub label: u8,
}

/// Wire format of one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    id: String,
    modality: ModalityId,
    t: f64,
    #[serde(rename = "type")]
    type_tag: String,
    x: Vec<f64>,
    y: u8,
}

impl From<Event> for EventRecord {
    fn from(e: Event) -> Self {
        EventRecord {
            id: e.id,
            modality: e.modality,
            t: e.timestamp,
            type_tag: e.type_tag,
            x: e.features,
            y: e.label,
        }
    }
}

impl From<EventRecord> for Event {
    fn from(r: EventRecord) -> Self {
        Event {
            id: r.id,
            modality: r.modality,
            timestamp: r.t,
            type_tag: r.type_tag,
            features: r.x,
            label: r.y,
        }
    }
}

/// Time-ordered, validated collection of events from one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDataset {
    pub modality: ModalityId,
    pub events: Vec<Event>,
    pub feature_dim: usize,
    pub taxonomy: BTreeSet<String>,
}

impl StreamDataset {
    /// Builds a dataset from unordered events, sorting by `(timestamp, id)`
    /// and enforcing the per-stream invariants.
    pub fn from_events(modality: ModalityId, mut events: Vec<Event>) -> Result<Self> {
        let feature_dim = events.first().map_or(0, |e| e.features.len());
        let mut seen = BTreeSet::new();
        for e in &events {
            if e.modality != modality {
                return Err(Error::config(format!(
                    "event {} has modality {} but dataset is {}",
                    e.id, e.modality, modality
                )));
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                return Err(Error::config(format!(
                    "event {} has invalid timestamp {}",
                    e.id, e.timestamp
                )));
            }
            if e.features.len() != feature_dim {
                return Err(Error::config(format!(
                    "event {} has {} features, expected {}",
                    e.id,
                    e.features.len(),
                    feature_dim
                )));
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("event {} has non-finite feature", e.id)));
            }
            if e.label > 1 {
                return Err(Error::config(format!("event {} has label {}", e.id, e.label)));
            }
            if !seen.insert(e.id.clone()) {
                return Err(Error::config(format!("duplicate event id {}", e.id)));
            }
        }
        events.sort_by(|a, b| {
            a.timestamp
                .partial_cmp(&b.timestamp)
                .unwrap()
                .then_with(|| a.id.cmp(&b.id))
        });
        let taxonomy = events.iter().map(|e| e.type_tag.clone()).collect();
        Ok(StreamDataset {
            modality,
            events,
            feature_dim,
            taxonomy,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Stable identity of this dataset's contents; normalization stats carry
    /// it so a stats object fitted on one set is distinguishable from any
    /// other set.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.modality.to_string().as_bytes());
        for e in &self.events {
            hasher.update(e.id.as_bytes());
            hasher.update(e.timestamp.to_bits().to_le_bytes());
        }
        hex_digest(hasher)
    }

    /// Events whose timestamps fall in `[start, end)`, or `[start, end]` when
    /// `inclusive_end` is set (used for the final temporal fold).
    pub fn slice_by_time(&self, start: f64, end: f64, inclusive_end: bool) -> Vec<&Event> {
        self.events
            .iter()
            .filter(|e| {
                e.timestamp >= start && (e.timestamp < end || (inclusive_end && e.timestamp == end))
            })
            .collect()
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Reads a JSON Lines event file into a validated, sorted dataset.
///
/// Rejects malformed lines (reporting the 1-based line number), events whose
/// modality tag differs from `modality`, non-finite timestamps or features,
/// and duplicate ids. An empty file yields an empty dataset.
pub fn load_stream(path: impl AsRef<Path>, modality: ModalityId) -> Result<StreamDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut feature_dim: Option<usize> = None;
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(path, lineno, format!("malformed event record: {e}")))?;
        let event = Event::from(record);
        if event.modality != modality {
            return Err(Error::data(
                path,
                lineno,
                format!("modality {} does not match expected {}", event.modality, modality),
            ));
        }
        if !event.timestamp.is_finite() || event.timestamp < 0.0 {
            return Err(Error::data(
                path,
                lineno,
                format!("invalid timestamp {}", event.timestamp),
            ));
        }
        if event.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(path, lineno, "non-finite feature value".to_string()));
        }
        if event.label > 1 {
            return Err(Error::data(path, lineno, format!("label must be 0 or 1, got {}", event.label)));
        }
        match feature_dim {
            None => feature_dim = Some(event.features.len()),
            Some(dim) if dim != event.features.len() => {
                return Err(Error::data(
                    path,
                    lineno,
                    format!("feature vector length {} != declared dim {}", event.features.len(), dim),
                ));
            }
            _ => {}
        }
        if !seen.insert(event.id.clone()) {
            return Err(Error::data(path, lineno, format!("duplicate event id {}", event.id)));
        }
        events.push(event);
    }
    StreamDataset::from_events(modality, events)
}

/// Writes a dataset as JSON Lines in timestamp order.
pub fn save_stream(dataset: &StreamDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in &dataset.events {
        let record = EventRecord::from(e.clone());
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::config(format!("serialize event: {e}")))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Column mapping for CSV ingestion: names the CSV headers holding each
/// event field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvMapping {
    pub id: String,
    pub timestamp: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub label: String,
    pub features: Vec<String>,
}

/// Reads a CSV event file using a JSON header-mapping file.
pub fn load_stream_csv(
    path: impl AsRef<Path>,
    mapping_path: impl AsRef<Path>,
    modality: ModalityId,
) -> Result<StreamDataset> {
    let mapping_path = mapping_path.as_ref();
    let mapping_text =
        fs::read_to_string(mapping_path).map_err(|e| Error::io(mapping_path, e))?;
    let mapping: CsvMapping = serde_json::from_str(&mapping_text)
        .map_err(|e| Error::config(format!("bad CSV mapping file {}: {e}", mapping_path.display())))?;

    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::config(format!("open CSV {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(path, 1, format!("bad CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("CSV column {name:?} not found in {}", path.display())))
    };
    let id_col = col(&mapping.id)?;
    let t_col = col(&mapping.timestamp)?;
    let type_col = col(&mapping.type_tag)?;
    let label_col = col(&mapping.label)?;
    let feature_cols: Vec<usize> = mapping
        .features
        .iter()
        .map(|f| col(f))
        .collect::<Result<_>>()?;

    let mut events = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let lineno = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::data(path, lineno, format!("bad CSV row: {e}")))?;
        let field = |c: usize| -> Result<&str> {
            record
                .get(c)
                .ok_or_else(|| Error::data(path, lineno, format!("missing column {c}")))
        };
        let timestamp: f64 = field(t_col)?
            .parse()
            .map_err(|e| Error::data(path, lineno, format!("bad timestamp: {e}")))?;
        let label: u8 = field(label_col)?
            .parse()
            .map_err(|e| Error::data(path, lineno, format!("bad label: {e}")))?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = field(c)?
                .parse()
                .map_err(|e| Error::data(path, lineno, format!("bad feature value: {e}")))?;
            features.push(v);
        }
        events.push(Event {
            id: field(id_col)?.to_string(),
            modality,
            timestamp,
            type_tag: field(type_col)?.to_string(),
            features,
            label,
        });
    }
    StreamDataset::from_events(modality, events)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    #[serde(rename = "z-score")]
    ZScore,
    #[serde(rename = "min-max")]
    MinMax,
}

/// Preprocessing knobs for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub normalization: Normalization,
    /// Equal-width bin count for MI estimation over continuous features.
    pub discretization_bins: usize,
    /// Keep only the top-k features by mutual information with the label.
    pub selected_feature_count: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            normalization: Normalization::ZScore,
            discretization_bins: 16,
            selected_feature_count: None,
        }
    }
}

/// Per-feature statistics fitted on one dataset.
///
/// `fit_set` is the fingerprint of the dataset the stats were fitted on;
/// applying stats fitted on a training fold to a test fold leaves an
/// auditable trail that no test statistics were consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub method: Normalization,
    /// (mean, sample std) for z-score; (min, max) for min-max.
    pub per_feature: Vec<(f64, f64)>,
    /// Features with zero variance / zero range; passed through as all-zeros.
    pub zero_variance: Vec<bool>,
    pub fit_set: String,
}

/// Normalizes a dataset, fitting statistics when `stats` is `None`.
///
/// Z-score uses the sample standard deviation (n-1 denominator). Features
/// with zero variance (or zero range in min-max mode) are emitted as
/// all-zeros and flagged in the returned stats.
pub fn normalize(
    dataset: &StreamDataset,
    cfg: &PreprocessConfig,
    stats: Option<&NormStats>,
) -> Result<(StreamDataset, NormStats)> {
    let dim = dataset.feature_dim;
    let stats = match stats {
        Some(s) => {
            if s.per_feature.len() != dim {
                return Err(Error::shape(format!(
                    "stats cover {} features but dataset has {}",
                    s.per_feature.len(),
                    dim
                )));
            }
            if s.method != cfg.normalization {
                return Err(Error::config(
                    "normalization method differs from the fitted stats".to_string(),
                ));
            }
            s.clone()
        }
        None => fit_stats(dataset, cfg.normalization),
    };

    let mut events = dataset.events.clone();
    for e in &mut events {
        for (j, v) in e.features.iter_mut().enumerate() {
            if stats.zero_variance[j] {
                *v = 0.0;
                continue;
            }
            let (a, b) = stats.per_feature[j];
            *v = match stats.method {
                Normalization::ZScore => (*v - a) / b,
                Normalization::MinMax => (*v - a) / (b - a),
            };
        }
    }
    let out = StreamDataset {
        modality: dataset.modality,
        events,
        feature_dim: dim,
        taxonomy: dataset.taxonomy.clone(),
    };
    Ok((out, stats))
}

fn fit_stats(dataset: &StreamDataset, method: Normalization) -> NormStats {
    let dim = dataset.feature_dim;
    let n = dataset.len();
    let mut per_feature = vec![(0.0, 0.0); dim];
    let mut zero_variance = vec![false; dim];
    for j in 0..dim {
        let col: Vec<f64> = dataset.events.iter().map(|e| e.features[j]).collect();
        match method {
            Normalization::ZScore => {
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
                } else {
                    0.0
                };
                let std = var.sqrt();
                if std == 0.0 {
                    zero_variance[j] = true;
                }
                per_feature[j] = (mean, std);
            }
            Normalization::MinMax => {
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if min == max {
                    zero_variance[j] = true;
                }
                per_feature[j] = (min, max);
            }
        }
    }
    NormStats {
        method,
        per_feature,
        zero_variance,
        fit_set: dataset.fingerprint(),
    }
}

// ---------------------------------------------------------------------------
// Mutual-information feature selection
// ---------------------------------------------------------------------------

/// Result of ranking features by estimated mutual information with the label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Selected feature indices in descending MI order (ties: lower index).
    pub indices: Vec<usize>,
    /// Estimated I(feature; label) in nats for every feature.
    pub scores: Vec<f64>,
    /// Set when every feature was constant; the first k indices are returned.
    pub all_constant: bool,
}

/// Selects the `k` features with highest plug-in mutual information with the
/// binary label, after discretizing each feature into `bins` equal-width bins.
pub fn select_features(train: &StreamDataset, k: usize, bins: usize) -> Result<FeatureSelection> {
    let dim = train.feature_dim;
    if k == 0 || k > dim {
        return Err(Error::config(format!("k={k} out of range for {dim} features")));
    }
    if bins == 0 {
        return Err(Error::config("discretization_bins must be positive".to_string()));
    }
    if train.is_empty() {
        return Err(Error::config("cannot select features from an empty dataset".to_string()));
    }
    let labels: Vec<u8> = train.events.iter().map(|e| e.label).collect();
    let mut scores = Vec::with_capacity(dim);
    let mut any_varying = false;
    for j in 0..dim {
        let col: Vec<f64> = train.events.iter().map(|e| e.features[j]).collect();
        let binned = discretize(&col, bins);
        if binned.iter().any(|&b| b != binned[0]) {
            any_varying = true;
        }
        scores.push(mutual_information(&binned, &labels, bins));
    }
    let all_constant = !any_varying;
    let mut order: Vec<usize> = (0..dim).collect();
    if !all_constant {
        // Stable sort by descending MI keeps the lower index first on ties.
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    }
    Ok(FeatureSelection {
        indices: order.into_iter().take(k).collect(),
        scores,
        all_constant,
    })
}

/// Equal-width binning over `[min, max]`; constant columns map to bin 0.
pub fn discretize(col: &[f64], bins: usize) -> Vec<usize> {
    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return vec![0; col.len()];
    }
    let width = (max - min) / bins as f64;
    col.iter()
        .map(|&v| (((v - min) / width) as usize).min(bins - 1))
        .collect()
}

/// Plug-in MI (nats) between a binned feature and a binary label.
pub fn mutual_information(binned: &[usize], labels: &[u8], bins: usize) -> f64 {
    let n = binned.len() as f64;
    let mut joint: BTreeMap<(usize, u8), f64> = BTreeMap::new();
    let mut marg_x = vec![0.0; bins];
    let mut marg_y = [0.0f64; 2];
    for (&b, &y) in binned.iter().zip(labels) {
        *joint.entry((b, y)).or_insert(0.0) += 1.0;
        marg_x[b] += 1.0;
        marg_y[y as usize] += 1.0;
    }
    let mut mi = 0.0;
    for (&(b, y), &c) in &joint {
        let p_xy = c / n;
        let p_x = marg_x[b] / n;
        let p_y = marg_y[y as usize] / n;
        mi += p_xy * (p_xy / (p_x * p_y)).ln();
    }
    mi.max(0.0)
}

/// Projects a dataset onto a feature index subset (order preserved).
pub fn project_features(dataset: &StreamDataset, indices: &[usize]) -> Result<StreamDataset> {
    for &i in indices {
        if i >= dataset.feature_dim {
            return Err(Error::shape(format!(
                "feature index {i} out of range for dim {}",
                dataset.feature_dim
            )));
        }
    }
    let events = dataset
        .events
        .iter()
        .map(|e| {
            let features = indices.iter().map(|&i| e.features[i]).collect();
            Event {
                features,
                ..e.clone()
            }
        })
        .collect();
    Ok(StreamDataset {
        modality: dataset.modality,
        events,
        feature_dim: indices.len(),
        taxonomy: dataset.taxonomy.clone(),
    })
}

/// Lookup from event id to its dataset slot, across several streams.
#[derive(Debug, Clone)]
pub struct EventIndex {
    map: BTreeMap<String, (usize, usize)>,
}

impl EventIndex {
    /// Builds the index; event ids must be unique across all streams.
    pub fn build(datasets: &[&StreamDataset]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (di, ds) in datasets.iter().enumerate() {
            for (ei, e) in ds.events.iter().enumerate() {
                if map.insert(e.id.clone(), (di, ei)).is_some() {
                    return Err(Error::config(format!(
                        "event id {} appears in more than one stream",
                        e.id
                    )));
                }
            }
        }
        Ok(EventIndex { map })
    }

    pub fn get(&self, id: &str) -> Option<(usize, usize)> {
        self.map.get(id).copied()
    }
}
