//! Classification metrics, operational projections, missing-modality drills,
//! and paired significance testing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::correlation::{confidence_bucket, Bucket, TrainingScenario};
use crate::error::{Error, Result};
use crate::events::{EventIndex, ModalityId, StreamDataset};
use crate::fusion::{FusionInput, FusionModel};
use crate::numerics::ParamStore;

// ---------------------------------------------------------------------------
// Confusion counts and rates
// ---------------------------------------------------------------------------

/// Standard binary confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Zero when undefined; check precision_defined.
    pub fn precision(&self) -> f64 {
        if self.precision_defined() {
            self.tp as f64 / (self.tp + self.fp) as f64
        } else {
            0.0
        }
    }

    pub fn precision_defined(&self) -> bool {
        self.tp + self.fp > 0
    }

    /// Zero when undefined; check recall_defined.
    pub fn recall(&self) -> f64 {
        if self.recall_defined() {
            self.tp as f64 / (self.tp + self.fn_) as f64
        } else {
            0.0
        }
    }

    pub fn recall_defined(&self) -> bool {
        self.tp + self.fn_ > 0
    }

    /// Zero when no negatives exist.
    pub fn fpr(&self) -> f64 {
        if self.fp + self.tn > 0 {
            self.fp as f64 / (self.fp + self.tn) as f64
        } else {
            0.0
        }
    }
}

fn check_scores_labels(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::config("no samples to evaluate"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::config(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Counts predictions at `threshold`; score >= threshold predicts positive.
pub fn confusion(scores: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_scores_labels(scores, labels)?;
    if !threshold.is_finite() {
        return Err(Error::config(format!("non-finite threshold {threshold}")));
    }
    let mut c = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// ROC
// ---------------------------------------------------------------------------

/// One ROC operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Step-ROC operating points: one per distinct score plus the all-negative
/// point at an unattainable threshold.
pub fn roc_points(scores: &[f64], labels: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores_labels(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::config("ROC needs both classes present"));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    for t in thresholds {
        let c = confusion(scores, labels, t)?;
        points.push(RocPoint {
            threshold: t,
            fpr: c.fpr(),
            tpr: c.recall(),
        });
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    Ok(points)
}

/// CSV of ROC points for external plotting.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

/// Best TPR among step-ROC operating points with FPR at or below the level.
pub fn tpr_at_fpr(scores: &[f64], labels: &[f64], fpr_level: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr_level) {
        return Err(Error::config(format!("fpr_level {fpr_level} outside [0,1]")));
    }
    let points = roc_points(scores, labels)?;
    Ok(points
        .iter()
        .filter(|p| p.fpr <= fpr_level)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Operational projections
// ---------------------------------------------------------------------------

/// Daily alert volumes implied by a false positive rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertProjection {
    pub daily_events: u64,
    pub alerts: i64,
    pub baseline_alerts: i64,
    /// Baseline minus projected; positive means fewer alerts.
    pub delta: i64,
}

/// Projects daily alert counts, treating the daily event volume as all
/// benign for false positive counting.
pub fn alert_projection(fpr: f64, benign_daily: u64, baseline_fpr: f64) -> Result<AlertProjection> {
    for (name, r) in [("fpr", fpr), ("baseline_fpr", baseline_fpr)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::config(format!("{name} {r} outside [0,1]")));
        }
    }
    let alerts = (fpr * benign_daily as f64).round() as i64;
    let baseline_alerts = (baseline_fpr * benign_daily as f64).round() as i64;
    Ok(AlertProjection {
        daily_events: benign_daily,
        alerts,
        baseline_alerts,
        delta: baseline_alerts - alerts,
    })
}

/// Percentage drop from a baseline false positive rate.
pub fn fpr_reduction(baseline_fpr: f64, new_fpr: f64) -> Result<f64> {
    for (name, r) in [("baseline_fpr", baseline_fpr), ("new_fpr", new_fpr)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::config(format!("{name} {r} outside [0,1]")));
        }
    }
    if baseline_fpr == 0.0 {
        return Err(Error::config("baseline_fpr must be positive"));
    }
    Ok(100.0 * (baseline_fpr - new_fpr) / baseline_fpr)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

/// Ranks of |deltas|, doubled so tied average ranks stay integral.
fn doubled_ranks(magnitudes: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| magnitudes[a].partial_cmp(&magnitudes[b]).unwrap());
    let mut ranks = vec![0u64; magnitudes.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && magnitudes[order[j]] == magnitudes[order[i]] {
            j += 1;
        }
        // Average of ranks i+1..=j, doubled: (i + 1 + j).
        let doubled = (i + 1 + j) as u64;
        for &idx in &order[i..j] {
            ranks[idx] = doubled;
        }
        i = j;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank p-value over paired differences. Zero
/// deltas are dropped; the null distribution is enumerated exactly up to 20
/// non-zero pairs and normal-approximated with continuity and tie
/// corrections above that.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<f64> {
    if deltas.len() < 5 {
        return Err(Error::config(format!(
            "need at least 5 paired deltas, got {}",
            deltas.len()
        )));
    }
    if let Some(d) = deltas.iter().find(|d| !d.is_finite()) {
        return Err(Error::numeric(format!("non-finite delta {d}")));
    }
    let nonzero: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::config("all deltas are zero"));
    }
    let n = nonzero.len();
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&magnitudes);
    let w2: u64 = nonzero
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    if n <= 20 {
        let total = 1u64 << n;
        let mut le = 0u64;
        let mut ge = 0u64;
        for mask in 0..total {
            let mut s = 0u64;
            for (i, r) in ranks2.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s += r;
                }
            }
            if s <= w2 {
                le += 1;
            }
            if s >= w2 {
                ge += 1;
            }
        }
        let p_le = le as f64 / total as f64;
        let p_ge = ge as f64 / total as f64;
        Ok((2.0 * p_le.min(p_ge)).min(1.0))
    } else {
        let nf = n as f64;
        // Statistics in doubled-rank units: mean n(n+1)/2, variance
        // 4 * (n(n+1)(2n+1)/24 - tie_correction/48).
        let mean2 = nf * (nf + 1.0) / 2.0;
        let mut tie_term = 0.0;
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        for r in &ranks2 {
            *counts.entry(*r).or_insert(0.0) += 1.0;
        }
        for t in counts.values() {
            tie_term += t * t * t - t;
        }
        let var2 = 4.0 * (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0);
        if var2 <= 0.0 {
            return Err(Error::numeric("degenerate rank variance"));
        }
        let diff = w2 as f64 - mean2;
        // Continuity correction: half a step in doubled-rank units.
        let corrected = diff - diff.signum() * 1.0;
        let z = corrected / var2.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let p = 2.0 * (1.0 - normal.cdf(z.abs()));
        Ok(p.min(1.0))
    }
}

// ---------------------------------------------------------------------------
// Model evaluation over example sets
// ---------------------------------------------------------------------------

/// One evaluation sample: input with mask and confidence, binary label, and
/// a grouping tag for attention summaries.
#[derive(Debug, Clone)]
pub struct EvalExample {
    pub input: FusionInput,
    pub label: f64,
    pub group: String,
}

/// Resolves scenario pairs from the chosen folds into evaluation examples.
/// A pair is positive when either side is labeled positive; its group is the
/// positive side's type tag, or "benign".
pub fn scenario_examples(
    scenario: &TrainingScenario,
    datasets: &[StreamDataset],
    folds: &[usize],
) -> Result<Vec<EvalExample>> {
    let refs: Vec<&StreamDataset> = datasets.iter().collect();
    let index = EventIndex::build(&refs)?;
    let mut out = Vec::new();
    for &k in folds {
        let fold = scenario
            .folds
            .get(k)
            .ok_or_else(|| Error::config(format!("fold {k} out of range")))?;
        for pair in fold {
            let side = |id: &str| -> Result<(ModalityId, Vec<f64>, u8, String)> {
                let (di, ei) = index
                    .get(id)
                    .ok_or_else(|| Error::config(format!("unknown event id {id}")))?;
                let e = &datasets[di].events[ei];
                Ok((e.modality, e.features.clone(), e.label, e.type_tag.clone()))
            };
            let a = side(&pair.left)?;
            let b = side(&pair.right)?;
            let label = a.2.max(b.2) as f64;
            let group = if a.2 == 1 {
                a.3.clone()
            } else if b.2 == 1 {
                b.3.clone()
            } else {
                "benign".to_string()
            };
            out.push(EvalExample {
                input: FusionInput::pair(a.0, a.1, b.0, b.1, pair.w),
                label,
                group,
            });
        }
    }
    Ok(out)
}

/// Modality-masking policy for robustness drills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropPolicy {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "DROP_NETWORK")]
    DropNetwork,
    /// Drops the email content stream.
    #[serde(rename = "DROP_TEXT")]
    DropText,
    /// Masks one random modality per sample with probability 0.5.
    #[serde(rename = "RANDOM_50")]
    Random50,
}

/// Rebuilds an example with one modality masked out. A degraded example
/// keeps zero confidence because no cross-modal pairing survives.
fn mask_out(example: &EvalExample, dropped: ModalityId) -> EvalExample {
    let kept: Vec<(ModalityId, Vec<f64>)> = example
        .input
        .features
        .iter()
        .filter(|(m, _)| **m != dropped)
        .map(|(m, f)| (*m, f.clone()))
        .collect();
    // A policy may never empty the mask; the sample keeps its lowest-ordered
    // modality instead.
    if kept.is_empty() {
        return example.clone();
    }
    let input = if kept.len() == 1 {
        let (m, f) = kept.into_iter().next().unwrap();
        FusionInput::single(m, f)
    } else {
        let mut it = kept.into_iter();
        let (ma, fa) = it.next().unwrap();
        let (mb, fb) = it.next().unwrap();
        FusionInput::pair(ma, fa, mb, fb, example.input.w)
    };
    EvalExample {
        input,
        label: example.label,
        group: example.group.clone(),
    }
}

/// Applies a drop policy to every example; RANDOM_50 draws from a seeded
/// generator so the mask pattern is reproducible.
pub fn apply_policy(
    examples: &[EvalExample],
    policy: DropPolicy,
    rng_seed: u64,
) -> Vec<EvalExample> {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    examples
        .iter()
        .map(|ex| match policy {
            DropPolicy::None => ex.clone(),
            DropPolicy::DropNetwork => mask_out(ex, ModalityId::Network),
            DropPolicy::DropText => mask_out(ex, ModalityId::Email),
            DropPolicy::Random50 => {
                if rng.random::<f64>() < 0.5 {
                    let present: Vec<ModalityId> =
                        ex.input.features.keys().copied().collect();
                    let dropped = present[rng.random_range(0..present.len())];
                    mask_out(ex, dropped)
                } else {
                    ex.clone()
                }
            }
        })
        .collect()
}

/// Metrics of one model over one example set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEval {
    pub scores: Vec<f64>,
    pub labels: Vec<f64>,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    /// None when the split is one-class at that level.
    pub tpr_at_fpr: Vec<(f64, Option<f64>)>,
    /// None for buckets with no examples.
    pub bucket_accuracy: BTreeMap<Bucket, Option<f64>>,
    /// Per-group mean mixture weights; rows sum to 1.
    pub alpha_summary: BTreeMap<String, BTreeMap<ModalityId, f64>>,
}

/// Scores every example with the model and assembles split metrics at the
/// given decision threshold on the fused probability.
pub fn evaluate(
    model: &FusionModel,
    store: &ParamStore,
    examples: &[EvalExample],
    threshold: f64,
    fpr_levels: &[f64],
) -> Result<SplitEval> {
    if examples.is_empty() {
        return Err(Error::config("no samples to evaluate"));
    }
    let mut scores = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    let mut alpha_acc: BTreeMap<String, (BTreeMap<ModalityId, f64>, usize)> = BTreeMap::new();
    let mut bucket_counts: BTreeMap<Bucket, (usize, usize)> = BTreeMap::new();
    for ex in examples {
        let out = model.forward(store, &ex.input)?;
        let p = 1.0 / (1.0 + (-out.logit).exp());
        scores.push(p);
        labels.push(ex.label);
        let (acc, n) = alpha_acc.entry(ex.group.clone()).or_default();
        for (m, a) in &out.alpha {
            *acc.entry(*m).or_insert(0.0) += a;
        }
        *n += 1;
        let bucket = confidence_bucket(ex.input.w);
        let entry = bucket_counts.entry(bucket).or_insert((0, 0));
        entry.1 += 1;
        if (p >= threshold) == (ex.label == 1.0) {
            entry.0 += 1;
        }
    }
    let counts = confusion(&scores, &labels, threshold)?;
    let both_classes = counts.tp + counts.fn_ > 0 && counts.fp + counts.tn > 0;
    let tpr = fpr_levels
        .iter()
        .map(|&level| {
            let v = if both_classes {
                Some(tpr_at_fpr(&scores, &labels, level)).transpose()
            } else {
                Ok(None)
            };
            v.map(|t| (level, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let bucket_accuracy = bucket_counts
        .into_iter()
        .map(|(b, (correct, n))| {
            let acc = if n > 0 {
                Some(correct as f64 / n as f64)
            } else {
                None
            };
            (b, acc)
        })
        .collect();
    let alpha_summary = alpha_acc
        .into_iter()
        .map(|(g, (acc, n))| {
            let means = acc.into_iter().map(|(m, s)| (m, s / n as f64)).collect();
            (g, means)
        })
        .collect();
    Ok(SplitEval {
        counts,
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        fpr: counts.fpr(),
        precision_defined: counts.precision_defined(),
        recall_defined: counts.recall_defined(),
        tpr_at_fpr: tpr,
        bucket_accuracy,
        alpha_summary,
        scores,
        labels,
    })
}

/// Robustness drill: applies the drop policy, then evaluates as usual.
pub fn missing_modality_eval(
    model: &FusionModel,
    store: &ParamStore,
    examples: &[EvalExample],
    policy: DropPolicy,
    rng_seed: u64,
    threshold: f64,
    fpr_levels: &[f64],
) -> Result<SplitEval> {
    let masked = apply_policy(examples, policy, rng_seed);
    evaluate(model, store, &masked, threshold, fpr_levels)
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std_dev: f64,
}

pub fn summarize(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::config("cannot summarize zero values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MetricSummary { mean, std_dev })
}

/// Aggregate report over seeds, mirroring a per-metric mean +/- deviation
/// table with operational projections attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub policy: DropPolicy,
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub fpr: MetricSummary,
    pub tpr_at_fpr: Vec<(f64, Option<MetricSummary>)>,
    pub bucket_accuracy: BTreeMap<Bucket, Option<MetricSummary>>,
    pub alpha_summary: BTreeMap<String, BTreeMap<ModalityId, f64>>,
    pub alert_projection: Option<AlertProjection>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Aggregates per-seed split evaluations; the optional projection input
    /// is (daily benign event volume, baseline FPR).
    pub fn from_runs(
        seeds: &[u64],
        runs: &[SplitEval],
        policy: DropPolicy,
        projection: Option<(u64, f64)>,
    ) -> Result<Self> {
        if runs.is_empty() || seeds.len() != runs.len() {
            return Err(Error::config(format!(
                "{} seeds vs {} runs",
                seeds.len(),
                runs.len()
            )));
        }
        let collect = |f: &dyn Fn(&SplitEval) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
        let accuracy = summarize(&collect(&|r| r.accuracy))?;
        let precision = summarize(&collect(&|r| r.precision))?;
        let recall = summarize(&collect(&|r| r.recall))?;
        let fpr = summarize(&collect(&|r| r.fpr))?;

        let mut tpr = Vec::new();
        for (i, &(level, _)) in runs[0].tpr_at_fpr.iter().enumerate() {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.tpr_at_fpr.get(i).and_then(|&(_, v)| v))
                .collect();
            let summary = if values.is_empty() {
                None
            } else {
                Some(summarize(&values)?)
            };
            tpr.push((level, summary));
        }

        let mut bucket_accuracy = BTreeMap::new();
        for b in [Bucket::High, Bucket::Medium, Bucket::Low] {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.bucket_accuracy.get(&b).copied().flatten())
                .collect();
            let summary = if values.is_empty() {
                None
            } else {
                Some(summarize(&values)?)
            };
            bucket_accuracy.insert(b, summary);
        }

        let mut alpha_acc: BTreeMap<String, (BTreeMap<ModalityId, f64>, usize)> = BTreeMap::new();
        for run in runs {
            for (g, means) in &run.alpha_summary {
                let (acc, n) = alpha_acc.entry(g.clone()).or_default();
                for (m, a) in means {
                    *acc.entry(*m).or_insert(0.0) += a;
                }
                *n += 1;
            }
        }
        let alpha_summary = alpha_acc
            .into_iter()
            .map(|(g, (acc, n))| {
                let means = acc.into_iter().map(|(m, s)| (m, s / n as f64)).collect();
                (g, means)
            })
            .collect();

        let mut notes = vec![
            "deviations are sample standard deviations over seeds".to_string(),
        ];
        let alert_projection = match projection {
            Some((daily, baseline)) => {
                notes.push(
                    "alert projection treats the daily event volume as all benign".to_string(),
                );
                Some(alert_projection(fpr.mean, daily, baseline)?)
            }
            None => None,
        };
        Ok(EvalReport {
            seeds: seeds.to_vec(),
            policy,
            accuracy,
            precision,
            recall,
            fpr,
            tpr_at_fpr: tpr,
            bucket_accuracy,
            alpha_summary,
            alert_projection,
            notes,
        })
    }

    /// Human-readable table of the report.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "policy: {:?}  seeds: {:?}\n",
            self.policy, self.seeds
        ));
        out.push_str(&format!("{:<16}{:>10}{:>10}\n", "metric", "mean", "std_dev"));
        for (name, m) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("fpr", self.fpr),
        ] {
            out.push_str(&format!("{:<16}{:>10.4}{:>10.4}\n", name, m.mean, m.std_dev));
        }
        for (level, m) in &self.tpr_at_fpr {
            let name = format!("tpr@{level}fpr");
            match m {
                Some(m) => out.push_str(&format!(
                    "{:<16}{:>10.4}{:>10.4}\n",
                    name, m.mean, m.std_dev
                )),
                None => out.push_str(&format!("{name:<16}{:>10}{:>10}\n", "n/a", "n/a")),
            }
        }
        for (b, m) in &self.bucket_accuracy {
            let name = format!("acc[{b}]");
            match m {
                Some(m) => out.push_str(&format!(
                    "{:<16}{:>10.4}{:>10.4}\n",
                    name, m.mean, m.std_dev
                )),
                None => out.push_str(&format!("{name:<16}{:>10}{:>10}\n", "n/a", "n/a")),
            }
        }
        for (g, means) in &self.alpha_summary {
            let cells: Vec<String> = means
                .iter()
                .map(|(m, a)| format!("{m}={a:.3}"))
                .collect();
            out.push_str(&format!("alpha[{g}]: {}\n", cells.join(" ")));
        }
        if let Some(p) = &self.alert_projection {
            out.push_str(&format!(
                "alerts/day: {} (baseline {}, delta {})\n",
                p.alerts, p.baseline_alerts, p.delta
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("report serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
