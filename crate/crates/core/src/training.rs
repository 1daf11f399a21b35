//! Model training: composite objective, confidence-weighted batch sampling,
//! and early-stopped adaptive gradient descent.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelatedPair, PairKind, TrainingScenario};
use crate::error::{Error, Result};
use crate::events::{EventIndex, ModalityId, StreamDataset};
use crate::fusion::{AblationFlags, FusionInput, FusionModel, ModelConfig};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor2};

/// Floor added to every pair's sampling weight so zero-confidence pairs stay
/// sampleable under confidence weighting.
pub const SAMPLING_FLOOR: f64 = 0.05;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Coefficients of the consistency and independence loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Batch sampling strategy over scenario pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "UNIFORM")]
    Uniform,
    /// Pair probability proportional to (w + floor).
    #[serde(rename = "CONFIDENCE_WEIGHTED")]
    ConfidenceWeighted,
}

/// Training hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is allowed and leaves parameters untouched.
    pub learning_rate: f64,
    /// Applied to cross-attention outputs during training only.
    pub dropout: f64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub sampler: SamplerKind,
    /// Probability that a sampled pair is degraded to one modality.
    pub degrade_prob: f64,
    pub loss_weights: LossWeights,
    pub ablation: AblationFlags,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 0.01,
            dropout: 0.3,
            early_stop_patience: 30,
            sampler: SamplerKind::ConfidenceWeighted,
            degrade_prob: 0.25,
            loss_weights: LossWeights::default(),
            ablation: AblationFlags::none(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.degrade_prob) {
            return Err(Error::config(format!(
                "degrade_prob must be in [0,1], got {}",
                self.degrade_prob
            )));
        }
        self.loss_weights.validate()
    }

    /// Confidence weighting forced off also forces uniform sampling.
    fn effective_sampler(&self) -> SamplerKind {
        if self.ablation.no_confidence_weighting {
            SamplerKind::Uniform
        } else {
            self.sampler
        }
    }

    /// Degradation is part of the missing-modality machinery.
    fn effective_degrade_prob(&self) -> f64 {
        if self.ablation.no_missing_modality_paths {
            0.0
        } else {
            self.degrade_prob
        }
    }

    /// Loss-side confidence; the no-confidence ablation pins it to 1.
    fn loss_w(&self, w: f64) -> f64 {
        if self.ablation.no_confidence_weighting {
            1.0
        } else {
            w
        }
    }
}

// ---------------------------------------------------------------------------
// Composite loss
// ---------------------------------------------------------------------------

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a 0/1 label.
fn bce(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Batch-mean training objective computed in plain scalar arithmetic:
/// task cross-entropy of the fused logit, plus a confidence-scaled
/// consistency penalty on the two single-modality probabilities, plus a
/// (1 - confidence)-scaled mean single-modality cross-entropy.
pub fn composite_loss(
    fused_logits: &[f64],
    labels: &[f64],
    w: &[f64],
    per_modality_logits: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let n = fused_logits.len();
    if n == 0 {
        return Err(Error::config("composite_loss needs at least one example"));
    }
    if labels.len() != n || w.len() != n || per_modality_logits.len() != n {
        return Err(Error::shape(format!(
            "composite_loss length mismatch: {} logits, {} labels, {} w, {} modality lists",
            n,
            labels.len(),
            w.len(),
            per_modality_logits.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (z, y, wi) = (fused_logits[i], labels[i], w[i]);
        if !z.is_finite() {
            return Err(Error::numeric(format!("non-finite fused logit at example {i}")));
        }
        if y != 0.0 && y != 1.0 {
            return Err(Error::config(format!("label at example {i} must be 0 or 1, got {y}")));
        }
        if !(0.0..=1.0).contains(&wi) {
            return Err(Error::config(format!("w at example {i} must be in [0,1], got {wi}")));
        }
        let singles = &per_modality_logits[i];
        if singles.is_empty() {
            return Err(Error::config(format!("example {i} has no single-modality logits")));
        }
        if singles.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric(format!("non-finite single-modality logit at example {i}")));
        }
        let task = bce(z, y);
        let consistency = if singles.len() == 2 {
            let d = sigmoid(singles[0]) - sigmoid(singles[1]);
            d * d
        } else {
            0.0
        };
        let independence = singles.iter().map(|&z| bce(z, y)).sum::<f64>() / singles.len() as f64;
        total += task + weights.lambda1 * consistency * wi + weights.lambda2 * independence * (1.0 - wi);
    }
    Ok(total / n as f64)
}

/// BCE of a logit node against a constant label, as graph nodes.
fn bce_node(g: &mut Graph, logit: NodeId, label: f64) -> Result<NodeId> {
    let sp = g.softplus(logit);
    let yz = g.scale(logit, label);
    g.sub(sp, yz)
}

/// Builds one example's composite loss on the tape. The single-modality
/// passes reuse the fused pass's parameter nodes, so gradients accumulate
/// across all three forward passes.
pub fn example_loss_nodes(
    g: &mut Graph,
    store: &ParamStore,
    model: &FusionModel,
    example: &BatchExample,
    cfg: &TrainConfig,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<NodeId> {
    let w_loss = cfg.loss_w(example.input.w);
    let dropout = if rng.is_some() { cfg.dropout } else { 0.0 };
    let fused = model.forward_graph(g, store, &example.input, dropout, rng.as_deref_mut())?;
    let mut loss = bce_node(g, fused.logit, example.label)?;

    // The per-modality passes are the missing-modality machinery: the model
    // run with all but one stream masked. Ablating the machinery also drops
    // the consistency and independence terms built from those passes.
    if cfg.ablation.no_missing_modality_paths {
        return Ok(loss);
    }

    let mut probs = Vec::new();
    let mut independence = Vec::new();
    for m in model.cfg.modalities() {
        if !example.input.mask.is_available(m) {
            continue;
        }
        let single = FusionInput::single(m, example.input.features[&m].clone());
        let nodes = model.forward_graph(g, store, &single, dropout, rng.as_deref_mut())?;
        probs.push(g.sigmoid(nodes.logit));
        independence.push(bce_node(g, nodes.logit, example.label)?);
    }
    if probs.len() == 2 {
        let diff = g.sub(probs[0], probs[1])?;
        let sq = g.mul(diff, diff)?;
        let scaled = g.scale(sq, cfg.loss_weights.lambda1 * w_loss);
        loss = g.add(loss, scaled)?;
    }
    let indep = g.mean_of(&independence)?;
    let indep = g.scale(indep, cfg.loss_weights.lambda2 * (1.0 - w_loss));
    g.add(loss, indep)
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

/// One training example: input features with mask and confidence, plus label.
#[derive(Debug, Clone)]
pub struct BatchExample {
    pub input: FusionInput,
    pub label: f64,
}

/// A resolved pair: per-side modality, features, and label.
#[derive(Debug, Clone)]
struct PoolEntry {
    a: (ModalityId, Vec<f64>, u8),
    b: (ModalityId, Vec<f64>, u8),
    w: f64,
    injected: bool,
}

impl PoolEntry {
    /// Injected negatives are labeled benign regardless of the side events:
    /// the pair task asks whether the two events form a correlated chain.
    fn label(&self) -> f64 {
        if self.injected {
            0.0
        } else {
            self.a.2.max(self.b.2) as f64
        }
    }

    fn to_pair_example(&self, w_override: Option<f64>) -> BatchExample {
        let w = w_override.unwrap_or(self.w);
        let input = FusionInput::pair(
            self.a.0,
            self.a.1.clone(),
            self.b.0,
            self.b.1.clone(),
            w,
        );
        BatchExample {
            input,
            label: self.label(),
        }
    }

    /// Keeps one side only; the degraded example carries that side's label.
    fn to_single_example(&self, keep_a: bool) -> BatchExample {
        let side = if keep_a { &self.a } else { &self.b };
        BatchExample {
            input: FusionInput::single(side.0, side.1.clone()),
            label: side.2 as f64,
        }
    }
}

fn sampling_weight(kind: SamplerKind, w: f64) -> f64 {
    match kind {
        SamplerKind::Uniform => 1.0,
        SamplerKind::ConfidenceWeighted => w + SAMPLING_FLOOR,
    }
}

/// Resolves scenario pairs from the given folds into feature-level entries.
fn resolve_pairs(
    pairs: &[&CorrelatedPair],
    datasets: &[StreamDataset],
    index: &EventIndex,
) -> Result<Vec<PoolEntry>> {
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let side = |id: &str| -> Result<(ModalityId, Vec<f64>, u8)> {
            let (di, ei) = index
                .get(id)
                .ok_or_else(|| Error::config(format!("pair references unknown event id {id}")))?;
            let e = &datasets[di].events[ei];
            Ok((e.modality, e.features.clone(), e.label))
        };
        entries.push(PoolEntry {
            a: side(&p.left)?,
            b: side(&p.right)?,
            w: p.w,
            injected: p.kind == PairKind::InjectedNegative,
        });
    }
    Ok(entries)
}

/// Draws training batches from the scenario's training folds.
struct Sampler {
    entries: Vec<PoolEntry>,
    cumulative: Vec<f64>,
    degrade_prob: f64,
    /// Random cross-modal re-pairing pools, used when temporal correlation
    /// is ablated; keyed by modality, restricted to the training time range.
    random_pools: Option<BTreeMap<ModalityId, Vec<(Vec<f64>, u8)>>>,
}

impl Sampler {
    fn build(
        scenario: &TrainingScenario,
        datasets: &[StreamDataset],
        model_cfg: &ModelConfig,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let k = scenario.folds.len();
        if k < 2 {
            return Err(Error::config(
                "scenario needs at least one training fold and one validation fold",
            ));
        }
        let refs: Vec<&StreamDataset> = datasets.iter().collect();
        let index = EventIndex::build(&refs)?;
        let train_pairs: Vec<&CorrelatedPair> =
            scenario.folds[..k - 1].iter().flatten().collect();
        let entries = resolve_pairs(&train_pairs, datasets, &index)?;
        if entries.is_empty() {
            return Err(Error::config("training folds contain no pairs"));
        }
        let kind = cfg.effective_sampler();
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for e in &entries {
            acc += sampling_weight(kind, e.w);
            cumulative.push(acc);
        }
        let random_pools = if cfg.ablation.no_temporal_correlation {
            let train_end = scenario.fold_boundaries[k - 2].1;
            let mut pools: BTreeMap<ModalityId, Vec<(Vec<f64>, u8)>> = BTreeMap::new();
            for m in model_cfg.modalities() {
                pools.insert(m, Vec::new());
            }
            for ds in datasets {
                let Some(pool) = pools.get_mut(&ds.modality) else {
                    continue;
                };
                for e in &ds.events {
                    if e.timestamp <= train_end {
                        pool.push((e.features.clone(), e.label));
                    }
                }
            }
            for (m, pool) in &pools {
                if pool.is_empty() {
                    return Err(Error::config(format!(
                        "no {m} events in the training time range for random pairing"
                    )));
                }
            }
            Some(pools)
        } else {
            None
        };
        Ok(Sampler {
            entries,
            cumulative,
            degrade_prob: cfg.effective_degrade_prob(),
            random_pools,
        })
    }

    /// Number of distinct training pairs; sets the per-epoch step budget.
    fn pool_len(&self) -> usize {
        self.entries.len()
    }

    fn sample_index(&self, rng: &mut ChaCha12Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty pool");
        let u = rng.random_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= u)
    }

    /// Uniform random cross-modal pair with zero confidence.
    fn draw_random_pair(&self, rng: &mut ChaCha12Rng) -> PoolEntry {
        let pools = self.random_pools.as_ref().expect("random mode");
        let modalities: Vec<ModalityId> = pools.keys().copied().collect();
        let mut pairs = Vec::new();
        for i in 0..modalities.len() {
            for j in i + 1..modalities.len() {
                pairs.push((modalities[i], modalities[j]));
            }
        }
        let (ma, mb) = pairs[rng.random_range(0..pairs.len())];
        let pa = &pools[&ma];
        let pb = &pools[&mb];
        let (fa, la) = pa[rng.random_range(0..pa.len())].clone();
        let (fb, lb) = pb[rng.random_range(0..pb.len())].clone();
        PoolEntry {
            a: (ma, fa, la),
            b: (mb, fb, lb),
            w: 0.0,
            injected: false,
        }
    }

    fn draw_one(&self, rng: &mut ChaCha12Rng) -> BatchExample {
        let entry = if self.random_pools.is_some() {
            self.draw_random_pair(rng)
        } else {
            self.entries[self.sample_index(rng)].clone()
        };
        if self.degrade_prob > 0.0 && rng.random::<f64>() < self.degrade_prob {
            let keep_a = rng.random::<f64>() < 0.5;
            entry.to_single_example(keep_a)
        } else {
            entry.to_pair_example(None)
        }
    }

    fn draw(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<BatchExample> {
        (0..n).map(|_| self.draw_one(rng)).collect()
    }
}

/// Samples one batch from the scenario's training folds (all but the last
/// fold, which is held out for validation).
pub fn sample_batch(
    scenario: &TrainingScenario,
    datasets: &[StreamDataset],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<BatchExample>> {
    cfg.validate()?;
    let sampler = Sampler::build(scenario, datasets, model_cfg, cfg)?;
    Ok(sampler.draw(cfg.batch_size, rng))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam: per-parameter step sizes from running gradient moments.
struct Adam {
    lr: f64,
    t: i32,
    m: BTreeMap<String, Tensor2>,
    v: BTreeMap<String, Tensor2>,
}

impl Adam {
    fn new(lr: f64) -> Self {
        Adam {
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let (lr, m, v) = (self.lr, &mut self.m, &mut self.v);
        store.update(|name, theta, grad| {
            let m = m
                .entry(name.to_string())
                .or_insert_with(|| Tensor2::zeros(theta.rows, theta.cols));
            let v = v
                .entry(name.to_string())
                .or_insert_with(|| Tensor2::zeros(theta.rows, theta.cols));
            for i in 0..theta.data.len() {
                let g = grad.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * g;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                theta.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

/// Per-epoch history plus the optimizer that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub optimizer: String,
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One header line naming the optimizer, then one line per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = serde_json::json!({ "optimizer": self.optimizer });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::config(format!("log serialization failed: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

/// Tracks the best validation loss and epochs since it improved.
struct EarlyStopper {
    best: f64,
    best_epoch: usize,
    since: usize,
    patience: usize,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        EarlyStopper {
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
            patience,
        }
    }

    /// Returns true when training should stop after this epoch.
    fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since = 0;
            false
        } else {
            self.since += 1;
            self.since >= self.patience
        }
    }

    fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

fn with_batch_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => {
            Error::numeric(format!("epoch {epoch} batch {step}: {msg}"))
        }
        other => other,
    }
}

/// Forward + backward + optimizer step over one batch; returns the loss.
fn batch_step(
    model: &FusionModel,
    store: &mut ParamStore,
    batch: &[BatchExample],
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
    adam: &mut Adam,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        losses.push(example_loss_nodes(&mut g, store, model, ex, cfg, Some(rng))?);
    }
    let loss = g.mean_of(&losses)?;
    let value = g.scalar_value(loss);
    g.backward(loss)?;
    store.zero_grads();
    g.apply_grads(store)?;
    adam.step(store);
    Ok(value)
}

/// Deterministic loss over a batch with dropout off; no parameter update.
#[cfg(test)]
fn batch_loss(
    model: &FusionModel,
    store: &ParamStore,
    batch: &[BatchExample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        losses.push(example_loss_nodes(&mut g, store, model, ex, cfg, None)?);
    }
    let loss = g.mean_of(&losses)?;
    Ok(g.scalar_value(loss))
}

/// Mean composite loss and accuracy over the validation entries, computed
/// through the scalar oracle path rather than the tape.
fn evaluate_entries(
    model: &FusionModel,
    store: &ParamStore,
    entries: &[PoolEntry],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut fused = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    let mut ws = Vec::with_capacity(entries.len());
    let mut singles = Vec::with_capacity(entries.len());
    let mut correct = 0usize;
    for entry in entries {
        let ex = entry.to_pair_example(None);
        let out = model.forward(store, &ex.input)?;
        let mut per_modality = Vec::new();
        if !cfg.ablation.no_missing_modality_paths {
            for m in model.cfg.modalities() {
                if !ex.input.mask.is_available(m) {
                    continue;
                }
                let single = FusionInput::single(m, ex.input.features[&m].clone());
                per_modality.push(model.forward(store, &single)?.logit);
            }
        }
        let predicted_positive = out.logit >= 0.0;
        if predicted_positive == (ex.label == 1.0) {
            correct += 1;
        }
        fused.push(out.logit);
        labels.push(ex.label);
        ws.push(cfg.loss_w(ex.input.w));
        singles.push(per_modality);
    }
    let loss = if cfg.ablation.no_missing_modality_paths {
        fused.iter().zip(&labels).map(|(z, y)| bce(*z, *y)).sum::<f64>() / fused.len() as f64
    } else {
        composite_loss(&fused, &labels, &ws, &singles, &cfg.loss_weights)?
    };
    Ok((loss, correct as f64 / entries.len() as f64))
}

/// Trains a fusion model on the scenario's training folds, validating on the
/// last fold, and returns the best-validation checkpoint with the log.
pub fn train(
    scenario: &TrainingScenario,
    datasets: &[StreamDataset],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParamStore, TrainingLog)> {
    cfg.validate()?;
    let model = FusionModel::new(model_cfg.clone(), cfg.ablation)?;
    let sampler = Sampler::build(scenario, datasets, model_cfg, cfg)?;

    let refs: Vec<&StreamDataset> = datasets.iter().collect();
    let index = EventIndex::build(&refs)?;
    let k = scenario.folds.len();
    let val_pairs: Vec<&CorrelatedPair> = scenario.folds[k - 1].iter().collect();
    let val_entries = resolve_pairs(&val_pairs, datasets, &index)?;
    if val_entries.is_empty() {
        return Err(Error::config("validation fold contains no pairs"));
    }

    let mut store = model.init_params(cfg.rng_seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed ^ 0x5DEE_CE66_D154_21C5);
    let mut adam = Adam::new(cfg.learning_rate);
    let steps_per_epoch = sampler.pool_len().div_ceil(cfg.batch_size).max(1);

    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_store = store.clone();
    let mut records = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for step in 0..steps_per_epoch {
            let batch = sampler.draw(cfg.batch_size, &mut rng);
            loss_sum += batch_step(&model, &mut store, &batch, cfg, &mut rng, &mut adam)
                .map_err(|e| with_batch_context(e, epoch, step))?;
        }
        let train_loss = loss_sum / steps_per_epoch as f64;
        let (val_loss, val_accuracy) = evaluate_entries(&model, &store, &val_entries, cfg)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            lr: cfg.learning_rate,
        });
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best_store = store.clone();
        }
        if stop {
            break;
        }
    }
    let log = TrainingLog {
        optimizer: "adam".to_string(),
        records,
    };
    Ok((best_store, log))
}

/// Mean composite loss and accuracy over single-modality examples. With one
/// modality the fused path and the lone per-modality path share the logit.
fn evaluate_singles(
    model: &FusionModel,
    store: &ParamStore,
    examples: &[BatchExample],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut fused = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    let mut ws = Vec::with_capacity(examples.len());
    let mut singles = Vec::with_capacity(examples.len());
    let mut correct = 0usize;
    for ex in examples {
        let out = model.forward(store, &ex.input)?;
        if (out.logit >= 0.0) == (ex.label == 1.0) {
            correct += 1;
        }
        fused.push(out.logit);
        labels.push(ex.label);
        ws.push(cfg.loss_w(ex.input.w));
        singles.push(vec![out.logit]);
    }
    let loss = if cfg.ablation.no_missing_modality_paths {
        fused.iter().zip(&labels).map(|(z, y)| bce(*z, *y)).sum::<f64>() / fused.len() as f64
    } else {
        composite_loss(&fused, &labels, &ws, &singles, &cfg.loss_weights)?
    };
    Ok((loss, correct as f64 / examples.len() as f64))
}

/// Trains a one-encoder model on the scenario's pairs projected onto that
/// modality: each pair contributes its modality-side features under the pair
/// label, sampled with the same confidence weighting as fused training.
/// This is the calibration-matched single-modality baseline a fused model
/// is compared against.
pub fn train_single_modality(
    scenario: &TrainingScenario,
    datasets: &[StreamDataset],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ParamStore, TrainingLog)> {
    cfg.validate()?;
    let modalities = model_cfg.modalities();
    let [m] = modalities[..] else {
        return Err(Error::config(
            "single-modality training needs a one-encoder model",
        ));
    };
    let model = FusionModel::new(model_cfg.clone(), cfg.ablation)?;
    let k = scenario.folds.len();
    if k < 2 {
        return Err(Error::config(
            "scenario needs at least one training fold and one validation fold",
        ));
    }
    let refs: Vec<&StreamDataset> = datasets.iter().collect();
    let index = EventIndex::build(&refs)?;
    let train_pairs: Vec<&CorrelatedPair> = scenario.folds[..k - 1].iter().flatten().collect();
    let entries = resolve_pairs(&train_pairs, datasets, &index)?;
    if entries.is_empty() {
        return Err(Error::config("training folds contain no pairs"));
    }
    let val_pairs: Vec<&CorrelatedPair> = scenario.folds[k - 1].iter().collect();
    let val_entries = resolve_pairs(&val_pairs, datasets, &index)?;
    if val_entries.is_empty() {
        return Err(Error::config("validation fold contains no pairs"));
    }
    let project = |e: &PoolEntry| -> Result<BatchExample> {
        let side = if e.a.0 == m {
            &e.a
        } else if e.b.0 == m {
            &e.b
        } else {
            return Err(Error::config(format!("a scenario pair has no {m} side")));
        };
        Ok(BatchExample {
            input: FusionInput::single(m, side.1.clone()),
            label: e.label(),
        })
    };
    let train_pool: Vec<BatchExample> = entries.iter().map(project).collect::<Result<_>>()?;
    let val_pool: Vec<BatchExample> = val_entries.iter().map(project).collect::<Result<_>>()?;
    let kind = cfg.effective_sampler();
    let mut cumulative = Vec::with_capacity(entries.len());
    let mut acc = 0.0;
    for e in &entries {
        acc += sampling_weight(kind, e.w);
        cumulative.push(acc);
    }
    let total = acc;

    let mut store = model.init_params(cfg.rng_seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed ^ 0x5DEE_CE66_D154_21C5);
    let mut adam = Adam::new(cfg.learning_rate);
    let steps_per_epoch = train_pool.len().div_ceil(cfg.batch_size).max(1);

    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_store = store.clone();
    let mut records = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for step in 0..steps_per_epoch {
            let batch: Vec<BatchExample> = (0..cfg.batch_size)
                .map(|_| {
                    let u = rng.random_range(0.0..total);
                    train_pool[cumulative.partition_point(|&c| c <= u)].clone()
                })
                .collect();
            loss_sum += batch_step(&model, &mut store, &batch, cfg, &mut rng, &mut adam)
                .map_err(|e| with_batch_context(e, epoch, step))?;
        }
        let train_loss = loss_sum / steps_per_epoch as f64;
        let (val_loss, val_accuracy) = evaluate_singles(&model, &store, &val_pool, cfg)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            lr: cfg.learning_rate,
        });
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best_store = store.clone();
        }
        if stop {
            break;
        }
    }
    let log = TrainingLog {
        optimizer: "adam".to_string(),
        records,
    };
    Ok((best_store, log))
}

// ---------------------------------------------------------------------------
