//! Single-document run configuration: one TOML file drives the whole
//! pipeline, and unknown keys are rejected to catch sweep typos.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationConfig;
use crate::encoders::{EncoderArch, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluation::DropPolicy;
use crate::events::ModalityId;
use crate::fusion::ModelConfig;
use crate::synth;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

// ---------------------------------------------------------------------------
// Evaluation block
// ---------------------------------------------------------------------------

/// Settings for held-out evaluation and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Probability threshold for flagging a threat.
    pub threshold: f64,
    /// FPR operating points reported as TPR@FPR.
    pub fpr_levels: Vec<f64>,
    /// Degradation policies evaluated alongside the unmodified split.
    pub drop_policies: Vec<DropPolicy>,
    /// Benign events per day assumed for alert volume projection.
    pub benign_daily: u64,
    /// Reference FPR for the projected alert delta, when known.
    pub baseline_fpr: Option<f64>,
    pub rng_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            fpr_levels: vec![0.01, 0.05, 0.10],
            drop_policies: vec![
                DropPolicy::None,
                DropPolicy::DropNetwork,
                DropPolicy::DropText,
                DropPolicy::Random50,
            ],
            benign_daily: 100_000,
            baseline_fpr: None,
            rng_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            return Err(Error::config(format!(
                "eval threshold must lie in [0,1], got {}",
                self.threshold
            )));
        }
        if self.fpr_levels.is_empty() {
            return Err(Error::config("eval needs at least one FPR level"));
        }
        for &l in &self.fpr_levels {
            if !(l.is_finite() && (0.0..=1.0).contains(&l)) {
                return Err(Error::config(format!("FPR level must lie in [0,1], got {l}")));
            }
        }
        if let Some(b) = self.baseline_fpr {
            if !(b.is_finite() && (0.0..=1.0).contains(&b)) {
                return Err(Error::config(format!("baseline_fpr must lie in [0,1], got {b}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run document
// ---------------------------------------------------------------------------

/// Everything one run needs, in five blocks. The default is a coherent
/// two-modality pipeline: generated streams feed correlation, training,
/// and evaluation without further edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub correlation: CorrelationConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

fn default_model(input_dim: usize) -> ModelConfig {
    let enc = |modality, arch| EncoderConfig {
        modality,
        arch,
        input_dim,
        embed_dim: 16,
        hidden_dim: 16,
    };
    ModelConfig {
        encoders: vec![
            enc(ModalityId::Network, EncoderArch::Conv1d),
            enc(ModalityId::Email, EncoderArch::PoolFf),
        ],
        controller_hidden: 8,
        head_hidden: 16,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let (synth, correlation) = synth::training_fixture(0);
        RunConfig {
            model: default_model(synth.feature_dim),
            synth,
            correlation,
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Validates each block and their mutual fit: encoders must match the
    /// generated modalities and feature width.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.correlation.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        let generated = self.synth.modalities();
        for enc in &self.model.encoders {
            if !generated.contains(&enc.modality) {
                return Err(Error::config(format!(
                    "model covers {} but the scenario never emits that stream",
                    enc.modality
                )));
            }
            if enc.input_dim != self.synth.feature_dim {
                return Err(Error::config(format!(
                    "{} encoder expects {} features but the scenario emits {}",
                    enc.modality, enc.input_dim, self.synth.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Reseeds every block from one value, as the CLI `--seed` flag does.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.rng_seed = seed;
        self.correlation.rng_seed = seed;
        self.training.rng_seed = seed;
        self.eval.rng_seed = seed;
        self
    }

    /// Loads and validates a run document. An unreadable path is a
    /// configuration error: the flag pointed somewhere wrong.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// The model restricted to a single modality, for baseline comparisons.
    pub fn single_modality_model(&self, m: ModalityId) -> Result<ModelConfig> {
        let enc = self
            .model
            .encoders
            .iter()
            .find(|e| e.modality == m)
            .ok_or_else(|| Error::config(format!("model has no {m} encoder")))?;
        Ok(ModelConfig {
            encoders: vec![enc.clone()],
            controller_hidden: self.model.controller_hidden,
            head_hidden: self.model.head_hidden,
        })
    }
}

/// Seeds for an n-way sweep: `base, base+1, ...`.
pub fn sweep_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_document_is_coherent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_the_document() {
        let cfg = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        cfg.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        // Missing blocks default; the typo in the one present block must fail.
        fs::write(&path, "[training]\nlearning_rte = 0.1\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("learning_rte"), "{err}");
    }

    #[test]
    fn seed_override_reaches_every_block() {
        let cfg = RunConfig::default().with_seed(99);
        assert_eq!(cfg.synth.rng_seed, 99);
        assert_eq!(cfg.correlation.rng_seed, 99);
        assert_eq!(cfg.training.rng_seed, 99);
        assert_eq!(cfg.eval.rng_seed, 99);
    }

    #[test]
    fn mismatched_feature_width_is_caught() {
        let mut cfg = RunConfig::default();
        cfg.synth.feature_dim = 9;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("features"), "{err}");
    }

    #[test]
    fn model_for_missing_modality_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.encoders[0].modality = ModalityId::Log;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().single_modality_model(ModalityId::Log).is_err());
    }

    #[test]
    fn single_modality_model_keeps_one_encoder() {
        let cfg = RunConfig::default();
        let m = cfg.single_modality_model(ModalityId::Email).unwrap();
        assert_eq!(m.encoders.len(), 1);
        assert_eq!(m.encoders[0].modality, ModalityId::Email);
        m.validate().unwrap();
    }

    #[test]
    fn sweep_seeds_are_sequential() {
        assert_eq!(sweep_seeds(7, 3), vec![7, 8, 9]);
    }
}
