//! Subcommand implementations. Each one resolves its configuration, does
//! the work, writes artifacts into the out directory, and finalizes a
//! provenance manifest there.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use threatfuse::config::{sweep_seeds, RunConfig};
use threatfuse::correlation::{correlate, Bucket, TrainingScenario};
use threatfuse::error::{Error, Result};
use threatfuse::evaluation::{
    evaluate, missing_modality_eval, scenario_examples, summarize, DropPolicy, EvalReport,
};
use threatfuse::events::{load_stream, ModalityId, StreamDataset};
use threatfuse::fusion::{AblationFlags, FusionModel};
use threatfuse::manifest::RunManifest;
use threatfuse::numerics::ParamStore;
use threatfuse::synth::generate;
use threatfuse::training;

use crate::CommonArgs;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads every `<modality>.jsonl` file in `dir`, in modality order.
fn load_streams(dir: &Path) -> Result<(Vec<StreamDataset>, Vec<PathBuf>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(ModalityId, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let modality: ModalityId = stem.parse().map_err(|_| {
            Error::config(format!(
                "stream file {} does not name a modality (expected network/email/log)",
                path.display()
            ))
        })?;
        found.push((modality, path));
    }
    if found.is_empty() {
        return Err(Error::config(format!("no *.jsonl streams in {}", dir.display())));
    }
    found.sort_by_key(|(m, _)| *m);
    let mut datasets = Vec::with_capacity(found.len());
    let mut paths = Vec::with_capacity(found.len());
    for (modality, path) in found {
        datasets.push(load_stream(&path, modality)?);
        paths.push(path);
    }
    Ok((datasets, paths))
}

fn stream_pair(datasets: &[StreamDataset]) -> Result<(&StreamDataset, &StreamDataset)> {
    if datasets.len() != 2 {
        return Err(Error::config(format!(
            "correlation is pairwise; found {} streams",
            datasets.len()
        )));
    }
    Ok((&datasets[0], &datasets[1]))
}

fn policy_key(policy: DropPolicy) -> String {
    serde_json::to_value(policy)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_else(|| format!("{policy:?}"))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("serialization failed: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub(crate) fn synth(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    ensure_out(&common.out)?;
    let output = generate(&cfg.synth)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    output.save_all(&common.out)?;
    for ds in &output.datasets {
        println!("wrote {}.jsonl: {} events", ds.modality.key(), ds.events.len());
    }
    println!("wrote ground_truth.json: {} true pairs", output.truth.len());
    let seed = cfg.synth.rng_seed;
    let manifest = RunManifest::new("synth", cfg, seed);
    manifest.finalize(&common.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

fn print_scenario_summary(scenario: &TrainingScenario) {
    for k in 0..scenario.folds.len() {
        let (t0, t1) = scenario.fold_boundaries[k];
        println!(
            "fold {k} [{t0:.0}, {t1:.0}): {} correlated, {} injected",
            scenario.correlated_count(k),
            scenario.negative_count(k)
        );
    }
    let hist = scenario.bucket_histogram();
    let count = |b: Bucket| hist.get(&b).copied().unwrap_or(0);
    println!(
        "buckets: HIGH {}  MEDIUM {}  LOW {}",
        count(Bucket::High),
        count(Bucket::Medium),
        count(Bucket::Low)
    );
}

pub(crate) fn correlate_cmd(common: &CommonArgs, streams: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (datasets, stream_paths) = load_streams(streams)?;
    let (a, b) = stream_pair(&datasets)?;
    ensure_out(&common.out)?;
    let scenario = correlate(a, b, &cfg.correlation)?;
    for w in &scenario.warnings {
        eprintln!("warning: {w}");
    }
    print_scenario_summary(&scenario);
    scenario.save(common.out.join("scenario.json"))?;
    println!("wrote scenario.json: {} pairs", scenario.total_pairs());
    let seed = cfg.correlation.rng_seed;
    let mut manifest = RunManifest::new("correlate", cfg, seed);
    for p in &stream_paths {
        manifest.add_input(p)?;
    }
    manifest.finalize(&common.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn best_epoch(log: &threatfuse::training::TrainingLog) -> Option<&threatfuse::training::EpochRecord> {
    let mut best: Option<&threatfuse::training::EpochRecord> = None;
    for r in &log.records {
        if best.map_or(true, |b| r.val_loss < b.val_loss) {
            best = Some(r);
        }
    }
    best
}

pub(crate) fn train(common: &CommonArgs, streams: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (datasets, stream_paths) = load_streams(streams)?;
    let (a, b) = stream_pair(&datasets)?;
    ensure_out(&common.out)?;
    let scenario = correlate(a, b, &cfg.correlation)?;
    let (store, log) =
        training::train(&scenario, &datasets, &cfg.model, &cfg.training).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!(
                "training diverged: {msg}; no checkpoint written to {}",
                common.out.display()
            )),
            other => other,
        })?;
    scenario.save(common.out.join("scenario.json"))?;
    store.save(common.out.join("checkpoint.json"))?;
    log.save(common.out.join("training_log.jsonl"))?;
    if let Some(best) = best_epoch(&log) {
        println!(
            "trained {} epochs; best epoch {}: val_loss {:.4}, val_accuracy {:.4}",
            log.records.len(),
            best.epoch,
            best.val_loss,
            best.val_accuracy
        );
    }
    println!("wrote scenario.json, checkpoint.json, training_log.jsonl");
    let seed = cfg.training.rng_seed;
    let mut manifest = RunManifest::new("train", cfg, seed);
    for p in &stream_paths {
        manifest.add_input(p)?;
    }
    manifest.finalize(&common.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub(crate) fn eval(common: &CommonArgs, streams: &Path, run: &Path) -> Result<()> {
    // The train manifest is the default config source, so a checkpoint is
    // always evaluated under the settings that produced it.
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => match RunManifest::load_from_dir(run) {
            Ok(m) => m.config,
            Err(_) => RunConfig::default(),
        },
    };
    let cfg = match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    let checkpoint_path = run.join("checkpoint.json");
    if !checkpoint_path.is_file() {
        return Err(Error::config(format!("no checkpoint at {}", checkpoint_path.display())));
    }
    let scenario_path = run.join("scenario.json");
    if !scenario_path.is_file() {
        return Err(Error::config(format!("no scenario at {}", scenario_path.display())));
    }
    let (datasets, stream_paths) = load_streams(streams)?;
    ensure_out(&common.out)?;
    let store = ParamStore::load(&checkpoint_path)?;
    let scenario = TrainingScenario::load(&scenario_path)?;
    let model = FusionModel::new(cfg.model.clone(), cfg.training.ablation)?;
    let val_fold = scenario.folds.len().saturating_sub(1);
    let examples = scenario_examples(&scenario, &datasets, &[val_fold])?;

    let projection = cfg.eval.baseline_fpr.map(|b| (cfg.eval.benign_daily, b));
    let mut reports = serde_json::Map::new();
    let mut text = String::new();
    for &policy in &cfg.eval.drop_policies {
        let split = missing_modality_eval(
            &model,
            &store,
            &examples,
            policy,
            cfg.eval.rng_seed,
            cfg.eval.threshold,
            &cfg.eval.fpr_levels,
        )?;
        let report =
            EvalReport::from_runs(&[cfg.eval.rng_seed], &[split], policy, projection)?;
        text.push_str(&report.to_text_table());
        text.push('\n');
        let value = serde_json::to_value(&report)
            .map_err(|e| Error::config(format!("report serialization failed: {e}")))?;
        reports.insert(policy_key(policy), value);
    }
    print!("{text}");
    write_json(&common.out.join("eval_report.json"), &serde_json::Value::Object(reports))?;
    fs::write(common.out.join("eval_report.txt"), &text)
        .map_err(|e| Error::io(common.out.join("eval_report.txt"), e))?;
    println!("wrote eval_report.json, eval_report.txt");

    let seed = cfg.eval.rng_seed;
    let mut manifest = RunManifest::new("eval", cfg, seed);
    for p in &stream_paths {
        manifest.add_input(p)?;
    }
    manifest.add_input(&checkpoint_path)?;
    manifest.add_input(&scenario_path)?;
    manifest.finalize(&common.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// The full model plus each single-flag ablation, in report order.
pub(crate) fn ablation_variants() -> [(&'static str, AblationFlags); 5] {
    let none = AblationFlags::none();
    [
        ("full", none),
        ("no_confidence_weighting", AblationFlags { no_confidence_weighting: true, ..none }),
        ("no_temporal_correlation", AblationFlags { no_temporal_correlation: true, ..none }),
        ("no_hierarchical_attention", AblationFlags { no_hierarchical_attention: true, ..none }),
        ("no_missing_modality_paths", AblationFlags { no_missing_modality_paths: true, ..none }),
    ]
}

/// Trains one variant for one seed and returns held-out accuracy.
fn ablation_accuracy(
    base: &RunConfig,
    datasets: &[StreamDataset],
    seed: u64,
    flags: AblationFlags,
) -> Result<f64> {
    let mut cfg = base.clone().with_seed(seed);
    cfg.training.ablation = flags;
    let (a, b) = stream_pair(datasets)?;
    let scenario = correlate(a, b, &cfg.correlation)?;
    let (store, _log) = training::train(&scenario, datasets, &cfg.model, &cfg.training)?;
    let model = FusionModel::new(cfg.model.clone(), flags)?;
    let val_fold = scenario.folds.len().saturating_sub(1);
    let examples = scenario_examples(&scenario, datasets, &[val_fold])?;
    let split = evaluate(&model, &store, &examples, cfg.eval.threshold, &cfg.eval.fpr_levels)?;
    Ok(split.accuracy)
}

pub(crate) fn ablate(common: &CommonArgs, streams: &Path, n_seeds: usize) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::config("--seeds must be at least 1"));
    }
    let cfg = load_config(common)?;
    let (datasets, stream_paths) = load_streams(streams)?;
    ensure_out(&common.out)?;
    let base_seed = common.seed.unwrap_or(cfg.training.rng_seed);
    let seeds = sweep_seeds(base_seed, n_seeds);

    let mut rows = Vec::new();
    for (name, flags) in ablation_variants() {
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            accs.push(ablation_accuracy(&cfg, &datasets, seed, flags)?);
        }
        rows.push((name, summarize(&accs)?));
    }

    let full_mean = rows[0].1.mean;
    let mut table = format!("seeds: {seeds:?}\n");
    table.push_str(&format!(
        "{:<28}{:>10}{:>10}{:>12}\n",
        "variant", "mean_acc", "std_dev", "delta_full"
    ));
    let mut json_rows = Vec::new();
    for (name, summary) in &rows {
        let delta = summary.mean - full_mean;
        table.push_str(&format!(
            "{name:<28}{:>10.4}{:>10.4}{:>12.4}\n",
            summary.mean, summary.std_dev, delta
        ));
        json_rows.push(json!({
            "variant": name,
            "mean_accuracy": summary.mean,
            "std_dev": summary.std_dev,
            "delta_vs_full": delta,
        }));
    }
    print!("{table}");
    fs::write(common.out.join("ablation.txt"), &table)
        .map_err(|e| Error::io(common.out.join("ablation.txt"), e))?;
    write_json(
        &common.out.join("ablation.json"),
        &json!({ "seeds": seeds, "rows": json_rows }),
    )?;
    println!("wrote ablation.json, ablation.txt");

    let mut manifest = RunManifest::new("ablate", cfg, base_seed);
    for p in &stream_paths {
        manifest.add_input(p)?;
    }
    manifest.finalize(&common.out)?;
    Ok(())
}
