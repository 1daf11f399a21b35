//! Temporary measurement probe; deleted before finalizing.

use std::collections::BTreeMap;
use std::time::Instant;

use threatfuse::config::RunConfig;
use threatfuse::correlation::{confidence_bucket, correlate, Bucket};
use threatfuse::evaluation::{apply_policy, evaluate, scenario_examples, DropPolicy};
use threatfuse::events::ModalityId;
use threatfuse::fusion::{AblationFlags, FusionModel};
use threatfuse::synth::{generate, recovery_score, standard_recovery_fixture};
use threatfuse::training::{train, train_single_modality};

#[test]
fn probe_grid() {
    // full-vs-nmp margin across degrade_prob and sparsity settings.
    let base = RunConfig::default();
    for (degrade, sdims) in [(0.10, 3), (0.25, 2), (0.10, 2)] {
        for (name, flags) in [
            ("full", AblationFlags::none()),
            (
                "nmp ",
                AblationFlags { no_missing_modality_paths: true, ..AblationFlags::none() },
            ),
        ] {
            let mut accs = vec![];
            for seed in 0..5u64 {
                let (mut synth_cfg, corr_cfg) = threatfuse::synth::training_fixture(seed);
                synth_cfg.signal_dims = sdims;
                let out = generate(&synth_cfg).unwrap();
                let scenario = correlate(&out.datasets[0], &out.datasets[1], &corr_cfg).unwrap();
                let mut tc = base.training.clone();
                tc.rng_seed = seed;
                tc.ablation = flags;
                tc.degrade_prob = degrade;
                let (store, _) = train(&scenario, &out.datasets, &base.model, &tc).unwrap();
                let model = FusionModel::new(base.model.clone(), flags).unwrap();
                let k = scenario.folds.len();
                let examples = scenario_examples(&scenario, &out.datasets, &[k - 1]).unwrap();
                let eval = evaluate(&model, &store, &examples, 0.5, &[]).unwrap();
                accs.push(eval.accuracy);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            println!("degrade {degrade} sdims {sdims} {name}: mean {mean:.4} {accs:?}");
        }
    }
}

#[test]
fn probe_policy_mix() {
    // Per-variant accuracy under NONE / DROP_NETWORK / DROP_TEXT and the
    // three-policy mean, 5 seeds each.
    let t0 = Instant::now();
    let base = RunConfig::default();
    let policies = [DropPolicy::None, DropPolicy::DropNetwork, DropPolicy::DropText];
    for (name, flags) in [
        ("full", AblationFlags::none()),
        (
            "no_confidence_weighting",
            AblationFlags { no_confidence_weighting: true, ..AblationFlags::none() },
        ),
        (
            "no_temporal_correlation",
            AblationFlags { no_temporal_correlation: true, ..AblationFlags::none() },
        ),
        (
            "no_hierarchical_attention",
            AblationFlags { no_hierarchical_attention: true, ..AblationFlags::none() },
        ),
        (
            "no_missing_modality_paths",
            AblationFlags { no_missing_modality_paths: true, ..AblationFlags::none() },
        ),
    ] {
        let mut mixes = vec![];
        let mut per_policy = [vec![], vec![], vec![]];
        for seed in 0..5u64 {
            let (synth_cfg, corr_cfg) = threatfuse::synth::training_fixture(seed);
            let out = generate(&synth_cfg).unwrap();
            let scenario = correlate(&out.datasets[0], &out.datasets[1], &corr_cfg).unwrap();
            let mut tc = base.training.clone();
            tc.rng_seed = seed;
            tc.ablation = flags;
            let (store, _) = train(&scenario, &out.datasets, &base.model, &tc).unwrap();
            let model = FusionModel::new(base.model.clone(), flags).unwrap();
            let k = scenario.folds.len();
            let examples = scenario_examples(&scenario, &out.datasets, &[k - 1]).unwrap();
            let mut acc_sum = 0.0;
            for (i, &policy) in policies.iter().enumerate() {
                let degraded = apply_policy(&examples, policy, base.eval.rng_seed);
                let eval = evaluate(&model, &store, &degraded, 0.5, &[]).unwrap();
                per_policy[i].push(eval.accuracy);
                acc_sum += eval.accuracy;
            }
            mixes.push(acc_sum / policies.len() as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{name}: mix {:.4} | none {:.4} drop_net {:.4} drop_text {:.4}",
            mean(&mixes),
            mean(&per_policy[0]),
            mean(&per_policy[1]),
            mean(&per_policy[2])
        );
    }
    println!("elapsed {:?}", t0.elapsed());
}

#[test]
fn probe_v3_seed2() {
    let base = RunConfig::default();
    let (synth_cfg, corr_cfg) = threatfuse::synth::training_fixture(2);
    let out = generate(&synth_cfg).unwrap();
    let scenario = correlate(&out.datasets[0], &out.datasets[1], &corr_cfg).unwrap();
    let mut tc = base.training.clone();
    tc.rng_seed = 2;
    let (_, log) = train(&scenario, &out.datasets, &base.model, &tc).unwrap();
    let n = log.records.len();
    println!("epochs run: {n}");
    for e in log.records.iter().take(8) {
        println!(
            "  ep {} train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    if n > 8 {
        for e in log.records.iter().skip(n.saturating_sub(4)) {
            println!(
                "  ep {} train_loss {:.4} val_loss {:.4} val_acc {:.4}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
    }
    let k = scenario.folds.len();
    let val = &scenario.folds[k - 1];
    let pos = val.iter().filter(|p| {
        scenario_label(&out, &p.left) == 1 || scenario_label(&out, &p.right) == 1
    }).count();
    println!("val pairs {} positives {}", val.len(), pos);
}

fn scenario_label(out: &threatfuse::synth::SynthOutput, id: &str) -> u8 {
    for d in &out.datasets {
        if let Some(e) = d.events.iter().find(|e| e.id == id) {
            return e.label;
        }
    }
    0
}

#[test]
fn probe_v3_ablation() {
    let t0 = Instant::now();
    let variants: [(&str, AblationFlags); 5] = [
        ("full", AblationFlags::none()),
        (
            "no_confidence_weighting",
            AblationFlags { no_confidence_weighting: true, ..AblationFlags::none() },
        ),
        (
            "no_temporal_correlation",
            AblationFlags { no_temporal_correlation: true, ..AblationFlags::none() },
        ),
        (
            "no_hierarchical_attention",
            AblationFlags { no_hierarchical_attention: true, ..AblationFlags::none() },
        ),
        (
            "no_missing_modality_paths",
            AblationFlags { no_missing_modality_paths: true, ..AblationFlags::none() },
        ),
    ];
    let base = RunConfig::default();
    let out = generate(&base.synth).unwrap();
    let scenario = correlate(&out.datasets[0], &out.datasets[1], &base.correlation).unwrap();
    let k = scenario.folds.len();
    let examples = scenario_examples(&scenario, &out.datasets, &[k - 1]).unwrap();
    println!("val examples {}", examples.len());
    for (name, flags) in variants {
        let mut accs = vec![];
        let mut slab = String::new();
        for seed in 0..5u64 {
            let mut tc = base.training.clone();
            tc.rng_seed = seed;
            tc.ablation = flags;
            let (store, _) = train(&scenario, &out.datasets, &base.model, &tc).unwrap();
            let model = FusionModel::new(base.model.clone(), flags).unwrap();
            let eval = evaluate(&model, &store, &examples, 0.5, &[]).unwrap();
            accs.push(eval.accuracy);
            if seed == 0 {
                // Slab accuracies: chains (positive, w>0), coincidences
                // (benign, w>0.5), injected (w=0).
                let mut hits = BTreeMap::new();
                for (ex, s) in examples.iter().zip(&eval.scores) {
                    let key = if ex.input.w == 0.0 {
                        if ex.label == 1.0 { "inj1" } else { "inj0" }
                    } else if ex.label == 1.0 {
                        "chain"
                    } else if ex.input.w < 0.6 {
                        "famC"
                    } else {
                        "famAB"
                    };
                    let e = hits.entry(key).or_insert((0usize, 0usize));
                    e.1 += 1;
                    if (*s >= 0.5) == (ex.label == 1.0) {
                        e.0 += 1;
                    }
                }
                slab = format!("{hits:?}");
            }
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name}: mean acc {mean:.4} per-seed {accs:?}\n  seed0 slabs {slab}");
    }
    println!("elapsed {:?}", t0.elapsed());
}

#[test]
fn probe_recovery() {
    let t0 = Instant::now();
    let mut f1s = vec![];
    let mut pooled: BTreeMap<Bucket, (usize, usize)> = BTreeMap::new();
    for seed in 0..5u64 {
        let (synth_cfg, corr_cfg) = standard_recovery_fixture(seed);
        let out = generate(&synth_cfg).unwrap();
        let scenario = correlate(&out.datasets[0], &out.datasets[1], &corr_cfg).unwrap();
        let score = recovery_score(&scenario, &out.truth);
        println!(
            "seed {seed}: f1 {:.4} precision {:.4} recall {:.4} predicted {} truth {}",
            score.f1, score.precision, score.recall, score.predicted, score.truth_size
        );
        f1s.push(score.f1);
        for (_, p) in scenario.iter_pairs() {
            let slot = pooled.entry(confidence_bucket(p.w)).or_insert((0, 0));
            slot.1 += 1;
            if out.truth.contains(&p.left, &p.right) {
                slot.0 += 1;
            }
        }
    }
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    println!("mean f1 {mean:.4}");
    for (b, (hit, total)) in &pooled {
        println!("bucket {b}: {hit}/{total} = {:.4}", *hit as f64 / *total as f64);
    }
    println!("elapsed {:?}", t0.elapsed());
}

struct SeedRun {
    fused_fpr: f64,
    fused_acc: f64,
    fused_drop_net_acc: f64,
    fused_drop_text_acc: f64,
    base_net_fpr: f64,
    base_net_acc: f64,
    base_email_fpr: f64,
    base_email_acc: f64,
}

fn run_seed(
    base: &RunConfig,
    out: &threatfuse::synth::SynthOutput,
    scenario: &threatfuse::correlation::TrainingScenario,
    seed: u64,
) -> SeedRun {
    let mut cfg = base.clone();
    cfg.training.rng_seed = seed;
    let (store, _) = train(scenario, &out.datasets, &cfg.model, &cfg.training).unwrap();
    let model = FusionModel::new(cfg.model.clone(), AblationFlags::none()).unwrap();
    let k = scenario.folds.len();
    let examples = scenario_examples(scenario, &out.datasets, &[k - 1]).unwrap();
    let fused = evaluate(&model, &store, &examples, 0.5, &[]).unwrap();

    let mut per_mod = BTreeMap::new();
    let mut fused_drop = BTreeMap::new();
    for m in [ModalityId::Network, ModalityId::Email] {
        let mc = cfg.single_modality_model(m).unwrap();
        let (bstore, _) =
            train_single_modality(scenario, &out.datasets, &mc, &cfg.training).unwrap();
        let bmodel = FusionModel::new(mc, AblationFlags::none()).unwrap();
        let policy = if m == ModalityId::Network {
            DropPolicy::DropText
        } else {
            DropPolicy::DropNetwork
        };
        let degraded = apply_policy(&examples, policy, cfg.eval.rng_seed);
        let beval = evaluate(&bmodel, &bstore, &degraded, 0.5, &[]).unwrap();
        let feval = evaluate(&model, &store, &degraded, 0.5, &[]).unwrap();
        per_mod.insert(m, (beval.fpr, beval.accuracy));
        fused_drop.insert(m, feval.accuracy);
    }
    SeedRun {
        fused_fpr: fused.fpr,
        fused_acc: fused.accuracy,
        fused_drop_net_acc: fused_drop[&ModalityId::Email],
        fused_drop_text_acc: fused_drop[&ModalityId::Network],
        base_net_fpr: per_mod[&ModalityId::Network].0,
        base_net_acc: per_mod[&ModalityId::Network].1,
        base_email_fpr: per_mod[&ModalityId::Email].0,
        base_email_acc: per_mod[&ModalityId::Email].1,
    }
}

#[test]
fn probe_fusion_gain_and_robustness() {
    let t0 = Instant::now();
    let base = RunConfig::default();
    let out = generate(&base.synth).unwrap();
    let scenario = correlate(&out.datasets[0], &out.datasets[1], &base.correlation).unwrap();
    let mut runs = Vec::new();
    for seed in 0..5u64 {
        let r = run_seed(&base, &out, &scenario, seed);
        println!(
            "seed {seed}: fused fpr {:.4} acc {:.4} | net fpr {:.4} acc {:.4} | email fpr {:.4} acc {:.4} | fused dropnet acc {:.4} droptext acc {:.4}",
            r.fused_fpr,
            r.fused_acc,
            r.base_net_fpr,
            r.base_net_acc,
            r.base_email_fpr,
            r.base_email_acc,
            r.fused_drop_net_acc,
            r.fused_drop_text_acc
        );
        runs.push(r);
    }
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
    let fused_fpr = mean(&|r| r.fused_fpr);
    let net_fpr = mean(&|r| r.base_net_fpr);
    let email_fpr = mean(&|r| r.base_email_fpr);
    let best = net_fpr.min(email_fpr);
    println!(
        "mean fused fpr {fused_fpr:.4} vs best baseline {best:.4} -> reduction {:.1}%",
        100.0 * (best - fused_fpr) / best
    );
    println!(
        "drop-net: fused {:.4} vs email baseline {:.4} | drop-text: fused {:.4} vs net baseline {:.4}",
        mean(&|r| r.fused_drop_net_acc),
        mean(&|r| r.base_email_acc),
        mean(&|r| r.fused_drop_text_acc),
        mean(&|r| r.base_net_acc)
    );
    println!("elapsed {:?}", t0.elapsed());
}

#[test]
fn probe_ablation_ordering() {
    let t0 = Instant::now();
    let base = RunConfig::default();
    let variants: [(&str, AblationFlags); 5] = [
        ("full", AblationFlags::none()),
        (
            "no_confidence_weighting",
            AblationFlags { no_confidence_weighting: true, ..AblationFlags::none() },
        ),
        (
            "no_temporal_correlation",
            AblationFlags { no_temporal_correlation: true, ..AblationFlags::none() },
        ),
        (
            "no_hierarchical_attention",
            AblationFlags { no_hierarchical_attention: true, ..AblationFlags::none() },
        ),
        (
            "no_missing_modality_paths",
            AblationFlags { no_missing_modality_paths: true, ..AblationFlags::none() },
        ),
    ];
    for (name, flags) in variants {
        let mut accs = vec![];
        for seed in 0..5u64 {
            let mut cfg = base.clone().with_seed(seed);
            cfg.training.ablation = flags;
            let out = generate(&cfg.synth).unwrap();
            let scenario =
                correlate(&out.datasets[0], &out.datasets[1], &cfg.correlation).unwrap();
            let (store, _) = train(&scenario, &out.datasets, &cfg.model, &cfg.training).unwrap();
            let model = FusionModel::new(cfg.model.clone(), flags).unwrap();
            let k = scenario.folds.len();
            let examples = scenario_examples(&scenario, &out.datasets, &[k - 1]).unwrap();
            let eval = evaluate(&model, &store, &examples, 0.5, &[]).unwrap();
            accs.push(eval.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name}: mean acc {mean:.4} per-seed {accs:?}");
    }
    println!("elapsed {:?}", t0.elapsed());
}
