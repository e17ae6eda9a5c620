use std::f64::consts::LN_2;

use super::*;
use crate::pairgen::Level;

fn small() -> ToyRunConfig {
    ToyRunConfig {
        synth: SynthConfig {
            contexts: 12,
            vocab: 12,
            n_pairs: 300,
            heldout_pairs: 100,
            ..Default::default()
        },
        epochs: 60,
        ..Default::default()
    }
}

fn dataset(cfg: &ToyRunConfig) -> ToyDataset {
    synth_dataset(&cfg.synth, &mut rng_from_seed(cfg.seed)).unwrap()
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let cfg = small();
    let d = dataset(&cfg);
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let out = train(&init, &d.train, &Schedule::multi_stage(0.0, 1), &cfg.train).unwrap();
    assert_eq!(out.policy, init);
    let acc = preference_accuracy(&out.policy, &init, &d.train, &cfg.train).unwrap();
    assert_eq!(acc.accuracy, 0.0);
    assert_eq!(acc.ties, acc.total);
    assert_eq!(out.history.len(), 6);
}

#[test]
fn epoch_zero_loss_is_ln2_plus_nll() {
    let cfg = small();
    let d = dataset(&cfg);
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let out = train(&init, &d.train, &Schedule::multi_stage(0.1, 1), &cfg.train).unwrap();
    let gamma = cfg.train.loss.gamma;
    let context: Vec<&ToyPair> = d.train.iter().filter(|p| p.level == Level::Context).collect();
    let nll: f64 = context
        .iter()
        .map(|p| -init.logprob(p.context_w, &p.chosen).unwrap())
        .sum::<f64>()
        / context.len() as f64;
    let first = &out.history[0];
    assert_eq!((first.stage.as_str(), first.epoch), ("context", 0));
    assert!((first.mean_loss - (LN_2 + gamma * nll)).abs() < 1e-12);
}

#[test]
fn vision_stage_raises_the_aligned_view_margin() {
    let cfg = small();
    let d = dataset(&cfg);
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let vision: Vec<ToyPair> = d.train.iter().filter(|p| p.level == Level::NeedleV).cloned().collect();
    let gap = |p: &ToyPolicy| -> f64 {
        vision
            .iter()
            .map(|x| p.logprob(x.context_w, &x.chosen).unwrap() - p.logprob(x.context_l.unwrap(), &x.chosen).unwrap())
            .sum::<f64>()
            / vision.len() as f64
    };
    let schedule = Schedule {
        mode: ScheduleMode::MultiStage,
        stages: vec![Stage {
            kind: StageKind::NeedleV,
            learning_rate: 0.5,
            epochs: 20,
        }],
    };
    let out = train(&init, &vision, &schedule, &cfg.train).unwrap();
    assert!(gap(&out.policy) > gap(&init));
}

#[test]
fn small_run_learns_and_every_stage_improves() {
    let run = run_experiment(&small()).unwrap();
    assert!(run.heldout.accuracy >= 0.9, "{:?}", run.heldout);
    let stages = run.stage_losses();
    assert_eq!(stages.len(), 3);
    for (stage, first, last) in stages {
        assert!(last < first, "{stage}: {first} -> {last}");
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let cfg = ToyRunConfig {
        epochs: 10,
        ..small()
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.result.policy, b.result.policy);
    assert_eq!(a.result.history, b.result.history);
}

#[test]
fn mixed_schedule_runs_one_stage() {
    let cfg = ToyRunConfig {
        schedule: ScheduleMode::OneStageMixed,
        epochs: 30,
        ..small()
    };
    let run = run_experiment(&cfg).unwrap();
    assert!(run.result.history.iter().all(|h| h.stage == "mixed"));
    assert_eq!(run.result.history.len(), 31);
}

#[test]
fn accuracy_ignores_pair_order() {
    let cfg = ToyRunConfig {
        epochs: 5,
        ..small()
    };
    let run = run_experiment(&cfg).unwrap();
    let mut pairs = run.dataset.heldout.clone();
    let a = preference_accuracy(&run.result.policy, &run.init, &pairs, &cfg.train).unwrap();
    pairs.reverse();
    let b = preference_accuracy(&run.result.policy, &run.init, &pairs, &cfg.train).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        preference_accuracy(&run.result.policy, &run.init, &[], &cfg.train),
        Err(ToyError::Empty)
    ));
}

#[test]
fn divergence_reports_stage_and_epoch() {
    let cfg = small();
    let d = dataset(&cfg);
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let err = train(&init, &d.train, &Schedule::multi_stage(1e308, 3), &cfg.train).unwrap_err();
    assert!(matches!(err, ToyError::NonFinite { .. }), "{err}");
}

#[test]
fn rejects_invalid_schedules_and_pairs() {
    let cfg = small();
    let d = dataset(&cfg);
    let init = ToyPolicy::uniform(cfg.synth.contexts, cfg.synth.vocab);
    let empty = Schedule {
        mode: ScheduleMode::MultiStage,
        stages: vec![],
    };
    assert!(train(&init, &d.train, &empty, &cfg.train).is_err());
    assert!(train(&init, &d.train, &Schedule::multi_stage(-1.0, 1), &cfg.train).is_err());
    assert!(matches!(
        train(&init, &[], &Schedule::multi_stage(0.1, 1), &cfg.train),
        Err(ToyError::Empty)
    ));
    let narrow = ToyPolicy::uniform(cfg.synth.contexts, 2);
    assert!(train(&narrow, &d.train, &Schedule::multi_stage(0.1, 1), &cfg.train).is_err());
}
