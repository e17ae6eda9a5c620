//! Central finite-difference verification of every analytic gradient.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::ToyPair;
use super::policy::ToyPolicy;
use super::train::{mean_objective, TrainConfig};
use super::ToyError;
use crate::dpo::{
    dpo_loss, focus_loss, reject_loss, total_loss, vision_contrastive_loss, ContrastLogProbs,
    DpoError, LogProbField, LossConfig, LossOut, PairLogProbs,
};
use crate::pairgen::Level;

/// Gradients with magnitude below this are compared in absolute terms.
pub const ABS_FALLBACK: f64 = 1e-9;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradCheckKind {
    Dpo,
    Focus,
    Reject,
    VisionContrastive,
    Total,
    ToyLogprob,
    /// The trainer's full chain: losses composed with log-prob gradients.
    ToyObjective,
}

impl GradCheckKind {
    pub const ALL: [GradCheckKind; 7] = [
        Self::Dpo,
        Self::Focus,
        Self::Reject,
        Self::VisionContrastive,
        Self::Total,
        Self::ToyLogprob,
        Self::ToyObjective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dpo => "dpo",
            Self::Focus => "focus",
            Self::Reject => "reject",
            Self::VisionContrastive => "vision_contrastive",
            Self::Total => "total",
            Self::ToyLogprob => "toy_logprob",
            Self::ToyObjective => "toy_objective",
        }
    }
}

impl fmt::Display for GradCheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub kind: GradCheckKind,
    pub trials: usize,
    pub max_rel_err: f64,
    pub worst_trial: usize,
}

/// `|a - n|_inf / max(|a|_inf, |n|_inf)`, or the plain absolute error when
/// both gradients are below [`ABS_FALLBACK`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale < ABS_FALLBACK {
        diff
    } else {
        diff / scale
    }
}

fn central_diff<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>, ToyError>
where
    F: FnMut(&[f64]) -> Result<f64, ToyError>,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe)?;
            probe[i] = x[i] - step;
            let down = f(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

fn random_logprobs<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-20.0..0.0)).collect()
}

fn random_config<R: Rng + ?Sized>(rng: &mut R) -> LossConfig {
    LossConfig {
        beta: rng.random_range(0.05..0.5),
        beta1: rng.random_range(0.05..0.5),
        beta2: rng.random_range(0.05..0.5),
        gamma: rng.random_range(0.0..0.5),
    }
}

const PAIR_FIELDS: [LogProbField; 4] = [
    LogProbField::PolicyChosen,
    LogProbField::RefChosen,
    LogProbField::PolicyRejected,
    LogProbField::RefRejected,
];

const CONTRAST_FIELDS: [LogProbField; 6] = [
    LogProbField::PolicyCond,
    LogProbField::RefCond,
    LogProbField::PolicyUncond,
    LogProbField::RefUncond,
    LogProbField::PolicyContra,
    LogProbField::RefContra,
];

fn pair_of(x: &[f64]) -> PairLogProbs {
    PairLogProbs {
        policy_chosen: x[0],
        ref_chosen: x[1],
        policy_rejected: x[2],
        ref_rejected: x[3],
    }
}

fn contrast_of(x: &[f64]) -> ContrastLogProbs {
    ContrastLogProbs {
        policy_cond: x[0],
        ref_cond: x[1],
        policy_uncond: x[2],
        ref_uncond: x[3],
        policy_contra: Some(x[4]),
        ref_contra: Some(x[5]),
    }
}

fn check_loss<F>(x: &[f64], fields: &[LogProbField], step: f64, loss: F) -> Result<f64, ToyError>
where
    F: Fn(&[f64]) -> Result<LossOut, DpoError>,
{
    let out = loss(x)?;
    let analytic: Vec<f64> = fields.iter().map(|f| out.grad(*f)).collect();
    let numeric = central_diff(x, step, |p| Ok(loss(p)?.value))?;
    Ok(relative_error(&analytic, &numeric))
}

fn trial<R: Rng + ?Sized>(kind: GradCheckKind, step: f64, rng: &mut R) -> Result<f64, ToyError> {
    let cfg = random_config(rng);
    match kind {
        GradCheckKind::Dpo => {
            let x = random_logprobs(rng, 4);
            check_loss(&x, &PAIR_FIELDS, step, |p| dpo_loss(&pair_of(p), cfg.beta))
        }
        GradCheckKind::Focus => {
            let x = random_logprobs(rng, 6);
            check_loss(&x[..4], &CONTRAST_FIELDS[..4], step, |p| {
                let mut full = x.clone();
                full[..4].copy_from_slice(p);
                focus_loss(&contrast_of(&full), cfg.beta1)
            })
        }
        GradCheckKind::Reject => {
            let x = random_logprobs(rng, 6);
            check_loss(&x, &CONTRAST_FIELDS, step, |p| reject_loss(&contrast_of(p), cfg.beta2))
        }
        GradCheckKind::VisionContrastive => {
            let x = random_logprobs(rng, 6);
            check_loss(&x, &CONTRAST_FIELDS, step, |p| {
                vision_contrastive_loss(&contrast_of(p), cfg.beta1, cfg.beta2)
            })
        }
        GradCheckKind::Total => {
            let mut x = random_logprobs(rng, 4);
            x.push(rng.random_range(0.5..20.0));
            let mut fields = PAIR_FIELDS.to_vec();
            fields.push(LogProbField::NllChosen);
            check_loss(&x, &fields, step, |p| {
                total_loss(&dpo_loss(&pair_of(p), cfg.beta)?, p[4], cfg.gamma)
            })
        }
        GradCheckKind::ToyLogprob => {
            let vocab = rng.random_range(2..=16);
            let contexts = rng.random_range(1..=4);
            let policy = random_policy(rng, contexts, vocab);
            let context = rng.random_range(0..contexts);
            let tokens: Vec<usize> = (0..rng.random_range(1..=6))
                .map(|_| rng.random_range(0..vocab))
                .collect();
            let analytic = policy.grad_logprob(context, &tokens)?;
            let row = policy.row(context).to_vec();
            let numeric = central_diff(&row, step, |r| {
                let mut logits = policy.logits().to_vec();
                logits[context * vocab..(context + 1) * vocab].copy_from_slice(r);
                ToyPolicy::from_logits(contexts, vocab, logits)?.logprob(context, &tokens)
            })?;
            Ok(relative_error(&analytic, &numeric))
        }
        GradCheckKind::ToyObjective => {
            let (contexts, vocab) = (4, 5);
            let policy = random_policy(rng, contexts, vocab);
            let reference = random_policy(rng, contexts, vocab);
            let pairs = random_toy_pairs(rng, contexts, vocab);
            let refs: Vec<&ToyPair> = pairs.iter().collect();
            let train_cfg = TrainConfig {
                loss: LossConfig {
                    gamma: cfg.gamma,
                    ..cfg
                },
                length_normalize: rng.random_bool(0.5),
            };
            let mut analytic = vec![0.0; contexts * vocab];
            mean_objective(&policy, &reference, &refs, &train_cfg, Some(&mut analytic))?;
            let numeric = central_diff(policy.logits(), step, |l| {
                let p = ToyPolicy::from_logits(contexts, vocab, l.to_vec())?;
                Ok(mean_objective(&p, &reference, &refs, &train_cfg, None)?.0)
            })?;
            Ok(relative_error(&analytic, &numeric))
        }
    }
}

fn random_policy<R: Rng + ?Sized>(rng: &mut R, contexts: usize, vocab: usize) -> ToyPolicy {
    let logits = (0..contexts * vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
    ToyPolicy::from_logits(contexts, vocab, logits).expect("finite logits")
}

fn random_toy_pairs<R: Rng + ?Sized>(rng: &mut R, contexts: usize, vocab: usize) -> Vec<ToyPair> {
    let tokens = |rng: &mut R| -> Vec<usize> {
        (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..vocab)).collect()
    };
    vec![
        ToyPair {
            level: Level::Context,
            context_w: 1,
            context_l: None,
            chosen: tokens(rng),
            rejected: Some(tokens(rng)),
        },
        ToyPair {
            level: Level::NeedleT,
            context_w: contexts - 1,
            context_l: None,
            chosen: tokens(rng),
            rejected: Some(tokens(rng)),
        },
        ToyPair {
            level: Level::NeedleV,
            context_w: 2,
            context_l: Some(1),
            chosen: tokens(rng),
            rejected: None,
        },
    ]
}

/// Runs `n_trials` random comparisons for one gradient and reports the worst.
pub fn finite_diff_check<R: Rng + ?Sized>(
    kind: GradCheckKind,
    n_trials: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckResult, ToyError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(ToyError::InvalidConfig(format!("step must be > 0, got {step}")));
    }
    let mut result = GradCheckResult {
        kind,
        trials: n_trials,
        max_rel_err: 0.0,
        worst_trial: 0,
    };
    for t in 0..n_trials {
        let err = trial(kind, step, rng)?;
        if err > result.max_rel_err || err.is_nan() {
            result.max_rel_err = err;
            result.worst_trial = t;
        }
    }
    Ok(result)
}

/// Checks every kind with its own generator derived from `seed`.
pub fn check_all(n_trials: usize, step: f64, seed: u64) -> Result<Vec<GradCheckResult>, ToyError> {
    GradCheckKind::ALL
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut rng = crate::seed::rng_from_seed(crate::seed::derive_seed(seed, 7, i as u64));
            finite_diff_check(*kind, n_trials, step, &mut rng)
        })
        .collect()
}
