use std::fmt;

use serde::{Deserialize, Serialize};

use super::data::ToyPair;
use super::policy::{LogSoftmaxTable, ToyPolicy, UNCONDITIONAL};
use super::ToyError;
use crate::dpo::{
    dpo_loss, dpo_margin, focus_margin, reject_margin, total_loss, vision_contrastive_loss,
    ContrastLogProbs, LogProbField, LossConfig, PairLogProbs,
};
use crate::pairgen::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Context,
    NeedleT,
    NeedleV,
    /// Every pair, each with its own objective.
    Mixed,
}

impl StageKind {
    fn admits(self, level: Level) -> bool {
        match self {
            StageKind::Context => level == Level::Context,
            StageKind::NeedleT => level == Level::NeedleT,
            StageKind::NeedleV => level == Level::NeedleV,
            StageKind::Mixed => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Context => "context",
            StageKind::NeedleT => "needle_t",
            StageKind::NeedleV => "needle_v",
            StageKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub kind: StageKind,
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    MultiStage,
    OneStageMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub stages: Vec<Stage>,
}

impl Schedule {
    /// Context, then needle-level language, then vision-contrastive.
    pub fn multi_stage(learning_rate: f64, epochs: usize) -> Self {
        let stage = |kind| Stage {
            kind,
            learning_rate,
            epochs,
        };
        Self {
            mode: ScheduleMode::MultiStage,
            stages: vec![
                stage(StageKind::Context),
                stage(StageKind::NeedleT),
                stage(StageKind::NeedleV),
            ],
        }
    }

    /// All pairs in one interleaved stage; each pair is visited `epochs` times,
    /// the same budget as the multi-stage schedule with the same arguments.
    pub fn one_stage_mixed(learning_rate: f64, epochs: usize) -> Self {
        Self {
            mode: ScheduleMode::OneStageMixed,
            stages: vec![Stage {
                kind: StageKind::Mixed,
                learning_rate,
                epochs,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.stages.is_empty() {
            return Err(ToyError::InvalidConfig("schedule has no stages".into()));
        }
        if let Some(s) = self
            .stages
            .iter()
            .find(|s| !(s.learning_rate.is_finite() && s.learning_rate >= 0.0))
        {
            return Err(ToyError::InvalidConfig(format!(
                "stage {} has invalid learning rate {}",
                s.kind, s.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Divide each sequence log-prob by its token count.
    pub length_normalize: bool,
}

/// One line of the training history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub stage: String,
    pub epoch: usize,
    pub mean_loss: f64,
    pub pref_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub policy: ToyPolicy,
    pub history: Vec<HistoryRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub ties: usize,
    pub total: usize,
}

/// Loss and implicit reward margin of one pair.
struct PairEval {
    value: f64,
    margin: f64,
}

struct Evaluator<'a> {
    policy: LogSoftmaxTable,
    reference: &'a LogSoftmaxTable,
    cfg: &'a TrainConfig,
}

impl Evaluator<'_> {
    fn scale(&self, tokens: &[usize]) -> f64 {
        if self.cfg.length_normalize && !tokens.is_empty() {
            1.0 / tokens.len() as f64
        } else {
            1.0
        }
    }

    fn lp(&self, table: &LogSoftmaxTable, context: usize, tokens: &[usize]) -> f64 {
        self.scale(tokens) * table.logprob(context, tokens)
    }

    /// Loss value and margin; accumulates `weight * dLoss/dlogits` into `grad` when given.
    fn eval(&self, pair: &ToyPair, weight: f64, grad: Option<&mut [f64]>) -> Result<PairEval, ToyError> {
        let (p, r) = (&self.policy, self.reference);
        let lc = &self.cfg.loss;
        let w = pair.context_w;
        let chosen = &pair.chosen;
        match (pair.level, &pair.rejected, pair.context_l) {
            (Level::NeedleV, _, Some(l)) => {
                let cl = ContrastLogProbs {
                    policy_cond: self.lp(p, w, chosen),
                    ref_cond: self.lp(r, w, chosen),
                    policy_uncond: self.lp(p, UNCONDITIONAL, chosen),
                    ref_uncond: self.lp(r, UNCONDITIONAL, chosen),
                    policy_contra: Some(self.lp(p, l, chosen)),
                    ref_contra: Some(self.lp(r, l, chosen)),
                };
                let base = vision_contrastive_loss(&cl, lc.beta1, lc.beta2)?;
                let out = total_loss(&base, -cl.policy_cond, lc.gamma)?;
                if let Some(g) = grad {
                    let s = weight * self.scale(chosen);
                    let nll = out.grad(LogProbField::NllChosen);
                    p.accumulate_grad(w, chosen, s * (out.grad(LogProbField::PolicyCond) - nll), g);
                    p.accumulate_grad(UNCONDITIONAL, chosen, s * out.grad(LogProbField::PolicyUncond), g);
                    p.accumulate_grad(l, chosen, s * out.grad(LogProbField::PolicyContra), g);
                }
                Ok(PairEval {
                    value: out.value,
                    margin: focus_margin(&cl, lc.beta1) + reject_margin(&cl, lc.beta2)?,
                })
            }
            (Level::Context | Level::NeedleT, Some(rejected), None) => {
                let lp = PairLogProbs {
                    policy_chosen: self.lp(p, w, chosen),
                    ref_chosen: self.lp(r, w, chosen),
                    policy_rejected: self.lp(p, w, rejected),
                    ref_rejected: self.lp(r, w, rejected),
                };
                let base = dpo_loss(&lp, lc.beta)?;
                let out = total_loss(&base, -lp.policy_chosen, lc.gamma)?;
                if let Some(g) = grad {
                    let nll = out.grad(LogProbField::NllChosen);
                    p.accumulate_grad(
                        w,
                        chosen,
                        weight * self.scale(chosen) * (out.grad(LogProbField::PolicyChosen) - nll),
                        g,
                    );
                    p.accumulate_grad(
                        w,
                        rejected,
                        weight * self.scale(rejected) * out.grad(LogProbField::PolicyRejected),
                        g,
                    );
                }
                Ok(PairEval {
                    value: out.value,
                    margin: dpo_margin(&lp, lc.beta),
                })
            }
            _ => Err(ToyError::InvalidConfig(format!(
                "pair fields do not match level {}",
                pair.level
            ))),
        }
    }
}

/// Mean loss of `pairs` (policy vs reference) and, optionally, its gradient
/// with respect to the policy logits.
pub fn mean_objective(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[&ToyPair],
    cfg: &TrainConfig,
    grad: Option<&mut [f64]>,
) -> Result<(f64, Accuracy), ToyError> {
    if pairs.is_empty() {
        return Err(ToyError::Empty);
    }
    let reference = reference.log_softmax_table();
    let ev = Evaluator {
        policy: policy.log_softmax_table(),
        reference: &reference,
        cfg,
    };
    let weight = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let (mut wins, mut ties) = (0, 0);
    let mut grad = grad;
    for pair in pairs {
        let e = ev.eval(pair, weight, grad.as_deref_mut())?;
        total += e.value;
        if e.margin > 0.0 {
            wins += 1;
        } else if e.margin == 0.0 {
            ties += 1;
        }
    }
    Ok((
        total * weight,
        Accuracy {
            accuracy: wins as f64 / pairs.len() as f64,
            ties,
            total: pairs.len(),
        },
    ))
}

/// Fraction of pairs whose implicit reward margin is strictly positive.
///
/// For vision-contrastive pairs the margin is the focus margin plus the
/// reject margin.
pub fn preference_accuracy(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[ToyPair],
    cfg: &TrainConfig,
) -> Result<Accuracy, ToyError> {
    let refs: Vec<&ToyPair> = pairs.iter().collect();
    Ok(mean_objective(policy, reference, &refs, cfg, None)?.1)
}

/// Full-batch gradient descent through the schedule.
///
/// The reference is re-frozen from the current policy at the start of every
/// stage. History holds one record per epoch before each update plus a final
/// record after the last update.
pub fn train(
    policy_init: &ToyPolicy,
    pairs: &[ToyPair],
    schedule: &Schedule,
    cfg: &TrainConfig,
) -> Result<TrainResult, ToyError> {
    schedule.validate()?;
    cfg.loss.validate()?;
    if pairs.is_empty() {
        return Err(ToyError::Empty);
    }
    for p in pairs {
        p.validate(policy_init.contexts(), policy_init.vocab())?;
    }
    let mut policy = policy_init.clone();
    let mut history = Vec::new();
    let mut grad = vec![0.0; policy.logits().len()];

    for stage in &schedule.stages {
        let stage_pairs: Vec<&ToyPair> = pairs.iter().filter(|p| stage.kind.admits(p.level)).collect();
        if stage_pairs.is_empty() {
            continue;
        }
        let reference = policy.clone();
        for epoch in 0..=stage.epochs {
            grad.fill(0.0);
            let want_grad = epoch < stage.epochs;
            let (loss, acc) = mean_objective(
                &policy,
                &reference,
                &stage_pairs,
                cfg,
                want_grad.then_some(grad.as_mut_slice()),
            )?;
            if !loss.is_finite() {
                return Err(ToyError::NonFinite {
                    stage: stage.kind.to_string(),
                    epoch,
                });
            }
            history.push(HistoryRecord {
                stage: stage.kind.to_string(),
                epoch,
                mean_loss: loss,
                pref_acc: acc.accuracy,
            });
            if want_grad {
                for (x, g) in policy.logits_mut().iter_mut().zip(&grad) {
                    *x -= stage.learning_rate * g;
                }
                if policy.logits().iter().any(|x| !x.is_finite()) {
                    return Err(ToyError::NonFinite {
                        stage: stage.kind.to_string(),
                        epoch,
                    });
                }
            }
        }
    }
    Ok(TrainResult { policy, history })
}
