//! DPO-family objectives on sequence-level log-probabilities.
//!
//! All three objectives share one shape: a β-scaled margin between two
//! policy/reference log-ratios fed through `softplus(-m) = -log σ(m)`.
//!
//! * language preference: chosen vs rejected response under the same view
//! * focus: the response under the aligned view vs under no view
//! * reject: the response under no view vs under a contradictory view
//!
//! Gradients are analytic and reported for every consumed log-probability.
//! Reference-model entries are reported too, but they are frozen: callers
//! must not apply them.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpoError {
    #[error("non-finite input for {0}")]
    NonFinite(&'static str),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("nll_chosen must be >= 0, got {0}")]
    NegativeNll(f64),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Summed log-probabilities consumed by the language preference loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLogProbs {
    pub policy_chosen: f64,
    pub ref_chosen: f64,
    pub policy_rejected: f64,
    pub ref_rejected: f64,
}

/// Log-probabilities of one response under three visual conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastLogProbs {
    pub policy_cond: f64,
    pub ref_cond: f64,
    pub policy_uncond: f64,
    pub ref_uncond: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_contra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_contra: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            beta1: 0.1,
            beta2: 0.1,
            gamma: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        for (name, v) in [("beta", self.beta), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DpoError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(DpoError::InvalidConfig(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Names of the inputs a loss can be differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogProbField {
    PolicyChosen,
    RefChosen,
    PolicyRejected,
    RefRejected,
    PolicyCond,
    RefCond,
    PolicyUncond,
    RefUncond,
    PolicyContra,
    RefContra,
    NllChosen,
}

impl LogProbField {
    /// Reference-model inputs receive no updates.
    pub fn is_frozen(self) -> bool {
        matches!(
            self,
            Self::RefChosen | Self::RefRejected | Self::RefCond | Self::RefUncond | Self::RefContra
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOut {
    pub value: f64,
    pub grads: BTreeMap<LogProbField, f64>,
}

impl LossOut {
    /// Partial derivative for a field; zero when the loss does not consume it.
    pub fn grad(&self, field: LogProbField) -> f64 {
        self.grads.get(&field).copied().unwrap_or(0.0)
    }

    /// Gradients the optimizer may apply (reference entries removed).
    pub fn trainable_grads(&self) -> impl Iterator<Item = (LogProbField, f64)> + '_ {
        self.grads
            .iter()
            .filter(|(f, _)| !f.is_frozen())
            .map(|(f, g)| (*f, *g))
    }

    fn add(mut self, other: &LossOut) -> LossOut {
        self.value += other.value;
        for (f, g) in &other.grads {
            *self.grads.entry(*f).or_insert(0.0) += g;
        }
        self
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn finite(name: &'static str, v: f64) -> Result<f64, DpoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DpoError::NonFinite(name))
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64, DpoError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(DpoError::InvalidConfig(format!("{name} must be > 0, got {v}")))
    }
}

/// `softplus(-β[(pw - rw) - (pl - rl)])` with gradients for the four inputs.
fn log_ratio_loss(
    beta: f64,
    win: (LogProbField, f64, LogProbField, f64),
    lose: (LogProbField, f64, LogProbField, f64),
) -> LossOut {
    let (pw_f, pw, rw_f, rw) = win;
    let (pl_f, pl, rl_f, rl) = lose;
    let m = beta * ((pw - rw) - (pl - rl));
    let s = sigmoid(-m);
    let g = beta * s;
    let mut grads = BTreeMap::new();
    grads.insert(pw_f, -g);
    grads.insert(rw_f, g);
    grads.insert(pl_f, g);
    grads.insert(rl_f, -g);
    LossOut {
        value: softplus(-m),
        grads,
    }
}

pub fn dpo_margin(lp: &PairLogProbs, beta: f64) -> f64 {
    beta * ((lp.policy_chosen - lp.ref_chosen) - (lp.policy_rejected - lp.ref_rejected))
}

pub fn focus_margin(cl: &ContrastLogProbs, beta1: f64) -> f64 {
    beta1 * ((cl.policy_cond - cl.ref_cond) - (cl.policy_uncond - cl.ref_uncond))
}

pub fn reject_margin(cl: &ContrastLogProbs, beta2: f64) -> Result<f64, DpoError> {
    let (pc, rc) = contra_fields(cl)?;
    Ok(beta2 * ((cl.policy_uncond - cl.ref_uncond) - (pc - rc)))
}

fn contra_fields(cl: &ContrastLogProbs) -> Result<(f64, f64), DpoError> {
    let pc = cl.policy_contra.ok_or(DpoError::MissingField("policy_contra"))?;
    let rc = cl.ref_contra.ok_or(DpoError::MissingField("ref_contra"))?;
    Ok((pc, rc))
}

/// Language preference loss: chosen over rejected under the same view.
pub fn dpo_loss(lp: &PairLogProbs, beta: f64) -> Result<LossOut, DpoError> {
    use LogProbField::*;
    let beta = positive("beta", beta)?;
    Ok(log_ratio_loss(
        beta,
        (
            PolicyChosen,
            finite("policy_chosen", lp.policy_chosen)?,
            RefChosen,
            finite("ref_chosen", lp.ref_chosen)?,
        ),
        (
            PolicyRejected,
            finite("policy_rejected", lp.policy_rejected)?,
            RefRejected,
            finite("ref_rejected", lp.ref_rejected)?,
        ),
    ))
}

/// Rewards conditioning on the aligned view over no view.
pub fn focus_loss(cl: &ContrastLogProbs, beta1: f64) -> Result<LossOut, DpoError> {
    use LogProbField::*;
    let beta1 = positive("beta1", beta1)?;
    Ok(log_ratio_loss(
        beta1,
        (
            PolicyCond,
            finite("policy_cond", cl.policy_cond)?,
            RefCond,
            finite("ref_cond", cl.ref_cond)?,
        ),
        (
            PolicyUncond,
            finite("policy_uncond", cl.policy_uncond)?,
            RefUncond,
            finite("ref_uncond", cl.ref_uncond)?,
        ),
    ))
}

/// Penalizes likelihood of the response under a contradictory view.
pub fn reject_loss(cl: &ContrastLogProbs, beta2: f64) -> Result<LossOut, DpoError> {
    use LogProbField::*;
    let beta2 = positive("beta2", beta2)?;
    let (pc, rc) = contra_fields(cl)?;
    Ok(log_ratio_loss(
        beta2,
        (
            PolicyUncond,
            finite("policy_uncond", cl.policy_uncond)?,
            RefUncond,
            finite("ref_uncond", cl.ref_uncond)?,
        ),
        (
            PolicyContra,
            finite("policy_contra", pc)?,
            RefContra,
            finite("ref_contra", rc)?,
        ),
    ))
}

/// Focus plus reject; gradients are summed fieldwise.
pub fn vision_contrastive_loss(
    cl: &ContrastLogProbs,
    beta1: f64,
    beta2: f64,
) -> Result<LossOut, DpoError> {
    let focus = focus_loss(cl, beta1)?;
    let reject = reject_loss(cl, beta2)?;
    Ok(focus.add(&reject))
}

/// Adds `gamma * nll_chosen` to a preference loss.
pub fn total_loss(base: &LossOut, nll_chosen: f64, gamma: f64) -> Result<LossOut, DpoError> {
    let nll = finite("nll_chosen", nll_chosen)?;
    if nll < 0.0 {
        return Err(DpoError::NegativeNll(nll));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(DpoError::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
    }
    let mut out = base.clone();
    out.value += gamma * nll;
    out.grads.insert(LogProbField::NllChosen, gamma);
    Ok(out)
}

/// Unweighted mean over a batch of loss values.
pub fn mean_loss(outs: &[LossOut]) -> Option<f64> {
    if outs.is_empty() {
        None
    } else {
        Some(outs.iter().map(|o| o.value).sum::<f64>() / outs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Pair,
    Contrast,
}

/// One line of a batch log-prob file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossRecord {
    pub pair_id: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_chosen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_chosen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_rejected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_rejected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_uncond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_uncond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_contra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_contra: Option<f64>,
    /// When present, `gamma * nll_chosen` is added to the loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_chosen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub pair_id: String,
    pub loss: f64,
    pub grads: BTreeMap<LogProbField, f64>,
}

fn req(v: Option<f64>, name: &'static str) -> Result<f64, DpoError> {
    v.ok_or(DpoError::MissingField(name))
}

impl LossRecord {
    pub fn evaluate(&self, cfg: &LossConfig) -> Result<LossResult, DpoError> {
        let base = match self.kind {
            RecordKind::Pair => dpo_loss(
                &PairLogProbs {
                    policy_chosen: req(self.policy_chosen, "policy_chosen")?,
                    ref_chosen: req(self.ref_chosen, "ref_chosen")?,
                    policy_rejected: req(self.policy_rejected, "policy_rejected")?,
                    ref_rejected: req(self.ref_rejected, "ref_rejected")?,
                },
                cfg.beta,
            )?,
            RecordKind::Contrast => vision_contrastive_loss(
                &ContrastLogProbs {
                    policy_cond: req(self.policy_cond, "policy_cond")?,
                    ref_cond: req(self.ref_cond, "ref_cond")?,
                    policy_uncond: req(self.policy_uncond, "policy_uncond")?,
                    ref_uncond: req(self.ref_uncond, "ref_uncond")?,
                    policy_contra: Some(req(self.policy_contra, "policy_contra")?),
                    ref_contra: Some(req(self.ref_contra, "ref_contra")?),
                },
                cfg.beta1,
                cfg.beta2,
            )?,
        };
        let out = match self.nll_chosen {
            Some(nll) => total_loss(&base, nll, cfg.gamma)?,
            None => base,
        };
        Ok(LossResult {
            pair_id: self.pair_id.clone(),
            loss: out.value,
            grads: out.grads,
        })
    }
}

/// Streams line-delimited [`LossRecord`]s to line-delimited [`LossResult`]s.
///
/// Blank lines are skipped. Returns the number of records written.
pub fn run_batch<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    cfg: &LossConfig,
) -> Result<usize, DpoError> {
    cfg.validate()?;
    let mut written = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| DpoError::Record { line: i + 1, message };
        let record: LossRecord =
            serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        let result = record.evaluate(cfg).map_err(|e| record_err(e.to_string()))?;
        serde_json::to_writer(&mut output, &result).map_err(|e| record_err(e.to_string()))?;
        output.write_all(b"\n")?;
        written += 1;
    }
    output.flush()?;
    Ok(written)
}
