use std::io::{BufRead, Write};

use super::ToyError;

/// Tabular conditional policy: one logit row per context state.
///
/// State 0 is reserved for "no image context".
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    contexts: usize,
    vocab: usize,
    logits: Vec<f64>,
}

pub const UNCONDITIONAL: usize = 0;

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl ToyPolicy {
    /// All-zero logits: every row is the uniform distribution.
    pub fn uniform(contexts: usize, vocab: usize) -> Self {
        Self {
            contexts,
            vocab,
            logits: vec![0.0; contexts * vocab],
        }
    }

    pub fn from_logits(contexts: usize, vocab: usize, logits: Vec<f64>) -> Result<Self, ToyError> {
        if logits.len() != contexts * vocab {
            return Err(ToyError::InvalidConfig(format!(
                "expected {} logits for {contexts}x{vocab}, got {}",
                contexts * vocab,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(ToyError::InvalidConfig("non-finite logit".into()));
        }
        Ok(Self {
            contexts,
            vocab,
            logits,
        })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.logits[context * self.vocab..(context + 1) * self.vocab]
    }

    fn check(&self, context: usize, tokens: &[usize]) -> Result<(), ToyError> {
        if context >= self.contexts {
            return Err(ToyError::OutOfRange {
                what: "context",
                id: context,
                limit: self.contexts,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(ToyError::OutOfRange {
                what: "token",
                id: t,
                limit: self.vocab,
            });
        }
        Ok(())
    }

    /// `sum_t log softmax(row[context])[t]`.
    pub fn logprob(&self, context: usize, tokens: &[usize]) -> Result<f64, ToyError> {
        self.check(context, tokens)?;
        let lsm = log_softmax(self.row(context));
        Ok(tokens.iter().map(|&t| lsm[t]).sum())
    }

    /// Gradient of [`Self::logprob`] with respect to the logits of `context`:
    /// `count_j - len(tokens) * softmax_j`. Other rows have zero gradient.
    pub fn grad_logprob(&self, context: usize, tokens: &[usize]) -> Result<Vec<f64>, ToyError> {
        self.check(context, tokens)?;
        let lsm = log_softmax(self.row(context));
        let len = tokens.len() as f64;
        let mut grad: Vec<f64> = lsm.iter().map(|l| -len * l.exp()).collect();
        for &t in tokens {
            grad[t] += 1.0;
        }
        Ok(grad)
    }

    /// Log-softmax of every row, row-major.
    pub fn log_softmax_table(&self) -> LogSoftmaxTable {
        LogSoftmaxTable {
            vocab: self.vocab,
            values: self.logits.chunks(self.vocab).flat_map(log_softmax).collect(),
        }
    }

    /// Writes `"C V"` then one line of space-separated logits per state.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.contexts, self.vocab)?;
        for row in self.logits.chunks(self.vocab) {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, ToyError> {
        let bad = |m: &str| ToyError::InvalidConfig(format!("policy dump: {m}"));
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad header"))?;
        let [contexts, vocab] = dims[..] else {
            return Err(bad("header must be 'C V'"));
        };
        let mut logits = Vec::with_capacity(contexts * vocab);
        for line in lines {
            let line = line?;
            for tok in line.split_whitespace() {
                logits.push(tok.parse::<f64>().map_err(|_| bad("bad float"))?);
            }
        }
        Self::from_logits(contexts, vocab, logits)
    }
}

/// Cached log-softmax rows for fast repeated evaluation within an epoch.
#[derive(Debug, Clone)]
pub struct LogSoftmaxTable {
    vocab: usize,
    values: Vec<f64>,
}

impl LogSoftmaxTable {
    pub fn logprob(&self, context: usize, tokens: &[usize]) -> f64 {
        let row = &self.values[context * self.vocab..(context + 1) * self.vocab];
        tokens.iter().map(|&t| row[t]).sum()
    }

    /// Adds `scale * grad_logprob(context, tokens)` into a full logit-shaped buffer.
    pub fn accumulate_grad(&self, context: usize, tokens: &[usize], scale: f64, out: &mut [f64]) {
        let base = context * self.vocab;
        let len = tokens.len() as f64;
        for j in 0..self.vocab {
            out[base + j] -= scale * len * self.values[base + j].exp();
        }
        for &t in tokens {
            out[base + t] += scale;
        }
    }
}
