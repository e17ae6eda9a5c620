use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::pairgen::Level;

/// Discrete analogue of a preference record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyPair {
    pub level: Level,
    /// Aligned view.
    pub context_w: usize,
    /// Contradictory view (needle_v only).
    pub context_l: Option<usize>,
    pub chosen: Vec<usize>,
    /// Absent for needle_v.
    pub rejected: Option<Vec<usize>>,
}

impl ToyPair {
    pub fn validate(&self, contexts: usize, vocab: usize) -> Result<(), ToyError> {
        let bad = |m: &str| Err(ToyError::InvalidConfig(format!("toy pair: {m}")));
        let tokens_ok = |t: &[usize]| t.iter().all(|&x| x < vocab);
        if self.context_w == 0 || self.context_w >= contexts || !tokens_ok(&self.chosen) {
            return bad("ids out of range");
        }
        match self.level {
            Level::NeedleV => match (self.context_l, &self.rejected) {
                (Some(l), None) if l != 0 && l < contexts && l != self.context_w => Ok(()),
                _ => bad("needle_v needs a contradictory context and no rejected"),
            },
            _ => match (&self.rejected, self.context_l) {
                (Some(r), None) if tokens_ok(r) => Ok(()),
                _ => bad("language pair needs rejected tokens and no contradictory context"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of context states, including the reserved state 0.
    pub contexts: usize,
    pub vocab: usize,
    pub n_pairs: usize,
    pub heldout_pairs: usize,
    /// Relative weights for context, needle_t and needle_v pairs.
    pub mix: [f64; 3],
    pub response_len: usize,
    /// Size of the planted token subset per state.
    pub subset_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            contexts: 32,
            vocab: 16,
            n_pairs: 2000,
            heldout_pairs: 500,
            mix: [2.0, 1.0, 0.35],
            response_len: 4,
            subset_size: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.contexts < 2 || self.vocab < 2 {
            return bad(format!("need contexts >= 2 and vocab >= 2, got {}x{}", self.contexts, self.vocab));
        }
        if self.response_len < 2 {
            return bad("response_len must be >= 2".into());
        }
        if self.subset_size == 0 || self.subset_size >= self.vocab {
            return bad(format!("subset_size must be in 1..{}", self.vocab));
        }
        if self.mix.iter().any(|w| !w.is_finite() || *w < 0.0) || self.mix.iter().sum::<f64>() <= 0.0 {
            return bad(format!("invalid level mix {:?}", self.mix));
        }
        Ok(())
    }

    /// Pair counts per level; remainders go to needle_v.
    pub fn level_counts(&self, n: usize) -> [usize; 3] {
        let total: f64 = self.mix.iter().sum();
        let context = (n as f64 * self.mix[0] / total).round() as usize;
        let needle_t = ((n as f64 * self.mix[1] / total).round() as usize).min(n - context);
        [context, needle_t, n - context - needle_t]
    }
}

/// Planted structure: which tokens are "true" for each image state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyWorld {
    pub contexts: usize,
    pub vocab: usize,
    /// Indexed by state; state 0 has no subset.
    pub subsets: Vec<Vec<usize>>,
}

impl ToyWorld {
    pub fn plant<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Self {
        let mut subsets = vec![Vec::new()];
        for _ in 1..cfg.contexts {
            let mut s = rand::seq::index::sample(rng, cfg.vocab, cfg.subset_size).into_vec();
            s.sort_unstable();
            subsets.push(s);
        }
        Self {
            contexts: cfg.contexts,
            vocab: cfg.vocab,
            subsets,
        }
    }

    fn disjoint(&self, a: usize, b: usize) -> bool {
        self.subsets[a].iter().all(|t| !self.subsets[b].contains(t))
    }

    fn draw<R: Rng + ?Sized>(from: &[usize], len: usize, rng: &mut R) -> Vec<usize> {
        (0..len).map(|_| *from.choose(rng).expect("non-empty")).collect()
    }

    fn other_state<R: Rng + ?Sized>(&self, not: usize, rng: &mut R) -> usize {
        loop {
            let s = rng.random_range(1..self.contexts);
            if s != not {
                return s;
            }
        }
    }

    fn disjoint_partners(&self, w: usize) -> Vec<usize> {
        (1..self.contexts).filter(|&s| s != w && self.disjoint(w, s)).collect()
    }

    fn pair<R: Rng + ?Sized>(&self, level: Level, len: usize, rng: &mut R) -> Result<ToyPair, ToyError> {
        let w = if level == Level::NeedleV {
            // only states that have a contradictory partner can anchor a vision pair
            let eligible: Vec<usize> =
                (1..self.contexts).filter(|&s| !self.disjoint_partners(s).is_empty()).collect();
            *eligible.choose(rng).ok_or_else(|| {
                ToyError::InvalidConfig("no two image states have disjoint token subsets".into())
            })?
        } else {
            rng.random_range(1..self.contexts)
        };
        let chosen = Self::draw(&self.subsets[w], len, rng);
        let pair = match level {
            Level::Context => {
                // swap analogue: tokens of another image state, when one exists
                let swapped = if self.contexts > 2 && rng.random_bool(0.5) {
                    (0..64).find_map(|_| {
                        let other = self.other_state(w, rng);
                        let r = Self::draw(&self.subsets[other], len, rng);
                        (r != chosen).then_some(r)
                    })
                } else {
                    None
                };
                // otherwise the truncation analogue
                let rejected =
                    swapped.unwrap_or_else(|| chosen[..rng.random_range(1..len)].to_vec());
                ToyPair {
                    level,
                    context_w: w,
                    context_l: None,
                    chosen,
                    rejected: Some(rejected),
                }
            }
            Level::NeedleT => {
                // mismatch analogue: tokens outside the planted subset
                let complement: Vec<usize> =
                    (0..self.vocab).filter(|t| !self.subsets[w].contains(t)).collect();
                ToyPair {
                    level,
                    context_w: w,
                    context_l: None,
                    rejected: Some(Self::draw(&complement, len, rng)),
                    chosen,
                }
            }
            Level::NeedleV => {
                let l = *self.disjoint_partners(w).choose(rng).expect("eligible state");
                ToyPair {
                    level,
                    context_w: w,
                    context_l: Some(l),
                    chosen,
                    rejected: None,
                }
            }
        };
        Ok(pair)
    }

    /// Draws `n` pairs split across levels by the configured mix.
    pub fn sample_pairs<R: Rng + ?Sized>(
        &self,
        cfg: &SynthConfig,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<ToyPair>, ToyError> {
        let counts = cfg.level_counts(n);
        let mut pairs = Vec::with_capacity(n);
        for (level, count) in Level::ALL.into_iter().zip(counts) {
            for _ in 0..count {
                pairs.push(self.pair(level, cfg.response_len, rng)?);
            }
        }
        Ok(pairs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub world: ToyWorld,
    pub train: Vec<ToyPair>,
    pub heldout: Vec<ToyPair>,
}

/// Plants a world and draws training and held-out pairs from it.
pub fn synth_dataset<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<ToyDataset, ToyError> {
    cfg.validate()?;
    let world = ToyWorld::plant(cfg, rng);
    let train = world.sample_pairs(cfg, cfg.n_pairs, rng)?;
    let heldout = world.sample_pairs(cfg, cfg.heldout_pairs, rng)?;
    Ok(ToyDataset { world, train, heldout })
}
