//! Preference-pair factory.
//!
//! Ingests caption pools, samples image sequences, applies perturbations and
//! emits line-delimited [`PreferencePair`] records. Generation is a pure
//! function of `(pools, config, seed)`: every pair draws from its own
//! generator seeded by `derive_seed(master_seed, level, index)`, so output is
//! byte-identical whatever the thread count.

mod pair;
mod pool;
mod stats;

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pair::{
    build_context_pair, build_needle_t_pair, build_needle_v_pair, ContrastImage, Level, PairImage,
    PairMeta, PreferencePair, CONTEXT_INSTRUCTION, CONTEXT_TEMPLATE_ID, GENERATOR_VERSION,
    NEEDLE_INSTRUCTION, NEEDLE_TEMPLATE_ID,
};
pub use pool::{check_range, ingest_pool, sample_sequence, CaptionPool, PoolEntry, PoolKind, SequenceSample};
pub use stats::{dataset_stats, emit_jsonl, read_pairs, stats_of, write_skip_log, LevelStats, Stats};

use crate::caption_schema::SchemaError;
use crate::perturb::{PerturbError, PerturbationKind, RegionCaption};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum PairgenError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{kind:?} pool has {available} images, need at least {needed}")]
    PoolTooSmall {
        kind: PoolKind,
        needed: usize,
        available: usize,
    },
    #[error("{0}")]
    BadRange(String),
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("no {0} pool configured")]
    MissingPool(&'static str),
    #[error("pool entry for image {0} has no region")]
    MissingRegion(String),
    #[error("{0} is not a context-level perturbation")]
    BadPerturbation(PerturbationKind),
    #[error("pair {id}: {message}")]
    Invariant { id: String, message: String },
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub n_range: [usize; 2],
    /// Weights for trunc, short, swap.
    pub perturb_weights: [f64; 3],
    pub count: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            n_range: [2, 5],
            perturb_weights: [1.0, 1.0, 1.0],
            count: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleConfig {
    pub n_range: [usize; 2],
    pub max_iou: f64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            n_range: [2, 4],
            max_iou: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolPaths {
    pub detailed: Option<PathBuf>,
    pub brief: Option<PathBuf>,
    pub region: Option<PathBuf>,
    pub contrastive: Option<PathBuf>,
}

fn default_needle_t() -> CountConfig {
    CountConfig { count: 100 }
}

fn default_needle_v() -> CountConfig {
    CountConfig { count: 35 }
}

/// Generator configuration. Default counts follow a 2 : 1 : 0.35 level mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub needle: NeedleConfig,
    #[serde(default = "default_needle_t")]
    pub needle_t: CountConfig,
    #[serde(default = "default_needle_v")]
    pub needle_v: CountConfig,
    #[serde(default)]
    pub pools: PoolPaths,
}

fn default_seed() -> u64 {
    42
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            master_seed: default_seed(),
            output: None,
            context: ContextConfig::default(),
            needle: NeedleConfig::default(),
            needle_t: default_needle_t(),
            needle_v: default_needle_v(),
            pools: PoolPaths::default(),
        }
    }
}

fn range(r: [usize; 2]) -> RangeInclusive<usize> {
    r[0]..=r[1]
}

impl GenConfig {
    pub fn count_for(&self, level: Level) -> usize {
        match level {
            Level::Context => self.context.count,
            Level::NeedleT => self.needle_t.count,
            Level::NeedleV => self.needle_v.count,
        }
    }

    pub fn set_count(&mut self, level: Level, count: usize) {
        match level {
            Level::Context => self.context.count = count,
            Level::NeedleT => self.needle_t.count = count,
            Level::NeedleV => self.needle_v.count = count,
        }
    }

    pub fn validate(&self) -> Result<(), PairgenError> {
        check_range(&range(self.context.n_range))?;
        check_range(&range(self.needle.n_range))?;
        let w = &self.context.perturb_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(PairgenError::BadConfig(format!(
                "context.perturb_weights must be non-negative with a positive sum, got {w:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.needle.max_iou) {
            return Err(PairgenError::BadConfig(format!(
                "needle.max_iou must be in [0, 1], got {}",
                self.needle.max_iou
            )));
        }
        Ok(())
    }
}

/// Loaded pools; absent pools are `None`.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub detailed: Option<CaptionPool>,
    pub brief: Option<CaptionPool>,
    pub region: Option<CaptionPool>,
    pub contrastive: Option<CaptionPool>,
}

impl Pools {
    /// Loads every configured pool; relative paths resolve against `base`.
    pub fn load(paths: &PoolPaths, base: &Path) -> Result<Self, PairgenError> {
        let load = |p: &Option<PathBuf>, kind| -> Result<Option<CaptionPool>, PairgenError> {
            p.as_ref()
                .map(|p| ingest_pool(&base.join(p), kind))
                .transpose()
        };
        Ok(Pools {
            detailed: load(&paths.detailed, PoolKind::ImageLevelDetailed)?,
            brief: load(&paths.brief, PoolKind::ImageLevelBrief)?,
            region: load(&paths.region, PoolKind::RegionLevel)?,
            contrastive: load(&paths.contrastive, PoolKind::Contrastive)?,
        })
    }
}

/// A pair that could not be built, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub level: Level,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct GenOutput {
    pub pairs: Vec<PreferencePair>,
    pub skipped: Vec<SkipRecord>,
}

pub fn pair_id(level: Level, index: usize) -> String {
    format!("{level}-{index:06}")
}

fn level_stream(level: Level) -> u64 {
    match level {
        Level::Context => 1,
        Level::NeedleT => 2,
        Level::NeedleV => 3,
    }
}

fn require<'a>(pool: &'a Option<CaptionPool>, name: &'static str) -> Result<&'a CaptionPool, PairgenError> {
    pool.as_ref().ok_or(PairgenError::MissingPool(name))
}

fn require_size(pool: &CaptionPool, n_range: [usize; 2]) -> Result<(), PairgenError> {
    if pool.image_count() < n_range[1] {
        return Err(PairgenError::PoolTooSmall {
            kind: pool.kind,
            needed: n_range[1],
            available: pool.image_count(),
        });
    }
    Ok(())
}

/// Builds pairs for the requested levels.
///
/// Configuration and pool problems are errors. Per-pair failures (no
/// mismatch candidate, missing brief caption or counterpart) become
/// [`SkipRecord`]s. Uses the ambient rayon pool.
pub fn generate(cfg: &GenConfig, pools: &Pools, levels: &[Level]) -> Result<GenOutput, PairgenError> {
    cfg.validate()?;
    let mut out = GenOutput::default();
    for level in Level::ALL {
        let count = cfg.count_for(level);
        if !levels.contains(&level) || count == 0 {
            continue;
        }
        let built: Vec<Result<PreferencePair, SkipRecord>> = match level {
            Level::Context => {
                let detailed = require(&pools.detailed, "image_level_detailed")?;
                require_size(detailed, cfg.context.n_range)?;
                let weights = WeightedIndex::new(cfg.context.perturb_weights)
                    .map_err(|e| PairgenError::BadConfig(e.to_string()))?;
                run_level(cfg, level, count, |id, seed, rng| {
                    let kind = PerturbationKind::CONTEXT[weights.sample(rng)];
                    let seq = sample_sequence(detailed, range(cfg.context.n_range), rng)?;
                    build_context_pair(id, seed, &seq, pools.brief.as_ref(), kind, rng)
                })
            }
            Level::NeedleT => {
                let region = require(&pools.region, "region_level")?;
                require_size(region, cfg.needle.n_range)?;
                let candidates: Vec<RegionCaption> = region.region_captions();
                run_level(cfg, level, count, |id, seed, rng| {
                    let seq = sample_sequence(region, range(cfg.needle.n_range), rng)?;
                    build_needle_t_pair(id, seed, &seq, &candidates, cfg.needle.max_iou, rng)
                })
            }
            Level::NeedleV => {
                let contrastive = require(&pools.contrastive, "contrastive")?;
                require_size(contrastive, cfg.needle.n_range)?;
                run_level(cfg, level, count, |id, seed, rng| {
                    let seq = sample_sequence(contrastive, range(cfg.needle.n_range), rng)?;
                    build_needle_v_pair(id, seed, &seq, contrastive)
                })
            }
        };
        for r in built {
            match r {
                Ok(p) => out.pairs.push(p),
                Err(s) => out.skipped.push(s),
            }
        }
    }
    Ok(out)
}

fn run_level<F>(cfg: &GenConfig, level: Level, count: usize, build: F) -> Vec<Result<PreferencePair, SkipRecord>>
where
    F: Fn(String, u64, &mut crate::seed::SeededRng) -> Result<PreferencePair, PairgenError> + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, level_stream(level), i as u64);
            let mut rng = rng_from_seed(seed);
            let id = pair_id(level, i);
            build(id.clone(), seed, &mut rng).map_err(|e| SkipRecord {
                id,
                level,
                seed,
                reason: e.to_string(),
            })
        })
        .collect()
}
