//! Rejected-response synthesis.
//!
//! Every function that draws randomness takes the generator explicitly so
//! that identical `(input, seed)` gives identical output.

mod region;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use region::{iou, Region, RegionKind};

/// `(declared image index, caption text)`.
pub type CaptionEntry = (u32, String);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("sequence needs at least {needed} captions, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("k_drop must be in 1..={max}, got {k_drop}")]
    BadDropCount { k_drop: usize, max: usize },
    #[error("no brief caption for image {0}")]
    MissingBrief(String),
    #[error("caption list has {captions} entries but {images} image ids")]
    LengthMismatch { captions: usize, images: usize },
    #[error("no pool region on image {image_id} with iou <= {max_iou}")]
    NoMismatchCandidate { image_id: String, max_iou: f64 },
    #[error("no contradictory counterpart for image {0}")]
    MissingCounterpart(String),
    #[error("invalid region {0}")]
    InvalidRegion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Trunc,
    Short,
    Swap,
    RegionMismatch,
    ImageContrast,
}

impl PerturbationKind {
    pub const CONTEXT: [PerturbationKind; 3] = [Self::Trunc, Self::Short, Self::Swap];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Trunc => "trunc",
            Self::Short => "short",
            Self::Swap => "swap",
            Self::RegionMismatch => "region_mismatch",
            Self::ImageContrast => "image_contrast",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Drops `k_drop` captions chosen uniformly without replacement.
///
/// Survivors keep their original indices and relative order, so the
/// rejected text visibly skips indices.
pub fn truncate<R: Rng + ?Sized>(
    chosen: &[CaptionEntry],
    rng: &mut R,
    k_drop: usize,
) -> Result<Vec<CaptionEntry>, PerturbError> {
    let n = chosen.len();
    if n < 2 {
        return Err(PerturbError::TooShort { needed: 2, got: n });
    }
    if k_drop == 0 || k_drop >= n {
        return Err(PerturbError::BadDropCount { k_drop, max: n - 1 });
    }
    let mut dropped = vec![false; n];
    for pos in rand::seq::index::sample(rng, n, k_drop) {
        dropped[pos] = true;
    }
    Ok(chosen
        .iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|(e, _)| e.clone())
        .collect())
}

/// Default drop count: uniform in `1..=n-1`.
pub fn sample_drop_count<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<usize, PerturbError> {
    if n < 2 {
        return Err(PerturbError::TooShort { needed: 2, got: n });
    }
    Ok(rng.random_range(1..n))
}

/// Replaces each detailed caption with the brief caption of the same image.
///
/// `image_ids[i]` names the image behind `chosen[i]`.
pub fn shorten(
    chosen: &[CaptionEntry],
    image_ids: &[String],
    brief_pool: &BTreeMap<String, String>,
) -> Result<Vec<CaptionEntry>, PerturbError> {
    if chosen.len() != image_ids.len() {
        return Err(PerturbError::LengthMismatch {
            captions: chosen.len(),
            images: image_ids.len(),
        });
    }
    chosen
        .iter()
        .zip(image_ids)
        .map(|((index, _), id)| {
            brief_pool
                .get(id)
                .map(|brief| (*index, brief.clone()))
                .ok_or_else(|| PerturbError::MissingBrief(id.clone()))
        })
        .collect()
}

/// Reassigns captions across indices with a uniformly drawn non-identity
/// permutation `p`: position `i` receives the caption of position `p[i]`.
pub fn swap<R: Rng + ?Sized>(
    chosen: &[CaptionEntry],
    rng: &mut R,
) -> Result<(Vec<CaptionEntry>, Vec<usize>), PerturbError> {
    let n = chosen.len();
    if n < 2 {
        return Err(PerturbError::TooShort { needed: 2, got: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    // rejection sampling keeps the draw uniform over non-identity permutations
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    Ok((apply_permutation(chosen, &perm), perm))
}

/// Position `i` of the result takes the text of `entries[perm[i]]` and keeps its own index.
pub fn apply_permutation(entries: &[CaptionEntry], perm: &[usize]) -> Vec<CaptionEntry> {
    entries
        .iter()
        .zip(perm)
        .map(|((index, _), &src)| (*index, entries[src].1.clone()))
        .collect()
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// A caption describing a specific region of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCaption {
    pub image_id: String,
    pub region: Region,
    pub caption: String,
}

/// For each chosen region, draws a caption of a different region on the
/// same image whose overlap with the chosen region is at most `max_iou`.
///
/// The returned entries keep the pool region the caption came from; the
/// visual prompt of the pair still marks the chosen region.
pub fn mismatch_regions<R: Rng + ?Sized>(
    chosen: &[RegionCaption],
    region_pool: &[RegionCaption],
    rng: &mut R,
    max_iou: f64,
) -> Result<Vec<RegionCaption>, PerturbError> {
    chosen
        .iter()
        .map(|c| {
            let candidates: Vec<&RegionCaption> = region_pool
                .iter()
                .filter(|p| p.image_id == c.image_id && p != &c && iou(&c.region, &p.region) <= max_iou)
                .collect();
            candidates
                .choose(rng)
                .map(|p| (*p).clone())
                .ok_or_else(|| PerturbError::NoMismatchCandidate {
                    image_id: c.image_id.clone(),
                    max_iou,
                })
        })
        .collect()
}

/// Anything that can name the contradictory counterpart of an image.
pub trait CounterpartSource {
    fn counterpart(&self, image_id: &str) -> Option<&str>;
}

impl CounterpartSource for BTreeMap<String, String> {
    fn counterpart(&self, image_id: &str) -> Option<&str> {
        self.get(image_id).map(String::as_str)
    }
}

/// Returns `(aligned view, contradictory view)` for an image.
pub fn contrast_pair<S: CounterpartSource + ?Sized>(
    aligned_image: &str,
    pool: &S,
) -> Result<(String, String), PerturbError> {
    match pool.counterpart(aligned_image) {
        Some(other) if other != aligned_image => {
            Ok((aligned_image.to_string(), other.to_string()))
        }
        _ => Err(PerturbError::MissingCounterpart(aligned_image.to_string())),
    }
}
