use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{CaptionPool, SequenceSample};
use super::PairgenError;
use crate::caption_schema::{parse_sequence, serialize_sequence};
use crate::perturb::{
    self, contrast_pair, mismatch_regions, CaptionEntry, PerturbationKind, Region, RegionCaption,
    RegionKind,
};

pub const CONTEXT_INSTRUCTION: &str = "Please sequentially describe each of the images shown above. Use the format: For Image *:<description>.";
pub const NEEDLE_INSTRUCTION: &str = "Please describe the marked area in each image.";
pub const CONTEXT_TEMPLATE_ID: &str = "sequential_describe";
pub const NEEDLE_TEMPLATE_ID: &str = "marked_area_describe";
pub const GENERATOR_VERSION: &str = concat!("prefalign/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Context,
    NeedleT,
    NeedleV,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Context, Level::NeedleT, Level::NeedleV];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Context => "context",
            Level::NeedleT => "needle_t",
            Level::NeedleV => "needle_v",
        }
    }

    /// Whether responses at this level use marked-area headers.
    pub fn marked_area(self) -> bool {
        self == Level::NeedleT
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairImage {
    pub image_id: String,
    pub image_path: String,
    pub region: Option<Region>,
    pub prompt_style: Option<RegionKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastImage {
    pub image_id: String,
    /// Known only when the counterpart has its own pool entry.
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub seed: u64,
    pub n_images: usize,
    pub generator_version: String,
    pub template_id: String,
}

/// One preference record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub level: Level,
    pub perturbation: PerturbationKind,
    pub instruction: String,
    pub images: Vec<PairImage>,
    pub contrast_images: Option<Vec<ContrastImage>>,
    pub chosen: String,
    pub rejected: Option<String>,
    pub meta: PairMeta,
}

impl PreferencePair {
    /// Checks the level-conditional invariants.
    pub fn validate(&self) -> Result<(), PairgenError> {
        let fail = |message: &str| {
            Err(PairgenError::Invariant {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.meta.n_images != self.images.len() || self.images.is_empty() {
            return fail("meta.n_images disagrees with images");
        }
        match self.level {
            Level::Context => {
                if !PerturbationKind::CONTEXT.contains(&self.perturbation) {
                    return fail("context pair with non-context perturbation");
                }
                if self.rejected.is_none() || self.contrast_images.is_some() {
                    return fail("context pair needs rejected and no contrast images");
                }
            }
            Level::NeedleT => {
                if self.perturbation != PerturbationKind::RegionMismatch {
                    return fail("needle_t pair must be region_mismatch");
                }
                if self.rejected.is_none() || self.images.iter().any(|i| i.region.is_none()) {
                    return fail("needle_t pair needs rejected and a region on every image");
                }
            }
            Level::NeedleV => {
                if self.perturbation != PerturbationKind::ImageContrast {
                    return fail("needle_v pair must be image_contrast");
                }
                if self.rejected.is_some() {
                    return fail("needle_v pair must not carry rejected");
                }
                match &self.contrast_images {
                    Some(c) if c.len() == self.images.len() => {
                        if c.iter().zip(&self.images).any(|(c, i)| c.image_id == i.image_id) {
                            return fail("contrast image equals aligned image");
                        }
                    }
                    _ => return fail("needle_v contrast_images must match images"),
                }
            }
        }
        let parsed = parse_sequence(&self.chosen, self.images.len(), self.level.marked_area());
        if !parsed.missing_indices.is_empty() {
            return fail("chosen response misses image indices");
        }
        Ok(())
    }
}

fn numbered(captions: impl IntoIterator<Item = String>) -> Vec<CaptionEntry> {
    captions
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as u32 + 1, c))
        .collect()
}

fn plain_images(seq: &SequenceSample) -> Vec<PairImage> {
    seq.images
        .iter()
        .map(|e| PairImage {
            image_id: e.image_id.clone(),
            image_path: e.image_path.clone(),
            region: None,
            prompt_style: None,
        })
        .collect()
}

fn meta(seed: u64, n_images: usize, template_id: &str) -> PairMeta {
    PairMeta {
        seed,
        n_images,
        generator_version: GENERATOR_VERSION.to_string(),
        template_id: template_id.to_string(),
    }
}

/// Context-level pair: full detailed sequence vs one perturbation of it.
pub fn build_context_pair<R: Rng + ?Sized>(
    id: String,
    seed: u64,
    seq: &SequenceSample,
    brief_pool: Option<&CaptionPool>,
    perturbation: PerturbationKind,
    rng: &mut R,
) -> Result<PreferencePair, PairgenError> {
    let chosen_entries = numbered(seq.images.iter().map(|e| e.caption.clone()));
    let rejected_entries = match perturbation {
        PerturbationKind::Trunc => {
            let k = perturb::sample_drop_count(chosen_entries.len(), rng)?;
            perturb::truncate(&chosen_entries, rng, k)?
        }
        PerturbationKind::Short => {
            let brief = brief_pool.ok_or(PairgenError::MissingPool("image_level_brief"))?;
            perturb::shorten(&chosen_entries, &seq.image_ids(), &brief.caption_map())?
        }
        PerturbationKind::Swap => perturb::swap(&chosen_entries, rng)?.0,
        other => {
            return Err(PairgenError::BadPerturbation(other));
        }
    };
    Ok(PreferencePair {
        id,
        level: Level::Context,
        perturbation,
        instruction: CONTEXT_INSTRUCTION.to_string(),
        images: plain_images(seq),
        contrast_images: None,
        chosen: serialize_sequence(&chosen_entries, false)?,
        rejected: Some(serialize_sequence(&rejected_entries, false)?),
        meta: meta(seed, seq.len(), CONTEXT_TEMPLATE_ID),
    })
}

/// Needle-level language pair: captions of the marked regions vs captions
/// of non-overlapping regions on the same images.
pub fn build_needle_t_pair<R: Rng + ?Sized>(
    id: String,
    seed: u64,
    seq: &SequenceSample,
    region_pool: &[RegionCaption],
    max_iou: f64,
    rng: &mut R,
) -> Result<PreferencePair, PairgenError> {
    let chosen_regions: Vec<RegionCaption> = seq
        .images
        .iter()
        .map(|e| {
            e.region_caption()
                .ok_or_else(|| PairgenError::MissingRegion(e.image_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let rejected_regions = mismatch_regions(&chosen_regions, region_pool, rng, max_iou)?;

    let images = seq
        .images
        .iter()
        .zip(&chosen_regions)
        .map(|(e, r)| {
            let style = match r.region.kind {
                RegionKind::Bbox if rng.random_bool(0.5) => RegionKind::Bbox,
                _ => RegionKind::Point,
            };
            PairImage {
                image_id: e.image_id.clone(),
                image_path: e.image_path.clone(),
                region: Some(r.region.clone()),
                prompt_style: Some(style),
            }
        })
        .collect();

    let chosen = numbered(chosen_regions.into_iter().map(|r| r.caption));
    let rejected = numbered(rejected_regions.into_iter().map(|r| r.caption));
    Ok(PreferencePair {
        id,
        level: Level::NeedleT,
        perturbation: PerturbationKind::RegionMismatch,
        instruction: NEEDLE_INSTRUCTION.to_string(),
        images,
        contrast_images: None,
        chosen: serialize_sequence(&chosen, true)?,
        rejected: Some(serialize_sequence(&rejected, true)?),
        meta: meta(seed, seq.len(), NEEDLE_TEMPLATE_ID),
    })
}

/// Needle-level vision pair: one description set against the aligned views
/// and their contradictory counterparts.
pub fn build_needle_v_pair(
    id: String,
    seed: u64,
    seq: &SequenceSample,
    contrast_pool: &CaptionPool,
) -> Result<PreferencePair, PairgenError> {
    let contrast_images = seq
        .images
        .iter()
        .map(|e| {
            let (_, other) = contrast_pair(&e.image_id, contrast_pool)?;
            let image_path = contrast_pool.entries_for(&other).next().map(|c| c.image_path.clone());
            Ok(ContrastImage {
                image_id: other,
                image_path,
            })
        })
        .collect::<Result<Vec<_>, PairgenError>>()?;
    let chosen = numbered(seq.images.iter().map(|e| e.caption.clone()));
    Ok(PreferencePair {
        id,
        level: Level::NeedleV,
        perturbation: PerturbationKind::ImageContrast,
        instruction: CONTEXT_INSTRUCTION.to_string(),
        images: plain_images(seq),
        contrast_images: Some(contrast_images),
        chosen: serialize_sequence(&chosen, false)?,
        rejected: None,
        meta: meta(seed, seq.len(), CONTEXT_TEMPLATE_ID),
    })
}
