use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PairgenError;
use crate::perturb::{CounterpartSource, Region, RegionCaption};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    ImageLevelDetailed,
    ImageLevelBrief,
    RegionLevel,
    Contrastive,
}

/// One line of a pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub image_id: String,
    pub image_path: String,
    pub caption: String,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub counterpart_image_id: Option<String>,
}

impl PoolEntry {
    pub fn region_caption(&self) -> Option<RegionCaption> {
        self.region.as_ref().map(|r| RegionCaption {
            image_id: self.image_id.clone(),
            region: r.clone(),
            caption: self.caption.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CaptionPool {
    pub kind: PoolKind,
    pub entries: Vec<PoolEntry>,
    by_image: BTreeMap<String, Vec<usize>>,
    /// Image ids in first-appearance order.
    image_order: Vec<String>,
}

impl CaptionPool {
    /// Builds a pool, enforcing the per-kind schema and key uniqueness.
    pub fn new(kind: PoolKind, entries: Vec<PoolEntry>) -> Result<Self, PairgenError> {
        let mut pool = CaptionPool {
            kind,
            entries: Vec::with_capacity(entries.len()),
            by_image: BTreeMap::new(),
            image_order: Vec::new(),
        };
        for (i, e) in entries.into_iter().enumerate() {
            pool.push(e).map_err(|message| PairgenError::Malformed {
                path: "<memory>".into(),
                line: i + 1,
                message,
            })?;
        }
        Ok(pool)
    }

    fn push(&mut self, entry: PoolEntry) -> Result<(), String> {
        if entry.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        match self.kind {
            PoolKind::RegionLevel if entry.region.is_none() => {
                return Err("region_level entry without region".into())
            }
            PoolKind::Contrastive if entry.counterpart_image_id.is_none() => {
                return Err("contrastive entry without counterpart_image_id".into())
            }
            _ => {}
        }
        if let Some(r) = &entry.region {
            r.validate().map_err(|e| e.to_string())?;
        }
        let key = entry.region.as_ref().map(Region::key);
        let slots = self.by_image.entry(entry.image_id.clone()).or_default();
        if slots
            .iter()
            .any(|&j| self.entries[j].region.as_ref().map(Region::key) == key)
        {
            return Err(format!("duplicate entry for image {}", entry.image_id));
        }
        if slots.is_empty() {
            self.image_order.push(entry.image_id.clone());
        }
        slots.push(self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct images.
    pub fn image_count(&self) -> usize {
        self.image_order.len()
    }

    pub fn entries_for(&self, image_id: &str) -> impl Iterator<Item = &PoolEntry> {
        self.by_image
            .get(image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    /// image_id to caption, first entry per image.
    pub fn caption_map(&self) -> BTreeMap<String, String> {
        self.image_order
            .iter()
            .filter_map(|id| {
                self.entries_for(id)
                    .next()
                    .map(|e| (id.clone(), e.caption.clone()))
            })
            .collect()
    }

    pub fn region_captions(&self) -> Vec<RegionCaption> {
        self.entries.iter().filter_map(PoolEntry::region_caption).collect()
    }
}

impl CounterpartSource for CaptionPool {
    fn counterpart(&self, image_id: &str) -> Option<&str> {
        self.entries_for(image_id)
            .find_map(|e| e.counterpart_image_id.as_deref())
    }
}

/// Reads a line-delimited pool file.
pub fn ingest_pool(path: &Path, kind: PoolKind) -> Result<CaptionPool, PairgenError> {
    let file = File::open(path).map_err(|source| PairgenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pool = CaptionPool::new(kind, Vec::new())?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PairgenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| PairgenError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: PoolEntry = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        pool.push(entry).map_err(malformed)?;
    }
    Ok(pool)
}

/// Images drawn for one pair, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub images: Vec<PoolEntry>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.images.iter().map(|e| e.image_id.clone()).collect()
    }
}

pub fn check_range(n_range: &RangeInclusive<usize>) -> Result<(), PairgenError> {
    if *n_range.start() < 2 || n_range.start() > n_range.end() {
        return Err(PairgenError::BadRange(format!(
            "image range [{}, {}] must satisfy 2 <= lo <= hi",
            n_range.start(),
            n_range.end()
        )));
    }
    Ok(())
}

/// Draws N uniformly from `n_range`, then N distinct images without
/// replacement. Pools with several entries per image (region pools)
/// contribute one uniformly chosen entry per drawn image.
pub fn sample_sequence<R: Rng + ?Sized>(
    pool: &CaptionPool,
    n_range: RangeInclusive<usize>,
    rng: &mut R,
) -> Result<SequenceSample, PairgenError> {
    check_range(&n_range)?;
    let available = pool.image_count();
    if available < *n_range.end() {
        return Err(PairgenError::PoolTooSmall {
            kind: pool.kind,
            needed: *n_range.end(),
            available,
        });
    }
    let n = rng.random_range(n_range);
    let picks = rand::seq::index::sample(rng, available, n);
    let mut images = Vec::with_capacity(n);
    for idx in picks {
        let id = &pool.image_order[idx];
        let slots = &pool.by_image[id];
        let slot = *slots.choose(rng).expect("every listed image has an entry");
        images.push(pool.entries[slot].clone());
    }
    debug_assert_eq!(
        images.iter().map(|e| &e.image_id).collect::<BTreeSet<_>>().len(),
        images.len()
    );
    Ok(SequenceSample { images })
}
