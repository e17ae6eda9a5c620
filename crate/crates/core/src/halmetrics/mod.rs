//! Multi-image caption hallucination metrics.
//!
//! Evaluation sequences are built by concatenating single-image annotations.
//! A model's structured response is parsed, captions are matched to images by
//! declared index, omitted indices are padded with the preceding caption, and
//! each image is scored independently:
//!
//! * CHAIR: hallucinated mentions over all mentions
//! * Hal: 1 if the caption hallucinates anything
//! * Cog: hallucinated mentions drawn from the commonly-imagined targets, over all mentions
//! * SCover: share of indices `1..=n` that received a non-empty caption
//!
//! Sequence scores are per-image means; the report is the unweighted mean over
//! sequences. Everything is a ratio in `[0, 1]`.

mod lexicon;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{normalize_tokens, LexiconSpec, ObjectLexicon};

use crate::caption_schema::{pad_missing, parse_sequence};

#[derive(Debug, Error)]
pub enum MetricsError {
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
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("need at least {needed} annotations, got {available}")]
    NotEnoughAnnotations { needed: usize, available: usize },
    #[error("cannot aggregate an empty score list")]
    Empty,
    #[error("predictions reference unknown seq_ids: {}", .0.join(", "))]
    UnknownSeqIds(Vec<String>),
}

/// One annotated image: its canonical object set and reference caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtImage {
    pub image_id: String,
    pub objects: BTreeSet<String>,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSequence {
    pub seq_id: String,
    pub images: Vec<GtImage>,
}

impl GroundTruthSequence {
    pub fn n(&self) -> usize {
        self.images.len()
    }

    fn check(&self) -> Result<(), String> {
        if self.images.is_empty() {
            return Err(format!("sequence {} has no images", self.seq_id));
        }
        if let Some(img) = self.images.iter().find(|i| i.objects.is_empty()) {
            return Err(format!("image {} has an empty object set", img.image_id));
        }
        Ok(())
    }
}

/// Sequence lengths used for short and long evaluation contexts.
pub const SHORT_CONTEXT: usize = 4;
pub const LONG_CONTEXT: usize = 8;

/// Builds `count` sequences of `n` distinct images each, sampled without
/// replacement within a sequence.
pub fn build_context_amber<R: Rng + ?Sized>(
    annotations: &[GtImage],
    n: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<GroundTruthSequence>, MetricsError> {
    if n == 0 || annotations.len() < n {
        return Err(MetricsError::NotEnoughAnnotations {
            needed: n.max(1),
            available: annotations.len(),
        });
    }
    Ok((0..count)
        .map(|i| GroundTruthSequence {
            seq_id: format!("ctx{n}-{i:04}"),
            images: rand::seq::index::sample(rng, annotations.len(), n)
                .into_iter()
                .map(|j| annotations[j].clone())
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub chair: f64,
    pub hal: f64,
    pub cog: f64,
}

pub fn score_caption(pred: &str, gt_objects: &BTreeSet<String>, lexicon: &ObjectLexicon) -> CaptionScores {
    let mentioned = lexicon.extract_objects(pred);
    if mentioned.is_empty() {
        return CaptionScores {
            chair: 0.0,
            hal: 0.0,
            cog: 0.0,
        };
    }
    let hallucinated: BTreeSet<&String> = mentioned.difference(gt_objects).collect();
    let imagined = hallucinated
        .iter()
        .filter(|o| lexicon.cog_targets().contains(**o))
        .count();
    let total = mentioned.len() as f64;
    CaptionScores {
        chair: hallucinated.len() as f64 / total,
        hal: if hallucinated.is_empty() { 0.0 } else { 1.0 },
        cog: imagined as f64 / total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqScores {
    pub seq_id: String,
    pub chair: f64,
    pub hal: f64,
    pub cog: f64,
    pub scover: f64,
    /// Declared indices above the sequence length; reported, not scored.
    #[serde(default)]
    pub spurious_indices: usize,
}

/// Scores one structured response against its ground-truth sequence.
pub fn score_sequence(pred_text: &str, gt: &GroundTruthSequence, lexicon: &ObjectLexicon) -> SeqScores {
    let n = gt.n();
    let parsed = parse_sequence(pred_text, n, false);
    let covered = parsed
        .captions
        .iter()
        .filter(|c| (1..=n).contains(&(c.image_index as usize)) && !c.text.is_empty())
        .count();
    let padded = pad_missing(&parsed);

    let (mut chair, mut hal, mut cog) = (0.0, 0.0, 0.0);
    for (k, image) in gt.images.iter().enumerate() {
        let text = padded.text_for(k as u32 + 1).unwrap_or("");
        let s = score_caption(text, &image.objects, lexicon);
        chair += s.chair;
        hal += s.hal;
        cog += s.cog;
    }
    let nf = n as f64;
    SeqScores {
        seq_id: gt.seq_id.clone(),
        chair: chair / nf,
        hal: hal / nf,
        cog: cog / nf,
        scover: covered as f64 / nf,
        spurious_indices: parsed.extra_indices.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chair: f64,
    pub hal: f64,
    pub cog: f64,
    pub scover: f64,
    pub per_sequence: Vec<SeqScores>,
}

impl MetricReport {
    /// Aggregates scaled ×100 in presentation order: CHAIR, SCover, Hal, Cog.
    pub fn percent_columns(&self) -> [(&'static str, f64); 4] {
        [
            ("CHAIR", self.chair * 100.0),
            ("SCover", self.scover * 100.0),
            ("Hal", self.hal * 100.0),
            ("Cog", self.cog * 100.0),
        ]
    }
}

pub fn aggregate(scores: &[SeqScores]) -> Result<MetricReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&SeqScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        chair: mean(|s| s.chair),
        hal: mean(|s| s.hal),
        cog: mean(|s| s.cog),
        scover: mean(|s| s.scover),
        per_sequence: scores.to_vec(),
    })
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub seq_id: String,
    pub text: String,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, MetricsError> {
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| MetricsError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthSequence>, MetricsError> {
    let mut seen = BTreeSet::new();
    read_jsonl::<GroundTruthSequence>(path)?
        .into_iter()
        .map(|(line, gt)| {
            let malformed = |message| MetricsError::Malformed {
                path: path.to_path_buf(),
                line,
                message,
            };
            gt.check().map_err(malformed)?;
            if !seen.insert(gt.seq_id.clone()) {
                return Err(malformed(format!("duplicate seq_id {}", gt.seq_id)));
            }
            Ok(gt)
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let mut seen = BTreeSet::new();
    read_jsonl::<Prediction>(path)?
        .into_iter()
        .map(|(line, p)| {
            if !seen.insert(p.seq_id.clone()) {
                return Err(MetricsError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: format!("duplicate seq_id {}", p.seq_id),
                });
            }
            Ok(p)
        })
        .collect()
}

/// Scores predictions against ground truth.
///
/// With `only_n`, sequences of other lengths are left out. A ground-truth
/// sequence without a prediction is scored as an empty response.
pub fn evaluate(
    predictions: &[Prediction],
    ground_truth: &[GroundTruthSequence],
    lexicon: &ObjectLexicon,
    only_n: Option<usize>,
) -> Result<MetricReport, MetricsError> {
    let by_id: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.seq_id.as_str(), p.text.as_str()))
        .collect();
    let known: BTreeSet<&str> = ground_truth.iter().map(|g| g.seq_id.as_str()).collect();
    let unknown: Vec<String> = by_id
        .keys()
        .filter(|id| !known.contains(*id))
        .map(|id| id.to_string())
        .collect();
    if !unknown.is_empty() {
        return Err(MetricsError::UnknownSeqIds(unknown));
    }
    let scores: Vec<SeqScores> = ground_truth
        .par_iter()
        .filter(|g| only_n.is_none_or(|n| g.n() == n))
        .map(|g| score_sequence(by_id.get(g.seq_id.as_str()).copied().unwrap_or(""), g, lexicon))
        .collect();
    aggregate(&scores)
}

#[cfg(test)]
mod tests;
