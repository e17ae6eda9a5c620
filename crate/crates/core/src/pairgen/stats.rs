use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Level, PairgenError, PreferencePair, SkipRecord};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PairgenError + '_ {
    move |source| PairgenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_lines<T: Serialize>(items: &[&T], path: &Path) -> Result<(), PairgenError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| PairgenError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Validates and writes pairs ordered by id. Returns the record count.
pub fn emit_jsonl(pairs: &[PreferencePair], path: &Path) -> Result<usize, PairgenError> {
    let mut sorted: Vec<&PreferencePair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for p in &sorted {
        p.validate()?;
    }
    write_lines(&sorted, path)?;
    Ok(sorted.len())
}

pub fn write_skip_log(skipped: &[SkipRecord], path: &Path) -> Result<(), PairgenError> {
    let mut sorted: Vec<&SkipRecord> = skipped.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    write_lines(&sorted, path)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>, PairgenError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| PairgenError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub count: usize,
    pub images_min: usize,
    pub images_max: usize,
    /// Whitespace-token means.
    pub mean_chosen_tokens: f64,
    pub mean_rejected_tokens: Option<f64>,
    pub perturbations: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub levels: BTreeMap<Level, LevelStats>,
}

#[derive(Default)]
struct Acc {
    count: usize,
    images_min: usize,
    images_max: usize,
    chosen_tokens: usize,
    rejected_tokens: usize,
    rejected_count: usize,
    perturbations: BTreeMap<String, usize>,
}

fn tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// One-pass statistics over pairs.
pub fn stats_of<'a>(pairs: impl IntoIterator<Item = &'a PreferencePair>) -> Stats {
    let mut accs: BTreeMap<Level, Acc> = BTreeMap::new();
    let mut total = 0;
    for p in pairs {
        total += 1;
        let a = accs.entry(p.level).or_default();
        let n = p.images.len();
        a.images_min = if a.count == 0 { n } else { a.images_min.min(n) };
        a.images_max = a.images_max.max(n);
        a.count += 1;
        a.chosen_tokens += tokens(&p.chosen);
        if let Some(r) = &p.rejected {
            a.rejected_tokens += tokens(r);
            a.rejected_count += 1;
        }
        *a.perturbations.entry(p.perturbation.to_string()).or_default() += 1;
    }
    let levels = accs
        .into_iter()
        .map(|(level, a)| {
            let stats = LevelStats {
                count: a.count,
                images_min: a.images_min,
                images_max: a.images_max,
                mean_chosen_tokens: a.chosen_tokens as f64 / a.count as f64,
                mean_rejected_tokens: (a.rejected_count > 0)
                    .then(|| a.rejected_tokens as f64 / a.rejected_count as f64),
                perturbations: a.perturbations,
            };
            (level, stats)
        })
        .collect();
    Stats { total, levels }
}

/// Statistics of a pair file.
pub fn dataset_stats(path: &Path) -> Result<Stats, PairgenError> {
    Ok(stats_of(&read_pairs(path)?))
}
