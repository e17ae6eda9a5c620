//! Shared helpers for integration tests, including a brute-force
//! hallucination scorer written without any library parsing or extraction.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prefalign")
}

/// Runs `check`, prints one PASS/FAIL line and fails the test on error or overrun.
pub fn criterion<F>(id: u32, name: &str, limit: Duration, check: F)
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    let outcome = check();
    let elapsed = start.elapsed();
    let verdict = match &outcome {
        Ok(detail) if elapsed <= limit => format!("PASS [{id}] {name}: {detail} ({elapsed:.2?})"),
        Ok(detail) => format!("FAIL [{id}] {name}: {detail} but took {elapsed:.2?} > {limit:?}"),
        Err(why) => format!("FAIL [{id}] {name}: {why} ({elapsed:.2?})"),
    };
    println!("{verdict}");
    assert!(verdict.starts_with("PASS"), "{verdict}");
}

/// A tiny scoring problem described structurally, so the oracle never has
/// to parse the rendered text.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub objects: Vec<String>,
    pub synonyms: Vec<(String, String)>,
    pub cog: Vec<String>,
    pub gt: Vec<BTreeSet<String>>,
    /// (declared index, caption words) in appearance order.
    pub entries: Vec<(u32, Vec<String>)>,
}

const NOUNS: [&str; 10] = ["cat", "dog", "cup", "tree", "car", "boat", "lamp", "kite", "sofa", "fish"];
const FILLER: [&str; 6] = ["a", "the", "red", "small", "near", "two"];
const HEADERS: [&str; 3] = ["For Image", "for image", "FOR IMAGE"];

impl TinyInstance {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n_obj = rng.random_range(2..=6);
        let pool: Vec<&str> = NOUNS.choose_multiple(rng, n_obj + 2).copied().collect();
        let mut objects: Vec<String> = pool[..n_obj].iter().map(|s| s.to_string()).collect();
        // one two-word object whose head word is also an object
        if rng.random_bool(0.5) {
            objects.push(format!("{} house", objects[0]));
        }
        let cog = vec![pool[n_obj].to_string()];
        let synonyms = vec![(pool[n_obj + 1].to_string(), objects[1].clone())];
        let n = rng.random_range(1..=4);
        let gt = (0..n)
            .map(|_| {
                let mut set: BTreeSet<String> =
                    objects.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
                if set.is_empty() {
                    set.insert(objects.choose(rng).unwrap().clone());
                }
                set
            })
            .collect();
        let vocab: Vec<String> = objects
            .iter()
            .chain(&cog)
            .map(|s| s.to_string())
            .chain(synonyms.iter().map(|s| s.0.clone()))
            .chain(FILLER.iter().map(|s| s.to_string()))
            .chain(["house".to_string()])
            .collect();
        let n_entries = rng.random_range(0..=n + 2);
        let entries = (0..n_entries)
            .map(|_| {
                let k = rng.random_range(1..=n as u32 + 1);
                let len = rng.random_range(0..=5);
                let words = (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect();
                (k, words)
            })
            .collect();
        Self {
            objects,
            synonyms,
            cog,
            gt,
            entries,
        }
    }

    pub fn render<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        self.entries
            .iter()
            .map(|(k, words)| {
                let sep = if rng.random_bool(0.3) { "," } else { "" };
                format!("{} {k}: {}{sep}", HEADERS.choose(rng).unwrap(), words.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Canonical objects mentioned in `words`: at each position try every
/// surface form, take the longest match, then continue after it.
fn mentioned(inst: &TinyInstance, words: &[String]) -> BTreeSet<String> {
    let words: Vec<String> = words.iter().flat_map(|w| w.split(' ')).map(str::to_string).collect();
    let mut forms: Vec<(Vec<String>, String)> = Vec::new();
    for o in inst.objects.iter().chain(&inst.cog) {
        forms.push((o.split(' ').map(str::to_string).collect(), o.clone()));
    }
    for (s, c) in &inst.synonyms {
        forms.push((vec![s.clone()], c.clone()));
    }
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < words.len() {
        let best = forms
            .iter()
            .filter(|(f, _)| words[i..].starts_with(f))
            .max_by_key(|(f, _)| f.len());
        match best {
            Some((f, c)) => {
                out.insert(c.clone());
                i += f.len();
            }
            None => i += 1,
        }
    }
    out
}

pub struct OracleScores {
    pub chair: f64,
    pub hal: f64,
    pub cog: f64,
    pub scover: f64,
}

pub fn oracle_score(inst: &TinyInstance) -> OracleScores {
    let n = inst.gt.len();
    let mut first: BTreeMap<u32, &Vec<String>> = BTreeMap::new();
    for (k, words) in &inst.entries {
        first.entry(*k).or_insert(words);
    }
    let covered = (1..=n as u32)
        .filter(|k| first.get(k).is_some_and(|w| !w.is_empty()))
        .count();
    let empty = Vec::new();
    let (mut chair, mut hal, mut cog) = (0.0, 0.0, 0.0);
    for (i, gt) in inst.gt.iter().enumerate() {
        let k = i as u32 + 1;
        // declared caption, else the nearest declared index below, else nothing
        let words = (1..=k).rev().find_map(|j| first.get(&j).copied()).unwrap_or(&empty);
        let m = mentioned(inst, words);
        if m.is_empty() {
            continue;
        }
        let bad: Vec<&String> = m.iter().filter(|o| !gt.contains(*o)).collect();
        let imagined = bad.iter().filter(|o| inst.cog.contains(o)).count();
        chair += bad.len() as f64 / m.len() as f64;
        hal += if bad.is_empty() { 0.0 } else { 1.0 };
        cog += imagined as f64 / m.len() as f64;
    }
    let nf = n as f64;
    OracleScores {
        chair: chair / nf,
        hal: hal / nf,
        cog: cog / nf,
        scover: covered as f64 / nf,
    }
}
