use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Canonical objects, surface-form synonyms and the commonly-imagined targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSpec {
    pub objects: BTreeSet<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
    #[serde(default)]
    pub cog_targets: BTreeSet<String>,
}

/// A lexicon compiled for greedy longest-match extraction.
#[derive(Debug, Clone)]
pub struct ObjectLexicon {
    spec: LexiconSpec,
    surface: HashMap<String, String>,
    max_words: usize,
}

/// Lowercases, turns every non-alphanumeric character into a separator and
/// splits on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

impl ObjectLexicon {
    pub fn new(spec: LexiconSpec) -> Result<Self, MetricsError> {
        let known: BTreeSet<&String> = spec.objects.iter().chain(&spec.cog_targets).collect();
        for (form, canonical) in &spec.synonyms {
            if !known.contains(canonical) {
                return Err(MetricsError::Lexicon(format!(
                    "synonym {form:?} maps to unknown object {canonical:?}"
                )));
            }
        }
        let mut surface = HashMap::new();
        let canonical_forms = spec.objects.iter().chain(&spec.cog_targets).map(|o| (o, o));
        for (form, canonical) in canonical_forms.chain(spec.synonyms.iter()) {
            let key = normalize_tokens(form).join(" ");
            if key.is_empty() {
                return Err(MetricsError::Lexicon(format!("empty surface form {form:?}")));
            }
            surface.insert(key, canonical.clone());
        }
        let max_words = surface.keys().map(|k| k.split(' ').count()).max().unwrap_or(0);
        Ok(Self {
            spec,
            surface,
            max_words,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: LexiconSpec = serde_json::from_str(&text).map_err(|e| MetricsError::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(spec)
    }

    pub fn spec(&self) -> &LexiconSpec {
        &self.spec
    }

    pub fn objects(&self) -> &BTreeSet<String> {
        &self.spec.objects
    }

    pub fn cog_targets(&self) -> &BTreeSet<String> {
        &self.spec.cog_targets
    }

    /// Canonical objects mentioned in a caption.
    ///
    /// Scans left to right and takes the longest lexicon phrase starting at
    /// each position, so "fire hydrant" wins over "fire".
    pub fn extract_objects(&self, caption: &str) -> BTreeSet<String> {
        let tokens = normalize_tokens(caption);
        let mut found = BTreeSet::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_words.min(tokens.len() - i))
                .rev()
                .find_map(|len| {
                    self.surface
                        .get(&tokens[i..i + len].join(" "))
                        .map(|c| (len, c))
                });
            match longest {
                Some((len, canonical)) => {
                    found.insert(canonical.clone());
                    i += len;
                }
                None => i += 1,
            }
        }
        found
    }
}
