//! Structured multi-image response grammar.
//!
//! Responses describe each image under an explicit header:
//!
//! ```text
//! For Image 1: <caption 1> For Image 2: <caption 2> ...
//! For the marked area of Image 1: <caption 1> ...
//! ```
//!
//! Parsing is total. Malformed model output never fails; it yields
//! diagnostics (missing, duplicate, out-of-range and empty indices) that the
//! evaluator turns into penalties. Captions are always matched to images by
//! their declared index, never by position in the text.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while serializing a caption list.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("cannot serialize an empty caption list")]
    Empty,
    #[error("image index must be >= 1")]
    ZeroIndex,
    #[error("duplicate image index {0} in caption list")]
    DuplicateIndex(u32),
    #[error("caption for image {0} embeds a caption header")]
    EmbeddedHeader(u32),
}

/// One caption bound to a declared image index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedCaption {
    pub image_index: u32,
    pub text: String,
    pub marked_area: bool,
    /// Set only when the caption was inserted by [`pad_missing`].
    pub padded: bool,
}

/// Result of parsing a structured response, with diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCaptions {
    /// Captions in order of appearance; a repeated index keeps its first occurrence only.
    pub captions: Vec<IndexedCaption>,
    pub expected_n: usize,
    /// Header style the caller asked for.
    pub marked_area: bool,
    /// Indices in `1..=expected_n` with no header.
    pub missing_indices: BTreeSet<u32>,
    /// Indices declared more than once.
    pub duplicate_indices: BTreeSet<u32>,
    /// Declared indices above `expected_n`.
    pub extra_indices: BTreeSet<u32>,
    /// Declared indices whose caption text is empty.
    pub empty_indices: BTreeSet<u32>,
    /// Headers of the other style (plain vs marked-area) than requested.
    pub foreign_headers: usize,
    /// True iff appearance order differs from ascending index order.
    pub out_of_order: bool,
}

impl ParsedCaptions {
    /// Caption text for a declared index.
    pub fn text_for(&self, index: u32) -> Option<&str> {
        self.captions
            .iter()
            .find(|c| c.image_index == index)
            .map(|c| c.text.as_str())
    }

    pub fn declared_indices(&self) -> BTreeSet<u32> {
        self.captions.iter().map(|c| c.image_index).collect()
    }

    /// No structural diagnostics at all.
    pub fn is_clean(&self) -> bool {
        self.missing_indices.is_empty()
            && self.duplicate_indices.is_empty()
            && self.extra_indices.is_empty()
            && self.empty_indices.is_empty()
            && self.foreign_headers == 0
            && !self.out_of_order
    }

    /// `(index, text)` pairs in appearance order.
    pub fn to_pairs(&self) -> Vec<(u32, String)> {
        self.captions
            .iter()
            .map(|c| (c.image_index, c.text.clone()))
            .collect()
    }
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bfor\s+(the\s+marked\s+area\s+of\s+)?image\s*(\d+)\s*:")
            .expect("header regex compiles")
    })
}

struct Header {
    start: usize,
    end: usize,
    index: u32,
    marked: bool,
}

fn find_headers(text: &str) -> Vec<Header> {
    header_regex()
        .captures_iter(text)
        .filter_map(|caps| {
            let whole = caps.get(0)?;
            let index: u32 = caps.get(2)?.as_str().parse().ok()?;
            if index == 0 {
                return None;
            }
            Some(Header {
                start: whole.start(),
                end: whole.end(),
                index,
                marked: caps.get(1).is_some(),
            })
        })
        .collect()
}

/// True if `text` contains a substring that parses as a caption header.
pub fn contains_header(text: &str) -> bool {
    !find_headers(text).is_empty()
}

/// The header string for an index in the requested style.
pub fn header(index: u32, marked_area: bool) -> String {
    if marked_area {
        format!("For the marked area of Image {index}:")
    } else {
        format!("For Image {index}:")
    }
}

/// Parses a structured multi-image response.
///
/// Both header styles split captions. Text before the first header is
/// ignored, an enclosing `[...]` is tolerated, and one trailing comma per
/// entry is treated as a separator.
pub fn parse_sequence(text: &str, expected_n: usize, marked_area: bool) -> ParsedCaptions {
    let mut body = text.trim();
    let bracketed = body.starts_with('[');
    if bracketed {
        body = &body[1..];
    }

    let headers = find_headers(body);
    let mut captions: Vec<IndexedCaption> = Vec::with_capacity(headers.len());
    let mut seen = BTreeSet::new();
    let mut duplicate_indices = BTreeSet::new();
    let mut foreign_headers = 0;

    for (i, h) in headers.iter().enumerate() {
        let is_last = i + 1 == headers.len();
        let stop = headers.get(i + 1).map_or(body.len(), |next| next.start);
        let mut caption = body[h.end..stop].trim();
        if is_last && bracketed {
            caption = caption.strip_suffix(']').unwrap_or(caption).trim_end();
        }
        caption = caption.strip_suffix(',').unwrap_or(caption).trim_end();

        if h.marked != marked_area {
            foreign_headers += 1;
        }
        if !seen.insert(h.index) {
            duplicate_indices.insert(h.index);
            continue;
        }
        captions.push(IndexedCaption {
            image_index: h.index,
            text: caption.to_string(),
            marked_area: h.marked,
            padded: false,
        });
    }

    let mut parsed = ParsedCaptions {
        captions,
        expected_n,
        marked_area,
        missing_indices: BTreeSet::new(),
        duplicate_indices,
        extra_indices: BTreeSet::new(),
        empty_indices: BTreeSet::new(),
        foreign_headers,
        out_of_order: false,
    };
    refresh_diagnostics(&mut parsed);
    parsed
}

fn refresh_diagnostics(parsed: &mut ParsedCaptions) {
    let declared = parsed.declared_indices();
    parsed.missing_indices = (1..=parsed.expected_n as u32)
        .filter(|k| !declared.contains(k))
        .collect();
    parsed.extra_indices = declared
        .iter()
        .copied()
        .filter(|&k| k as usize > parsed.expected_n)
        .collect();
    parsed.empty_indices = parsed
        .captions
        .iter()
        .filter(|c| c.text.is_empty() && !c.padded)
        .map(|c| c.image_index)
        .collect();
    parsed.out_of_order = parsed
        .captions
        .windows(2)
        .any(|w| w[1].image_index < w[0].image_index);
}

/// Serializes `(index, text)` entries in the given order.
pub fn serialize_sequence(
    captions: &[(u32, String)],
    marked_area: bool,
) -> Result<String, SchemaError> {
    if captions.is_empty() {
        return Err(SchemaError::Empty);
    }
    let mut seen = BTreeSet::new();
    let mut out = String::new();
    for (index, text) in captions {
        if *index == 0 {
            return Err(SchemaError::ZeroIndex);
        }
        if !seen.insert(*index) {
            return Err(SchemaError::DuplicateIndex(*index));
        }
        if contains_header(text) {
            return Err(SchemaError::EmbeddedHeader(*index));
        }
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{} {}", header(*index, marked_area), text);
    }
    Ok(out)
}

/// Fills every index in `1..=expected_n` that has no caption.
///
/// A padded caption copies the text of the nearest preceding present index,
/// or is empty when nothing precedes it. The result is sorted by index.
pub fn pad_missing(parsed: &ParsedCaptions) -> ParsedCaptions {
    let mut out = parsed.clone();
    let declared = out.declared_indices();
    for k in 1..=out.expected_n as u32 {
        if declared.contains(&k) {
            continue;
        }
        let text = declared
            .range(..k)
            .next_back()
            .and_then(|prev| parsed.text_for(*prev))
            .unwrap_or("")
            .to_string();
        out.captions.push(IndexedCaption {
            image_index: k,
            text,
            marked_area: out.marked_area,
            padded: true,
        });
    }
    out.captions.sort_by_key(|c| c.image_index);
    refresh_diagnostics(&mut out);
    out
}
