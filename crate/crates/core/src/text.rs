//! Text normalization shared by deduplication, distractor checks and
//! exact-match scoring.

use serde::{Deserialize, Serialize};

/// Maps full-width ASCII variants (U+FF01..=U+FF5E) and the ideographic
/// space to their half-width forms.
pub fn fold_width(c: char) -> char {
    match c {
        '\u{3000}' => ' ',
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
        _ => c,
    }
}

/// Trim, collapse internal whitespace runs to a single space, fold width.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars().map(fold_width) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out
}

/// Options for comparing a generated answer against a gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchNormalizer {
    pub trim: bool,
    pub case_fold: bool,
    pub width_fold: bool,
}

impl Default for MatchNormalizer {
    fn default() -> Self {
        MatchNormalizer {
            trim: true,
            case_fold: true,
            width_fold: true,
        }
    }
}

impl MatchNormalizer {
    pub fn apply(&self, s: &str) -> String {
        let folded: String = if self.width_fold {
            s.chars().map(fold_width).collect()
        } else {
            s.to_owned()
        };
        let trimmed = if self.trim { folded.trim() } else { &folded[..] };
        if self.case_fold {
            trimmed.to_lowercase()
        } else {
            trimmed.to_owned()
        }
    }
}
