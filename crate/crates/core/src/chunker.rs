//! Splitting documents into prompt-sized chunks at textual breaks.

use serde::{Deserialize, Serialize};

use crate::model::Document;

/// Default chunk length for the IOB-token schema, in characters.
pub const DEFAULT_IOB_CHUNK: usize = 250;
/// Default chunk length for the direct-chunk schema, in characters.
pub const DEFAULT_DIRECT_CHUNK: usize = 180;

/// A contiguous slice of a document. `base` is the character offset of the
/// chunk's first character in the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub base: usize,
    pub text: String,
}

impl Chunk {
    pub fn new(doc_id: impl Into<String>, base: usize, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            base,
            text: text.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Break-delimited segments as `(start, end)` character ranges. A segment
/// ends after a newline, or after the whitespace character following a
/// sentence ender (`.`, `!`, `?`).
fn segments(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let c = chars[i];
        let split = c == '\n' || (c.is_whitespace() && i > 0 && matches!(chars[i - 1], '.' | '!' | '?'));
        if split {
            out.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < chars.len() {
        out.push((start, chars.len()));
    }
    out
}

/// Greedily pack whole segments into chunks of at most `max_len` characters.
/// Segments longer than `max_len` are hard-split. The chunk texts concatenate
/// back to the document text exactly.
///
/// # Panics
/// If `max_len` is zero.
pub fn chunk_document(doc: &Document, max_len: usize) -> Vec<Chunk> {
    assert!(max_len >= 1, "chunk size must be positive");
    let chars: Vec<char> = doc.text.chars().collect();
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut cur: Option<(usize, usize)> = None;

    for (s, e) in segments(&chars) {
        match cur {
            Some((cs, ce)) if e - cs <= max_len => {
                debug_assert_eq!(ce, s);
                cur = Some((cs, e));
                continue;
            }
            Some(range) => ranges.push(range),
            None => {}
        }
        let mut s = s;
        while e - s > max_len {
            ranges.push((s, s + max_len));
            s += max_len;
        }
        cur = Some((s, e));
    }
    ranges.extend(cur);

    ranges
        .into_iter()
        .map(|(s, e)| Chunk::new(doc.doc_id.clone(), s, chars[s..e].iter().collect::<String>()))
        .collect()
}
