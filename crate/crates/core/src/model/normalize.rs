use thiserror::Error;

use super::{Document, FieldSpan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("span {start}..{end} is empty after stripping punctuation and whitespace")]
    EmptyAfterStrip { start: usize, end: usize },
    #[error("span {start}..{end} is out of bounds or does not match the document text")]
    InvalidSpan { start: usize, end: usize },
}

/// Characters removed from both ends of a span.
pub fn is_strip_char(c: char) -> bool {
    matches!(
        c,
        ' ' | '\t' | '.' | ',' | ';' | ':' | '!' | '?' | '\'' | '"' | '(' | ')' | '[' | ']' | '-'
    )
}

/// Strip leading and trailing spaces, tabs and punctuation from a span,
/// adjusting its offsets. Interior characters are left alone.
pub fn normalize_span(doc: &Document, span: &FieldSpan) -> Result<FieldSpan, NormalizeError> {
    let invalid = NormalizeError::InvalidSpan {
        start: span.start,
        end: span.end,
    };
    let text = doc.slice(span.start, span.end).ok_or(invalid.clone())?;
    if text != span.text {
        return Err(invalid);
    }

    let chars: Vec<char> = text.chars().collect();
    let lead = chars.iter().take_while(|c| is_strip_char(**c)).count();
    if lead == chars.len() {
        return Err(NormalizeError::EmptyAfterStrip {
            start: span.start,
            end: span.end,
        });
    }
    let trail = chars.iter().rev().take_while(|c| is_strip_char(**c)).count();

    let start = span.start + lead;
    let end = span.end - trail;
    Ok(FieldSpan {
        field_type: span.field_type,
        start,
        end,
        text: chars[lead..chars.len() - trail].iter().collect(),
    })
}
