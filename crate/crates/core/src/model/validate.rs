use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AnnotationSet, Document, FieldType, SpanKey};

/// A broken invariant in an annotation set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    DocMismatch {
        expected: String,
        found: String,
    },
    Offset {
        field_type: FieldType,
        start: usize,
        end: usize,
        text_len: usize,
    },
    TextMismatch {
        field_type: FieldType,
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },
    DanglingReference {
        entry_id: String,
        field_type: FieldType,
        start: usize,
        end: usize,
    },
    DuplicateSpan {
        field_type: FieldType,
        start: usize,
        end: usize,
    },
    DuplicateEntryId {
        entry_id: String,
    },
}

/// Report every invariant violation of `set` against `doc`. An empty list
/// means the set is well-formed.
pub fn validate_annotation_set(doc: &Document, set: &AnnotationSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.doc_id != doc.doc_id {
        out.push(Violation::DocMismatch {
            expected: doc.doc_id.clone(),
            found: set.doc_id.clone(),
        });
    }

    let text_len = doc.char_len();
    let mut seen = HashSet::new();
    for span in &set.spans {
        let key = span.key();
        if !seen.insert(key) {
            out.push(Violation::DuplicateSpan {
                field_type: key.field_type,
                start: key.start,
                end: key.end,
            });
            continue;
        }
        if span.start >= span.end || span.end > text_len {
            out.push(Violation::Offset {
                field_type: span.field_type,
                start: span.start,
                end: span.end,
                text_len,
            });
            continue;
        }
        let found = doc.slice(span.start, span.end).unwrap_or_default();
        if found != span.text {
            out.push(Violation::TextMismatch {
                field_type: span.field_type,
                start: span.start,
                end: span.end,
                expected: found.to_string(),
                found: span.text.clone(),
            });
        }
    }

    let mut ids = HashSet::new();
    for entry in &set.entries {
        if !ids.insert(entry.entry_id.as_str()) {
            out.push(Violation::DuplicateEntryId {
                entry_id: entry.entry_id.clone(),
            });
        }
        for key in &entry.fields {
            if !seen.contains(key) {
                out.push(Violation::DanglingReference {
                    entry_id: entry.entry_id.clone(),
                    field_type: key.field_type,
                    start: key.start,
                    end: key.end,
                });
            }
        }
    }
    out
}

/// Conditions worth surfacing on an otherwise valid entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntryFlag {
    MissingName { entry_id: String },
    RepeatedFieldType { entry_id: String, field_type: FieldType },
}

pub fn entry_flags(set: &AnnotationSet) -> Vec<EntryFlag> {
    let mut out = Vec::new();
    for entry in &set.entries {
        if entry.names().next().is_none() {
            out.push(EntryFlag::MissingName {
                entry_id: entry.entry_id.clone(),
            });
        }
        let mut types = HashSet::new();
        let mut reported = HashSet::new();
        for SpanKey { field_type, .. } in &entry.fields {
            if !types.insert(*field_type) && reported.insert(*field_type) {
                out.push(EntryFlag::RepeatedFieldType {
                    entry_id: entry.entry_id.clone(),
                    field_type: *field_type,
                });
            }
        }
    }
    out
}
