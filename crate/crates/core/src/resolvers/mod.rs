//! Turning free-form completions into annotations.
//!
//! Two completion schemas are supported: one token per line with an IOB tag
//! and a group tag (`'Prozac', B-MEDICATION, 'entity_1'`), and fenced YAML
//! listing whole field texts per group. Both parse into [`ChunkEntity`]
//! values, which are then aligned back to the chunk text and lifted to
//! document offsets. Nothing here fails on malformed input; problems are
//! recorded in a [`ResolveLog`].

mod align;
mod direct;
mod iob;
mod lift;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::FieldType;

pub use self::align::{align_entity, AlignConfig, AlignMethod, Alignment};
pub use self::direct::parse_direct_output;
pub use self::iob::{assemble_iob_entities, parse_iob_output, IobTag, TokenTag};
pub use self::lift::to_document_annotations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolveKind {
    MalformedLine,
    YamlError,
    UnmatchedEntity,
    DuplicateField,
    EmptyAfterStrip,
    /// An `I-` tag with no open field of the same type; treated as `B-`.
    IobRepair,
}

impl fmt::Display for ResolveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ResolveKind::MalformedLine => "malformed-line",
            ResolveKind::YamlError => "yaml-error",
            ResolveKind::UnmatchedEntity => "unmatched-entity",
            ResolveKind::DuplicateField => "duplicate-field",
            ResolveKind::EmptyAfterStrip => "empty-after-strip",
            ResolveKind::IobRepair => "iob-repair",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveEvent {
    pub kind: ResolveKind,
    pub detail: String,
}

/// Append-only record of everything a resolver skipped or repaired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveLog {
    pub events: Vec<ResolveEvent>,
}

impl ResolveLog {
    pub fn push(&mut self, kind: ResolveKind, detail: impl Into<String>) {
        self.events.push(ResolveEvent {
            kind,
            detail: detail.into(),
        });
    }

    pub fn extend(&mut self, other: ResolveLog) {
        self.events.extend(other.events);
    }

    pub fn count(&self, kind: ResolveKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn counts(&self) -> BTreeMap<ResolveKind, usize> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            *out.entry(e.kind).or_insert(0) += 1;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Tag every event with its document and chunk for persistence.
    pub fn into_records(self, doc_id: &str, chunk_base: usize) -> Vec<LogRecord> {
        self.events
            .into_iter()
            .map(|e| LogRecord {
                doc_id: doc_id.to_string(),
                chunk_base,
                kind: e.kind,
                detail: e.detail,
            })
            .collect()
    }
}

/// One persisted resolve-log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub doc_id: String,
    pub chunk_base: usize,
    pub kind: ResolveKind,
    pub detail: String,
}

/// A field value produced by the model, with the position it claimed, if any
/// (chunk-local character offsets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityField {
    pub text: String,
    pub claimed_start: Option<usize>,
    pub claimed_end: Option<usize>,
}

impl EntityField {
    pub fn unclaimed(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            claimed_start: None,
            claimed_end: None,
        }
    }

    pub fn claimed(&self) -> Option<(usize, usize)> {
        match (self.claimed_start, self.claimed_end) {
            (Some(s), Some(e)) if s < e => Some((s, e)),
            _ => None,
        }
    }
}

/// One medication group as emitted for a chunk; at most one value per field
/// type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkEntity {
    pub group: String,
    pub fields: BTreeMap<FieldType, EntityField>,
}

impl ChunkEntity {
    pub fn new(group: impl Into<String>) -> Self {
        Self {
            group: group.into(),
            fields: BTreeMap::new(),
        }
    }

    /// Set a field unless it is already present; a rejected duplicate is
    /// logged and `false` returned.
    pub fn set_field(&mut self, field_type: FieldType, value: EntityField, log: &mut ResolveLog) -> bool {
        if let Some(existing) = self.fields.get(&field_type) {
            log.push(
                ResolveKind::DuplicateField,
                format!(
                    "group {}: {} {:?} already set to {:?}",
                    self.group, field_type, value.text, existing.text
                ),
            );
            return false;
        }
        self.fields.insert(field_type, value);
        true
    }

    pub fn text(&self, field_type: FieldType) -> Option<&str> {
        self.fields.get(&field_type).map(|f| f.text.as_str())
    }
}
