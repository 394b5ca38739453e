//! Documents, field spans, medication entries and annotation sets.
//!
//! Offsets everywhere are character offsets (Unicode scalar values), half-open
//! `[start, end)`, relative to the document text.

mod i2b2;
mod io;
mod normalize;
mod timing;
mod validate;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::io::{
    atomic_write, import_gold_corpus, read_annotation_sets, read_corpus, read_gold_jsonl, read_jsonl_lines,
    write_annotation_sets, write_corpus, write_gold_jsonl, write_jsonl, CorpusFormat, ImportError, ImportReport,
};
pub use self::normalize::{is_strip_char, normalize_span, NormalizeError};
pub use self::timing::{TimerKind, TimingError, TimingEvent, TimingRecord};
pub use self::validate::{entry_flags, validate_annotation_set, EntryFlag, Violation};

/// A clinical note. The text is kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }

    /// Length in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Text of the character range `[start, end)`, or `None` when out of bounds.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        char_slice(&self.text, start, end)
    }
}

/// Slice `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}

/// Medication field types. `Reason` is carried through the pipeline but is not
/// scored unless explicitly requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Name,
    Dose,
    Mode,
    Frequency,
    Duration,
    Reason,
}

impl FieldType {
    pub const ALL: [FieldType; 6] = [
        FieldType::Name,
        FieldType::Dose,
        FieldType::Mode,
        FieldType::Frequency,
        FieldType::Duration,
        FieldType::Reason,
    ];

    /// Field types scored by default.
    pub const SCORING: [FieldType; 5] = [
        FieldType::Name,
        FieldType::Dose,
        FieldType::Mode,
        FieldType::Frequency,
        FieldType::Duration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FieldType::Name => "name",
            FieldType::Dose => "dose",
            FieldType::Mode => "mode",
            FieldType::Frequency => "frequency",
            FieldType::Duration => "duration",
            FieldType::Reason => "reason",
        }
    }

    pub fn is_default_scoring(self) -> bool {
        self != FieldType::Reason
    }

    /// Map a label as written by a model or an annotation tool
    /// (`MEDICATION`, `DOSE`, `medication_name`, ...) to a field type.
    pub fn from_label(label: &str) -> Option<Self> {
        let upper = label.trim().to_ascii_uppercase();
        let ft = match upper.as_str() {
            "MEDICATION" | "MEDICATION_NAME" | "NAME" | "DRUG" | "M" => FieldType::Name,
            "DOSE" | "DOSAGE" | "DO" => FieldType::Dose,
            "MODE" | "ROUTE" | "MO" => FieldType::Mode,
            "FREQUENCY" | "F" => FieldType::Frequency,
            "DURATION" | "DU" => FieldType::Duration,
            "REASON" | "R" => FieldType::Reason,
            _ => return None,
        };
        Some(ft)
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldType::ALL
            .into_iter()
            .find(|ft| ft.as_str() == s)
            .ok_or_else(|| format!("unknown field type `{s}`"))
    }
}

/// Identity of a span within an annotation set: type plus offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanKey {
    pub field_type: FieldType,
    pub start: usize,
    pub end: usize,
}

impl SpanKey {
    pub fn new(field_type: FieldType, start: usize, end: usize) -> Self {
        Self { field_type, start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of characters shared with `other`, regardless of type.
    pub fn overlap(&self, other: &SpanKey) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

/// A typed, contiguous character span of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpan {
    pub field_type: FieldType,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl FieldSpan {
    /// Build a span whose text is taken from the document.
    pub fn from_doc(doc: &Document, field_type: FieldType, start: usize, end: usize) -> Option<Self> {
        let text = doc.slice(start, end)?.to_string();
        Some(Self {
            field_type,
            start,
            end,
            text,
        })
    }

    pub fn key(&self) -> SpanKey {
        SpanKey::new(self.field_type, self.start, self.end)
    }
}

/// Narrative vs. list context of a medication mention, when the source corpus
/// records it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryContext {
    Narrative,
    List,
}

/// A medication entry: the fields linked to one medication mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedicationEntry {
    pub entry_id: String,
    /// References into the owning set's span table.
    pub fields: Vec<SpanKey>,
    pub context: Option<EntryContext>,
}

impl MedicationEntry {
    pub fn new(entry_id: impl Into<String>) -> Self {
        Self {
            entry_id: entry_id.into(),
            fields: Vec::new(),
            context: None,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &SpanKey> {
        self.fields.iter().filter(|k| k.field_type == FieldType::Name)
    }

    /// Add a reference unless the entry already holds it.
    pub fn push_field(&mut self, key: SpanKey) {
        if !self.fields.contains(&key) {
            self.fields.push(key);
        }
    }
}

/// Producer of an annotation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Gold,
    RaterBase,
    LlmIob,
    LlmDirect,
    LlmEnsemble,
    Refined,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::Gold,
        Source::RaterBase,
        Source::LlmIob,
        Source::LlmDirect,
        Source::LlmEnsemble,
        Source::Refined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Gold => "gold",
            Source::RaterBase => "rater-base",
            Source::LlmIob => "llm-iob",
            Source::LlmDirect => "llm-direct",
            Source::LlmEnsemble => "llm-ensemble",
            Source::Refined => "refined",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown source `{s}`"))
    }
}

/// All annotations one source produced for one document.
///
/// Spans live in a single table; entries refer to them by [`SpanKey`]. Spans
/// not referenced by any entry are the set's orphans.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub doc_id: String,
    pub source: Source,
    pub spans: Vec<FieldSpan>,
    pub entries: Vec<MedicationEntry>,
    pub timing: Option<TimingRecord>,
    pub meta: BTreeMap<String, String>,
}

impl AnnotationSet {
    pub fn new(doc_id: impl Into<String>, source: Source) -> Self {
        Self {
            doc_id: doc_id.into(),
            source,
            spans: Vec::new(),
            entries: Vec::new(),
            timing: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn span(&self, key: &SpanKey) -> Option<&FieldSpan> {
        self.spans.iter().find(|s| s.key() == *key)
    }

    pub fn contains(&self, key: &SpanKey) -> bool {
        self.spans.iter().any(|s| s.key() == *key)
    }

    /// Insert a span unless an identical (type, start, end) one is present.
    /// Returns the key either way. The table stays ordered by position.
    pub fn insert_span(&mut self, span: FieldSpan) -> SpanKey {
        let key = span.key();
        let pos = |s: &FieldSpan| (s.start, s.end, s.field_type);
        if let Err(idx) = self.spans.binary_search_by(|s| pos(s).cmp(&pos(&span))) {
            self.spans.insert(idx, span);
        }
        key
    }

    /// Remove a span from the table, leaving entry references untouched.
    pub fn remove_span(&mut self, key: &SpanKey) -> Option<FieldSpan> {
        let idx = self.spans.iter().position(|s| s.key() == *key)?;
        Some(self.spans.remove(idx))
    }

    /// Spans not referenced by any entry, in table order.
    pub fn orphans(&self) -> Vec<&FieldSpan> {
        let referenced: HashSet<SpanKey> = self.entries.iter().flat_map(|e| e.fields.iter().copied()).collect();
        self.spans.iter().filter(|s| !referenced.contains(&s.key())).collect()
    }

    pub fn span_keys(&self) -> impl Iterator<Item = SpanKey> + '_ {
        self.spans.iter().map(FieldSpan::key)
    }

    /// Indices of the entries that reference `key`.
    pub fn memberships(&self, key: &SpanKey) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.fields.contains(key))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

// Wire format: entries carry their fields inline.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EntryWire {
    pub entry_id: String,
    #[serde(default)]
    pub fields: Vec<FieldSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<EntryContext>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct AnnotationSetWire {
    pub doc_id: String,
    pub source: Source,
    #[serde(default)]
    pub entries: Vec<EntryWire>,
    #[serde(default)]
    pub orphans: Vec<FieldSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingRecord>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl From<&AnnotationSet> for AnnotationSetWire {
    fn from(set: &AnnotationSet) -> Self {
        let entries = set
            .entries
            .iter()
            .map(|e| EntryWire {
                entry_id: e.entry_id.clone(),
                // dangling references have no text to write and are dropped
                fields: e.fields.iter().filter_map(|k| set.span(k).cloned()).collect(),
                context: e.context,
            })
            .collect();
        Self {
            doc_id: set.doc_id.clone(),
            source: set.source,
            entries,
            orphans: set.orphans().into_iter().cloned().collect(),
            timing: set.timing.clone(),
            meta: set.meta.clone(),
        }
    }
}

impl From<AnnotationSetWire> for AnnotationSet {
    fn from(wire: AnnotationSetWire) -> Self {
        let mut set = AnnotationSet::new(wire.doc_id, wire.source);
        set.timing = wire.timing;
        set.meta = wire.meta;
        for e in wire.entries {
            let mut entry = MedicationEntry::new(e.entry_id);
            entry.context = e.context;
            for span in e.fields {
                let key = set.insert_span(span);
                entry.push_field(key);
            }
            set.entries.push(entry);
        }
        for span in wire.orphans {
            set.insert_span(span);
        }
        set
    }
}

impl Serialize for AnnotationSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        AnnotationSetWire::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AnnotationSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        AnnotationSetWire::deserialize(deserializer).map(Into::into)
    }
}
