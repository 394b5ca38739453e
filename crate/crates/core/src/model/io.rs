//! JSON Lines persistence and gold-corpus import.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    normalize_span, AnnotationSet, Document, EntryContext, FieldSpan, FieldType, MedicationEntry, NormalizeError,
    Source,
};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("{}:{line}: {message}", file.display())]
    Format {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: {detail}", file.display())]
    Offset { file: PathBuf, line: usize, detail: String },
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocument(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImportError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ImportError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Canonical JSON Lines: one document per line with inline annotations.
    Jsonl,
    /// Directory of `<id>.txt` notes with i2b2 medication label files.
    I2b2,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "i2b2" => Ok(CorpusFormat::I2b2),
            _ => Err(format!("unknown corpus format `{s}` (expected jsonl or i2b2)")),
        }
    }
}

/// Result of a gold-corpus import.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub documents: Vec<Document>,
    pub sets: Vec<AnnotationSet>,
    pub dropped_discontinuous: usize,
    pub dropped_empty: usize,
}

/// Import documents and gold annotations, normalizing every span.
pub fn import_gold_corpus(path: &Path, format: CorpusFormat) -> Result<ImportReport, ImportError> {
    let report = match format {
        CorpusFormat::Jsonl => read_gold_jsonl(path)?,
        CorpusFormat::I2b2 => super::i2b2::import_dir(path)?,
    };
    if report.dropped_discontinuous > 0 {
        log::info!(
            "dropped {} discontinuous gold fields from {}",
            report.dropped_discontinuous,
            path.display()
        );
    }
    if report.dropped_empty > 0 {
        log::info!(
            "dropped {} gold fields that were empty after normalization",
            report.dropped_empty
        );
    }
    Ok(report)
}

/// A field as read from a source file, before normalization.
#[derive(Debug, Clone)]
pub(crate) struct RawField {
    pub field_type: FieldType,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub discontinuous: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct RawEntry {
    pub entry_id: String,
    pub context: Option<EntryContext>,
    pub fields: Vec<RawField>,
}

/// Build a normalized gold set; `file` and `line` locate errors.
pub(crate) fn build_gold_set(
    doc: &Document,
    entries: Vec<RawEntry>,
    orphans: Vec<RawField>,
    report: &mut ImportReport,
    file: &Path,
    line: usize,
) -> Result<AnnotationSet, ImportError> {
    let mut set = AnnotationSet::new(doc.doc_id.clone(), Source::Gold);
    let mut add = |set: &mut AnnotationSet, field: RawField| -> Result<Option<_>, ImportError> {
        if field.discontinuous {
            report.dropped_discontinuous += 1;
            return Ok(None);
        }
        let span = FieldSpan {
            field_type: field.field_type,
            start: field.start,
            end: field.end,
            text: field.text,
        };
        match normalize_span(doc, &span) {
            Ok(clean) => Ok(Some(set.insert_span(clean))),
            Err(NormalizeError::EmptyAfterStrip { .. }) => {
                log::warn!(
                    "{}: dropping {} span {}..{} (empty after normalization)",
                    doc.doc_id,
                    span.field_type,
                    span.start,
                    span.end
                );
                report.dropped_empty += 1;
                Ok(None)
            }
            Err(NormalizeError::InvalidSpan { .. }) => Err(ImportError::Offset {
                file: file.to_path_buf(),
                line,
                detail: format!(
                    "{}: {} span {}..{} text {:?} does not match document text {:?}",
                    doc.doc_id,
                    span.field_type,
                    span.start,
                    span.end,
                    span.text,
                    doc.slice(span.start, span.end).unwrap_or("<out of bounds>")
                ),
            }),
        }
    };

    for raw in entries {
        let mut entry = MedicationEntry::new(raw.entry_id);
        entry.context = raw.context;
        for field in raw.fields {
            if let Some(key) = add(&mut set, field)? {
                entry.push_field(key);
            }
        }
        set.entries.push(entry);
    }
    for field in orphans {
        add(&mut set, field)?;
    }
    Ok(set)
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldFieldWire {
    field_type: FieldType,
    start: usize,
    end: usize,
    text: String,
    /// Multiple `[start, end)` pieces mark a discontinuous field.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    segments: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldEntryWire {
    entry_id: String,
    #[serde(default)]
    fields: Vec<GoldFieldWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context: Option<EntryContext>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldLineWire {
    doc_id: String,
    text: String,
    #[serde(default)]
    entries: Vec<GoldEntryWire>,
    #[serde(default)]
    orphans: Vec<GoldFieldWire>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

impl From<GoldFieldWire> for RawField {
    fn from(w: GoldFieldWire) -> Self {
        RawField {
            field_type: w.field_type,
            start: w.start,
            end: w.end,
            text: w.text,
            discontinuous: w.segments.len() > 1,
        }
    }
}

impl From<&FieldSpan> for GoldFieldWire {
    fn from(s: &FieldSpan) -> Self {
        GoldFieldWire {
            field_type: s.field_type,
            start: s.start,
            end: s.end,
            text: s.text.clone(),
            segments: Vec::new(),
        }
    }
}

/// Read the canonical combined format: one document per line with its gold
/// entries and orphans inline.
pub fn read_gold_jsonl(path: &Path) -> Result<ImportReport, ImportError> {
    let lines: Vec<(usize, GoldLineWire)> = read_jsonl_lines(path)?;
    let mut report = ImportReport::default();
    let mut ids = HashSet::new();
    for (line, wire) in lines {
        if !ids.insert(wire.doc_id.clone()) {
            return Err(ImportError::DuplicateDocument(wire.doc_id));
        }
        let doc = Document::new(wire.doc_id, wire.text);
        let entries = wire
            .entries
            .into_iter()
            .map(|e| RawEntry {
                entry_id: e.entry_id,
                context: e.context,
                fields: e.fields.into_iter().map(Into::into).collect(),
            })
            .collect();
        let orphans = wire.orphans.into_iter().map(Into::into).collect();
        let mut set = build_gold_set(&doc, entries, orphans, &mut report, path, line)?;
        set.meta = wire.meta;
        report.documents.push(doc);
        report.sets.push(set);
    }
    Ok(report)
}

/// Write documents with their gold sets in the combined format.
pub fn write_gold_jsonl(path: &Path, documents: &[Document], sets: &[AnnotationSet]) -> std::io::Result<()> {
    let by_doc: BTreeMap<&str, &AnnotationSet> = sets.iter().map(|s| (s.doc_id.as_str(), s)).collect();
    let mut buf = Vec::new();
    for doc in documents {
        let set = by_doc.get(doc.doc_id.as_str());
        let wire = GoldLineWire {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            entries: set
                .map(|s| {
                    s.entries
                        .iter()
                        .map(|e| GoldEntryWire {
                            entry_id: e.entry_id.clone(),
                            fields: e.fields.iter().filter_map(|k| s.span(k)).map(Into::into).collect(),
                            context: e.context,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            orphans: set
                .map(|s| s.orphans().into_iter().map(Into::into).collect())
                .unwrap_or_default(),
            meta: set.map(|s| s.meta.clone()).unwrap_or_default(),
        };
        serde_json::to_writer(&mut buf, &wire)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Read a corpus file: one `{"doc_id", "text"}` object per line.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>, ImportError> {
    let lines: Vec<(usize, Document)> = read_jsonl_lines(path)?;
    let mut ids = HashSet::new();
    let mut docs = Vec::with_capacity(lines.len());
    for (line, doc) in lines {
        if doc.doc_id.is_empty() {
            return Err(ImportError::Format {
                file: path.to_path_buf(),
                line,
                message: "empty doc_id".into(),
            });
        }
        if !ids.insert(doc.doc_id.clone()) {
            return Err(ImportError::DuplicateDocument(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, documents: &[Document]) -> std::io::Result<()> {
    write_jsonl(path, documents)
}

pub fn read_annotation_sets(path: &Path) -> Result<Vec<AnnotationSet>, ImportError> {
    Ok(read_jsonl_lines(path)?.into_iter().map(|(_, s)| s).collect())
}

pub fn write_annotation_sets(path: &Path, sets: &[AnnotationSet]) -> std::io::Result<()> {
    write_jsonl(path, sets)
}

/// Serialize `items` one per line and write them atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

pub fn read_jsonl_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, ImportError> {
    let file = fs::File::open(path).map_err(|e| ImportError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ImportError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| ImportError::Format {
            file: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Write to a sibling temporary file, sync it, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
