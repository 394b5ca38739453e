//! Best-effort reader for i2b2 2009 medication label files.
//!
//! A label line looks like
//! `m="lasix" 3:2 3:2||do="40 mg" 3:3 3:4||mo="nm"||f="bid" 3:5 3:5||du="nm"||r="nm"||ln="list"`
//! where offsets are `line:token` pairs (1-based lines, 0-based whitespace
//! tokens, inclusive end token). Several comma-separated offset pairs mark a
//! discontinuous field.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;

use super::io::{build_gold_set, ImportError, ImportReport, RawEntry, RawField};
use super::{Document, EntryContext, FieldType};

static FIELD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^\s*([a-z]+)\s*=\s*"(.*)"\s*(.*?)\s*$"#).unwrap());
static OFFSET_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+):(\d+)\s+(\d+):(\d+)$").unwrap());

const LABEL_SUFFIXES: [&str; 3] = ["i2b2.entries", "i2b2", "entries"];

/// Character offsets of whitespace tokens, per line.
struct TokenGrid {
    lines: Vec<Vec<(usize, usize)>>,
}

impl TokenGrid {
    fn new(text: &str) -> Self {
        let mut lines = vec![Vec::new()];
        let mut tok_start: Option<usize> = None;
        let mut pos = 0;
        for c in text.chars() {
            if c.is_whitespace() {
                if let Some(s) = tok_start.take() {
                    lines.last_mut().unwrap().push((s, pos));
                }
                if c == '\n' {
                    lines.push(Vec::new());
                }
            } else if tok_start.is_none() {
                tok_start = Some(pos);
            }
            pos += 1;
        }
        if let Some(s) = tok_start {
            lines.last_mut().unwrap().push((s, pos));
        }
        Self { lines }
    }

    fn token(&self, line: usize, token: usize) -> Option<(usize, usize)> {
        self.lines.get(line.checked_sub(1)?)?.get(token).copied()
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn field_type_for(key: &str) -> Option<FieldType> {
    match key {
        "m" => Some(FieldType::Name),
        "do" => Some(FieldType::Dose),
        "mo" => Some(FieldType::Mode),
        "f" => Some(FieldType::Frequency),
        "du" => Some(FieldType::Duration),
        "r" => Some(FieldType::Reason),
        _ => None,
    }
}

pub(crate) fn parse_label_file(
    doc: &Document,
    labels: &str,
    file: &Path,
) -> Result<Vec<(usize, RawEntry)>, ImportError> {
    let grid = TokenGrid::new(&doc.text);
    let mut out = Vec::new();
    for (idx, line) in labels.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| ImportError::Format {
            file: file.to_path_buf(),
            line: lineno,
            message,
        };
        let mut entry = RawEntry {
            entry_id: format!("e{}", out.len() + 1),
            context: None,
            fields: Vec::new(),
        };
        for part in line.split("||") {
            let caps = FIELD_RE
                .captures(part)
                .ok_or_else(|| format_err(format!("cannot parse field `{}`", part.trim())))?;
            let key = &caps[1];
            let value = &caps[2];
            let offsets = &caps[3];
            if key == "ln" {
                entry.context = match value {
                    "narrative" => Some(EntryContext::Narrative),
                    "list" => Some(EntryContext::List),
                    _ => None,
                };
                continue;
            }
            let Some(field_type) = field_type_for(key) else {
                return Err(format_err(format!("unknown field key `{key}`")));
            };
            if value == "nm" || offsets.is_empty() {
                continue;
            }
            let segments: Vec<&str> = offsets.split(',').map(str::trim).collect();
            let mut pieces = Vec::with_capacity(segments.len());
            for seg in &segments {
                let c = OFFSET_RE
                    .captures(seg)
                    .ok_or_else(|| format_err(format!("bad offsets `{seg}`")))?;
                let n = |i: usize| c[i].parse::<usize>().unwrap_or(usize::MAX);
                let (l1, t1, l2, t2) = (n(1), n(2), n(3), n(4));
                let start = grid.token(l1, t1).map(|t| t.0);
                let end = grid.token(l2, t2).map(|t| t.1);
                match (start, end) {
                    (Some(s), Some(e)) if s < e => pieces.push((s, e)),
                    _ => {
                        return Err(ImportError::Offset {
                            file: file.to_path_buf(),
                            line: lineno,
                            detail: format!(
                                "{}: {field_type} {value:?} offsets `{seg}` fall outside the note",
                                doc.doc_id
                            ),
                        })
                    }
                }
            }
            if pieces.len() > 1 {
                entry.fields.push(RawField {
                    field_type,
                    start: pieces[0].0,
                    end: pieces[0].1,
                    text: String::new(),
                    discontinuous: true,
                });
                continue;
            }
            let (start, end) = pieces[0];
            let text = doc.slice(start, end).unwrap_or_default().to_string();
            if squash(&text) != squash(value) {
                return Err(ImportError::Offset {
                    file: file.to_path_buf(),
                    line: lineno,
                    detail: format!(
                        "{}: {field_type} {value:?} at {offsets} converts to {text:?}",
                        doc.doc_id
                    ),
                });
            }
            entry.fields.push(RawField {
                field_type,
                start,
                end,
                text,
                discontinuous: false,
            });
        }
        out.push((lineno, entry));
    }
    Ok(out)
}

fn label_file_for(dir: &Path, stem: &str) -> Option<PathBuf> {
    LABEL_SUFFIXES
        .iter()
        .map(|suffix| dir.join(format!("{stem}.{suffix}")))
        .find(|p| p.is_file())
}

/// Import every `<id>.txt` note in `dir` with its label file, if present.
pub(crate) fn import_dir(dir: &Path) -> Result<ImportReport, ImportError> {
    let mut notes: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ImportError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    notes.sort();

    let mut report = ImportReport::default();
    for note in notes {
        let stem = note
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&note).map_err(|e| ImportError::io(&note, e))?;
        let doc = Document::new(stem.clone(), text);
        let (entries, file) = match label_file_for(dir, &stem) {
            Some(path) => {
                let labels = fs::read_to_string(&path).map_err(|e| ImportError::io(&path, e))?;
                (parse_label_file(&doc, &labels, &path)?, path)
            }
            None => (Vec::new(), note.clone()),
        };
        let mut set = crate::model::AnnotationSet::new(doc.doc_id.clone(), crate::model::Source::Gold);
        for (lineno, entry) in entries {
            let one = build_gold_set(&doc, vec![entry], Vec::new(), &mut report, &file, lineno)?;
            for span in one.spans {
                set.insert_span(span);
            }
            set.entries.extend(one.entries);
        }
        report.documents.push(doc);
        report.sets.push(set);
    }
    Ok(report)
}
