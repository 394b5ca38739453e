//! A small corpus with gold annotations and a model stand-in that answers
//! each prompt from the gold spans inside the chunk.

#![allow(dead_code)]

use std::path::Path;

use medanno::pipeline::RunConfig;
use medanno_core::chunker::{chunk_document, Chunk};
use medanno_core::model::{
    write_annotation_sets, write_corpus, write_jsonl, AnnotationSet, Document, FieldSpan, FieldType, MedicationEntry,
    Source,
};
use medanno_core::prompting::{build_prompt, fingerprint, FixtureRecord, PromptTemplate, Schema};

type EntrySpec = &'static [(FieldType, &'static str, usize)];

const DOCS: &[(&str, &str, &[EntrySpec])] = &[
    (
        "doc-a",
        "HISTORY : The patient takes aspirin 81 mg orally daily for chest pain . Also metoprolol 25 mg twice daily .",
        &[
            &[
                (FieldType::Name, "aspirin", 0),
                (FieldType::Dose, "81 mg", 0),
                (FieldType::Mode, "orally", 0),
                (FieldType::Frequency, "daily", 0),
                (FieldType::Reason, "chest pain", 0),
            ],
            &[
                (FieldType::Name, "metoprolol", 0),
                (FieldType::Dose, "25 mg", 0),
                (FieldType::Frequency, "twice daily", 0),
            ],
        ],
    ),
    (
        "doc-b",
        "CURRENT MEDICATIONS : Ibuprofen as needed and diclofenac for one month as needed for abdominal discomfort .",
        &[
            &[
                (FieldType::Name, "Ibuprofen", 0),
                (FieldType::Frequency, "as needed", 0),
                (FieldType::Reason, "abdominal discomfort", 0),
            ],
            &[
                (FieldType::Name, "diclofenac", 0),
                (FieldType::Duration, "for one month", 0),
                (FieldType::Frequency, "as needed", 1),
                (FieldType::Reason, "abdominal discomfort", 0),
            ],
        ],
    ),
    (
        "doc-c",
        "DISCHARGE PLAN : Continue lisinopril 10 mg by mouth once a day for hypertension . \
         Start amoxicillin 500 mg three times a day for seven days for sinusitis . \
         Hold warfarin until follow up . \
         Resume insulin glargine 20 units subcutaneously at bedtime . \
         Patient should avoid heavy lifting .",
        &[
            &[
                (FieldType::Name, "lisinopril", 0),
                (FieldType::Dose, "10 mg", 0),
                (FieldType::Mode, "by mouth", 0),
                (FieldType::Frequency, "once a day", 0),
                (FieldType::Reason, "hypertension", 0),
            ],
            &[
                (FieldType::Name, "amoxicillin", 0),
                (FieldType::Dose, "500 mg", 0),
                (FieldType::Frequency, "three times a day", 0),
                (FieldType::Duration, "for seven days", 0),
                (FieldType::Reason, "sinusitis", 0),
            ],
            &[(FieldType::Name, "warfarin", 0)],
            &[
                (FieldType::Name, "insulin glargine", 0),
                (FieldType::Dose, "20 units", 0),
                (FieldType::Mode, "subcutaneously", 0),
                (FieldType::Frequency, "at bedtime", 0),
            ],
        ],
    ),
];

fn char_find(text: &str, needle: &str, nth: usize) -> usize {
    let (byte, _) = text
        .match_indices(needle)
        .nth(nth)
        .unwrap_or_else(|| panic!("`{needle}` #{nth} not in text"));
    text[..byte].chars().count()
}

pub fn corpus() -> (Vec<Document>, Vec<AnnotationSet>) {
    let mut docs = Vec::new();
    let mut gold = Vec::new();
    for (id, text, entries) in DOCS {
        let doc = Document::new(*id, *text);
        let mut set = AnnotationSet::new(*id, Source::Gold);
        for (i, fields) in entries.iter().enumerate() {
            let mut entry = MedicationEntry::new(format!("e{}", i + 1));
            for (ft, needle, nth) in fields.iter() {
                let start = char_find(text, needle, *nth);
                let span = FieldSpan::from_doc(&doc, *ft, start, start + needle.chars().count()).unwrap();
                entry.push_field(set.insert_span(span));
            }
            set.entries.push(entry);
        }
        docs.push(doc);
        gold.push(set);
    }
    (docs, gold)
}

fn label(ft: FieldType) -> String {
    match ft {
        FieldType::Name => "MEDICATION".into(),
        other => other.as_str().to_ascii_uppercase(),
    }
}

/// Field types the stand-in model never reports for a schema, so the two
/// schemas disagree and the ensemble has something to add.
pub fn dropped(schema: Schema) -> FieldType {
    match schema {
        Schema::IobToken => FieldType::Duration,
        Schema::DirectChunk => FieldType::Mode,
    }
}

fn inside(chunk: &Chunk, s: &FieldSpan) -> bool {
    s.start >= chunk.base && s.end <= chunk.base + chunk.text.chars().count()
}

/// Completion the stand-in model gives for `chunk`.
pub fn simulate(schema: Schema, chunk: &Chunk, gold: &AnnotationSet) -> String {
    let spans: Vec<&FieldSpan> = gold
        .spans
        .iter()
        .filter(|s| s.field_type != dropped(schema) && inside(chunk, s))
        .collect();
    match schema {
        Schema::IobToken => {
            let mut lines = Vec::new();
            let mut pos = 0;
            for token in chunk.text.split(' ') {
                let len = token.chars().count();
                let (ts, te) = (chunk.base + pos, chunk.base + pos + len);
                pos += len + 1;
                if token.is_empty() {
                    continue;
                }
                let hit = spans.iter().find(|s| s.start <= ts && te <= s.end);
                let line = match hit {
                    None => format!("'{token}', O, '<None>'"),
                    Some(s) => {
                        let groups: Vec<String> = gold
                            .memberships(&s.key())
                            .iter()
                            .map(|i| format!("entity_{}", i + 1))
                            .collect();
                        let prefix = if s.start == ts { "B" } else { "I" };
                        format!("'{token}', {prefix}-{}, '{}'", label(s.field_type), groups.join("|"))
                    }
                };
                lines.push(line);
            }
            lines.join("\n")
        }
        Schema::DirectChunk => {
            let mut out = String::from("```yaml\nentities:\n");
            for (i, entry) in gold.entries.iter().enumerate() {
                let fields: Vec<&&FieldSpan> = spans.iter().filter(|s| entry.fields.contains(&s.key())).collect();
                if fields.is_empty() {
                    continue;
                }
                out.push_str(&format!("  - group: {}\n", i + 1));
                for s in fields {
                    out.push_str(&format!(
                        "    {}:\n      text: '{}'\n      start_pos: {}\n      end_pos: {}\n",
                        label(s.field_type),
                        s.text,
                        s.start - chunk.base,
                        s.end - chunk.base
                    ));
                }
            }
            out.push_str("```\n");
            out
        }
    }
}

/// Replay fixtures covering every prompt `cfg` will send for `docs`.
pub fn fixture_records(cfg: &RunConfig, docs: &[Document], gold: &[AnnotationSet]) -> Vec<FixtureRecord> {
    let mut out = Vec::new();
    for (doc, g) in docs.iter().zip(gold) {
        for &schema in &cfg.schemas {
            let tpl = PromptTemplate::builtin(schema);
            for chunk in chunk_document(doc, cfg.chunk_size(schema)) {
                let prompt = build_prompt(&tpl, &chunk).unwrap();
                out.push(FixtureRecord {
                    fingerprint: fingerprint(&prompt, &cfg.gen),
                    text: simulate(schema, &chunk, g),
                });
            }
        }
    }
    out
}

/// Write `corpus.jsonl`, `gold.jsonl` and `fixtures.jsonl` into `dir`.
pub fn write_fixture_corpus(dir: &Path, cfg: &RunConfig) -> (Vec<Document>, Vec<AnnotationSet>) {
    let (docs, gold) = corpus();
    write_corpus(&dir.join("corpus.jsonl"), &docs).unwrap();
    write_annotation_sets(&dir.join("gold.jsonl"), &gold).unwrap();
    write_jsonl(&dir.join("fixtures.jsonl"), &fixture_records(cfg, &docs, &gold)).unwrap();
    (docs, gold)
}
