use std::collections::{BTreeMap, BTreeSet};

use medanno_core::chunker::Chunk;
use medanno_core::model::{validate_annotation_set, Document, FieldType, Source};
use medanno_core::resolvers::{
    assemble_iob_entities, parse_direct_output, parse_iob_output, to_document_annotations, AlignConfig, ChunkEntity,
};

const IOB_ANSWER: &str = include_str!("fixtures/f1_iob_answer.txt");
const DIRECT_ANSWER: &str = include_str!("fixtures/f2_direct_answer.txt");
const CHUNK: &str = include_str!("fixtures/f_chunk.txt");

fn texts(e: &ChunkEntity) -> BTreeMap<FieldType, &str> {
    e.fields.iter().map(|(ft, f)| (*ft, f.text.as_str())).collect()
}

#[test]
fn iob_answer_yields_two_entities_with_shared_reason() {
    let (tags, log) = parse_iob_output(IOB_ANSWER);
    assert!(log.is_empty(), "{log:?}");
    assert_eq!(tags.len(), 15);
    let multi = tags.iter().find(|t| t.token == "abdominal").unwrap();
    assert_eq!(
        multi.groups,
        BTreeSet::from(["entity_1".to_string(), "entity_2".to_string()])
    );

    let (ents, log) = assemble_iob_entities(&tags);
    assert!(log.is_empty(), "{log:?}");
    assert_eq!(ents.len(), 2);
    assert_eq!(ents[0].group, "entity_1");
    assert_eq!(
        texts(&ents[0]),
        BTreeMap::from([
            (FieldType::Name, "Ibuprofen"),
            (FieldType::Frequency, "as needed"),
            (FieldType::Reason, "abdominal discomfort"),
        ])
    );
    assert_eq!(ents[1].group, "entity_2");
    assert_eq!(
        texts(&ents[1]),
        BTreeMap::from([
            (FieldType::Name, "diclofenac"),
            (FieldType::Duration, "for one month as needed"),
            (FieldType::Reason, "abdominal discomfort"),
        ])
    );
}

#[test]
fn direct_answer_yields_two_groups_with_claimed_positions() {
    let (ents, log) = parse_direct_output(DIRECT_ANSWER);
    assert!(log.is_empty(), "{log:?}");
    assert_eq!(ents.len(), 2);

    let claims = |e: &ChunkEntity| -> BTreeMap<FieldType, (String, Option<(usize, usize)>)> {
        e.fields
            .iter()
            .map(|(ft, f)| (*ft, (f.text.clone(), f.claimed())))
            .collect()
    };
    let s = |t: &str| t.to_string();
    assert_eq!(ents[0].group, "1");
    assert_eq!(
        claims(&ents[0]),
        BTreeMap::from([
            (FieldType::Name, (s("Ibuprofen"), Some((20, 29)))),
            (FieldType::Frequency, (s("as needed"), Some((30, 39)))),
            (FieldType::Reason, (s("abdominal discomfort"), Some((81, 100)))),
        ])
    );
    assert_eq!(ents[1].group, "2");
    assert_eq!(
        claims(&ents[1]),
        BTreeMap::from([
            (FieldType::Name, (s("diclofenac"), Some((45, 55)))),
            (FieldType::Frequency, (s("as needed"), Some((68, 77)))),
            (FieldType::Duration, (s("for one month"), Some((56, 68)))),
            (FieldType::Reason, (s("abdominal discomfort"), Some((81, 100)))),
        ])
    );
}

#[test]
fn direct_answer_lifts_to_six_shared_spans() {
    let doc = Document::new("f2", CHUNK);
    let chunk = Chunk::new("f2", 0, CHUNK);
    let (ents, _) = parse_direct_output(DIRECT_ANSWER);
    let (set, log) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmDirect, &AlignConfig::default());
    assert!(log.is_empty(), "{log:?}");
    assert_eq!(set.entries.len(), 2);
    assert_eq!(set.spans.len(), 6);
    assert!(validate_annotation_set(&doc, &set).is_empty());

    let span_of = |ft: FieldType, start: usize| set.spans.iter().find(|s| s.field_type == ft && s.start == start);
    // the claimed offsets are one to five characters off; alignment recovers the text
    assert_eq!(span_of(FieldType::Name, 21).unwrap().text, "Ibuprofen");
    assert_eq!(span_of(FieldType::Frequency, 71).unwrap().end, 80);
    assert_eq!(span_of(FieldType::Duration, 57).unwrap().text, "for one month");
    let reason = span_of(FieldType::Reason, 86).unwrap().key();
    assert_eq!(set.memberships(&reason), vec![0, 1]);
}

#[test]
fn iob_answer_lifts_with_shared_reason() {
    let doc = Document::new("f1", CHUNK);
    let chunk = Chunk::new("f1", 0, CHUNK);
    let (tags, _) = parse_iob_output(IOB_ANSWER);
    let (ents, _) = assemble_iob_entities(&tags);
    let (set, log) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmIob, &AlignConfig::default());
    assert!(log.is_empty(), "{log:?}");
    assert_eq!(set.entries.len(), 2);
    assert_eq!(set.spans.len(), 5);
    assert!(validate_annotation_set(&doc, &set).is_empty());
    let ids: Vec<&str> = set.entries.iter().map(|e| e.entry_id.as_str()).collect();
    assert_eq!(ids, vec!["0-entity_1", "0-entity_2"]);
}
