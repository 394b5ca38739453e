use std::fs;

use medanno_core::model::{
    import_gold_corpus, read_annotation_sets, validate_annotation_set, write_annotation_sets, write_gold_jsonl,
    CorpusFormat, FieldType, ImportError, SpanKey,
};

const GOLD: &str = r#"{"doc_id":"n1","text":"Patient takes Lasix 40 mg, daily for edema.","entries":[{"entry_id":"e1","fields":[{"field_type":"name","start":14,"end":19,"text":"Lasix"},{"field_type":"dose","start":20,"end":26,"text":"40 mg,"},{"field_type":"frequency","start":27,"end":32,"text":"daily"},{"field_type":"reason","start":37,"end":42,"text":"edema"}]}],"orphans":[{"field_type":"mode","start":25,"end":26,"text":","}]}
{"doc_id":"n2","text":"Aspirin and Plavix daily.","entries":[{"entry_id":"a","fields":[{"field_type":"name","start":0,"end":7,"text":"Aspirin"},{"field_type":"frequency","start":19,"end":24,"text":"daily"}]},{"entry_id":"b","fields":[{"field_type":"name","start":12,"end":18,"text":"Plavix"},{"field_type":"frequency","start":19,"end":24,"text":"daily"},{"field_type":"dose","start":0,"end":24,"text":"Aspirin and Plavix daily","segments":[[0,7],[12,24]]}]}],"orphans":[]}
"#;

#[test]
fn jsonl_import_normalizes_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gold.jsonl");
    fs::write(&path, GOLD).unwrap();

    let report = import_gold_corpus(&path, CorpusFormat::Jsonl).unwrap();
    assert_eq!(report.documents.len(), 2);
    assert_eq!(report.dropped_empty, 1);
    assert_eq!(report.dropped_discontinuous, 1);

    let n1 = &report.sets[0];
    assert!(n1.contains(&SpanKey::new(FieldType::Dose, 20, 25)));
    assert_eq!(n1.span(&SpanKey::new(FieldType::Dose, 20, 25)).unwrap().text, "40 mg");
    let n2 = &report.sets[1];
    let daily = SpanKey::new(FieldType::Frequency, 19, 24);
    assert_eq!(n2.memberships(&daily), vec![0, 1]);
    assert_eq!(n2.spans.len(), 3);
    for (doc, set) in report.documents.iter().zip(&report.sets) {
        assert!(validate_annotation_set(doc, set).is_empty());
    }

    let out = dir.path().join("again.jsonl");
    write_gold_jsonl(&out, &report.documents, &report.sets).unwrap();
    let again = import_gold_corpus(&out, CorpusFormat::Jsonl).unwrap();
    assert_eq!(again.documents, report.documents);
    assert_eq!(again.sets, report.sets);
    assert_eq!(again.dropped_empty + again.dropped_discontinuous, 0);

    let sets_path = dir.path().join("sets.jsonl");
    write_annotation_sets(&sets_path, &report.sets).unwrap();
    let first = fs::read(&sets_path).unwrap();
    let back = read_annotation_sets(&sets_path).unwrap();
    assert_eq!(back, report.sets);
    write_annotation_sets(&sets_path, &back).unwrap();
    assert_eq!(fs::read(&sets_path).unwrap(), first);
}

#[test]
fn offset_mismatch_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let bad = r#"{"doc_id":"x","text":"Lasix 40 mg","entries":[],"orphans":[]}

{"doc_id":"y","text":"Lasix 40 mg","entries":[{"entry_id":"e","fields":[{"field_type":"name","start":1,"end":6,"text":"Lasix"}]}]}
"#;
    fs::write(&path, bad).unwrap();
    match import_gold_corpus(&path, CorpusFormat::Jsonl) {
        Err(ImportError::Offset { line, detail, .. }) => {
            assert_eq!(line, 3);
            assert!(detail.contains("Lasix"), "{detail}");
        }
        other => panic!("expected an offset error, got {other:?}"),
    }
}

#[test]
fn duplicate_document_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.jsonl");
    let line = r#"{"doc_id":"x","text":"a"}"#;
    fs::write(&path, format!("{line}\n{line}\n")).unwrap();
    assert!(matches!(
        import_gold_corpus(&path, CorpusFormat::Jsonl),
        Err(ImportError::DuplicateDocument(id)) if id == "x"
    ));
}

#[test]
fn malformed_json_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.jsonl");
    fs::write(&path, "{\"doc_id\": \"x\", \"text\": \n").unwrap();
    assert!(matches!(
        import_gold_corpus(&path, CorpusFormat::Jsonl),
        Err(ImportError::Format { line: 1, .. })
    ));
}
