use super::{align_entity, AlignConfig, ChunkEntity, LogRecord, ResolveKind, ResolveLog};
use crate::chunker::Chunk;
use crate::model::{normalize_span, AnnotationSet, Document, FieldSpan, MedicationEntry, NormalizeError, Source};

/// Align every chunk entity to the document and build the annotation set.
///
/// Each entity becomes an entry with id `<chunk.base>-<group>`. Fields that
/// cannot be aligned or are empty after normalization are dropped and
/// logged; entities left with no fields are not emitted. Identical spans are
/// stored once and shared by every entry that references them.
pub fn to_document_annotations(
    entities_per_chunk: &[(Chunk, Vec<ChunkEntity>)],
    doc: &Document,
    source: Source,
    cfg: &AlignConfig,
) -> (AnnotationSet, Vec<LogRecord>) {
    let mut set = AnnotationSet::new(doc.doc_id.clone(), source);
    let mut records = Vec::new();

    for (chunk, entities) in entities_per_chunk {
        let mut log = ResolveLog::default();
        for entity in entities {
            let mut entry = MedicationEntry::new(format!("{}-{}", chunk.base, entity.group));
            for (&field_type, field) in &entity.fields {
                let Some(al) = align_entity(&field.text, field.claimed(), chunk, cfg, &mut log) else {
                    continue;
                };
                let Some(span) = FieldSpan::from_doc(doc, field_type, chunk.base + al.start, chunk.base + al.end)
                else {
                    log.push(
                        ResolveKind::UnmatchedEntity,
                        format!("{field_type} {:?} aligned outside the document", field.text),
                    );
                    continue;
                };
                match normalize_span(doc, &span) {
                    Ok(clean) => entry.push_field(set.insert_span(clean)),
                    Err(NormalizeError::EmptyAfterStrip { start, end }) => log.push(
                        ResolveKind::EmptyAfterStrip,
                        format!("group {}: {field_type} {:?} at {start}..{end}", entity.group, span.text),
                    ),
                    Err(e) => log.push(ResolveKind::UnmatchedEntity, e.to_string()),
                }
            }
            if entry.fields.is_empty() {
                continue;
            }
            // repeated group labels within a chunk fold into one entry
            match set.entries.iter_mut().find(|e| e.entry_id == entry.entry_id) {
                Some(existing) => {
                    for key in entry.fields {
                        existing.push_field(key);
                    }
                }
                None => set.entries.push(entry),
            }
        }
        records.extend(log.into_records(&doc.doc_id, chunk.base));
    }
    (set, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_annotation_set, FieldType, SpanKey};
    use crate::resolvers::EntityField;

    type FieldSpec<'a> = (FieldType, &'a str, Option<(usize, usize)>);

    fn entity(group: &str, fields: &[FieldSpec]) -> ChunkEntity {
        let mut e = ChunkEntity::new(group);
        for (ft, text, claim) in fields {
            e.fields.insert(
                *ft,
                EntityField {
                    text: text.to_string(),
                    claimed_start: claim.map(|c| c.0),
                    claimed_end: claim.map(|c| c.1),
                },
            );
        }
        e
    }

    #[test]
    fn shifts_by_chunk_base() {
        let prefix = "x".repeat(99) + "\n";
        let doc = Document::new("d", format!("{prefix}Patient has taken Prozac 20 mg"));
        let chunk = Chunk::new("d", 100, "Patient has taken Prozac 20 mg");
        let ents = vec![entity("1", &[(FieldType::Name, "Prozac", Some((18, 24)))])];
        let (set, log) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmDirect, &AlignConfig::default());
        assert!(log.is_empty());
        assert_eq!(set.spans[0].key(), SpanKey::new(FieldType::Name, 118, 124));
        assert_eq!(set.entries[0].entry_id, "100-1");
        assert!(validate_annotation_set(&doc, &set).is_empty());
    }

    #[test]
    fn unaligned_field_is_dropped_and_logged() {
        let doc = Document::new("d", "Patient takes Prozac daily.");
        let chunk = Chunk::new("d", 0, doc.text.clone());
        let ents = vec![entity(
            "1",
            &[
                (FieldType::Name, "Prozac", None),
                (FieldType::Dose, "warfarin 5 mg", None),
            ],
        )];
        let (set, log) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmIob, &AlignConfig::default());
        assert_eq!(set.entries.len(), 1);
        assert_eq!(set.entries[0].fields, vec![SpanKey::new(FieldType::Name, 14, 20)]);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, ResolveKind::UnmatchedEntity);
        assert_eq!(log[0].chunk_base, 0);
    }

    #[test]
    fn punctuation_only_field_is_logged() {
        let doc = Document::new("d", "Lasix , daily");
        let chunk = Chunk::new("d", 0, doc.text.clone());
        let ents = vec![entity(
            "1",
            &[(FieldType::Name, "Lasix", None), (FieldType::Dose, ",", None)],
        )];
        let (set, log) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmIob, &AlignConfig::default());
        assert_eq!(set.spans.len(), 1);
        assert_eq!(log[0].kind, ResolveKind::EmptyAfterStrip);
    }

    #[test]
    fn trailing_punctuation_normalized() {
        let doc = Document::new("d", "Lasix 40 mg, daily");
        let chunk = Chunk::new("d", 0, doc.text.clone());
        let ents = vec![entity("1", &[(FieldType::Dose, "40 mg,", None)])];
        let (set, _) = to_document_annotations(&[(chunk, ents)], &doc, Source::LlmIob, &AlignConfig::default());
        assert_eq!(set.spans[0].text, "40 mg");
    }
}
