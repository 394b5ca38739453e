use serde_yaml::Value;

use super::{ChunkEntity, EntityField, ResolveKind, ResolveLog};
use crate::model::FieldType;

/// Body of the first ``` fence, or the whole text when there is none. An
/// opening fence without a closing one yields everything after it.
fn fenced_body(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // skip the info string (`yaml`) on the fence line
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => "",
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

fn as_position(v: Option<&Value>) -> Option<usize> {
    match v? {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn group_label(v: Option<&Value>, index: usize) -> String {
    v.and_then(scalar_text)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| (index + 1).to_string())
}

/// Parse a fenced-YAML completion into entities. Each list item under
/// `entities` is one group with per-field `text`, `start_pos` and `end_pos`.
/// Empty texts are skipped; a YAML error yields no entities and a log entry.
pub fn parse_direct_output(completion_text: &str) -> (Vec<ChunkEntity>, ResolveLog) {
    let mut log = ResolveLog::default();
    let body = fenced_body(completion_text);
    let doc: Value = match serde_yaml::from_str(body) {
        Ok(v) => v,
        Err(e) => {
            log.push(ResolveKind::YamlError, e.to_string());
            return (Vec::new(), log);
        }
    };

    let items = match &doc {
        Value::Mapping(m) => match m.get("entities") {
            Some(Value::Sequence(items)) => items.as_slice(),
            Some(Value::Null) => &[],
            Some(_) => {
                log.push(ResolveKind::YamlError, "`entities` is not a list");
                return (Vec::new(), log);
            }
            None => {
                log.push(ResolveKind::YamlError, "no `entities` key");
                return (Vec::new(), log);
            }
        },
        Value::Null => &[],
        _ => {
            log.push(ResolveKind::YamlError, "top level is not a mapping");
            return (Vec::new(), log);
        }
    };

    let mut entities: Vec<ChunkEntity> = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let Value::Mapping(map) = item else {
            log.push(
                ResolveKind::MalformedLine,
                format!("entity {} is not a mapping", index + 1),
            );
            continue;
        };
        let label = group_label(map.get("group"), index);
        let pos = match entities.iter().position(|e| e.group == label) {
            Some(p) => p,
            None => {
                entities.push(ChunkEntity::new(label.clone()));
                entities.len() - 1
            }
        };

        for (key, value) in map {
            let Some(key) = key.as_str() else { continue };
            if key == "group" {
                continue;
            }
            let Some(field_type) = FieldType::from_label(key) else {
                log.push(
                    ResolveKind::MalformedLine,
                    format!("group {label}: unknown field `{key}`"),
                );
                continue;
            };
            let field = match value {
                Value::Mapping(f) => {
                    let Some(text) = f.get("text").and_then(scalar_text) else {
                        continue;
                    };
                    EntityField {
                        text,
                        claimed_start: as_position(f.get("start_pos")),
                        claimed_end: as_position(f.get("end_pos")),
                    }
                }
                other => match scalar_text(other) {
                    Some(text) => EntityField::unclaimed(text),
                    None => continue,
                },
            };
            if field.text.trim().is_empty() || field.text.trim() == "-" {
                continue;
            }
            entities[pos].set_field(field_type, field, &mut log);
        }
    }
    entities.retain(|e| !e.fields.is_empty());
    (entities, log)
}
