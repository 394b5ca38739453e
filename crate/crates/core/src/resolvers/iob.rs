use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChunkEntity, EntityField, ResolveKind, ResolveLog};
use crate::model::FieldType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobTag {
    O,
    Begin(FieldType),
    Inside(FieldType),
}

impl IobTag {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("O") || s.eq_ignore_ascii_case("O-tag") {
            return Some(IobTag::O);
        }
        let (prefix, label) = s.split_once('-')?;
        let ft = FieldType::from_label(label)?;
        match prefix.trim() {
            "B" | "b" => Some(IobTag::Begin(ft)),
            "I" | "i" => Some(IobTag::Inside(ft)),
            _ => None,
        }
    }

    pub fn field_type(self) -> Option<FieldType> {
        match self {
            IobTag::O => None,
            IobTag::Begin(ft) | IobTag::Inside(ft) => Some(ft),
        }
    }
}

/// One parsed output line. `O` tokens carry no groups; `B`/`I` tokens carry at
/// least one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTag {
    pub token: String,
    pub tag: IobTag,
    pub groups: BTreeSet<String>,
}

// quoted token, tag, then a quoted or bare group field
static LINE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*'(.*)'\s*,\s*([^,']+?)\s*,\s*('[^']*'|[^',]*?)\s*,?\s*$").unwrap());

fn parse_groups(raw: &str) -> BTreeSet<String> {
    let inner = raw.trim().trim_matches('\'').trim();
    if inner.is_empty() || inner.eq_ignore_ascii_case("<none>") || inner.eq_ignore_ascii_case("none") {
        return BTreeSet::new();
    }
    inner
        .split('|')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parse a token-per-line completion. Lines that don't have the
/// `'token', TAG, 'group'` shape are skipped and logged.
pub fn parse_iob_output(completion_text: &str) -> (Vec<TokenTag>, ResolveLog) {
    let mut tags = Vec::new();
    let mut log = ResolveLog::default();
    for (idx, raw_line) in completion_text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let Some(caps) = LINE_RE.captures(line) else {
            log.push(ResolveKind::MalformedLine, format!("line {}: {line:?}", idx + 1));
            continue;
        };
        let token = caps[1].to_string();
        let Some(tag) = IobTag::parse(&caps[2]) else {
            log.push(
                ResolveKind::MalformedLine,
                format!("line {}: unknown tag {:?}", idx + 1, &caps[2]),
            );
            continue;
        };
        let groups = match tag {
            IobTag::O => BTreeSet::new(),
            _ => parse_groups(&caps[3]),
        };
        if tag != IobTag::O && groups.is_empty() {
            log.push(
                ResolveKind::MalformedLine,
                format!("line {}: {:?} tag without a group", idx + 1, &caps[2]),
            );
            continue;
        }
        if token.trim().is_empty() {
            log.push(ResolveKind::MalformedLine, format!("line {}: empty token", idx + 1));
            continue;
        }
        tags.push(TokenTag { token, tag, groups });
    }
    (tags, log)
}

struct Occurrence {
    field_type: FieldType,
    groups: BTreeSet<String>,
    tokens: Vec<String>,
}

/// Group tagged tokens into entities. A `B-X` followed by `I-X` tokens with
/// the same group set forms one field; an `I-X` that cannot continue an open
/// field starts a new one (logged as a repair). Fields with several groups are
/// copied into each of them.
pub fn assemble_iob_entities(tags: &[TokenTag]) -> (Vec<ChunkEntity>, ResolveLog) {
    let mut log = ResolveLog::default();
    let mut occurrences: Vec<Occurrence> = Vec::new();
    let mut open = false;

    for t in tags {
        match t.tag {
            IobTag::O => open = false,
            IobTag::Begin(ft) => {
                occurrences.push(Occurrence {
                    field_type: ft,
                    groups: t.groups.clone(),
                    tokens: vec![t.token.clone()],
                });
                open = true;
            }
            IobTag::Inside(ft) => {
                let continues = open
                    && occurrences
                        .last()
                        .is_some_and(|o| o.field_type == ft && o.groups == t.groups);
                if continues {
                    occurrences.last_mut().unwrap().tokens.push(t.token.clone());
                } else {
                    log.push(
                        ResolveKind::IobRepair,
                        format!("I-{} {:?} without a matching B- tag", ft, t.token),
                    );
                    occurrences.push(Occurrence {
                        field_type: ft,
                        groups: t.groups.clone(),
                        tokens: vec![t.token.clone()],
                    });
                    open = true;
                }
            }
        }
    }

    let mut entities: Vec<ChunkEntity> = Vec::new();
    for occ in occurrences {
        let text = occ.tokens.join(" ");
        for group in &occ.groups {
            let idx = match entities.iter().position(|e| &e.group == group) {
                Some(i) => i,
                None => {
                    entities.push(ChunkEntity::new(group.clone()));
                    entities.len() - 1
                }
            };
            entities[idx].set_field(occ.field_type, EntityField::unclaimed(text.clone()), &mut log);
        }
    }
    (entities, log)
}
