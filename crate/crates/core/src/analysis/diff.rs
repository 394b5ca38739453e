use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::model::{AnnotationSet, FieldSpan, FieldType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionKind {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionItem {
    pub kind: CorrectionKind,
    pub field_type: FieldType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<FieldSpan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<FieldSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionDiff {
    pub doc_id: String,
    pub added: usize,
    pub modified: usize,
    pub deleted: usize,
    pub items: Vec<CorrectionItem>,
}

impl CorrectionDiff {
    /// Replay the corrections on `base`'s spans: drop deleted and modified
    /// base spans, then insert modified and added refined spans.
    pub fn apply(&self, base: &AnnotationSet) -> Vec<FieldSpan> {
        let mut spans: Vec<FieldSpan> = base.spans.clone();
        for item in &self.items {
            if let Some(b) = &item.base {
                spans.retain(|s| s != b);
            }
        }
        for item in &self.items {
            if let Some(r) = &item.refined {
                spans.push(r.clone());
            }
        }
        spans.sort_by_key(|s| (s.start, s.end, s.field_type));
        spans
    }
}

/// Span-level corrections that turn `base` into `refined`.
///
/// Per field type, identical spans pair first and cost nothing. The rest pair
/// one to one greedily by largest character overlap (ties broken by base then
/// refined position); a pair is a modification. Leftover base spans are
/// deletions and leftover refined spans additions. Entry membership is not
/// compared.
pub fn diff_corrections(base: &AnnotationSet, refined: &AnnotationSet) -> Result<CorrectionDiff, AnalysisError> {
    if base.doc_id != refined.doc_id {
        return Err(AnalysisError::DocMismatch {
            a: base.doc_id.clone(),
            b: refined.doc_id.clone(),
        });
    }
    let mut items = Vec::new();
    for ft in FieldType::ALL {
        let b: Vec<&FieldSpan> = base.spans.iter().filter(|s| s.field_type == ft).collect();
        let r: Vec<&FieldSpan> = refined.spans.iter().filter(|s| s.field_type == ft).collect();
        let mut b_used = vec![false; b.len()];
        let mut r_used = vec![false; r.len()];

        for (i, bs) in b.iter().enumerate() {
            if let Some(j) = (0..r.len()).find(|&j| !r_used[j] && r[j].key() == bs.key()) {
                b_used[i] = true;
                r_used[j] = true;
            }
        }

        let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
        for (i, bs) in b.iter().enumerate().filter(|(i, _)| !b_used[*i]) {
            for (j, rs) in r.iter().enumerate().filter(|(j, _)| !r_used[*j]) {
                let overlap = bs.key().overlap(&rs.key());
                if overlap > 0 {
                    candidates.push((overlap, i, j));
                }
            }
        }
        candidates.sort_by_key(|&(o, i, j)| (std::cmp::Reverse(o), b[i].start, b[i].end, r[j].start, r[j].end));
        for (_, i, j) in candidates {
            if b_used[i] || r_used[j] {
                continue;
            }
            b_used[i] = true;
            r_used[j] = true;
            items.push(CorrectionItem {
                kind: CorrectionKind::Modified,
                field_type: ft,
                base: Some(b[i].clone()),
                refined: Some(r[j].clone()),
            });
        }
        for (_, bs) in b.iter().enumerate().filter(|(i, _)| !b_used[*i]) {
            items.push(CorrectionItem {
                kind: CorrectionKind::Deleted,
                field_type: ft,
                base: Some((*bs).clone()),
                refined: None,
            });
        }
        for (_, rs) in r.iter().enumerate().filter(|(j, _)| !r_used[*j]) {
            items.push(CorrectionItem {
                kind: CorrectionKind::Added,
                field_type: ft,
                base: None,
                refined: Some((*rs).clone()),
            });
        }
    }
    let count = |k| items.iter().filter(|i| i.kind == k).count();
    Ok(CorrectionDiff {
        doc_id: base.doc_id.clone(),
        added: count(CorrectionKind::Added),
        modified: count(CorrectionKind::Modified),
        deleted: count(CorrectionKind::Deleted),
        items,
    })
}
