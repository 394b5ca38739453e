//! Two-member union of LLM annotation sets.
//!
//! Every span from either member is kept (identical triples collapse, merely
//! overlapping ones do not). Entries are merged across members when their
//! Name spans overlap by at least one character.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{AnnotationSet, MedicationEntry, Source, SpanKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("document mismatch: {a} vs {b}")]
    DocMismatch { a: String, b: String },
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut x = x;
        while self.0[x] != root {
            let next = self.0[x];
            self.0[x] = root;
            x = next;
        }
        root
    }

    // the smaller index becomes the root so components keep first-member order
    fn union(&mut self, x: usize, y: usize) {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx != ry {
            let (lo, hi) = (rx.min(ry), rx.max(ry));
            self.0[hi] = lo;
        }
    }
}

fn names_overlap(x: &MedicationEntry, y: &MedicationEntry) -> bool {
    x.names().any(|n| y.names().any(|m| n.overlap(m) > 0))
}

fn field_set(e: &MedicationEntry) -> BTreeSet<SpanKey> {
    e.fields.iter().copied().collect()
}

/// Combine two annotation sets for the same document.
///
/// Entries with identical field sets are paired first, one to one, so that
/// `ensemble_union(a, a)` reproduces `a`. The remaining entries of `a` and `b`
/// are merged transitively wherever a cross-member pair shares Name
/// characters. A merged entry takes the id and context of its first member
/// (members of `a` come first) and the union of the fields. Entries without a
/// Name pass through unchanged.
pub fn ensemble_union(a: &AnnotationSet, b: &AnnotationSet) -> Result<AnnotationSet, EnsembleError> {
    if a.doc_id != b.doc_id {
        return Err(EnsembleError::DocMismatch {
            a: a.doc_id.clone(),
            b: b.doc_id.clone(),
        });
    }

    let mut out = AnnotationSet::new(a.doc_id.clone(), Source::LlmEnsemble);
    for span in a.spans.iter().chain(&b.spans) {
        out.insert_span(span.clone());
    }
    out.meta = b.meta.clone();
    out.meta.extend(a.meta.iter().map(|(k, v)| (k.clone(), v.clone())));
    out.meta
        .insert("ensemble_members".to_string(), format!("{},{}", a.source, b.source));

    let na = a.entries.len();
    let all: Vec<&MedicationEntry> = a.entries.iter().chain(&b.entries).collect();
    let mut uf = UnionFind::new(all.len());

    let a_sets: Vec<BTreeSet<SpanKey>> = a.entries.iter().map(field_set).collect();
    let b_sets: Vec<BTreeSet<SpanKey>> = b.entries.iter().map(field_set).collect();
    let mut paired = vec![false; all.len()];
    for (i, sa) in a_sets.iter().enumerate() {
        if let Some(j) = (0..b_sets.len()).find(|&j| !paired[na + j] && b_sets[j] == *sa) {
            paired[i] = true;
            paired[na + j] = true;
            uf.union(i, na + j);
        }
    }

    for i in (0..na).filter(|&i| !paired[i]) {
        for j in (na..all.len()).filter(|&j| !paired[j]) {
            if names_overlap(all[i], all[j]) {
                uf.union(i, j);
            }
        }
    }

    // components in order of their first member
    let mut slot_of_root: Vec<Option<usize>> = vec![None; all.len()];
    for (idx, entry) in all.iter().enumerate() {
        let root = uf.find(idx);
        match slot_of_root[root] {
            Some(slot) => {
                let merged: &mut MedicationEntry = &mut out.entries[slot];
                for key in &entry.fields {
                    merged.push_field(*key);
                }
                if merged.context.is_none() {
                    merged.context = entry.context;
                }
            }
            None => {
                slot_of_root[root] = Some(out.entries.len());
                out.entries.push((*entry).clone());
            }
        }
    }
    Ok(out)
}
