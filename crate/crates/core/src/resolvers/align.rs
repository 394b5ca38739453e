use serde::{Deserialize, Serialize};

use super::{ResolveKind, ResolveLog};
use crate::chunker::Chunk;

/// Fuzzy-alignment knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Largest accepted `distance / max(window_len, entity_len)`.
    pub max_normalized_distance: f64,
    /// Window lengths scanned are `entity_len ± window_slack`.
    pub window_slack: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_normalized_distance: 0.2,
            window_slack: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlignMethod {
    Claimed,
    Exact,
    Fuzzy { distance: usize, normalized: f64 },
}

/// Chunk-local character span an entity text was resolved to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub start: usize,
    pub end: usize,
    pub method: AlignMethod,
}

fn find_all(hay: &[char], needle: &[char]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .collect()
}

/// Locate `entity_text` in the chunk.
///
/// Tried in order: the claimed span when it holds exactly the text; the exact
/// occurrence nearest the claimed start (or the first one); the window of
/// length `len ± slack` with the smallest edit distance, leftmost on ties,
/// accepted when its normalized distance is within the threshold. A miss is
/// logged as `unmatched-entity`.
pub fn align_entity(
    entity_text: &str,
    claimed: Option<(usize, usize)>,
    chunk: &Chunk,
    cfg: &AlignConfig,
    log: &mut ResolveLog,
) -> Option<Alignment> {
    let hay: Vec<char> = chunk.text.chars().collect();
    let needle: Vec<char> = entity_text.chars().collect();
    if needle.is_empty() {
        log.push(ResolveKind::UnmatchedEntity, "empty entity text");
        return None;
    }

    if let Some((s, e)) = claimed {
        if s < e && e <= hay.len() && hay[s..e] == needle[..] {
            return Some(Alignment {
                start: s,
                end: e,
                method: AlignMethod::Claimed,
            });
        }
    }

    let hits = find_all(&hay, &needle);
    let best = match claimed {
        Some((s, _)) => hits.iter().copied().min_by_key(|&h| (h.abs_diff(s), h)),
        None => hits.first().copied(),
    };
    if let Some(start) = best {
        return Some(Alignment {
            start,
            end: start + needle.len(),
            method: AlignMethod::Exact,
        });
    }

    if let Some(al) = fuzzy_scan(&hay, &needle, cfg) {
        return Some(al);
    }
    log.push(
        ResolveKind::UnmatchedEntity,
        format!("{entity_text:?} not found in chunk at {}", chunk.base),
    );
    None
}

/// Edit distance with unit costs, single-row dynamic programming.
pub(crate) fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let next = (row[j + 1] + 1).min(row[j] + 1).min(diag + usize::from(ca != cb));
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

fn fuzzy_scan(hay: &[char], needle: &[char], cfg: &AlignConfig) -> Option<Alignment> {
    let n = needle.len();
    let lo = n.saturating_sub(cfg.window_slack).max(1);
    let hi = (n + cfg.window_slack).min(hay.len());
    // (distance, start, length difference, length)
    let mut best: Option<(usize, usize, usize, usize)> = None;
    for len in lo..=hi {
        for start in 0..=hay.len() - len {
            let lower_bound = len.abs_diff(n);
            if best.is_some_and(|b| lower_bound > b.0) {
                continue;
            }
            let d = levenshtein(&hay[start..start + len], needle);
            let cand = (d, start, len.abs_diff(n), len);
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
    }
    let (distance, start, _, len) = best?;
    let normalized = distance as f64 / len.max(n) as f64;
    (normalized <= cfg.max_normalized_distance).then_some(Alignment {
        start,
        end: start + len,
        method: AlignMethod::Fuzzy { distance, normalized },
    })
}
