//! Vertical and horizontal span metrics at phrase and token level.
//!
//! Vertical scoring compares `(field_type, start, end)` units only. Horizontal
//! scoring additionally requires a predicted unit to sit in the entry that
//! was aligned to the gold entry holding the matching gold unit. Both modes
//! reduce to multiset intersection over [`ScoringUnit`]s; horizontal units
//! carry an entry key, so horizontal counts can never exceed vertical ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotationSet, FieldSpan, FieldType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Phrase,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vertical,
    Horizontal,
}

impl Level {
    pub const ALL: [Level; 2] = [Level::Phrase, Level::Token];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Phrase => "phrase",
            Level::Token => "token",
        }
    }
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Vertical, Mode::Horizontal];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vertical => "vertical",
            Mode::Horizontal => "horizontal",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "phrase" => Ok(Level::Phrase),
            "token" => Ok(Level::Token),
            _ => Err(format!("unknown level `{s}` (expected phrase or token)")),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vertical" => Ok(Mode::Vertical),
            "horizontal" => Ok(Mode::Horizontal),
            _ => Err(format!("unknown mode `{s}` (expected vertical or horizontal)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("document mismatch: gold {gold} vs pred {pred}")]
    DocMismatch { gold: String, pred: String },
    #[error("cannot aggregate reports with different level or mode")]
    MixedConfig,
    #[error("prediction for unknown document {0}")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score Reason spans too; they are left out by default.
    pub include_reason: bool,
}

impl EvalOptions {
    pub fn field_types(&self) -> Vec<FieldType> {
        FieldType::ALL
            .into_iter()
            .filter(|ft| self.include_reason || ft.is_default_scoring())
            .collect()
    }
}

/// `(1 + β²)·p·r / (β²·p + r)`, zero when the denominator is zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Scores {
    pub fn from_counts(c: Counts) -> Self {
        let (p, r) = (c.precision(), c.recall());
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: p,
            recall: r,
            f1: f_beta(p, r, 1.0),
            f2: f_beta(p, r, 2.0),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }

    pub fn f_beta(&self, beta: f64) -> f64 {
        f_beta(self.precision, self.recall, beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub mode: Mode,
    pub overall: Scores,
    pub per_field: BTreeMap<FieldType, Scores>,
    pub doc_count: usize,
}

/// One CSV/JSON row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub level: Level,
    pub mode: Mode,
    pub field: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
}

impl MetricsReport {
    fn from_field_counts(level: Level, mode: Mode, per_field: BTreeMap<FieldType, Counts>, doc_count: usize) -> Self {
        let mut overall = Counts::default();
        for c in per_field.values() {
            overall.add(*c);
        }
        Self {
            level,
            mode,
            overall: Scores::from_counts(overall),
            per_field: per_field
                .into_iter()
                .map(|(ft, c)| (ft, Scores::from_counts(c)))
                .collect(),
            doc_count,
        }
    }

    /// Per-field rows followed by the overall row.
    pub fn rows(&self) -> Vec<MetricsRow> {
        let row = |field: &str, s: &Scores| MetricsRow {
            level: self.level,
            mode: self.mode,
            field: field.to_string(),
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            f2: s.f2,
        };
        let mut rows: Vec<MetricsRow> = self.per_field.iter().map(|(ft, s)| row(ft.as_str(), s)).collect();
        rows.push(row("overall", &self.overall));
        rows
    }
}

/// The thing being counted: a whole span or one whitespace token of it, and
/// for horizontal scoring the gold entries it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoringUnit {
    pub field_type: FieldType,
    pub start: usize,
    pub end: usize,
    /// Gold entry indices (comma-joined) the unit belongs to, `""` for an
    /// orphan, [`UNALIGNED`] when a predicted entry it sits in has no gold
    /// counterpart. Always `None` in vertical mode.
    pub entry_key: Option<String>,
}

pub const UNALIGNED: &str = "unaligned";

/// Character ranges of the whitespace-separated tokens of a span.
pub fn span_tokens(span: &FieldSpan) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    let mut n = 0;
    for (i, c) in span.text.chars().enumerate() {
        n = i + 1;
        match (c.is_whitespace(), open) {
            (true, Some(s)) => {
                out.push((span.start + s, span.start + i));
                open = None;
            }
            (false, None) => open = Some(i),
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push((span.start + s, span.start + n));
    }
    out
}

/// For each predicted entry, the gold entry it is aligned to.
///
/// The gold entry with the largest summed Name overlap wins; ties go to the
/// gold entry whose first Name starts leftmost, then to the lower index. No
/// Name overlap means no alignment.
pub fn align_entries(gold: &AnnotationSet, pred: &AnnotationSet) -> Vec<Option<usize>> {
    let gold_first_name: Vec<usize> = gold
        .entries
        .iter()
        .map(|g| g.names().map(|k| k.start).min().unwrap_or(usize::MAX))
        .collect();
    pred.entries
        .iter()
        .map(|p| {
            gold.entries
                .iter()
                .enumerate()
                .map(|(gi, g)| {
                    let overlap: usize = p.names().flat_map(|pn| g.names().map(move |gn| pn.overlap(gn))).sum();
                    (gi, overlap)
                })
                .filter(|&(_, o)| o > 0)
                .min_by_key(|&(gi, o)| (std::cmp::Reverse(o), gold_first_name[gi], gi))
                .map(|(gi, _)| gi)
        })
        .collect()
}

fn join_key(ids: &BTreeSet<usize>) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn expand(span: &FieldSpan, level: Level, entry_key: Option<String>, out: &mut Vec<ScoringUnit>) {
    let ranges = match level {
        Level::Phrase => vec![(span.start, span.end)],
        Level::Token => span_tokens(span),
    };
    for (start, end) in ranges {
        out.push(ScoringUnit {
            field_type: span.field_type,
            start,
            end,
            entry_key: entry_key.clone(),
        });
    }
}

/// Gold and predicted scoring units for one document. Both lists are in span
/// table order and may hold repeated units at token level.
pub fn scoring_units(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    level: Level,
    mode: Mode,
    opts: &EvalOptions,
) -> Result<(Vec<ScoringUnit>, Vec<ScoringUnit>), EvalError> {
    if gold.doc_id != pred.doc_id {
        return Err(EvalError::DocMismatch {
            gold: gold.doc_id.clone(),
            pred: pred.doc_id.clone(),
        });
    }
    let keep = |s: &&FieldSpan| opts.include_reason || s.field_type.is_default_scoring();
    let alignment = match mode {
        Mode::Vertical => Vec::new(),
        Mode::Horizontal => align_entries(gold, pred),
    };

    let mut gold_units = Vec::new();
    for span in gold.spans.iter().filter(keep) {
        let key = (mode == Mode::Horizontal).then(|| {
            let ids: BTreeSet<usize> = gold.memberships(&span.key()).into_iter().collect();
            join_key(&ids)
        });
        expand(span, level, key, &mut gold_units);
    }

    let mut pred_units = Vec::new();
    for span in pred.spans.iter().filter(keep) {
        let key = (mode == Mode::Horizontal).then(|| {
            let mapped: Option<BTreeSet<usize>> = pred
                .memberships(&span.key())
                .into_iter()
                .map(|pi| alignment[pi])
                .collect();
            match mapped {
                Some(ids) => join_key(&ids),
                None => UNALIGNED.to_string(),
            }
        });
        expand(span, level, key, &mut pred_units);
    }
    Ok((gold_units, pred_units))
}

/// Per-field counts from multiset intersection of units.
pub fn count_units(
    gold: &[ScoringUnit],
    pred: &[ScoringUnit],
    field_types: &[FieldType],
) -> BTreeMap<FieldType, Counts> {
    let mut remaining: HashMap<&ScoringUnit, u64> = HashMap::new();
    for g in gold {
        *remaining.entry(g).or_insert(0) += 1;
    }
    let mut out: BTreeMap<FieldType, Counts> = field_types.iter().map(|&ft| (ft, Counts::default())).collect();
    for p in pred {
        let c = out.entry(p.field_type).or_default();
        match remaining.get_mut(p) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    for (g, n) in remaining {
        out.entry(g.field_type).or_default().fn_ += n;
    }
    out
}

pub fn compute(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    level: Level,
    mode: Mode,
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    let (g, p) = scoring_units(gold, pred, level, mode, opts)?;
    let counts = count_units(&g, &p, &opts.field_types());
    Ok(MetricsReport::from_field_counts(level, mode, counts, 1))
}

pub fn compute_vertical(gold: &AnnotationSet, pred: &AnnotationSet, level: Level) -> Result<MetricsReport, EvalError> {
    compute(gold, pred, level, Mode::Vertical, &EvalOptions::default())
}

pub fn compute_horizontal(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    level: Level,
) -> Result<MetricsReport, EvalError> {
    compute(gold, pred, level, Mode::Horizontal, &EvalOptions::default())
}

/// Micro-average: sum counts over documents, then recompute the rates.
pub fn aggregate(level: Level, mode: Mode, reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let mut per_field: BTreeMap<FieldType, Counts> = BTreeMap::new();
    let mut docs = 0;
    for r in reports {
        if r.level != level || r.mode != mode {
            return Err(EvalError::MixedConfig);
        }
        for (ft, s) in &r.per_field {
            per_field.entry(*ft).or_default().add(s.counts());
        }
        docs += r.doc_count;
    }
    if reports.is_empty() {
        per_field = EvalOptions::default()
            .field_types()
            .into_iter()
            .map(|ft| (ft, Counts::default()))
            .collect();
    }
    Ok(MetricsReport::from_field_counts(level, mode, per_field, docs))
}

/// Score a corpus. Predictions are matched to gold by document id; a gold
/// document with no prediction is scored against an empty set.
pub fn evaluate_corpus(
    gold: &[AnnotationSet],
    pred: &[AnnotationSet],
    level: Level,
    mode: Mode,
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
    if let Some(p) = pred.iter().find(|p| !gold_ids.contains(p.doc_id.as_str())) {
        return Err(EvalError::UnknownDocument(p.doc_id.clone()));
    }
    let by_id: HashMap<&str, &AnnotationSet> = pred.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut reports = Vec::with_capacity(gold.len());
    for g in gold {
        let report = match by_id.get(g.doc_id.as_str()) {
            Some(p) => compute(g, p, level, mode, opts)?,
            None => compute(g, &AnnotationSet::new(g.doc_id.clone(), g.source), level, mode, opts)?,
        };
        reports.push(report);
    }
    let mut out = aggregate(level, mode, &reports)?;
    if reports.is_empty() {
        out.per_field = opts
            .field_types()
            .into_iter()
            .map(|ft| (ft, Scores::from_counts(Counts::default())))
            .collect();
    }
    Ok(out)
}
