use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::evalsuite::{scoring_units, Counts, EvalError, EvalOptions, Level, Mode};
use crate::model::{AnnotationSet, FieldType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Precision,
    Recall,
    F1,
}

impl Statistic {
    pub fn of(self, c: &Counts) -> f64 {
        match self {
            Statistic::Precision => c.precision(),
            Statistic::Recall => c.recall(),
            Statistic::F1 => crate::evalsuite::f_beta(c.precision(), c.recall(), 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Precision => "precision",
            Statistic::Recall => "recall",
            Statistic::F1 => "f1",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "precision" | "p" => Ok(Statistic::Precision),
            "recall" | "r" => Ok(Statistic::Recall),
            "f1" | "f" => Ok(Statistic::F1),
            _ => Err(format!("unknown statistic `{s}` (expected precision, recall or f1)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub mode: Mode,
    pub level: Level,
    pub statistic: Statistic,
    #[serde(default)]
    pub options: EvalOptions,
}

impl MetricSpec {
    pub fn new(mode: Mode, level: Level, statistic: Statistic) -> Self {
        Self {
            mode,
            level,
            statistic,
            options: EvalOptions::default(),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.mode, self.level, self.statistic)
    }
}

/// One scored output of a labeling method. `occurrence` separates repeated
/// token units within a document; `entry_key` is set for horizontal metrics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutputItem {
    pub doc_id: String,
    pub field_type: FieldType,
    pub start: usize,
    pub end: usize,
    pub entry_key: Option<String>,
    pub occurrence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub metric: String,
    #[serde(rename = "delta")]
    pub delta_observed: f64,
    pub p_value: f64,
    #[serde(rename = "n")]
    pub n_resamples: usize,
    pub percentile_95: f64,
    pub seed: u64,
}

fn items_of(doc_id: &str, units: Vec<crate::evalsuite::ScoringUnit>) -> Vec<OutputItem> {
    let mut seen: HashMap<crate::evalsuite::ScoringUnit, usize> = HashMap::new();
    units
        .into_iter()
        .map(|u| {
            let k = seen.entry(u.clone()).or_insert(0);
            let occurrence = *k;
            *k += 1;
            OutputItem {
                doc_id: doc_id.to_string(),
                field_type: u.field_type,
                start: u.start,
                end: u.end,
                entry_key: u.entry_key,
                occurrence,
            }
        })
        .collect()
}

/// Gold items and the items of one method over a corpus. Gold documents
/// without a prediction contribute gold items only.
pub fn output_items(
    gold: &[AnnotationSet],
    pred: &[AnnotationSet],
    spec: &MetricSpec,
) -> Result<(Vec<OutputItem>, Vec<OutputItem>), AnalysisError> {
    let by_id: HashMap<&str, &AnnotationSet> = pred.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
    if let Some(p) = pred.iter().find(|p| !gold_ids.contains(p.doc_id.as_str())) {
        return Err(EvalError::UnknownDocument(p.doc_id.clone()).into());
    }
    let mut gold_items = Vec::new();
    let mut pred_items = Vec::new();
    for g in gold {
        let empty;
        let p = match by_id.get(g.doc_id.as_str()) {
            Some(p) => *p,
            None => {
                empty = AnnotationSet::new(g.doc_id.clone(), g.source);
                &empty
            }
        };
        let (gu, pu) = scoring_units(g, p, spec.level, spec.mode, &spec.options)?;
        gold_items.extend(items_of(&g.doc_id, gu));
        pred_items.extend(items_of(&g.doc_id, pu));
    }
    Ok((gold_items, pred_items))
}

fn counts(tp: u64, size: u64, gold_size: u64) -> Counts {
    Counts {
        tp,
        fp: size - tp,
        fn_: gold_size - tp,
    }
}

/// Approximate randomization test of `f(A) - f(B)`, one-sided.
///
/// Items produced by exactly one method are reassigned to either side with
/// probability one half; shared items stay on both. Resample `i` draws from
/// a ChaCha8 stream `i` seeded with `seed`, so results do not depend on
/// thread scheduling. `p = (1 + #{Δ' ≥ Δ}) / (n + 1)`.
pub fn randomization_test(
    gold: &[AnnotationSet],
    pred_a: &[AnnotationSet],
    pred_b: &[AnnotationSet],
    spec: &MetricSpec,
    n: usize,
    seed: u64,
) -> Result<SignificanceResult, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::NoResamples);
    }
    let (gold_items, a_items) = output_items(gold, pred_a, spec)?;
    let (_, b_items) = output_items(gold, pred_b, spec)?;

    let gold_set: HashSet<&OutputItem> = gold_items.iter().collect();
    let a_set: HashSet<&OutputItem> = a_items.iter().collect();
    let b_set: HashSet<&OutputItem> = b_items.iter().collect();
    let g = gold_set.len() as u64;

    let shared: Vec<&OutputItem> = a_set.intersection(&b_set).copied().collect();
    let q_size = shared.len() as u64;
    let q_tp = shared.iter().filter(|i| gold_set.contains(*i)).count() as u64;

    // unique items only need to remember whether they are correct
    let mut unique: Vec<&OutputItem> = a_set.symmetric_difference(&b_set).copied().collect();
    unique.sort();
    let unique_hits: Vec<bool> = unique.iter().map(|i| gold_set.contains(*i)).collect();

    let stat = |tp: u64, size: u64| spec.statistic.of(&counts(tp, size, g));
    let tp_of = |set: &HashSet<&OutputItem>| set.iter().filter(|i| gold_set.contains(*i)).count() as u64;
    let delta = stat(tp_of(&a_set), a_set.len() as u64) - stat(tp_of(&b_set), b_set.len() as u64);

    let mut resampled: Vec<f64> = if unique.is_empty() {
        vec![0.0; n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let (mut a_tp, mut a_n, mut b_tp, mut b_n) = (q_tp, q_size, q_tp, q_size);
                for &hit in &unique_hits {
                    if rng.random::<bool>() {
                        a_n += 1;
                        a_tp += u64::from(hit);
                    } else {
                        b_n += 1;
                        b_tp += u64::from(hit);
                    }
                }
                stat(a_tp, a_n) - stat(b_tp, b_n)
            })
            .collect()
    };

    // tolerate rounding when Δ' and Δ are the same ratio computed differently
    let at_least = resampled.iter().filter(|&&d| d >= delta - 1e-12).count();
    resampled.sort_by(f64::total_cmp);
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;

    Ok(SignificanceResult {
        metric: spec.to_string(),
        delta_observed: delta,
        p_value: (1 + at_least) as f64 / (n + 1) as f64,
        n_resamples: n,
        percentile_95: resampled[rank],
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Document, FieldSpan, Source};

    fn gold_corpus(n_spans: usize) -> (Vec<AnnotationSet>, Document) {
        let text = "word ".repeat(n_spans);
        let doc = Document::new("d", text);
        let mut g = AnnotationSet::new("d", Source::Gold);
        for i in 0..n_spans {
            g.insert_span(FieldSpan::from_doc(&doc, FieldType::Dose, i * 5, i * 5 + 4).unwrap());
        }
        (vec![g], doc)
    }

    fn subset(g: &AnnotationSet, keep: impl Fn(usize) -> bool, source: Source) -> AnnotationSet {
        let mut out = AnnotationSet::new(g.doc_id.clone(), source);
        for (i, s) in g.spans.iter().enumerate() {
            if keep(i) {
                out.insert_span(s.clone());
            }
        }
        out
    }

    fn spec(statistic: Statistic) -> MetricSpec {
        MetricSpec::new(Mode::Vertical, Level::Phrase, statistic)
    }

    #[test]
    fn identical_methods() {
        let (g, _) = gold_corpus(8);
        let a = vec![subset(&g[0], |i| i % 2 == 0, Source::LlmIob)];
        let r = randomization_test(&g, &a, &a, &spec(Statistic::F1), 200, 1).unwrap();
        assert_eq!(r.delta_observed, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.percentile_95, 0.0);
    }

    #[test]
    fn perfect_versus_empty() {
        let (g, _) = gold_corpus(20);
        let a = vec![subset(&g[0], |_| true, Source::LlmIob)];
        let b = vec![subset(&g[0], |_| false, Source::LlmDirect)];
        let r = randomization_test(&g, &a, &b, &spec(Statistic::Recall), 1000, 7).unwrap();
        assert_eq!(r.delta_observed, 1.0);
        assert!(r.p_value <= 0.01, "{}", r.p_value);
        assert!(r.percentile_95 < 1.0);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (g, _) = gold_corpus(12);
        let a = vec![subset(&g[0], |i| i % 3 != 0, Source::LlmIob)];
        let b = vec![subset(&g[0], |i| i % 2 == 0, Source::LlmDirect)];
        let s = spec(Statistic::F1);
        let r1 = randomization_test(&g, &a, &b, &s, 300, 42).unwrap();
        let r2 = randomization_test(&g, &a, &b, &s, 300, 42).unwrap();
        assert_eq!(r1, r2);
        let r3 = randomization_test(&g, &a, &b, &s, 300, 43).unwrap();
        assert_eq!(r1.delta_observed, r3.delta_observed);
    }

    #[test]
    fn disjoint_halves_are_balanced() {
        let (g, _) = gold_corpus(10);
        let a = vec![subset(&g[0], |i| i < 5, Source::LlmIob)];
        let b = vec![subset(&g[0], |i| i >= 5, Source::LlmDirect)];
        let mut ps = Vec::new();
        for seed in 0..20 {
            let r = randomization_test(&g, &a, &b, &spec(Statistic::Recall), 1000, seed).unwrap();
            assert_eq!(r.delta_observed, 0.0);
            ps.push(r.p_value);
        }
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        // P(Δ' >= 0) for a symmetric binomial on 10 coins is 0.623
        assert!((mean - 0.623).abs() < 0.1, "{mean}");
    }

    #[test]
    fn p_value_formula() {
        let (g, _) = gold_corpus(6);
        let a = vec![subset(&g[0], |i| i < 4, Source::LlmIob)];
        let b = vec![subset(&g[0], |i| i < 2, Source::LlmDirect)];
        let s = spec(Statistic::Recall);
        let n = 500;
        let r = randomization_test(&g, &a, &b, &s, n, 3).unwrap();
        // two unique items, both correct; Δ' >= Δ only when both land on A
        let at_least = (r.p_value * (n + 1) as f64).round() as usize - 1;
        assert!((at_least as f64 / n as f64 - 0.25).abs() < 0.06);
        assert!((r.delta_observed - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_resamples_rejected() {
        let (g, _) = gold_corpus(2);
        assert_eq!(
            randomization_test(&g, &g, &g, &spec(Statistic::F1), 0, 0),
            Err(AnalysisError::NoResamples)
        );
    }

    #[test]
    fn repeated_tokens_get_occurrences() {
        let doc = Document::new("d", "20 mg 20 mg");
        let mut p = AnnotationSet::new("d", Source::LlmIob);
        p.insert_span(FieldSpan::from_doc(&doc, FieldType::Dose, 0, 5).unwrap());
        p.insert_span(FieldSpan::from_doc(&doc, FieldType::Dose, 0, 2).unwrap());
        let g = AnnotationSet::new("d", Source::Gold);
        let s = MetricSpec::new(Mode::Vertical, Level::Token, Statistic::F1);
        let (_, items) = output_items(&[g], &[p], &s).unwrap();
        let occ: Vec<usize> = items.iter().map(|i| i.occurrence).collect();
        assert_eq!(items.len(), 3);
        assert!(occ.contains(&1));
    }
}
