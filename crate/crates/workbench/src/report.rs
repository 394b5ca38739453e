//! Metric tables, significance tests, correction diffs and the time
//! regression for one gold corpus and several prediction sources.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medanno_core::analysis::{
    diff_corrections, randomization_test, regress_time, MetricSpec, SignificanceResult, Statistic, TimeRow,
};
use medanno_core::evalsuite::{evaluate_corpus, EvalOptions, Level, MetricsReport, Mode};
use medanno_core::model::{atomic_write, read_annotation_sets, AnnotationSet};
use serde::{Deserialize, Serialize};

/// Load annotation sets from a JSONL file.
pub fn load_sets(path: &Path) -> Result<Vec<AnnotationSet>> {
    read_annotation_sets(path).with_context(|| format!("reading {}", path.display()))
}

/// Document ids listed one per line; blank lines and `#` comments skipped.
pub fn read_subset(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Keep the sets whose document is in `subset`. Returns the subset ids that
/// matched nothing in `known`, each of which is also logged as a warning.
pub fn restrict(sets: &mut Vec<AnnotationSet>, subset: &BTreeSet<String>, known: &BTreeSet<String>) -> Vec<String> {
    sets.retain(|s| subset.contains(&s.doc_id));
    let unknown: Vec<String> = subset.difference(known).cloned().collect();
    for id in &unknown {
        log::warn!("subset names unknown document `{id}`; skipped");
    }
    unknown
}

pub fn doc_ids(sets: &[AnnotationSet]) -> BTreeSet<String> {
    sets.iter().map(|s| s.doc_id.clone()).collect()
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
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
    pub f_beta: f64,
    pub beta: f64,
}

pub fn report_rows(method: &str, report: &MetricsReport, beta: f64) -> Vec<ReportRow> {
    report
        .per_field
        .iter()
        .map(|(ft, s)| (ft.as_str(), s))
        .chain(std::iter::once(("overall", &report.overall)))
        .map(|(field, s)| ReportRow {
            method: method.to_string(),
            level: report.level,
            mode: report.mode,
            field: field.to_string(),
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            f_beta: s.f_beta(beta),
            beta,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    atomic_write(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

/// Per-document correction counts of `refined` against `base`, with the
/// refiner id from the `rater_id` meta key and active seconds from the
/// refined set's timing record. Documents missing from either side are
/// skipped.
pub fn diff_rows(base: &[AnnotationSet], refined: &[AnnotationSet]) -> Result<Vec<TimeRow>> {
    let by_id: BTreeMap<&str, &AnnotationSet> = base.iter().map(|b| (b.doc_id.as_str(), b)).collect();
    let mut rows = Vec::new();
    for r in refined {
        let Some(b) = by_id.get(r.doc_id.as_str()) else {
            log::warn!("{}: no base annotations; skipped in diff", r.doc_id);
            continue;
        };
        let d = diff_corrections(b, r)?;
        rows.push(TimeRow {
            doc_id: r.doc_id.clone(),
            rater_id: r.meta.get("rater_id").cloned().unwrap_or_default(),
            seconds_active: r.timing.as_ref().map_or(0.0, |t| t.seconds_active),
            added: d.added as u32,
            modified: d.modified as u32,
            deleted: d.deleted as u32,
        });
    }
    Ok(rows)
}

pub fn read_time_rows(path: &Path) -> Result<Vec<TimeRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        rows.push(r.with_context(|| format!("{}: row {}", path.display(), i + 1))?);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ReportConfig {
    pub gold: PathBuf,
    /// Named prediction files, in output order.
    pub preds: Vec<(String, PathBuf)>,
    pub out_dir: PathBuf,
    /// Method pairs to test for significance.
    pub pairs: Vec<(String, String)>,
    pub base: Option<PathBuf>,
    pub refined: Option<PathBuf>,
    pub subset: Option<PathBuf>,
    pub options: EvalOptions,
    pub beta: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportSummary {
    pub documents: Vec<String>,
    /// Per method, gold documents it has no annotations for.
    pub missing: BTreeMap<String, Vec<String>>,
    pub unknown_subset_ids: Vec<String>,
    pub files: Vec<String>,
}

/// Write `metrics.csv`, `metrics.json`, `significance.json` (when pairs are
/// requested), `diff.csv` and `regression.json` (when base and refined are
/// given) and `report.json` to the output directory. Scoring runs on the
/// documents every source covers.
pub fn run_report(cfg: &ReportConfig) -> Result<ReportSummary> {
    let mut gold = load_sets(&cfg.gold)?;
    let mut preds: Vec<(String, Vec<AnnotationSet>)> = Vec::new();
    for (name, path) in &cfg.preds {
        if preds.iter().any(|(n, _)| n == name) {
            bail!("method `{name}` given twice");
        }
        preds.push((name.clone(), load_sets(path)?));
    }
    for (a, b) in &cfg.pairs {
        for m in [a, b] {
            if !preds.iter().any(|(n, _)| n == m) {
                bail!("pair names unknown method `{m}`");
            }
        }
    }

    let mut summary = ReportSummary::default();
    if let Some(path) = &cfg.subset {
        let subset = read_subset(path)?;
        let known = doc_ids(&gold);
        summary.unknown_subset_ids = restrict(&mut gold, &subset, &known);
    }

    let mut keep = doc_ids(&gold);
    for (name, sets) in &preds {
        let have = doc_ids(sets);
        let missing: Vec<String> = keep.iter().filter(|id| !have.contains(*id)).cloned().collect();
        if !missing.is_empty() {
            log::warn!(
                "{name}: no annotations for {} document(s): {}",
                missing.len(),
                missing.join(", ")
            );
            summary.missing.insert(name.clone(), missing);
        }
    }
    for (_, sets) in &preds {
        let have = doc_ids(sets);
        keep.retain(|id| have.contains(id));
    }
    gold.retain(|g| keep.contains(&g.doc_id));
    for (_, sets) in &mut preds {
        sets.retain(|s| keep.contains(&s.doc_id));
    }
    summary.documents = keep.iter().cloned().collect();

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut rows = Vec::new();
    let mut reports: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for (name, sets) in &preds {
        for level in Level::ALL {
            for mode in Mode::ALL {
                let report = evaluate_corpus(&gold, sets, level, mode, &cfg.options)?;
                rows.extend(report_rows(name, &report, cfg.beta));
                reports.entry(name.clone()).or_default().push(report);
            }
        }
    }
    write_csv(&cfg.out_dir.join("metrics.csv"), &rows)?;
    write_json(&cfg.out_dir.join("metrics.json"), &reports)?;
    summary
        .files
        .extend(["metrics.csv".to_string(), "metrics.json".to_string()]);

    if !cfg.pairs.is_empty() {
        let get = |m: &str| &preds.iter().find(|(n, _)| n == m).unwrap().1;
        let mut results: Vec<SignificanceEntry> = Vec::new();
        for (a, b) in &cfg.pairs {
            for mode in Mode::ALL {
                for level in Level::ALL {
                    for statistic in [Statistic::Precision, Statistic::Recall, Statistic::F1] {
                        let spec = MetricSpec {
                            mode,
                            level,
                            statistic,
                            options: cfg.options,
                        };
                        let result = randomization_test(&gold, get(a), get(b), &spec, cfg.n_resamples, cfg.seed)?;
                        results.push(SignificanceEntry {
                            a: a.clone(),
                            b: b.clone(),
                            result,
                        });
                    }
                }
            }
        }
        write_json(&cfg.out_dir.join("significance.json"), &results)?;
        summary.files.push("significance.json".into());
    }

    match (&cfg.base, &cfg.refined) {
        (Some(base), Some(refined)) => {
            let mut base = load_sets(base)?;
            let mut refined = load_sets(refined)?;
            if cfg.subset.is_some() {
                base.retain(|s| keep.contains(&s.doc_id));
                refined.retain(|s| keep.contains(&s.doc_id));
            }
            let time_rows = diff_rows(&base, &refined)?;
            write_csv(&cfg.out_dir.join("diff.csv"), &time_rows)?;
            let regression = match regress_time(&time_rows) {
                Ok(r) => serde_json::to_value(r)?,
                Err(e) => {
                    log::warn!("regression skipped: {e}");
                    serde_json::json!({ "error": e.to_string() })
                }
            };
            write_json(&cfg.out_dir.join("regression.json"), &regression)?;
            summary
                .files
                .extend(["diff.csv".to_string(), "regression.json".to_string()]);
        }
        (None, None) => {}
        _ => bail!("--base and --refined go together"),
    }

    summary.files.push("report.json".into());
    write_json(&cfg.out_dir.join("report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: SignificanceResult,
}

#[cfg(test)]
mod tests {
    use super::*;
    use medanno_core::model::{Document, FieldSpan, FieldType, MedicationEntry, Source};

    fn gold() -> AnnotationSet {
        let doc = Document::new("d1", "Take aspirin 81 mg daily");
        let mut set = AnnotationSet::new("d1", Source::Gold);
        let mut e = MedicationEntry::new("e1");
        for (ft, s, t) in [
            (FieldType::Name, 5, 12),
            (FieldType::Dose, 13, 18),
            (FieldType::Frequency, 19, 24),
        ] {
            e.push_field(set.insert_span(FieldSpan::from_doc(&doc, ft, s, t).unwrap()));
        }
        set.entries.push(e);
        set
    }

    #[test]
    fn gold_against_itself_is_all_ones() {
        let g = vec![gold()];
        let report = evaluate_corpus(&g, &g, Level::Token, Mode::Horizontal, &EvalOptions::default()).unwrap();
        for row in report_rows("gold", &report, 2.0) {
            if row.tp > 0 {
                assert_eq!(
                    (row.precision, row.recall, row.f1, row.f_beta),
                    (1.0, 1.0, 1.0, 1.0),
                    "{row:?}"
                );
            }
        }
    }

    #[test]
    fn restrict_reports_unknown_ids() {
        let mut sets = vec![gold()];
        let known = doc_ids(&sets);
        let subset = BTreeSet::from(["d1".to_string(), "nope".to_string()]);
        assert_eq!(restrict(&mut sets, &subset, &known), vec!["nope".to_string()]);
        assert_eq!(sets.len(), 1);
    }

    #[test]
    fn diff_rows_read_rater_and_timing() {
        let base = gold();
        let mut refined = gold().with_source(Source::Refined);
        refined.spans.retain(|s| s.field_type != FieldType::Frequency);
        refined.entries[0]
            .fields
            .retain(|k| k.field_type != FieldType::Frequency);
        refined.meta.insert("rater_id".into(), "r7".into());
        refined.timing = Some(medanno_core::model::TimingRecord {
            seconds_active: 42.0,
            events: vec![],
        });
        let rows = diff_rows(&[base], &[refined]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].added, rows[0].modified, rows[0].deleted), (0, 0, 1));
        assert_eq!(rows[0].rater_id, "r7");
        assert_eq!(rows[0].seconds_active, 42.0);
    }
}
