//! Chunk, prompt, generate, resolve and ensemble a corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medanno_core::chunker::{chunk_document, DEFAULT_DIRECT_CHUNK, DEFAULT_IOB_CHUNK};
use medanno_core::ensemble::ensemble_union;
use medanno_core::model::{atomic_write, read_corpus, write_annotation_sets, AnnotationSet, Document, Source};
use medanno_core::prompting::{
    build_prompt, generate, Backend, BackendConfig, GenParams, PromptTemplate, RecordingBackend, Schema,
};
use medanno_core::resolvers::{
    assemble_iob_entities, parse_direct_output, parse_iob_output, to_document_annotations, AlignConfig, ChunkEntity,
    LogRecord, ResolveKind,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Everything an `annotate` run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub schemas: Vec<Schema>,
    /// Template files overriding the built-in ones.
    pub templates: BTreeMap<Schema, PathBuf>,
    pub iob_chunk_size: usize,
    pub direct_chunk_size: usize,
    pub gen: GenParams,
    pub backend: BackendConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub ensemble: bool,
    pub workers: Option<usize>,
    /// Write every completion served to this fixture file.
    pub record: Option<PathBuf>,
    pub align: AlignConfig,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        Self {
            corpus: corpus.into(),
            schemas: vec![Schema::IobToken, Schema::DirectChunk],
            templates: BTreeMap::new(),
            iob_chunk_size: DEFAULT_IOB_CHUNK,
            direct_chunk_size: DEFAULT_DIRECT_CHUNK,
            gen: GenParams::default(),
            backend,
            out_dir: out_dir.into(),
            seed: 0,
            ensemble: true,
            workers: None,
            record: None,
            align: AlignConfig::default(),
        }
    }

    pub fn chunk_size(&self, schema: Schema) -> usize {
        match schema {
            Schema::IobToken => self.iob_chunk_size,
            Schema::DirectChunk => self.direct_chunk_size,
        }
    }
}

pub fn source_for(schema: Schema) -> Source {
    match schema {
        Schema::IobToken => Source::LlmIob,
        Schema::DirectChunk => Source::LlmDirect,
    }
}

/// One line of `resolve_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub source: Source,
    #[serde(flatten)]
    pub record: LogRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub sets: usize,
    pub entries: usize,
    pub spans: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub documents: usize,
    pub succeeded: usize,
    pub failures: Vec<DocFailure>,
    pub per_source: BTreeMap<Source, SourceSummary>,
    pub log_counts: BTreeMap<ResolveKind, usize>,
    pub truncated_chunks: usize,
    pub seed: u64,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

struct DocOutput {
    sets: Vec<AnnotationSet>,
    logs: Vec<RunLogRecord>,
    truncated: usize,
}

fn load_templates(cfg: &RunConfig) -> Result<BTreeMap<Schema, PromptTemplate>> {
    let mut out = BTreeMap::new();
    for &schema in &cfg.schemas {
        let tpl = match cfg.templates.get(&schema) {
            Some(path) => {
                let src = fs::read_to_string(path).with_context(|| format!("reading template {}", path.display()))?;
                let tpl =
                    PromptTemplate::parse(&src).with_context(|| format!("parsing template {}", path.display()))?;
                if tpl.schema != schema {
                    bail!("template {} is for schema {}, not {schema}", path.display(), tpl.schema);
                }
                tpl
            }
            None => PromptTemplate::builtin(schema),
        };
        out.insert(schema, tpl);
    }
    Ok(out)
}

fn resolve(schema: Schema, text: &str) -> (Vec<ChunkEntity>, medanno_core::resolvers::ResolveLog) {
    match schema {
        Schema::IobToken => {
            let (tags, mut log) = parse_iob_output(text);
            let (ents, more) = assemble_iob_entities(&tags);
            log.extend(more);
            (ents, log)
        }
        Schema::DirectChunk => parse_direct_output(text),
    }
}

fn annotate_document(
    doc: &Document,
    cfg: &RunConfig,
    templates: &BTreeMap<Schema, PromptTemplate>,
    backend: &dyn Backend,
) -> Result<DocOutput> {
    let mut sets = Vec::new();
    let mut logs = Vec::new();
    let mut truncated = 0;
    for &schema in &cfg.schemas {
        let tpl = &templates[&schema];
        let size = cfg.chunk_size(schema);
        let mut resolved = Vec::new();
        let mut chunk_logs = Vec::new();
        for chunk in chunk_document(doc, size) {
            let prompt = build_prompt(tpl, &chunk)?;
            let completion =
                generate(&prompt, &cfg.gen, backend).with_context(|| format!("{schema} chunk at {}", chunk.base))?;
            if completion.truncated {
                log::warn!(
                    "{}: {schema} completion for chunk at {} was truncated",
                    doc.doc_id,
                    chunk.base
                );
                truncated += 1;
            }
            let (entities, log) = resolve(schema, &completion.text);
            chunk_logs.extend(log.into_records(&doc.doc_id, chunk.base));
            resolved.push((chunk, entities));
        }
        let source = source_for(schema);
        let (mut set, lift_logs) = to_document_annotations(&resolved, doc, source, &cfg.align);
        chunk_logs.extend(lift_logs);
        // keep log order by chunk position, parse events before alignment events
        chunk_logs.sort_by_key(|r| r.chunk_base);
        set.meta.insert("schema".into(), schema.to_string());
        set.meta.insert("template_version".into(), tpl.version.clone());
        set.meta.insert("model_id".into(), cfg.gen.model_id.clone());
        set.meta
            .insert("temperature".into(), format!("{:?}", cfg.gen.temperature));
        set.meta
            .insert("max_decode_steps".into(), cfg.gen.max_decode_steps.to_string());
        set.meta.insert("chunk_size".into(), size.to_string());
        logs.extend(chunk_logs.into_iter().map(|record| RunLogRecord { source, record }));
        sets.push(set);
    }
    if cfg.ensemble && sets.len() == 2 {
        let mut ens = ensemble_union(&sets[0], &sets[1])?;
        ens.meta
            .retain(|k, _| k != "schema" && k != "template_version" && k != "chunk_size");
        sets.push(ens);
    }
    Ok(DocOutput { sets, logs, truncated })
}

fn output_file(dir: &Path, source: Source) -> PathBuf {
    dir.join(format!("{source}.jsonl"))
}

/// Run the pipeline over the corpus and write one JSONL file per source,
/// `resolve_log.jsonl` and `summary.json` to the output directory. A document
/// whose generation fails is skipped and listed in the summary; the rest of
/// the run continues.
pub fn run_annotate(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.schemas.is_empty() {
        bail!("no schema selected");
    }
    let docs = read_corpus(&cfg.corpus)?;
    let templates = load_templates(cfg)?;
    let backend = cfg
        .backend
        .build()
        .map_err(anyhow::Error::msg)
        .context("building backend")?;
    match &cfg.record {
        Some(path) => {
            let recorder = RecordingBackend::new(backend);
            let summary = run_with(cfg, &docs, &templates, &recorder)?;
            recorder
                .write_fixtures(path)
                .with_context(|| format!("writing fixtures to {}", path.display()))?;
            Ok(summary)
        }
        None => run_with(cfg, &docs, &templates, backend.as_ref()),
    }
}

fn run_with(
    cfg: &RunConfig,
    docs: &[Document],
    templates: &BTreeMap<Schema, PromptTemplate>,
    backend: &dyn Backend,
) -> Result<RunSummary> {
    let work = || -> Vec<(String, Result<DocOutput>)> {
        docs.par_iter()
            .map(|doc| (doc.doc_id.clone(), annotate_document(doc, cfg, templates, backend)))
            .collect()
    };
    let results = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()?
            .install(work),
        None => work(),
    };

    let mut summary = RunSummary {
        documents: docs.len(),
        seed: cfg.seed,
        ..RunSummary::default()
    };
    let mut by_source: BTreeMap<Source, Vec<AnnotationSet>> = BTreeMap::new();
    let mut logs = Vec::new();
    for (doc_id, result) in results {
        match result {
            Ok(out) => {
                summary.succeeded += 1;
                summary.truncated_chunks += out.truncated;
                for set in out.sets {
                    by_source.entry(set.source).or_default().push(set);
                }
                logs.extend(out.logs);
            }
            Err(e) => {
                log::error!("{doc_id}: {e:#}");
                summary.failures.push(DocFailure {
                    doc_id,
                    error: format!("{e:#}"),
                });
            }
        }
    }

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut sources: Vec<Source> = cfg.schemas.iter().map(|&s| source_for(s)).collect();
    if cfg.ensemble && cfg.schemas.len() == 2 {
        sources.push(Source::LlmEnsemble);
    }
    for source in sources {
        let sets = by_source.remove(&source).unwrap_or_default();
        let s = summary.per_source.entry(source).or_default();
        s.sets = sets.len();
        s.entries = sets.iter().map(|x| x.entries.len()).sum();
        s.spans = sets.iter().map(|x| x.spans.len()).sum();
        write_annotation_sets(&output_file(&cfg.out_dir, source), &sets)?;
    }
    for r in &logs {
        *summary.log_counts.entry(r.record.kind).or_insert(0) += 1;
    }
    medanno_core::model::write_jsonl(&cfg.out_dir.join("resolve_log.jsonl"), &logs)?;
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    atomic_write(&cfg.out_dir.join("summary.json"), &json)?;
    Ok(summary)
}
