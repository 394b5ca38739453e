use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use medanno::pipeline::{run_annotate, RunConfig};
use medanno::report::{
    diff_rows, doc_ids, load_sets, read_subset, read_time_rows, report_rows, restrict, run_report, write_csv,
    ReportConfig,
};
use medanno::server;
use medanno::store::Store;
use medanno_core::analysis::{randomization_test, regress_time, MetricSpec, Statistic};
use medanno_core::ensemble::ensemble_union;
use medanno_core::evalsuite::{evaluate_corpus, EvalOptions, Level, Mode};
use medanno_core::model::{
    import_gold_corpus, write_annotation_sets, write_corpus, AnnotationSet, CorpusFormat, Source,
};
use medanno_core::prompting::{BackendConfig, Schema};

#[derive(Parser)]
#[command(name = "medanno", version, about = "Medication annotation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Iob,
    Direct,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Replay,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Phrase,
    Token,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vertical,
    Horizontal,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl LevelArg {
    fn levels(self) -> Vec<Level> {
        match self {
            LevelArg::Phrase => vec![Level::Phrase],
            LevelArg::Token => vec![Level::Token],
            LevelArg::All => Level::ALL.to_vec(),
        }
    }
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Vertical => vec![Mode::Vertical],
            ModeArg::Horizontal => vec![Mode::Horizontal],
            ModeArg::All => Mode::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Import a gold corpus into a store directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CorpusFormat,
        #[arg(long)]
        store: PathBuf,
        /// Source label of the imported annotations.
        #[arg(long, default_value = "gold")]
        source: Source,
    },
    /// Pre-label a corpus with the LLM pipeline.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        schema: SchemaArg,
        /// Chunk size for every selected schema.
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        iob_chunk_size: Option<usize>,
        #[arg(long)]
        direct_chunk_size: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1024)]
        max_steps: u32,
        #[arg(long, default_value = "default")]
        model_id: String,
        #[arg(long, value_enum, default_value = "replay")]
        backend: BackendArg,
        /// Fixture file for the replay backend.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Base URL of the generation endpoint for the http backend.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, env = "MEDANNO_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        #[arg(long)]
        no_ensemble: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Save every completion as a replay fixture file.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        template_iob: Option<PathBuf>,
        #[arg(long)]
        template_direct: Option<PathBuf>,
    },
    /// Union two annotation files document by document.
    Ensemble {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
        #[arg(long)]
        include_reason: bool,
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: OutFormat,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Approximate randomization test between two methods.
    Significance {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "f1")]
        metric: Statistic,
        #[arg(long, default_value = "vertical")]
        mode: Mode,
        #[arg(long, default_value = "phrase")]
        level: Level,
        #[arg(long)]
        include_reason: bool,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count span corrections between base and refined sets (CSV).
    Diff {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        refined: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regress active minutes on correction counts from a diff CSV.
    Regress {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every table for a gold file and several methods.
    Report {
        #[arg(long)]
        gold: PathBuf,
        /// Prediction file as NAME=FILE; repeatable.
        #[arg(long = "pred", value_parser = parse_named, required = true)]
        preds: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
        /// Method pair A:B to test for significance; repeatable.
        #[arg(long = "pair", value_parser = parse_pair)]
        pairs: Vec<(String, String)>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        refined: Option<PathBuf>,
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long)]
        include_reason: bool,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve a store to the refinement UI.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=FILE, got `{s}`")),
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(format!("expected A:B, got `{s}`")),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            medanno_core::model::atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn subset_gold(gold: &mut Vec<AnnotationSet>, subset: Option<&Path>) -> Result<()> {
    if let Some(path) = subset {
        let ids = read_subset(path)?;
        let known = doc_ids(gold);
        restrict(gold, &ids, &known);
    }
    Ok(())
}

fn keep_docs(pred: &mut Vec<AnnotationSet>, gold: &[AnnotationSet]) {
    let ids = doc_ids(gold);
    pred.retain(|p| ids.contains(&p.doc_id));
}

/// Runs a command; the returned code is 0 or 2 (per-document failures).
fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Preprocess {
            input,
            format,
            store,
            source,
        } => {
            let report =
                import_gold_corpus(&input, format).with_context(|| format!("importing {}", input.display()))?;
            std::fs::create_dir_all(store.join("annotations"))?;
            write_corpus(&store.join("corpus.jsonl"), &report.documents)?;
            let sets: Vec<AnnotationSet> = report.sets.into_iter().map(|s| s.with_source(source)).collect();
            write_annotation_sets(&store.join("annotations").join(format!("{source}.jsonl")), &sets)?;
            eprintln!(
                "imported {} documents ({} discontinuous and {} empty spans dropped)",
                report.documents.len(),
                report.dropped_discontinuous,
                report.dropped_empty
            );
            Ok(0)
        }
        Command::Annotate {
            corpus,
            out,
            schema,
            chunk_size,
            iob_chunk_size,
            direct_chunk_size,
            temperature,
            max_steps,
            model_id,
            backend,
            fixtures,
            endpoint,
            token,
            timeout_secs,
            max_in_flight,
            no_ensemble,
            workers,
            record,
            seed,
            template_iob,
            template_direct,
        } => {
            let backend = match backend {
                BackendArg::Replay => BackendConfig::Replay {
                    fixtures: fixtures.context("--backend replay needs --fixtures")?,
                },
                BackendArg::Http => BackendConfig::Http {
                    base_url: endpoint.context("--backend http needs --endpoint")?,
                    token,
                    timeout: Duration::from_secs(timeout_secs),
                    max_in_flight,
                },
            };
            let mut cfg = RunConfig::new(corpus, out, backend);
            cfg.schemas = match schema {
                SchemaArg::Iob => vec![Schema::IobToken],
                SchemaArg::Direct => vec![Schema::DirectChunk],
                SchemaArg::Both => vec![Schema::IobToken, Schema::DirectChunk],
            };
            if let Some(n) = chunk_size {
                cfg.iob_chunk_size = n;
                cfg.direct_chunk_size = n;
            }
            cfg.iob_chunk_size = iob_chunk_size.unwrap_or(cfg.iob_chunk_size);
            cfg.direct_chunk_size = direct_chunk_size.unwrap_or(cfg.direct_chunk_size);
            if cfg.iob_chunk_size == 0 || cfg.direct_chunk_size == 0 {
                bail!("chunk size must be positive");
            }
            cfg.gen.temperature = temperature;
            cfg.gen.max_decode_steps = max_steps;
            cfg.gen.model_id = model_id;
            cfg.ensemble = !no_ensemble;
            cfg.workers = workers;
            cfg.record = record;
            cfg.seed = seed;
            cfg.templates = [(Schema::IobToken, template_iob), (Schema::DirectChunk, template_direct)]
                .into_iter()
                .filter_map(|(s, p)| p.map(|p| (s, p)))
                .collect::<BTreeMap<_, _>>();
            let summary = run_annotate(&cfg)?;
            eprintln!(
                "{} of {} documents annotated, {} failed",
                summary.succeeded,
                summary.documents,
                summary.failures.len()
            );
            Ok(summary.exit_code() as u8)
        }
        Command::Ensemble { a, b, out } => {
            let a = load_sets(&a)?;
            let b = load_sets(&b)?;
            let b_by_id: BTreeMap<&str, &AnnotationSet> = b.iter().map(|s| (s.doc_id.as_str(), s)).collect();
            let a_ids = doc_ids(&a);
            let mut sets = Vec::new();
            for x in &a {
                let merged = match b_by_id.get(x.doc_id.as_str()) {
                    Some(y) => ensemble_union(x, y)?,
                    None => ensemble_union(x, &AnnotationSet::new(x.doc_id.clone(), x.source))?,
                };
                sets.push(merged);
            }
            for y in b.iter().filter(|y| !a_ids.contains(&y.doc_id)) {
                sets.push(ensemble_union(&AnnotationSet::new(y.doc_id.clone(), y.source), y)?);
            }
            write_annotation_sets(&out, &sets)?;
            Ok(0)
        }
        Command::Evaluate {
            gold,
            pred,
            level,
            mode,
            include_reason,
            subset,
            beta,
            format,
            out,
        } => {
            let mut gold = load_sets(&gold)?;
            subset_gold(&mut gold, subset.as_deref())?;
            let mut pred = load_sets(&pred)?;
            keep_docs(&mut pred, &gold);
            let opts = EvalOptions { include_reason };
            let mut reports = Vec::new();
            for l in level.levels() {
                for m in mode.modes() {
                    reports.push(evaluate_corpus(&gold, &pred, l, m, &opts)?);
                }
            }
            match format {
                OutFormat::Json => emit(out.as_deref(), &json_bytes(&reports)?)?,
                OutFormat::Csv => {
                    let rows: Vec<_> = reports.iter().flat_map(|r| report_rows("pred", r, beta)).collect();
                    match &out {
                        Some(path) => write_csv(path, &rows)?,
                        None => {
                            let mut w = csv::Writer::from_writer(std::io::stdout());
                            for r in &rows {
                                w.serialize(r)?;
                            }
                            w.flush()?;
                        }
                    }
                }
            }
            Ok(0)
        }
        Command::Significance {
            gold,
            a,
            b,
            metric,
            mode,
            level,
            include_reason,
            n,
            seed,
            subset,
            out,
        } => {
            let mut gold = load_sets(&gold)?;
            subset_gold(&mut gold, subset.as_deref())?;
            let mut a = load_sets(&a)?;
            let mut b = load_sets(&b)?;
            keep_docs(&mut a, &gold);
            keep_docs(&mut b, &gold);
            let spec = MetricSpec {
                mode,
                level,
                statistic: metric,
                options: EvalOptions { include_reason },
            };
            let result = randomization_test(&gold, &a, &b, &spec, n, seed)?;
            emit(out.as_deref(), &json_bytes(&result)?)?;
            Ok(0)
        }
        Command::Diff { base, refined, out } => {
            let rows = diff_rows(&load_sets(&base)?, &load_sets(&refined)?)?;
            write_csv(&out, &rows)?;
            Ok(0)
        }
        Command::Regress { rows, out } => {
            let result = regress_time(&read_time_rows(&rows)?)?;
            emit(out.as_deref(), &json_bytes(&result)?)?;
            Ok(0)
        }
        Command::Report {
            gold,
            preds,
            out,
            pairs,
            base,
            refined,
            subset,
            include_reason,
            beta,
            n,
            seed,
        } => {
            let cfg = ReportConfig {
                gold,
                preds,
                out_dir: out,
                pairs,
                base,
                refined,
                subset,
                options: EvalOptions { include_reason },
                beta,
                n_resamples: n,
                seed,
            };
            let summary = run_report(&cfg)?;
            eprintln!(
                "report over {} documents written to {}",
                summary.documents.len(),
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Command::Serve { store, port, host } => {
            let store = Arc::new(Store::open(&store)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(store, SocketAddr::new(host, port)))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
