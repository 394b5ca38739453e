//! On-disk annotation store served to the refinement UI.
//!
//! Layout:
//!
//! ```text
//! <root>/corpus.jsonl                 documents
//! <root>/annotations/<source>.jsonl   one AnnotationSet per line
//! <root>/annotations/refined/<doc>.jsonl
//! <root>/timing/<doc>.json            timer events of the refinement session
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::{Context, Result};
use medanno_core::model::{
    atomic_write, read_annotation_sets, read_corpus, validate_annotation_set, AnnotationSet, Document, Source,
    TimerKind, TimingEvent, TimingRecord, Violation,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("no {annotations} annotations for `{doc_id}`")]
    MissingSet { doc_id: String, annotations: Source },
    #[error("annotation set failed validation")]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Timing(#[from] medanno_core::model::TimingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub length: usize,
    pub available_sources: Vec<Source>,
}

#[derive(Default)]
struct State {
    documents: BTreeMap<String, Document>,
    order: Vec<String>,
    sets: HashMap<(String, Source), AnnotationSet>,
    timing: HashMap<String, TimingRecord>,
}

pub struct Store {
    root: PathBuf,
    state: RwLock<State>,
    // serializes writers per (doc_id, file kind)
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn safe_name(doc_id: &str) -> String {
    doc_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Store {
    /// Load everything under `root`. Annotation files whose stem is not a
    /// known source are ignored.
    pub fn open(root: &Path) -> Result<Self> {
        let corpus_path = root.join("corpus.jsonl");
        let documents = read_corpus(&corpus_path).with_context(|| format!("loading {}", corpus_path.display()))?;
        let mut state = State::default();
        for d in documents {
            state.order.push(d.doc_id.clone());
            state.documents.insert(d.doc_id.clone(), d);
        }

        let ann = root.join("annotations");
        if ann.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&ann)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            files.sort();
            for path in files {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
                let Ok(source) = stem.parse::<Source>() else { continue };
                if !is_jsonl || source == Source::Refined {
                    continue;
                }
                for set in read_annotation_sets(&path)? {
                    state.sets.insert((set.doc_id.clone(), set.source), set);
                }
            }
            let refined = ann.join("refined");
            if refined.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(&refined)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .collect();
                files.sort();
                for path in files
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                {
                    for set in read_annotation_sets(&path)? {
                        state.sets.insert((set.doc_id.clone(), Source::Refined), set);
                    }
                }
            }
        }

        let timing = root.join("timing");
        if timing.is_dir() {
            for entry in fs::read_dir(&timing)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let bytes = fs::read(&path)?;
                    let stored: StoredTiming =
                        serde_json::from_slice(&bytes).with_context(|| format!("reading {}", path.display()))?;
                    state.timing.insert(stored.doc_id, stored.record);
                }
            }
        }

        Ok(Self {
            root: root.to_path_buf(),
            state: RwLock::new(state),
            locks: Mutex::new(HashMap::new()),
        })
    }

    fn lock_for(&self, key: String) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(key).or_default().clone()
    }

    fn sources_of(state: &State, doc_id: &str) -> Vec<Source> {
        Source::ALL
            .into_iter()
            .filter(|s| state.sets.contains_key(&(doc_id.to_string(), *s)))
            .collect()
    }

    pub fn documents(&self) -> Vec<DocumentSummary> {
        let state = self.state.read().unwrap();
        state
            .order
            .iter()
            .map(|id| DocumentSummary {
                doc_id: id.clone(),
                length: state.documents[id].char_len(),
                available_sources: Self::sources_of(&state, id),
            })
            .collect()
    }

    pub fn document(&self, doc_id: &str) -> Result<(Document, Vec<Source>), StoreError> {
        let state = self.state.read().unwrap();
        let doc = state
            .documents
            .get(doc_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownDocument(doc_id.to_string()))?;
        Ok((doc, Self::sources_of(&state, doc_id)))
    }

    pub fn annotations(&self, doc_id: &str, source: Source) -> Result<AnnotationSet, StoreError> {
        let state = self.state.read().unwrap();
        if !state.documents.contains_key(doc_id) {
            return Err(StoreError::UnknownDocument(doc_id.to_string()));
        }
        let mut set = state
            .sets
            .get(&(doc_id.to_string(), source))
            .cloned()
            .ok_or(StoreError::MissingSet {
                doc_id: doc_id.to_string(),
                annotations: source,
            })?;
        if source == Source::Refined {
            if let Some(t) = state.timing.get(doc_id) {
                set.timing = Some(t.clone());
            }
        }
        Ok(set)
    }

    /// All sets of one source, in corpus order.
    pub fn sets_of(&self, source: Source) -> Vec<AnnotationSet> {
        let state = self.state.read().unwrap();
        state
            .order
            .iter()
            .filter_map(|id| state.sets.get(&(id.clone(), source)).cloned())
            .collect()
    }

    /// Validate and persist a refined set. The stored copy carries the
    /// document's current timing record.
    pub fn put_refined(&self, doc_id: &str, mut set: AnnotationSet) -> Result<AnnotationSet, StoreError> {
        let doc = self.document(doc_id)?.0;
        if set.doc_id != doc_id {
            return Err(StoreError::BadRequest(format!(
                "body doc_id `{}` does not match path `{doc_id}`",
                set.doc_id
            )));
        }
        set.source = Source::Refined;
        let violations = validate_annotation_set(&doc, &set);
        if !violations.is_empty() {
            return Err(StoreError::Invalid(violations));
        }

        let lock = self.lock_for(format!("refined/{doc_id}"));
        let _guard = lock.lock().unwrap();
        if let Some(t) = self.state.read().unwrap().timing.get(doc_id) {
            set.timing = Some(t.clone());
        }
        let dir = self.root.join("annotations").join("refined");
        fs::create_dir_all(&dir)?;
        let mut line = serde_json::to_vec(&set).map_err(std::io::Error::other)?;
        line.push(b'\n');
        atomic_write(&dir.join(format!("{}.jsonl", safe_name(doc_id))), &line)?;
        self.state
            .write()
            .unwrap()
            .sets
            .insert((doc_id.to_string(), Source::Refined), set.clone());
        Ok(set)
    }

    /// Append a timer event; `at` defaults to now.
    pub fn timer_event(&self, doc_id: &str, kind: TimerKind, at: f64) -> Result<TimingRecord, StoreError> {
        self.document(doc_id)?;
        let lock = self.lock_for(format!("timing/{doc_id}"));
        let _guard = lock.lock().unwrap();
        let mut record = self
            .state
            .read()
            .unwrap()
            .timing
            .get(doc_id)
            .cloned()
            .unwrap_or_default();
        record.push(TimingEvent { at, kind })?;

        let dir = self.root.join("timing");
        fs::create_dir_all(&dir)?;
        let stored = StoredTiming {
            doc_id: doc_id.to_string(),
            record: record.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&stored).map_err(std::io::Error::other)?;
        atomic_write(&dir.join(format!("{}.json", safe_name(doc_id))), &bytes)?;

        let mut state = self.state.write().unwrap();
        if let Some(set) = state.sets.get_mut(&(doc_id.to_string(), Source::Refined)) {
            set.timing = Some(record.clone());
        }
        state.timing.insert(doc_id.to_string(), record.clone());
        Ok(record)
    }

    pub fn doc_ids(&self) -> BTreeSet<String> {
        self.state.read().unwrap().documents.keys().cloned().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredTiming {
    doc_id: String,
    record: TimingRecord,
}
