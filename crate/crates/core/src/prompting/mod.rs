//! Few-shot prompt templates and completion backends.

mod backend;
mod template;

pub use self::backend::{
    fingerprint, generate, Backend, BackendConfig, BackendKind, Completion, FixtureRecord, GenParams, GenerateError,
    HttpBackend, RecordingBackend, ReplayBackend, RetryPolicy,
};
pub use self::template::{build_prompt, Example, PromptTemplate, Schema, TemplateError, DEFAULT_QUERY, PLACEHOLDER};
