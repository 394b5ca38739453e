use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;

/// Slot in the query section where the chunk text goes.
pub const PLACEHOLDER: &str = "{input_chunk_text}";
pub const DEFAULT_QUERY: &str = "Question: {input_chunk_text}\nAnswer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    IobToken,
    DirectChunk,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::IobToken => "iob-token",
            Schema::DirectChunk => "direct-chunk",
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iob-token" | "iob" => Ok(Schema::IobToken),
            "direct-chunk" | "direct" => Ok(Schema::DirectChunk),
            _ => Err(format!("unknown schema `{s}` (expected iob-token or direct-chunk)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template has no `{PLACEHOLDER}` slot in its query section")]
    MissingPlaceholder,
    #[error("template contains `{PLACEHOLDER}` {0} times; exactly one is allowed")]
    DuplicatePlaceholder(usize),
    #[error("template has no examples")]
    NoExamples,
    #[error("template parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub question: String,
    pub answer: String,
}

/// A versioned few-shot prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub schema: Schema,
    pub version: String,
    pub context: String,
    pub task_description: String,
    pub examples: Vec<Example>,
    /// Final question block; holds the placeholder.
    pub query: String,
}

const BUILTIN_IOB: &str = include_str!("../../templates/iob-token.v1.txt");
const BUILTIN_DIRECT: &str = include_str!("../../templates/direct-chunk.v1.txt");

impl PromptTemplate {
    /// The template shipped with the crate for `schema`.
    pub fn builtin(schema: Schema) -> Self {
        let src = match schema {
            Schema::IobToken => BUILTIN_IOB,
            Schema::DirectChunk => BUILTIN_DIRECT,
        };
        Self::parse(src).expect("built-in template is well-formed")
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.examples.is_empty() {
            return Err(TemplateError::NoExamples);
        }
        let elsewhere = self.context.matches(PLACEHOLDER).count()
            + self.task_description.matches(PLACEHOLDER).count()
            + self
                .examples
                .iter()
                .map(|e| e.question.matches(PLACEHOLDER).count() + e.answer.matches(PLACEHOLDER).count())
                .sum::<usize>();
        let in_query = self.query.matches(PLACEHOLDER).count();
        match (in_query, elsewhere) {
            (1, 0) => Ok(()),
            (0, 0) => Err(TemplateError::MissingPlaceholder),
            (q, e) => Err(TemplateError::DuplicatePlaceholder(q + e)),
        }
    }

    /// Parse the on-disk template format: a `---` front-matter block with
    /// `schema:` and `version:` keys, then `===CONTEXT===`, `===TASK===` and
    /// repeated `===EXAMPLE Q===` / `===EXAMPLE A===` sections, and an optional
    /// `===QUERY===` section.
    pub fn parse(src: &str) -> Result<Self, TemplateError> {
        let err = |m: &str| TemplateError::Parse(m.to_string());
        let src = src.strip_prefix('\u{feff}').unwrap_or(src);
        let rest = src
            .trim_start()
            .strip_prefix("---")
            .ok_or_else(|| err("missing front matter"))?;
        let (front, body) = rest
            .split_once("\n---")
            .ok_or_else(|| err("unterminated front matter"))?;

        let mut schema = None;
        let mut version = None;
        for line in front.lines() {
            let Some((k, v)) = line.split_once(':') else { continue };
            match k.trim() {
                "schema" => schema = Some(v.trim().parse::<Schema>().map_err(TemplateError::Parse)?),
                "version" => version = Some(v.trim().to_string()),
                _ => {}
            }
        }

        let mut context = None;
        let mut task = None;
        let mut query = None;
        let mut questions = Vec::new();
        let mut answers = Vec::new();
        let mut current: Option<&str> = None;
        let mut buf: Vec<&str> = Vec::new();
        let body = body.split_once('\n').map(|(_, b)| b).unwrap_or("");

        let mut flush = |marker: Option<&str>, buf: &mut Vec<&str>| -> Result<(), TemplateError> {
            let text = buf.join("\n").trim_matches('\n').to_string();
            buf.clear();
            match marker {
                None if text.trim().is_empty() => {}
                None => return Err(err("text before the first section marker")),
                Some("CONTEXT") => context = Some(text),
                Some("TASK") => task = Some(text),
                Some("QUERY") => query = Some(text),
                Some("EXAMPLE Q") => questions.push(text),
                Some("EXAMPLE A") => {
                    if answers.len() >= questions.len() {
                        return Err(err("EXAMPLE A without a preceding EXAMPLE Q"));
                    }
                    answers.push(text)
                }
                Some(other) => return Err(TemplateError::Parse(format!("unknown section `{other}`"))),
            }
            Ok(())
        };

        for line in body.lines() {
            let trimmed = line.trim();
            if let Some(marker) = trimmed.strip_prefix("===").and_then(|m| m.strip_suffix("===")) {
                flush(current, &mut buf)?;
                current = Some(marker);
                continue;
            }
            buf.push(line);
        }
        flush(current, &mut buf)?;

        if questions.len() != answers.len() {
            return Err(err("every EXAMPLE Q needs an EXAMPLE A"));
        }
        let tpl = PromptTemplate {
            schema: schema.ok_or_else(|| err("front matter lacks `schema`"))?,
            version: version.ok_or_else(|| err("front matter lacks `version`"))?,
            context: context.ok_or_else(|| err("missing ===CONTEXT=== section"))?,
            task_description: task.ok_or_else(|| err("missing ===TASK=== section"))?,
            examples: questions
                .into_iter()
                .zip(answers)
                .map(|(question, answer)| Example { question, answer })
                .collect(),
            query: query.unwrap_or_else(|| DEFAULT_QUERY.to_string()),
        };
        tpl.validate()?;
        Ok(tpl)
    }
}

/// Render the prompt for one chunk: context, task, examples in order, then the
/// query with the chunk text in the placeholder slot.
pub fn build_prompt(tpl: &PromptTemplate, chunk: &Chunk) -> Result<String, TemplateError> {
    tpl.validate()?;
    let mut out = String::new();
    out.push_str(&tpl.context);
    out.push_str("\n\n");
    out.push_str(&tpl.task_description);
    out.push_str("\n\n");
    for ex in &tpl.examples {
        out.push_str("Question: ");
        out.push_str(&ex.question);
        out.push_str("\nAnswer:\n");
        out.push_str(&ex.answer);
        out.push_str("\n\n");
    }
    let (before, after) = tpl
        .query
        .split_once(PLACEHOLDER)
        .ok_or(TemplateError::MissingPlaceholder)?;
    out.push_str(before);
    out.push_str(&chunk.text);
    out.push_str(after);
    Ok(out)
}
