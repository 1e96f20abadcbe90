//! Prompting an LLM for ranked faulty elements and reading its answer back.

mod backend;
mod parse;
mod prompt;
mod tokens;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendConfig, BackendKind, LlmBackend, LlmRequest, LlmResponse, MockBackend, MockResponses, RemoteBackend};
pub use parse::{mitigate_mismatch, parse_and_validate, EntryFlag, FlPrediction, RankedEntry};
pub use prompt::{render_prompt, PromptSpec};
pub use tokens::{count_tokens, Tokenizer};

use crate::cfg::ProgramCfg;
use crate::source::{LineId, SourceModel};
use crate::trace::EstimatedTrace;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("trace has no {0} to show")]
    EmptyTrace(Granularity),
    #[error("backend timed out")]
    BackendTimeout,
    #[error("backend refused: {0}")]
    BackendRefusal(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("output hit the token cap before an answer")]
    TruncatedOutput,
    #[error("no usable answer in the output")]
    UnparseableOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Function,
    Block,
    Line,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Function, Granularity::Block, Granularity::Line];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Function => "function",
            Granularity::Block => "block",
            Granularity::Line => "line",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "function" | "functions" => Ok(Granularity::Function),
            "block" | "blocks" => Ok(Granularity::Block),
            "line" | "lines" => Ok(Granularity::Line),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// A code element in the whole-program numbering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRef {
    Function(String),
    Block(usize),
    Line(LineId),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub inference_seconds: f64,
    /// Token counts come from the local tokenizer, not the backend.
    pub approximate_tokens: bool,
}

/// One localization request and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlRun {
    pub case_id: String,
    pub variant: String,
    pub granularity: Granularity,
    pub k: usize,
    pub prompt_hash: String,
    pub max_element_id: usize,
    pub ranked: Vec<RankedEntry>,
    pub error: Option<String>,
    pub stats: RunStats,
}

impl FlRun {
    /// Element at each rank position; `None` where the entry was invalid.
    pub fn ranked_elements(&self) -> Vec<Option<ElementRef>> {
        self.ranked
            .iter()
            .map(|e| if e.flag.is_valid() { e.element.clone() } else { None })
            .collect()
    }

    pub fn flagged_entries(&self) -> usize {
        self.ranked.iter().filter(|e| e.flag != EntryFlag::Ok).count()
    }
}

/// Send one prompt and time it.
pub fn query_backend(backend: &dyn LlmBackend, case_id: &str, prompt: &PromptSpec) -> Result<(LlmResponse, RunStats), FlError> {
    let start = Instant::now();
    let resp = backend.complete(&LlmRequest { case_id, prompt })?;
    let secs = resp.seconds.unwrap_or_else(|| start.elapsed().as_secs_f64());
    let approx = resp.input_tokens.is_none() || resp.output_tokens.is_none();
    let stats = RunStats {
        input_tokens: resp
            .input_tokens
            .unwrap_or_else(|| count_tokens(&prompt.text, Tokenizer::WordPunct) as u64),
        output_tokens: resp
            .output_tokens
            .unwrap_or_else(|| count_tokens(&resp.text, Tokenizer::WordPunct) as u64),
        inference_seconds: secs,
        approximate_tokens: approx,
    };
    Ok((resp, stats))
}

pub struct LocalizeInput<'a> {
    pub case_id: &'a str,
    pub model: &'a SourceModel,
    pub cfgs: &'a ProgramCfg,
    pub trace: &'a EstimatedTrace,
    pub granularity: Granularity,
    pub k: usize,
    pub error_message: &'a str,
}

/// Render, query, parse, repair. Failures are recorded on the run, never raised.
pub fn localize(input: &LocalizeInput, backend: &dyn LlmBackend) -> (FlRun, Option<PromptSpec>) {
    let mut run = FlRun {
        case_id: input.case_id.to_string(),
        variant: input.trace.variant.clone(),
        granularity: input.granularity,
        k: input.k,
        prompt_hash: String::new(),
        max_element_id: 0,
        ranked: Vec::new(),
        error: None,
        stats: RunStats::default(),
    };
    let prompt = match render_prompt(input.model, input.cfgs, input.trace, input.granularity, input.k, input.error_message) {
        Ok(p) => p,
        Err(e) => {
            run.error = Some(e.to_string());
            return (run, None);
        }
    };
    run.prompt_hash = prompt.hash();
    run.max_element_id = prompt.max_element_id;
    match query_backend(backend, input.case_id, &prompt) {
        Ok((resp, stats)) => {
            run.stats = stats;
            match parse_and_validate(&resp.text, &prompt) {
                Ok(mut pred) => {
                    if input.granularity == Granularity::Line {
                        pred = mitigate_mismatch(pred, &prompt);
                    }
                    run.ranked = pred.ranked;
                }
                Err(_) if resp.truncated => run.error = Some(FlError::TruncatedOutput.to_string()),
                Err(e) => run.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            run.stats.input_tokens = count_tokens(&prompt.text, Tokenizer::WordPunct) as u64;
            run.stats.approximate_tokens = true;
            run.error = Some(e.to_string());
        }
    }
    (run, Some(prompt))
}

#[cfg(test)]
mod tests;
