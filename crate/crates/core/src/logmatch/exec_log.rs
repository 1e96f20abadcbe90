use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::LogConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogMessage {
    pub index: usize,
    /// 1-based line in the log file.
    pub log_line: usize,
    pub level: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub line: usize,
    pub function: Option<String>,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub messages: Vec<LogMessage>,
    /// Frames of the final traceback, outermost first.
    pub frames: Vec<Frame>,
    pub error_message: Option<String>,
    pub warnings: Vec<String>,
}

const TB_HEADER: &str = "Traceback (most recent call last):";

fn chain_note(s: &str) -> bool {
    s.starts_with("During handling of the above exception")
        || s.starts_with("The above exception was the direct cause")
}

/// Split a raw log into messages and the failure's traceback.
pub fn parse_log(text: &str, cfg: &LogConfig) -> Result<ExecutionLog, regex::Error> {
    let prefix = Regex::new(&cfg.level_prefix)?;
    let frame_re = Regex::new(r#"^\s*File "([^"]+)", line (\d+)(?:, in (.+))?\s*$"#)?;
    let level_re = Regex::new(r"[A-Z]+")?;

    let mut out = ExecutionLog::default();
    let mut in_tb = false;
    let mut current: Vec<Frame> = Vec::new();
    let mut last_error_line: Option<String> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        let (level, body) = match prefix.find(line) {
            Some(m) => (
                level_re.find(m.as_str()).map(|l| l.as_str().to_string()),
                &line[m.end()..],
            ),
            None => (None, line),
        };
        if body == TB_HEADER {
            in_tb = true;
            current.clear();
            continue;
        }
        if in_tb {
            if let Some(c) = frame_re.captures(line) {
                current.push(Frame {
                    file: c[1].to_string(),
                    line: c[2].parse().unwrap_or(0),
                    function: c.get(3).map(|m| m.as_str().to_string()),
                    source: None,
                });
                continue;
            }
            if line.is_empty() || line.starts_with([' ', '\t']) {
                if let Some(f) = current.last_mut() {
                    let t = line.trim();
                    if f.source.is_none() && !t.is_empty() && !t.chars().all(|c| c == '^' || c == '~') {
                        f.source = Some(t.to_string());
                    }
                }
                continue;
            }
            in_tb = false;
            out.frames = std::mem::take(&mut current);
            out.error_message = Some(line.to_string());
            continue;
        }
        if body.trim().is_empty() || chain_note(body) {
            continue;
        }
        if level.as_deref().is_some_and(|l| cfg.error_levels.iter().any(|e| e == l)) {
            last_error_line = Some(body.to_string());
        }
        out.messages.push(LogMessage {
            index: out.messages.len(),
            log_line: i + 1,
            level,
            text: body.to_string(),
        });
    }
    if in_tb {
        out.frames = current;
        out.warnings.push("MalformedTraceback: traceback has no exception line".into());
    }
    if out.error_message.is_none() {
        if let Some(e) = last_error_line {
            out.warnings.push("MalformedTraceback: no traceback, using last error-level line".into());
            out.error_message = Some(e);
        } else if out.frames.is_empty() {
            out.warnings.push("MalformedTraceback: no error message found".into());
        }
    }
    for w in &out.warnings {
        tracing::warn!("{w}");
    }
    Ok(out)
}
