use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Knobs that control how test scripts are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Callee prefixes that identify logging calls, e.g. `Log.` or `log_`.
    pub logger_prefixes: Vec<String>,
    /// Functions run by the test framework itself; never treated as helpers.
    pub fixture_names: BTreeSet<String>,
    /// Calls whose callee starts with one of these are error statements (`assertEqual`, ...).
    pub assert_call_prefixes: Vec<String>,
    pub language: String,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            logger_prefixes: vec!["Log.".to_string()],
            fixture_names: ["setUp", "tearDown", "setup", "teardown"]
                .into_iter()
                .map(String::from)
                .collect(),
            assert_call_prefixes: vec!["assert".to_string(), "self.assert".to_string()],
            language: "Python".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogConfig {
    /// Stripped from the start of each log line before matching.
    pub level_prefix: String,
    /// Levels treated as error lines when the log carries no traceback.
    pub error_levels: Vec<String>,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            level_prefix: r"^(?:\[(?:TRACE|DEBUG|INFO|WARN|WARNING|ERROR|CRITICAL|FATAL)\] ?|(?:TRACE|DEBUG|INFO|WARN|WARNING|ERROR|CRITICAL|FATAL): ?)".to_string(),
            error_levels: vec!["ERROR".into(), "CRITICAL".into(), "FATAL".into()],
        }
    }
}
