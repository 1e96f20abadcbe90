use crate::config::{LogConfig, SourceConfig};
use crate::logmatch::{match_log, parse_log, ExecutionLog, MatchOutcome};
use crate::source::{parse_files, SourceModel};

pub const RUNNING_FAULTY: &str = include_str!("../fixtures/running_example/faulty/running_example.py");
pub const RUNNING_LOG: &str = include_str!("../fixtures/running_example/execution.log");

pub fn running_example() -> SourceModel {
    parse_files(&[("running_example.py".into(), RUNNING_FAULTY.into())], &SourceConfig::default()).unwrap()
}

pub fn running_log() -> ExecutionLog {
    parse_log(RUNNING_LOG, &LogConfig::default()).unwrap()
}

pub fn running_match() -> MatchOutcome {
    match_log(&running_example(), &running_log())
}

pub fn model_of(src: &str) -> SourceModel {
    parse_files(&[("t.py".into(), src.into())], &SourceConfig::default()).unwrap()
}
