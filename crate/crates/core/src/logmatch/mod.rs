//! Static log-statement patterns, execution-log parsing and statement/message matching.

mod exec_log;
mod pattern;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::RegexSet;
use serde::{Deserialize, Serialize};

use crate::source::{detect_log_statements, LineId, SourceModel};

pub use exec_log::{parse_log, ExecutionLog, Frame, LogMessage};
pub use pattern::{compile_pattern, extract_static_parts, LogShape, Seg, StaticParts};

/// Result of matching a log against the scripts' static log statements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub l_exe: BTreeSet<LineId>,
    pub l_nexe: BTreeSet<LineId>,
    pub l_mm: BTreeSet<LineId>,
    /// Lines named by in-corpus traceback frames; a subset of `l_exe`.
    pub errors: BTreeSet<LineId>,
    /// Message indices matched by each static log statement.
    pub matched: BTreeMap<LineId, Vec<usize>>,
    pub patterns: BTreeMap<LineId, String>,
    pub not_static: Vec<LineId>,
    pub unmatched_messages: Vec<usize>,
    pub external_frames: Vec<Frame>,
    pub error_message: Option<String>,
}

/// Traceback frames resolved to statement ids. Frames outside the scripts are returned separately.
pub fn error_statements(model: &SourceModel, log: &ExecutionLog) -> (BTreeSet<LineId>, Vec<Frame>) {
    let mut ids = BTreeSet::new();
    let mut external = Vec::new();
    for fr in &log.frames {
        match model.file_index(&fr.file).and_then(|fi| model.line_id(fi, fr.line)) {
            Some(id) => {
                ids.insert(model.stmt(id).head);
            }
            None => external.push(fr.clone()),
        }
    }
    (ids, external)
}

pub fn match_log(model: &SourceModel, log: &ExecutionLog) -> MatchOutcome {
    let (errors, external_frames) = error_statements(model, log);
    let mut out = MatchOutcome {
        l_exe: errors.clone(),
        errors,
        external_frames,
        error_message: log.error_message.clone(),
        ..Default::default()
    };

    let mut statics: Vec<LineId> = Vec::new();
    let mut regexes: Vec<String> = Vec::new();
    for id in detect_log_statements(model) {
        match compile_pattern(&extract_static_parts(model.stmt(id))) {
            Some(p) => {
                statics.push(id);
                regexes.push(p.clone());
                out.patterns.insert(id, p);
            }
            None => out.not_static.push(id),
        }
    }
    let set = RegexSet::new(&regexes).expect("generated patterns are valid");

    // Loops repeat messages; match each distinct text once.
    let mut cache: HashMap<&str, Vec<LineId>> = HashMap::new();
    for m in &log.messages {
        let hits = cache
            .entry(m.text.as_str())
            .or_insert_with(|| set.matches(&m.text).into_iter().map(|i| statics[i]).collect())
            .clone();
        for &s in &hits {
            out.matched.entry(s).or_default().push(m.index);
        }
        match hits.as_slice() {
            [] => out.unmatched_messages.push(m.index),
            [s] => {
                out.l_exe.insert(*s);
            }
            many => out.l_mm.extend(many.iter().filter(|s| !out.l_exe.contains(s))),
        }
    }
    // A statement first seen as multi-matched may later match uniquely.
    let exe = out.l_exe.clone();
    out.l_mm.retain(|s| !exe.contains(s));
    for &s in &statics {
        if !out.l_exe.contains(&s) && !out.l_mm.contains(&s) {
            out.l_nexe.insert(s);
        }
    }
    out
}
