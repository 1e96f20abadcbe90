use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ElementRef, FlError, Granularity, PromptSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryFlag {
    Ok,
    OutOfRange,
    Duplicate,
    MismatchRepaired,
}

impl EntryFlag {
    pub fn is_valid(self) -> bool {
        matches!(self, EntryFlag::Ok | EntryFlag::MismatchRepaired)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    /// As written by the model.
    pub raw: String,
    pub prompt_id: Option<usize>,
    /// Line content quoted by the model (line granularity).
    pub content: Option<String>,
    pub element: Option<ElementRef>,
    pub flag: EntryFlag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlPrediction {
    pub ranked: Vec<RankedEntry>,
    pub raw_output: String,
}

fn first_object(raw: &str, key: &str) -> Option<serde_json::Map<String, Value>> {
    let mut fallback = None;
    for (i, _) in raw.match_indices('{') {
        let mut it = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = it.next() {
            if map.contains_key(key) {
                return Some(map);
            }
            if fallback.is_none() && map.values().any(Value::is_array) {
                fallback = Some(map);
            }
        }
    }
    fallback
}

fn json_entries(raw: &str, key: &str) -> Option<Vec<Value>> {
    let map = first_object(raw, key)?;
    let arr = map
        .get(key)
        .and_then(Value::as_array)
        .or_else(|| map.values().find_map(Value::as_array))?;
    Some(arr.clone())
}

fn line_entries(raw: &str) -> Vec<(usize, String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*:\s?(.*)$").unwrap());
    let mut out = Vec::new();
    for l in raw.lines() {
        match re.captures(l) {
            Some(c) => out.push((c[1].parse().unwrap_or(usize::MAX), c[2].trim_end().to_string(), l.trim().to_string())),
            None if !out.is_empty() => break,
            None => {}
        }
    }
    out
}

fn resolve_function(name: &str, prompt: &PromptSpec) -> Option<ElementRef> {
    let name = name.trim().trim_end_matches("()");
    let names = || {
        prompt.elements.iter().filter_map(|e| match e {
            ElementRef::Function(n) => Some(n.as_str()),
            _ => None,
        })
    };
    if let Some(n) = names().find(|n| *n == name) {
        return Some(ElementRef::Function(n.to_string()));
    }
    let short: Vec<&str> = names().filter(|n| n.rsplit('.').next() == Some(name)).collect();
    match short.as_slice() {
        [one] => Some(ElementRef::Function(one.to_string())),
        _ => None,
    }
}

fn mark_duplicates(ranked: &mut [RankedEntry]) {
    let mut seen = HashSet::new();
    for e in ranked.iter_mut() {
        if e.flag == EntryFlag::Duplicate {
            e.flag = EntryFlag::Ok;
        }
        if !e.flag.is_valid() {
            continue;
        }
        if let Some(el) = &e.element {
            if !seen.insert(el.clone()) {
                e.flag = EntryFlag::Duplicate;
            }
        }
    }
}

/// Read the model's ranked list. At most `k` entries are kept, in the order given.
pub fn parse_and_validate(raw: &str, prompt: &PromptSpec) -> Result<FlPrediction, FlError> {
    let mut ranked = Vec::new();
    match prompt.granularity {
        Granularity::Function | Granularity::Block => {
            let key = if prompt.granularity == Granularity::Function { "faulty_functions" } else { "faulty_blocks" };
            let items = json_entries(raw, key).ok_or(FlError::UnparseableOutput)?;
            for v in items {
                let text = match &v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let (prompt_id, element) = if prompt.granularity == Granularity::Function {
                    (None, resolve_function(&text, prompt))
                } else {
                    let id = text
                        .chars()
                        .filter(char::is_ascii_digit)
                        .collect::<String>()
                        .parse::<usize>()
                        .ok();
                    (id, id.and_then(|i| prompt.element(i)).cloned())
                };
                let flag = if element.is_some() { EntryFlag::Ok } else { EntryFlag::OutOfRange };
                ranked.push(RankedEntry { raw: text, prompt_id, content: None, element, flag });
            }
        }
        Granularity::Line => {
            let items = line_entries(raw);
            if items.is_empty() {
                return Err(FlError::UnparseableOutput);
            }
            for (id, content, whole) in items {
                let element = prompt.element(id).cloned();
                let flag = if element.is_some() { EntryFlag::Ok } else { EntryFlag::OutOfRange };
                ranked.push(RankedEntry {
                    raw: whole,
                    prompt_id: Some(id),
                    content: (!content.trim().is_empty()).then_some(content),
                    element,
                    flag,
                });
            }
        }
    }
    ranked.truncate(prompt.k);
    mark_duplicates(&mut ranked);
    Ok(FlPrediction { ranked, raw_output: raw.to_string() })
}

/// Point line entries whose quoted code differs from the numbered line at the
/// closest line: smallest edit distance, then nearest number, then lowest number.
pub fn mitigate_mismatch(mut pred: FlPrediction, prompt: &PromptSpec) -> FlPrediction {
    if prompt.granularity != Granularity::Line || prompt.line_texts.is_empty() {
        return pred;
    }
    for e in pred.ranked.iter_mut() {
        let (Some(n), Some(content)) = (e.prompt_id, e.content.as_deref()) else { continue };
        let want = content.trim();
        if n >= 1 && n <= prompt.line_texts.len() && prompt.line_texts[n - 1].trim() == want {
            continue;
        }
        let best = (1..=prompt.line_texts.len())
            .min_by_key(|&i| (strsim::levenshtein(want, prompt.line_texts[i - 1].trim()), i.abs_diff(n), i))
            .expect("non-empty prompt");
        e.prompt_id = Some(best);
        e.element = prompt.element(best).cloned();
        e.flag = EntryFlag::MismatchRepaired;
    }
    mark_duplicates(&mut pred.ranked);
    pred
}
