use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::source::{ArgExpr, Statement, StrPart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogShape {
    String,
    Fstring,
    ConcatString,
    ConcatFstring,
    Call,
    BinaryOperator,
    /// Several positional arguments, e.g. `("values: ", values)`.
    TupleMixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seg {
    Lit(String),
    Hole,
    /// Boundary between positional arguments.
    Sep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticParts {
    Static { shape: LogShape, segments: Vec<Seg> },
    NotStatic,
}

fn push_lit(out: &mut Vec<Seg>, s: &str) {
    if s.is_empty() {
        return;
    }
    match out.last_mut() {
        Some(Seg::Lit(prev)) => prev.push_str(s),
        _ => out.push(Seg::Lit(s.to_string())),
    }
}

fn push_hole(out: &mut Vec<Seg>) {
    if out.last() != Some(&Seg::Hole) {
        out.push(Seg::Hole);
    }
}

/// `{}` / `{name!r:>4}` fields become holes, `{{` and `}}` are literal braces.
fn format_fields(s: &str, out: &mut Vec<Seg>) {
    let mut lit = String::new();
    let mut it = s.chars().peekable();
    while let Some(c) = it.next() {
        match c {
            '{' if it.peek() == Some(&'{') => {
                it.next();
                lit.push('{');
            }
            '}' if it.peek() == Some(&'}') => {
                it.next();
                lit.push('}');
            }
            '{' => {
                push_lit(out, &std::mem::take(&mut lit));
                push_hole(out);
                let mut depth = 1;
                for d in it.by_ref() {
                    match d {
                        '{' => depth += 1,
                        '}' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
            }
            _ => lit.push(c),
        }
    }
    push_lit(out, &lit);
}

fn percent_fields(s: &str, out: &mut Vec<Seg>) {
    static SPEC: OnceLock<Regex> = OnceLock::new();
    let re = SPEC.get_or_init(|| {
        Regex::new(r"%%|%(?:\([^)]*\))?[#0\- +]*(?:\*|\d+)?(?:\.(?:\*|\d+))?[hlL]?[diouxXeEfFgGcrsa]").unwrap()
    });
    let mut last = 0;
    for m in re.find_iter(s) {
        push_lit(out, &s[last..m.start()]);
        if m.as_str() == "%%" {
            push_lit(out, "%");
        } else {
            push_hole(out);
        }
        last = m.end();
    }
    push_lit(out, &s[last..]);
}

fn segments(a: &ArgExpr, out: &mut Vec<Seg>) {
    match a {
        ArgExpr::Str { parts, .. } => {
            for p in parts {
                match p {
                    StrPart::Lit(s) => push_lit(out, s),
                    StrPart::Hole => push_hole(out),
                }
            }
        }
        ArgExpr::Concat { items } => items.iter().for_each(|i| segments(i, out)),
        ArgExpr::Format { template } | ArgExpr::Percent { template } => {
            let mut inner = Vec::new();
            segments(template, &mut inner);
            for s in inner {
                match s {
                    Seg::Lit(t) if matches!(a, ArgExpr::Format { .. }) => format_fields(&t, out),
                    Seg::Lit(t) => percent_fields(&t, out),
                    _ => push_hole(out),
                }
            }
        }
        ArgExpr::BinOp { op, left, right } if op == "+" => {
            segments(left, out);
            segments(right, out);
        }
        _ => push_hole(out),
    }
}

fn shape_of(args: &[ArgExpr]) -> Option<LogShape> {
    let one = match args {
        [] => return None,
        [one] => one,
        _ => return Some(LogShape::TupleMixed),
    };
    Some(match one {
        ArgExpr::Str { fstring: false, .. } => LogShape::String,
        ArgExpr::Str { fstring: true, .. } => LogShape::Fstring,
        ArgExpr::Concat { items } => {
            if items.iter().any(|i| matches!(i, ArgExpr::Str { fstring: true, .. })) {
                LogShape::ConcatFstring
            } else {
                LogShape::ConcatString
            }
        }
        ArgExpr::Format { .. } | ArgExpr::Percent { .. } => LogShape::Call,
        ArgExpr::BinOp { .. } => LogShape::BinaryOperator,
        ArgExpr::Other { .. } => return None,
    })
}

/// Constant text of a log statement, with holes where runtime values go.
pub fn extract_static_parts(stmt: &Statement) -> StaticParts {
    let Some(call) = &stmt.call else { return StaticParts::NotStatic };
    let Some(shape) = shape_of(&call.args) else { return StaticParts::NotStatic };
    let mut segs = Vec::new();
    for (i, a) in call.args.iter().enumerate() {
        if i > 0 {
            segs.push(Seg::Sep);
        }
        segments(a, &mut segs);
    }
    let has_text = segs.iter().any(|s| matches!(s, Seg::Lit(t) if !t.trim().is_empty()));
    if !has_text {
        return StaticParts::NotStatic;
    }
    StaticParts::Static { shape, segments: segs }
}

/// Anchored regex for a statement's messages; `None` when nothing is constant.
pub fn compile_pattern(parts: &StaticParts) -> Option<String> {
    let StaticParts::Static { segments, .. } = parts else { return None };
    let mut re = String::from("^");
    let mut last_hole = false;
    for s in segments {
        match s {
            Seg::Lit(t) => {
                re.push_str(&regex::escape(t));
                last_hole = false;
            }
            Seg::Hole => {
                if !last_hole {
                    re.push_str(".*");
                }
                last_hole = true;
            }
            Seg::Sep => re.push_str(" ?"),
        }
    }
    re.push('$');
    Some(re)
}
