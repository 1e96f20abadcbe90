//! Random test-script programs with a tiny evaluator for expected values.
//!
//! Shape rules that keep the log sound to read back: every function opens
//! with a log call, every branch arm opens with a log call, and a checkpoint
//! log follows each compound statement that logs. Helpers are called from a
//! single site and never from inside a loop.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::CorpusSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    WrongLiteral,
    WrongIndex,
    MissingListItem,
    WrongReturn,
    OffByOne,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::WrongLiteral,
        FaultKind::WrongIndex,
        FaultKind::MissingListItem,
        FaultKind::WrongReturn,
        FaultKind::OffByOne,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stmt {
    Raw(String),
    AssignInt { var: String, value: i64 },
    AssignList { var: String, items: Vec<i64> },
    Arith { var: String, src: String, op: char, lit: i64 },
    Index { var: String, list: String, len: usize, idx: usize, add: i64 },
    Range { var: String, n: i64 },
    IfCmp { var: String, op: char, lit: i64 },
    AssertEq { var: String, value: i64 },
    Return { var: String, alts: Vec<String> },
}

impl Stmt {
    pub(crate) fn render(&self) -> String {
        match self {
            Stmt::Raw(s) => s.clone(),
            Stmt::AssignInt { var, value } => format!("{var} = {value}"),
            Stmt::AssignList { var, items } => {
                let xs: Vec<String> = items.iter().map(i64::to_string).collect();
                format!("{var} = [{}]", xs.join(", "))
            }
            Stmt::Arith { var, src, op, lit } => format!("{var} = {src} {op} {lit}"),
            Stmt::Index { var, list, idx, add, .. } if *add == 0 => format!("{var} = {list}[{idx}]"),
            Stmt::Index { var, list, idx, add, .. } => format!("{var} = {list}[{idx}] + {add}"),
            Stmt::Range { var, n } => format!("for {var} in range({n}):"),
            Stmt::IfCmp { var, op, lit } => format!("if {var} {op} {lit}:"),
            Stmt::AssertEq { var, value } => format!("assert {var} == {value}"),
            Stmt::Return { var, .. } => format!("return {var}"),
        }
    }

    /// A faulty variant of this statement, if `kind` applies to it.
    pub(crate) fn mutate(&self, kind: FaultKind, rng: &mut ChaCha8Rng) -> Option<Stmt> {
        let big = |rng: &mut ChaCha8Rng| {
            let d = rng.random_range(2..=6);
            if rng.random_bool(0.5) { d } else { -d }
        };
        let one = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1 } else { -1 };
        let mut s = self.clone();
        match (kind, &mut s) {
            (FaultKind::WrongLiteral, Stmt::AssignInt { value, .. }) => *value += big(rng),
            (FaultKind::WrongLiteral, Stmt::AssertEq { value, .. }) => *value += big(rng),
            (FaultKind::WrongLiteral, Stmt::Arith { op: '+' | '-', lit, .. }) => *lit = (*lit + big(rng)).abs().max(1),
            (FaultKind::WrongLiteral, Stmt::AssignList { items, .. }) => {
                let i = rng.random_range(0..items.len());
                items[i] += big(rng);
            }
            (FaultKind::WrongIndex, Stmt::Index { len, idx, .. }) if *len > 1 => {
                let mut j = rng.random_range(0..=*len);
                if j == *idx {
                    j = (j + 1) % (*len + 1);
                }
                *idx = j;
            }
            (FaultKind::MissingListItem, Stmt::AssignList { items, .. }) if items.len() > 1 => {
                let i = rng.random_range(0..items.len());
                items.remove(i);
            }
            (FaultKind::WrongReturn, Stmt::Return { var, alts }) if !alts.is_empty() => {
                *var = alts.choose(rng)?.clone();
            }
            (FaultKind::OffByOne, Stmt::Range { n, .. }) => {
                *n = if *n <= 1 { *n + 1 } else { *n + one(rng) };
            }
            (FaultKind::OffByOne, Stmt::Arith { op: '+' | '-', lit, .. }) => *lit = (*lit + one(rng)).max(0),
            (FaultKind::OffByOne, Stmt::IfCmp { lit, .. }) => *lit += one(rng),
            (FaultKind::OffByOne, Stmt::Index { len, idx, .. }) => {
                *idx = if *idx == 0 { 1 } else if *idx + 1 > *len { *idx - 1 } else { (*idx as i64 + one(rng)) as usize };
            }
            _ => return None,
        }
        (s != *self && s.render() != self.render()).then_some(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PLine {
    Blank,
    Code { indent: usize, stmt: Stmt },
}

#[derive(Debug, Clone)]
pub(crate) struct GFile {
    pub name: String,
    pub lines: Vec<PLine>,
}

/// Where a statement sits: file index and 0-based raw row.
pub(crate) type Site = (usize, usize);

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub files: Vec<GFile>,
}

impl Program {
    pub(crate) fn render(&self, overrides: &BTreeMap<Site, Stmt>) -> Vec<(String, String)> {
        self.files
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let mut text = String::new();
                for (ri, l) in f.lines.iter().enumerate() {
                    if let PLine::Code { indent, stmt } = l {
                        let s = overrides.get(&(fi, ri)).unwrap_or(stmt);
                        text.push_str(&"    ".repeat(*indent));
                        text.push_str(&s.render());
                    }
                    text.push('\n');
                }
                (f.name.clone(), text)
            })
            .collect()
    }

    pub(crate) fn stmt_at(&self, site: Site) -> Option<&Stmt> {
        match self.files.get(site.0)?.lines.get(site.1)? {
            PLine::Code { stmt, .. } => Some(stmt),
            PLine::Blank => None,
        }
    }

    pub(crate) fn file_index(&self, name: &str) -> Option<usize> {
        self.files.iter().position(|f| f.name == name)
    }
}

pub(crate) const ENTRY_FILE: &str = "test_case.py";

const VERBS: &[&str] = &[
    "check", "verify", "configure", "prepare", "send", "read", "collect", "validate", "measure", "reset", "apply",
    "query", "poll", "compare", "load", "start", "stop", "update", "enable", "probe",
];
const NOUNS: &[&str] = &[
    "link", "port", "session", "config", "sensor", "buffer", "channel", "status", "packet", "profile", "route",
    "timer", "device", "counter", "payload", "frame", "mode", "table", "queue", "limit",
];
const VARS: &[&str] = &[
    "count", "level", "resp", "value", "delay", "offset", "size", "retries", "rate", "temp", "score", "code",
    "width", "index", "total", "power", "speed", "port", "slot", "step",
];
const LISTS: &[&str] = &["items", "readings", "samples", "ids", "slots", "values", "limits", "codes"];
const PHRASES: &[&str] = &[
    "checking state", "configuring unit", "sending request", "waiting for reply", "validating result",
    "collecting stats", "reading register", "applying settings", "starting phase", "comparing values",
    "polling device", "updating table", "measuring signal", "loading profile", "preparing payload",
];
const SIGNALS: &[&str] = &["ready", "alarm", "overload", "standby", "link_up", "fault", "sync", "idle"];

#[derive(Debug, Clone, Default)]
struct Ctx {
    ints: Vec<(String, i64)>,
    lists: Vec<(String, Vec<i64>)>,
}

struct Func {
    name: String,
    file: usize,
    param: Option<String>,
    children: Vec<usize>,
    lines: Vec<(usize, Stmt)>,
}

pub(crate) struct Gen<'a> {
    rng: ChaCha8Rng,
    spec: &'a CorpusSpec,
    funcs: Vec<Func>,
    module_names: Vec<String>,
    budgets: Vec<usize>,
    tag: usize,
    var: usize,
}

impl<'a> Gen<'a> {
    pub(crate) fn new(spec: &'a CorpusSpec, rng: ChaCha8Rng) -> Self {
        Self { rng, spec, funcs: Vec::new(), module_names: Vec::new(), budgets: Vec::new(), tag: 0, var: 0 }
    }

    fn fresh(&mut self, pool: &[&str]) -> String {
        self.var += 1;
        format!("{}_{}", pool.choose(&mut self.rng).unwrap(), self.var)
    }

    fn pick_int(&mut self, ctx: &Ctx) -> (String, i64) {
        let n = ctx.ints.len();
        // Prefer recent values so data flows forward.
        let i = n - 1 - self.rng.random_range(0..n.min(4));
        ctx.ints[i].clone()
    }

    fn log_stmt(&mut self, ctx: &Ctx) -> Stmt {
        self.tag += 1;
        let obj = &self.spec.logger_call;
        if !self.rng.random_bool(self.spec.static_log_fraction.clamp(0.0, 1.0)) {
            let a = ctx.ints.last().map(|(n, _)| n.clone()).unwrap_or_else(|| "None".into());
            return match ctx.ints.len() {
                n if n >= 2 && self.rng.random_bool(0.4) => Stmt::Raw(format!("{obj}({}, {a})", ctx.ints[n - 2].0)),
                _ => Stmt::Raw(format!("{obj}({a})")),
            };
        }
        let head = format!("step {}: {}", self.tag, PHRASES.choose(&mut self.rng).unwrap());
        let h = if ctx.ints.is_empty() { None } else { Some(self.pick_int(ctx).0) };
        let shape = if h.is_some() { self.rng.random_range(0..7) } else { [0, 2].choose(&mut self.rng).copied().unwrap() };
        let h = h.unwrap_or_default();
        let text = match shape {
            0 => format!("{obj}(\"{head}\")"),
            1 => format!("{obj}(f\"{head} {{{h}}}\")"),
            2 => format!("{obj}(\"{head}\" \" done\")"),
            3 => format!("{obj}(f\"{head} \" f\"{{{h}}}\")"),
            4 => format!("{obj}(\"{head} {{}}\".format({h}))"),
            5 => format!("{obj}(\"{head} \" + str({h}))"),
            _ => format!("{obj}(\"{head}:\", {h})"),
        };
        Stmt::Raw(text)
    }

    fn call_expr(&self, caller: usize, callee: usize) -> String {
        let c = &self.funcs[callee];
        if c.file == self.funcs[caller].file || c.file == 0 {
            c.name.clone()
        } else {
            format!("{}.{}", self.module_names[c.file - 1], c.name)
        }
    }

    fn simple(&mut self, fid: usize, ctx: &mut Ctx, out: &mut Vec<(usize, Stmt)>, indent: usize, pending: &mut Vec<usize>, in_loop: bool) {
        if self.rng.random_bool(self.spec.log_density.clamp(0.0, 1.0)) {
            let s = self.log_stmt(ctx);
            out.push((indent, s));
            return;
        }
        if self.rng.random_bool(0.03) {
            let t = format!("# {}", PHRASES.choose(&mut self.rng).unwrap());
            out.push((indent, Stmt::Raw(t)));
        }
        if !in_loop && !pending.is_empty() && self.rng.random_bool(0.3) {
            let callee = pending.remove(0);
            let (src, v) = self.pick_int(ctx);
            let ret = self.function(callee, Some(v));
            let var = self.fresh(VARS);
            let expr = self.call_expr(fid, callee);
            out.push((indent, Stmt::Raw(format!("{var} = {expr}({src})"))));
            ctx.ints.push((var.clone(), ret));
            if self.rng.random_bool(0.6) {
                out.push((indent, Stmt::AssertEq { var, value: ret }));
            }
            return;
        }
        let roll = self.rng.random_range(0..100);
        let (src, v) = self.pick_int(ctx);
        let stmt = match roll {
            0..=9 => {
                let var = self.fresh(VARS);
                let value = self.rng.random_range(1..=20);
                ctx.ints.push((var.clone(), value));
                Stmt::AssignInt { var, value }
            }
            10..=19 => {
                let var = self.fresh(LISTS);
                let items: Vec<i64> = (0..self.rng.random_range(3..=5)).map(|_| self.rng.random_range(1..=20)).collect();
                ctx.lists.push((var.clone(), items.clone()));
                Stmt::AssignList { var, items }
            }
            20..=44 => {
                let var = self.fresh(VARS);
                let op = if v.abs() > 1000 { '-' } else { *['+', '-', '*', '+'].choose(&mut self.rng).unwrap() };
                let lit = if op == '*' { self.rng.random_range(2..=3) } else { self.rng.random_range(1..=9) };
                let r = match op {
                    '+' => v + lit,
                    '-' => v - lit,
                    _ => v * lit,
                };
                ctx.ints.push((var.clone(), r));
                Stmt::Arith { var, src, op, lit }
            }
            45..=62 if !ctx.lists.is_empty() => {
                let (list, items) = ctx.lists.choose(&mut self.rng).unwrap().clone();
                let var = self.fresh(VARS);
                let idx = self.rng.random_range(0..items.len());
                let add = if self.rng.random_bool(0.5) { 0 } else { self.rng.random_range(1..=5) };
                ctx.ints.push((var.clone(), items[idx] + add));
                Stmt::Index { var, list, len: items.len(), idx, add }
            }
            63..=67 if !ctx.lists.is_empty() => {
                let (list, items) = ctx.lists.choose(&mut self.rng).unwrap().clone();
                let var = self.fresh(VARS);
                ctx.ints.push((var.clone(), items.len() as i64));
                Stmt::Raw(format!("{var} = len({list})"))
            }
            68..=79 => {
                let var = self.fresh(VARS);
                let name = *NOUNS.choose(&mut self.rng).unwrap();
                ctx.ints.push((var.clone(), v + name.len() as i64));
                Stmt::Raw(format!("{var} = sut.read(\"{name}\", {src})"))
            }
            80..=86 => {
                let name = *SIGNALS.choose(&mut self.rng).unwrap();
                Stmt::Raw(format!("sut.send(\"{name}\", {src})"))
            }
            _ => Stmt::AssertEq { var: src, value: v },
        };
        out.push((indent, stmt));
    }

    fn branch(&mut self, fid: usize, ctx: &mut Ctx, out: &mut Vec<(usize, Stmt)>, indent: usize, budget: usize, depth: usize, pending: &mut Vec<usize>) {
        // no elif: its header runs even when its arm is skipped, yet it sits
        // between two unmatched logs and inside the skipped arm's block
        let arms = if self.rng.random_bool(0.45) { 1 } else { 2 };
        for a in 0..arms {
            let is_else = arms > 1 && a == arms - 1;
            if is_else {
                out.push((indent, Stmt::Raw("else:".into())));
            } else {
                let (var, v) = self.pick_int(ctx);
                let op = if self.rng.random_bool(0.5) { '>' } else { '<' };
                let lit = v + self.rng.random_range(-3..=3);
                out.push((indent, Stmt::IfCmp { var, op, lit }));
            }
            let mut arm = ctx.clone();
            let s = self.log_stmt(&arm);
            out.push((indent + 1, s));
            let arm_budget = self.rng.random_range(1..=(budget / arms).clamp(1, 6));
            self.block(fid, &mut arm, out, indent + 1, arm_budget, depth + 1, pending);
        }
        let s = self.log_stmt(ctx);
        out.push((indent, s));
    }

    fn looped(&mut self, ctx: &mut Ctx, out: &mut Vec<(usize, Stmt)>, indent: usize) {
        let acc = self.fresh(&["total", "sum", "acc"]);
        out.push((indent, Stmt::AssignInt { var: acc.clone(), value: 0 }));
        self.var += 1;
        let i = format!("i_{}", self.var);
        let list = ctx.lists.choose(&mut self.rng).cloned();
        let (n, body, value) = match list {
            Some((name, items)) if self.rng.random_bool(0.7) => {
                let n = items.len();
                (n as i64, format!("{acc} = {acc} + {name}[{i}]"), items.iter().sum::<i64>())
            }
            _ => {
                let n = self.rng.random_range(2..=5);
                let c = self.rng.random_range(1..=4);
                (n, format!("{acc} = {acc} + {i} * {c}"), c * (0..n).sum::<i64>())
            }
        };
        out.push((indent, Stmt::Range { var: i.clone(), n }));
        out.push((indent + 1, Stmt::Raw(body)));
        let logs = self.rng.random_bool(0.5);
        if logs {
            let mut inner = ctx.clone();
            inner.ints.push((i, 0));
            let s = self.log_stmt(&inner);
            out.push((indent + 1, s));
        }
        ctx.ints.push((acc, value));
        if logs {
            let s = self.log_stmt(ctx);
            out.push((indent, s));
        }
    }

    fn block(&mut self, fid: usize, ctx: &mut Ctx, out: &mut Vec<(usize, Stmt)>, indent: usize, budget: usize, depth: usize, pending: &mut Vec<usize>) {
        let start = out.len();
        while out.len() - start < budget {
            let left = budget - (out.len() - start);
            let r: f64 = self.rng.random();
            if depth < 2 && left >= 6 && r < self.spec.branch_density {
                self.branch(fid, ctx, out, indent, left, depth, pending);
            } else if left >= 4 && r < self.spec.branch_density + 0.05 {
                self.looped(ctx, out, indent);
            } else {
                self.simple(fid, ctx, out, indent, pending, false);
            }
        }
    }

    /// Emit the body of `fid` when called with `arg`, returning its result.
    fn function(&mut self, fid: usize, arg: Option<i64>) -> i64 {
        let mut ctx = Ctx::default();
        let mut out = Vec::new();
        let header = match (&self.funcs[fid].param, arg) {
            (Some(p), Some(v)) => {
                ctx.ints.push((p.clone(), v));
                format!("def {}({p}):", self.funcs[fid].name)
            }
            _ => format!("def {}():", self.funcs[fid].name),
        };
        out.push((0, Stmt::Raw(header)));
        if ctx.ints.is_empty() {
            let var = self.fresh(VARS);
            let value = self.rng.random_range(1..=20);
            let s = self.log_stmt(&ctx);
            out.push((1, s));
            out.push((1, Stmt::AssignInt { var: var.clone(), value }));
            ctx.ints.push((var, value));
        } else {
            let s = self.log_stmt(&ctx);
            out.push((1, s));
        }
        let budget = self.budgets[fid];
        let mut pending = self.funcs[fid].children.clone();
        self.block(fid, &mut ctx, &mut out, 1, budget, 0, &mut pending);
        while !pending.is_empty() {
            self.simple_call(fid, &mut ctx, &mut out, &mut pending);
        }
        let (result, value) = ctx.ints.last().cloned().unwrap();
        if self.rng.random_bool(0.7) {
            out.push((1, Stmt::AssertEq { var: result.clone(), value }));
        }
        if self.funcs[fid].param.is_some() {
            let alts: Vec<String> = ctx.ints.iter().rev().map(|(n, _)| n.clone()).filter(|n| *n != result).take(3).collect();
            out.push((1, Stmt::Return { var: result, alts }));
        }
        self.funcs[fid].lines = out;
        value
    }

    fn simple_call(&mut self, fid: usize, ctx: &mut Ctx, out: &mut Vec<(usize, Stmt)>, pending: &mut Vec<usize>) {
        let callee = pending.remove(0);
        let (src, v) = self.pick_int(ctx);
        let ret = self.function(callee, Some(v));
        let var = self.fresh(VARS);
        let expr = self.call_expr(fid, callee);
        out.push((1, Stmt::Raw(format!("{var} = {expr}({src})"))));
        ctx.ints.push((var, ret));
    }
}

/// Plan a call tree and line budget, then emit every function.
pub(crate) fn generate_program(spec: &CorpusSpec, rng: ChaCha8Rng) -> Program {
    let mut g = Gen::new(spec, rng);
    let sigma: f64 = 0.6;
    let mu = spec.mean_lines.max(1.0).ln() - sigma * sigma / 2.0;
    let target: f64 = LogNormal::new(mu, sigma).expect("valid lognormal").sample(&mut g.rng);
    let target = (target.round() as usize).clamp(spec.lines_per_case.min, spec.lines_per_case.max);
    let n_funcs = ((target as f64 / 30.0 * g.rng.random_range(0.7..1.3)).round() as usize)
        .clamp(spec.functions_per_case.min.max(1), spec.functions_per_case.max.max(1));

    let mut names = std::collections::BTreeSet::new();
    g.funcs.push(Func { name: "main".into(), file: 0, param: None, children: Vec::new(), lines: Vec::new() });
    while g.funcs.len() < n_funcs {
        let name = format!("{}_{}", VERBS.choose(&mut g.rng).unwrap(), NOUNS.choose(&mut g.rng).unwrap());
        if names.insert(name.clone()) {
            let param = VARS.choose(&mut g.rng).unwrap().to_string();
            g.funcs.push(Func { name, file: 0, param: Some(param), children: Vec::new(), lines: Vec::new() });
        }
    }
    let dead = (n_funcs >= 3 && g.rng.random_bool(0.2)).then_some(n_funcs - 1);
    let n_modules = if n_funcs >= 6 { g.rng.random_range(0..=2) } else { 0 };
    g.module_names = (1..=n_modules).map(|k| format!("steps_{k}")).collect();

    let mut depth = vec![0usize; n_funcs];
    for i in 1..n_funcs {
        if Some(i) == dead {
            g.funcs[i].file = g.rng.random_range(0..=n_modules);
            continue;
        }
        let parents: Vec<usize> = (0..i).filter(|&j| Some(j) != dead && depth[j] < 3).collect();
        let p = *parents.choose(&mut g.rng).unwrap();
        depth[i] = depth[p] + 1;
        g.funcs[p].children.push(i);
        g.funcs[i].file = if p == 0 { g.rng.random_range(0..=n_modules) } else { g.funcs[p].file };
    }

    let overhead = 2 + 2 * n_modules + 1 + 4 * n_funcs;
    let body = target.saturating_sub(overhead).max(2 * n_funcs) as f64;
    let weights: Vec<f64> = (0..n_funcs).map(|_| g.rng.random_range(0.5..1.5)).collect();
    let sum: f64 = weights.iter().sum();
    g.budgets = weights.iter().map(|w| ((body * w / sum).round() as usize).max(2)).collect();

    g.function(0, None);
    if let Some(d) = dead {
        let v = g.rng.random_range(1..=20);
        g.function(d, Some(v));
    }
    g.assemble()
}

impl Gen<'_> {
    fn assemble(self) -> Program {
        let obj = self.spec.logger_call.split('.').next().unwrap_or("Log").to_string();
        let mut files: Vec<GFile> = std::iter::once(ENTRY_FILE.to_string())
            .chain(self.module_names.iter().map(|m| format!("{m}.py")))
            .map(|name| GFile { name, lines: Vec::new() })
            .collect();
        let code = |indent, s: &str| PLine::Code { indent, stmt: Stmt::Raw(s.to_string()) };
        for (fi, f) in files.iter_mut().enumerate() {
            f.lines.push(code(0, &format!("from sut_stubs import {obj}, sut")));
            if fi == 0 {
                for m in &self.module_names {
                    f.lines.push(code(0, &format!("import {m}")));
                }
            }
        }
        let order = (1..self.funcs.len()).chain(std::iter::once(0));
        for i in order {
            let f = &self.funcs[i];
            let lines = &mut files[f.file].lines;
            lines.push(PLine::Blank);
            lines.push(PLine::Blank);
            lines.extend(f.lines.iter().map(|(indent, stmt)| PLine::Code { indent: *indent, stmt: stmt.clone() }));
        }
        files[0].lines.push(PLine::Blank);
        files[0].lines.push(PLine::Blank);
        files[0].lines.push(code(0, "main()"));
        Program { files }
    }
}
