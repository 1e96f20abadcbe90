//! Per-function control-flow graphs over basic blocks.
//!
//! Back edges are dropped so every graph is a DAG rooted at the block holding
//! the function header. A statement-free exit node is added only when a block
//! can both end the function and fall through to a successor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::source::{Arm, FunctionId, LineId, SourceModel, StmtNode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgNode {
    /// Global block id; `None` for the synthetic exit.
    pub block: Option<usize>,
    pub statements: Vec<LineId>,
    /// Indices into the owning graph's `nodes`.
    pub children: Vec<usize>,
    pub parents: Vec<usize>,
}

impl CfgNode {
    pub fn is_exit(&self) -> bool {
        self.block.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCfg {
    pub function: FunctionId,
    pub name: String,
    pub root: usize,
    pub nodes: Vec<CfgNode>,
}

impl FunctionCfg {
    pub fn node_of_line(&self, line: LineId) -> Option<usize> {
        self.nodes.iter().position(|n| n.statements.contains(&line))
    }

    /// Every root-to-leaf path, as node indices.
    pub fn enumerate_paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root, vec![self.root])];
        while let Some((n, path)) = stack.pop() {
            let kids = &self.nodes[n].children;
            if kids.is_empty() {
                out.push(path);
                continue;
            }
            for &c in kids.iter().rev() {
                let mut p = path.clone();
                p.push(c);
                stack.push((c, p));
            }
        }
        out
    }

    /// Paths expressed as block ids, exit node omitted.
    pub fn block_paths(&self) -> Vec<Vec<usize>> {
        self.enumerate_paths()
            .into_iter()
            .map(|p| p.into_iter().filter_map(|n| self.nodes[n].block).collect())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).sum()
    }
}

#[derive(Default)]
struct Builder {
    lines: Vec<Vec<LineId>>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    closed: Vec<bool>,
}

impl Builder {
    fn node(&mut self, preds: &[usize], line: Option<LineId>) -> usize {
        let n = self.lines.len();
        self.lines.push(line.into_iter().collect());
        self.children.push(Vec::new());
        self.parents.push(Vec::new());
        self.closed.push(false);
        for &p in preds {
            if !self.children[p].contains(&n) {
                self.children[p].push(n);
                self.parents[n].push(p);
            }
        }
        n
    }

    fn append(&mut self, fr: &mut Vec<usize>, line: LineId) -> usize {
        if let [only] = fr.as_slice() {
            let only = *only;
            if !self.closed[only] && self.children[only].is_empty() {
                self.lines[only].push(line);
                return only;
            }
        }
        let n = self.node(fr, Some(line));
        *fr = vec![n];
        n
    }

    fn seq(&mut self, stmts: &[StmtNode], mut fr: Vec<usize>) -> Vec<usize> {
        for s in stmts {
            fr = self.stmt(s, fr);
        }
        fr
    }

    fn arm(&mut self, arm: &Arm, preds: Vec<usize>) -> Vec<usize> {
        match arm.header {
            Some(h) => {
                let n = self.node(&preds, Some(h));
                self.seq(&arm.body, vec![n])
            }
            None => self.seq(&arm.body, preds),
        }
    }

    fn stmt(&mut self, s: &StmtNode, mut fr: Vec<usize>) -> Vec<usize> {
        fn join(into: &mut Vec<usize>, more: Vec<usize>) {
            for m in more {
                if !into.contains(&m) {
                    into.push(m);
                }
            }
        }
        match s {
            StmtNode::Simple { line, exits } => {
                let n = self.append(&mut fr, *line);
                if *exits {
                    self.closed[n] = true;
                    return Vec::new();
                }
                fr
            }
            StmtNode::Branch { header, arms, exhaustive } => {
                let h = self.append(&mut fr, *header);
                self.closed[h] = true;
                let mut exits = Vec::new();
                for a in arms {
                    let e = self.arm(a, vec![h]);
                    join(&mut exits, e);
                }
                if !exhaustive || arms.is_empty() {
                    join(&mut exits, vec![h]);
                }
                exits
            }
            StmtNode::Loop { header, body, orelse } => {
                let h = self.append(&mut fr, *header);
                self.closed[h] = true;
                let mut exits = self.seq(body, vec![h]);
                join(&mut exits, vec![h]);
                match orelse {
                    Some(a) => self.arm(a, exits),
                    None => exits,
                }
            }
            StmtNode::Try { header, body, handlers, orelse, finalbody } => {
                let h = self.append(&mut fr, *header);
                self.closed[h] = true;
                let mut exits = self.seq(body, vec![h]);
                if let Some(a) = orelse {
                    exits = self.arm(a, exits);
                }
                for hd in handlers {
                    let e = self.arm(hd, vec![h]);
                    join(&mut exits, e);
                }
                match finalbody {
                    Some(a) => self.arm(a, exits),
                    None => exits,
                }
            }
        }
    }
}

/// Build the CFG of one function. Block ids are numbered locally from 1.
pub fn build_cfg(model: &SourceModel, f: FunctionId) -> FunctionCfg {
    let def = model.function(f);
    let mut b = Builder::default();
    let fr = b.seq(&def.structure, Vec::new());

    let mut exit = None;
    let needs_exit: Vec<usize> = fr.iter().copied().filter(|&n| !b.children[n].is_empty()).collect();
    if !needs_exit.is_empty() {
        exit = Some(b.node(&needs_exit, None));
    }
    if b.lines.is_empty() {
        b.node(&[], None);
    }
    let root = 0;
    let n = b.lines.len();

    // Fold straight-line chains.
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for a in 0..n {
            if !alive[a] || Some(a) == exit || b.children[a].len() != 1 {
                continue;
            }
            let c = b.children[a][0];
            if c == root || Some(c) == exit || b.parents[c].len() != 1 {
                continue;
            }
            let moved = std::mem::take(&mut b.lines[c]);
            b.lines[a].extend(moved);
            let grand = std::mem::take(&mut b.children[c]);
            for &g in &grand {
                for p in b.parents[g].iter_mut() {
                    if *p == c {
                        *p = a;
                    }
                }
            }
            b.children[a] = grand;
            alive[c] = false;
            changed = true;
        }
        if !changed {
            break;
        }
    }

    // Continuations join their statement; comments join the next statement's node.
    let mut owner_of: BTreeMap<LineId, usize> = BTreeMap::new();
    for (i, ls) in b.lines.iter().enumerate() {
        if alive[i] {
            for &l in ls {
                owner_of.insert(l, i);
            }
        }
    }
    let mut extra: Vec<(usize, LineId)> = Vec::new();
    for &l in &def.body {
        if owner_of.contains_key(&l) {
            continue;
        }
        let head = model.stmt(l).head;
        let target = owner_of
            .get(&head)
            .copied()
            .or_else(|| owner_of.range(l..).next().map(|(_, &n)| n))
            .or_else(|| owner_of.range(..l).next_back().map(|(_, &n)| n))
            .unwrap_or(root);
        extra.push((target, l));
    }
    for (t, l) in extra {
        b.lines[t].push(l);
    }

    // Renumber: by first statement, exit last.
    let mut order: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    order.sort_by_key(|&i| {
        let min = b.lines[i].iter().min().copied().unwrap_or(usize::MAX);
        (Some(i) == exit, min, i)
    });
    let mut remap = vec![usize::MAX; n];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let mut block = 0;
    let nodes = order
        .iter()
        .map(|&old| {
            let mut statements = b.lines[old].clone();
            statements.sort_unstable();
            let is_exit = Some(old) == exit || statements.is_empty();
            if !is_exit {
                block += 1;
            }
            CfgNode {
                block: (!is_exit).then_some(block),
                statements,
                children: b.children[old].iter().map(|&c| remap[c]).collect(),
                parents: b.parents[old].iter().map(|&p| remap[p]).collect(),
            }
        })
        .collect();
    FunctionCfg {
        function: f,
        name: def.name.clone(),
        root: remap[root],
        nodes,
    }
}

/// CFGs of every function, with block ids unique across the program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCfg {
    pub functions: Vec<FunctionCfg>,
    /// `(function index, node index)` of block `id` at position `id - 1`.
    pub blocks: Vec<(usize, usize)>,
    /// Block id of each line at position `line - 1`.
    pub block_of_line: Vec<usize>,
}

impl ProgramCfg {
    /// Function blocks are numbered by first line; global-scope blocks come last.
    pub fn build(model: &SourceModel) -> Self {
        let mut functions: Vec<FunctionCfg> = model.functions.iter().map(|f| build_cfg(model, f.id)).collect();
        let mut keys = Vec::new();
        for (fi, g) in functions.iter().enumerate() {
            let module = model.function(g.function).is_module_scope;
            for (ni, n) in g.nodes.iter().enumerate() {
                if !n.is_exit() {
                    keys.push((module, n.statements[0], fi, ni));
                }
            }
        }
        keys.sort_unstable();
        let mut blocks = Vec::with_capacity(keys.len());
        let mut block_of_line = vec![0; model.line_count()];
        for (i, &(_, _, fi, ni)) in keys.iter().enumerate() {
            let node = &mut functions[fi].nodes[ni];
            node.block = Some(i + 1);
            for &l in &node.statements {
                block_of_line[l - 1] = i + 1;
            }
            blocks.push((fi, ni));
        }
        Self { functions, blocks, block_of_line }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, id: usize) -> &CfgNode {
        let (fi, ni) = self.blocks[id - 1];
        &self.functions[fi].nodes[ni]
    }

    pub fn block_of(&self, line: LineId) -> usize {
        self.block_of_line[line - 1]
    }

    pub fn for_function(&self, f: FunctionId) -> &FunctionCfg {
        self.functions.iter().find(|g| g.function == f).expect("every function has a cfg")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cfg serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
        for (fi, g) in self.functions.iter().enumerate() {
            let _ = writeln!(s, "  subgraph cluster_{fi} {{\n    label=\"{}\";", g.name.replace('"', "\\\""));
            for (ni, n) in g.nodes.iter().enumerate() {
                let label = match n.block {
                    Some(b) => format!("B{b}\\n{}", span(&n.statements)),
                    None => "exit".to_string(),
                };
                let _ = writeln!(s, "    n{fi}_{ni} [label=\"{label}\"];");
            }
            for (ni, n) in g.nodes.iter().enumerate() {
                for c in &n.children {
                    let _ = writeln!(s, "    n{fi}_{ni} -> n{fi}_{c};");
                }
            }
            s.push_str("  }\n");
        }
        s.push_str("}\n");
        s
    }
}

/// Structural checks: acyclic, full statement coverage, no foldable chains.
pub fn validate(model: &SourceModel, g: &FunctionCfg) -> Result<(), String> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, n) in g.nodes.iter().enumerate() {
        for &l in &n.statements {
            if !seen.insert(l) {
                return Err(format!("line {l} in two nodes"));
            }
        }
        if n.is_exit() && !n.statements.is_empty() {
            return Err("exit node holds statements".into());
        }
        if !n.is_exit() && n.children.len() == 1 {
            let c = n.children[0];
            if c != g.root && !g.nodes[c].is_exit() && g.nodes[c].parents.len() == 1 {
                return Err(format!("node {i} and {c} form a chain"));
            }
        }
    }
    let body: std::collections::BTreeSet<LineId> = model.function(g.function).body.iter().copied().collect();
    if seen != body {
        return Err("nodes do not cover the function body".into());
    }
    // Kahn's algorithm
    let mut indeg: Vec<usize> = g.nodes.iter().map(|n| n.parents.len()).collect();
    let mut queue: Vec<usize> = (0..g.nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut done = 0;
    while let Some(i) = queue.pop() {
        done += 1;
        for &c in &g.nodes[i].children {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push(c);
            }
        }
    }
    if done != g.nodes.len() {
        return Err("cycle".into());
    }
    Ok(())
}

fn span(lines: &[LineId]) -> String {
    match (lines.first(), lines.last()) {
        (Some(a), Some(b)) if a == b => format!("line {a}"),
        (Some(a), Some(b)) => format!("lines {a}-{b}"),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests;
