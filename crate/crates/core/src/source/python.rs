//! tree-sitter front end for Python test scripts.

use std::collections::BTreeMap;

use tree_sitter::{Node, Parser};

use super::*;

struct FileCtx<'a> {
    idx: usize,
    src: &'a str,
    lines: Vec<&'a str>,
    raw_to_id: Vec<Option<LineId>>,
}

impl FileCtx<'_> {
    fn text(&self, n: Node) -> &str {
        &self.src[n.byte_range()]
    }

    fn id(&self, row: usize) -> Option<LineId> {
        self.raw_to_id.get(row).copied().flatten()
    }
}

#[derive(Default, Clone)]
struct LineInfo {
    owner: Option<FunctionId>,
    head: Option<LineId>,
    kind: Option<StatementKind>,
    callees: Vec<String>,
    call: Option<CallExpr>,
    comment: bool,
}

struct Walker<'c> {
    cfg: &'c SourceConfig,
    info: Vec<LineInfo>,
    functions: Vec<FunctionDef>,
}

const CLAUSES: &[&str] = &[
    "block",
    "else_clause",
    "elif_clause",
    "except_clause",
    "except_group_clause",
    "finally_clause",
    "case_clause",
    "function_definition",
    "class_definition",
    "decorated_definition",
];

fn colon_row(n: Node) -> usize {
    let mut c = n.walk();
    for ch in n.children(&mut c) {
        if ch.kind() == ":" {
            return ch.start_position().row;
        }
    }
    n.start_position().row
}

fn child_of_kind<'t>(n: Node<'t>, kind: &str) -> Option<Node<'t>> {
    let mut c = n.walk();
    let found = n.named_children(&mut c).find(|ch| ch.kind() == kind);
    found
}

fn unescape(s: &str, raw: bool, fstring: bool) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars().peekable();
    while let Some(c) = it.next() {
        if c == '\\' && !raw {
            match it.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('0') => out.push('\0'),
                Some('\n') => {}
                Some(o @ ('\\' | '\'' | '"')) => out.push(o),
                Some(o) => {
                    out.push('\\');
                    out.push(o);
                }
                None => out.push('\\'),
            }
        } else if fstring && (c == '{' || c == '}') && it.peek() == Some(&c) {
            it.next();
            out.push(c);
        } else {
            out.push(c);
        }
    }
    out
}

impl<'c> Walker<'c> {
    fn claim(&mut self, f: &FileCtx, rows: std::ops::RangeInclusive<usize>, head_row: usize, owner: FunctionId, kind: StatementKind) -> Option<LineId> {
        let head = f.id(head_row)?;
        if self.info[head - 1].head.is_some() {
            return None;
        }
        for r in rows {
            if let Some(id) = f.id(r) {
                let li = &mut self.info[id - 1];
                if li.head.is_none() {
                    li.head = Some(head);
                    li.owner = Some(owner);
                    li.kind = Some(kind);
                }
            }
        }
        Some(head)
    }

    /// Attach callees found in `n` (outside nested bodies) to `line`.
    fn add_calls(&mut self, f: &FileCtx, n: Node, line: LineId) {
        let mut stack = vec![n];
        while let Some(x) = stack.pop() {
            if x.kind() == "call" {
                if let Some(func) = x.child_by_field_name("function") {
                    let t: String = f.text(func).chars().filter(|c| !c.is_whitespace()).collect();
                    self.info[line - 1].callees.push(t);
                }
            }
            let mut c = x.walk();
            for ch in x.named_children(&mut c) {
                if !CLAUSES.contains(&ch.kind()) {
                    stack.push(ch);
                }
            }
        }
    }

    fn block(&mut self, f: &FileCtx, n: Node, owner: FunctionId, class: Option<&str>) -> Vec<StmtNode> {
        let mut out = Vec::new();
        let mut c = n.walk();
        let kids: Vec<Node> = n.named_children(&mut c).collect();
        for ch in kids {
            self.statement(f, ch, owner, class, &mut out);
        }
        out
    }

    fn arm_body(&mut self, f: &FileCtx, clause: Node, owner: FunctionId, class: Option<&str>) -> Vec<StmtNode> {
        let body = clause
            .child_by_field_name("body")
            .or_else(|| clause.child_by_field_name("consequence"))
            .or_else(|| child_of_kind(clause, "block"));
        body.map(|b| self.block(f, b, owner, class)).unwrap_or_default()
    }

    /// Claim the header rows of a compound statement or clause.
    fn header(&mut self, f: &FileCtx, n: Node, owner: FunctionId, kind: StatementKind) -> Option<LineId> {
        let start = n.start_position().row;
        let end = colon_row(n).max(start);
        let id = self.claim(f, start..=end, start, owner, kind)?;
        self.add_calls(f, n, id);
        Some(id)
    }

    fn statement(&mut self, f: &FileCtx, n: Node, owner: FunctionId, class: Option<&str>, out: &mut Vec<StmtNode>) {
        use StatementKind::*;
        match n.kind() {
            "comment" => {}
            "function_definition" => self.function(f, n, None, owner, class),
            "decorated_definition" => {
                if let Some(def) = n.child_by_field_name("definition") {
                    if def.kind() == "function_definition" {
                        self.function(f, def, Some(n), owner, class);
                    } else {
                        self.class(f, def, Some(n), owner, class, out);
                    }
                }
            }
            "class_definition" => self.class(f, n, None, owner, class, out),
            "if_statement" => {
                let Some(h) = self.header(f, n, owner, BranchHeader) else { return };
                let mut arms = vec![Arm {
                    header: None,
                    body: n
                        .child_by_field_name("consequence")
                        .map(|b| self.block(f, b, owner, class))
                        .unwrap_or_default(),
                }];
                let mut exhaustive = false;
                let mut c = n.walk();
                let alts: Vec<Node> = n.children_by_field_name("alternative", &mut c).collect();
                for alt in alts {
                    exhaustive |= alt.kind() == "else_clause";
                    let ah = self.header(f, alt, owner, BranchHeader);
                    let body = self.arm_body(f, alt, owner, class);
                    arms.push(Arm { header: ah, body });
                }
                out.push(StmtNode::Branch { header: h, arms, exhaustive });
            }
            "for_statement" | "while_statement" => {
                let Some(h) = self.header(f, n, owner, BranchHeader) else { return };
                let body = n
                    .child_by_field_name("body")
                    .map(|b| self.block(f, b, owner, class))
                    .unwrap_or_default();
                let orelse = n.child_by_field_name("alternative").map(|alt| {
                    let ah = self.header(f, alt, owner, BranchHeader);
                    Arm { header: ah, body: self.arm_body(f, alt, owner, class) }
                });
                out.push(StmtNode::Loop { header: h, body, orelse });
            }
            "try_statement" => {
                let Some(h) = self.header(f, n, owner, BranchHeader) else { return };
                let body = n
                    .child_by_field_name("body")
                    .map(|b| self.block(f, b, owner, class))
                    .unwrap_or_default();
                let (mut handlers, mut orelse, mut finalbody) = (Vec::new(), None, None);
                let mut c = n.walk();
                let kids: Vec<Node> = n.named_children(&mut c).collect();
                for ch in kids {
                    let slot = match ch.kind() {
                        "except_clause" | "except_group_clause" => 0,
                        "else_clause" => 1,
                        "finally_clause" => 2,
                        _ => continue,
                    };
                    let ah = self.header(f, ch, owner, BranchHeader);
                    let arm = Arm { header: ah, body: self.arm_body(f, ch, owner, class) };
                    match slot {
                        0 => handlers.push(arm),
                        1 => orelse = Some(arm),
                        _ => finalbody = Some(arm),
                    }
                }
                out.push(StmtNode::Try { header: h, body, handlers, orelse, finalbody });
            }
            "match_statement" => {
                let Some(h) = self.header(f, n, owner, BranchHeader) else { return };
                let mut cases = Vec::new();
                let mut stack = vec![n];
                while let Some(x) = stack.pop() {
                    let mut c = x.walk();
                    for ch in x.named_children(&mut c) {
                        if ch.kind() == "case_clause" {
                            cases.push(ch);
                        } else if ch.kind() == "block" {
                            stack.push(ch);
                        }
                    }
                }
                cases.sort_by_key(|c| c.start_byte());
                let mut exhaustive = false;
                let mut arms = Vec::new();
                for cc in cases {
                    let pat: String = cc
                        .named_child(0)
                        .map(|p| f.text(p).trim().to_string())
                        .unwrap_or_default();
                    exhaustive |= pat == "_";
                    let ah = self.header(f, cc, owner, BranchHeader);
                    arms.push(Arm { header: ah, body: self.arm_body(f, cc, owner, class) });
                }
                out.push(StmtNode::Branch { header: h, arms, exhaustive });
            }
            "with_statement" => {
                if let Some(h) = self.header(f, n, owner, Plain) {
                    out.push(StmtNode::Simple { line: h, exits: false });
                }
                if let Some(b) = n.child_by_field_name("body") {
                    let inner = self.block(f, b, owner, class);
                    out.extend(inner);
                }
            }
            kind => {
                let start = n.start_position().row;
                let end = n.end_position().row;
                let (sk, call) = self.classify_simple(f, n);
                let Some(id) = self.claim(f, start..=end, start, owner, sk) else {
                    // shares a line with an earlier statement
                    if let Some(id) = f.id(start) {
                        self.add_calls(f, n, id);
                    }
                    return;
                };
                self.add_calls(f, n, id);
                self.info[id - 1].call = call;
                let exits = matches!(kind, "return_statement" | "raise_statement");
                out.push(StmtNode::Simple { line: id, exits });
            }
        }
    }

    fn classify_simple(&self, f: &FileCtx, n: Node) -> (StatementKind, Option<CallExpr>) {
        use StatementKind::*;
        match n.kind() {
            "assert_statement" | "raise_statement" => return (ErrorStmt, None),
            "expression_statement" => {}
            _ => return (Plain, None),
        }
        let mut e = match n.named_child(0) {
            Some(e) => e,
            None => return (Plain, None),
        };
        if e.kind() == "await" {
            if let Some(inner) = e.named_child(0) {
                e = inner;
            }
        }
        if e.kind() != "call" {
            return (Plain, None);
        }
        let Some(func) = e.child_by_field_name("function") else { return (Plain, None) };
        let callee: String = f.text(func).chars().filter(|c| !c.is_whitespace()).collect();
        if self.cfg.logger_prefixes.iter().any(|p| callee.starts_with(p.as_str())) {
            let mut args = Vec::new();
            if let Some(al) = e.child_by_field_name("arguments") {
                let mut c = al.walk();
                for a in al.named_children(&mut c) {
                    if matches!(a.kind(), "keyword_argument" | "comment") {
                        continue;
                    }
                    args.push(arg_expr(f, a));
                }
            }
            return (LogCall, Some(CallExpr { callee, args }));
        }
        if self.cfg.assert_call_prefixes.iter().any(|p| callee.starts_with(p.as_str())) {
            return (ErrorStmt, None);
        }
        (Plain, None)
    }

    fn new_function(&mut self, name: &str, parent: FunctionId, class: Option<&str>, file: usize, indent: i64) -> FunctionId {
        let id = FunctionId(self.functions.len());
        let qual = match class {
            Some(c) => format!("{c}.{name}"),
            None if parent.0 == 0 => name.to_string(),
            None => format!("{}.{name}", self.functions[parent.0].name),
        };
        self.functions.push(FunctionDef {
            id,
            name: qual,
            short_name: name.to_string(),
            file: Some(file),
            parent: Some(parent),
            class_name: class.map(String::from),
            def_line: None,
            indent,
            body: Vec::new(),
            structure: Vec::new(),
            is_helper: !self.cfg.fixture_names.contains(name),
            is_module_scope: false,
        });
        id
    }

    fn function(&mut self, f: &FileCtx, def: Node, decorated: Option<Node>, owner: FunctionId, class: Option<&str>) {
        let outer = decorated.unwrap_or(def);
        let name = def
            .child_by_field_name("name")
            .map(|n| f.text(n).to_string())
            .unwrap_or_else(|| "<anonymous>".into());
        let fid = self.new_function(&name, owner, class, f.idx, outer.start_position().column as i64);
        let mut structure = Vec::new();
        if let Some(d) = decorated {
            let mut c = d.walk();
            let decs: Vec<Node> = d.named_children(&mut c).filter(|x| x.kind() == "decorator").collect();
            for dec in decs {
                let (s, e) = (dec.start_position().row, dec.end_position().row);
                if let Some(id) = self.claim(f, s..=e, s, fid, StatementKind::DefHeader) {
                    self.add_calls(f, dec, id);
                    structure.push(StmtNode::Simple { line: id, exits: false });
                }
            }
        }
        if let Some(h) = self.header(f, def, fid, StatementKind::DefHeader) {
            self.functions[fid.0].def_line = Some(h);
            structure.push(StmtNode::Simple { line: h, exits: false });
        }
        if let Some(b) = def.child_by_field_name("body") {
            let inner = self.block(f, b, fid, None);
            structure.extend(inner);
        }
        self.functions[fid.0].structure = structure;
    }

    fn class(&mut self, f: &FileCtx, def: Node, decorated: Option<Node>, owner: FunctionId, class: Option<&str>, out: &mut Vec<StmtNode>) {
        let name = def
            .child_by_field_name("name")
            .map(|n| f.text(n).to_string())
            .unwrap_or_default();
        let qual = match class {
            Some(c) => format!("{c}.{name}"),
            None if owner.0 == 0 => name,
            None => format!("{}.{name}", self.functions[owner.0].name),
        };
        if let Some(d) = decorated {
            let mut c = d.walk();
            let decs: Vec<Node> = d.named_children(&mut c).filter(|x| x.kind() == "decorator").collect();
            for dec in decs {
                let (s, e) = (dec.start_position().row, dec.end_position().row);
                if let Some(id) = self.claim(f, s..=e, s, owner, StatementKind::DefHeader) {
                    self.add_calls(f, dec, id);
                    out.push(StmtNode::Simple { line: id, exits: false });
                }
            }
        }
        if let Some(h) = self.header(f, def, owner, StatementKind::DefHeader) {
            out.push(StmtNode::Simple { line: h, exits: false });
        }
        if let Some(b) = def.child_by_field_name("body") {
            let inner = self.block(f, b, owner, Some(&qual));
            out.extend(inner);
        }
    }
}

fn string_lit(f: &FileCtx, n: Node) -> ArgExpr {
    let mut c = n.walk();
    let mut parts: Vec<StrPart> = Vec::new();
    let (mut fstring, mut raw) = (false, false);
    for ch in n.children(&mut c) {
        match ch.kind() {
            "string_start" => {
                let p = f.text(ch).to_ascii_lowercase();
                fstring = p.contains('f');
                raw = p.contains('r');
            }
            "string_content" => {
                let t = unescape(f.text(ch), raw, fstring);
                match parts.last_mut() {
                    Some(StrPart::Lit(prev)) => prev.push_str(&t),
                    _ => parts.push(StrPart::Lit(t)),
                }
            }
            "interpolation" => parts.push(StrPart::Hole),
            _ => {}
        }
    }
    ArgExpr::Str { fstring, parts }
}

fn is_literal(n: Node) -> bool {
    matches!(n.kind(), "string" | "concatenated_string")
}

fn arg_expr(f: &FileCtx, n: Node) -> ArgExpr {
    match n.kind() {
        "string" => string_lit(f, n),
        "concatenated_string" => {
            let mut c = n.walk();
            let items = n
                .named_children(&mut c)
                .filter(|x| x.kind() == "string")
                .map(|x| string_lit(f, x))
                .collect();
            ArgExpr::Concat { items }
        }
        "parenthesized_expression" => match n.named_child(0) {
            Some(inner) if inner.kind() != "comment" => arg_expr(f, inner),
            _ => ArgExpr::Other { text: f.text(n).to_string() },
        },
        "call" => {
            let func = n.child_by_field_name("function");
            if let Some(func) = func.filter(|x| x.kind() == "attribute") {
                let obj = func.child_by_field_name("object");
                let attr = func.child_by_field_name("attribute").map(|a| f.text(a));
                if let (Some(obj), Some("format")) = (obj, attr) {
                    let obj = if obj.kind() == "parenthesized_expression" {
                        obj.named_child(0).unwrap_or(obj)
                    } else {
                        obj
                    };
                    if is_literal(obj) {
                        return ArgExpr::Format { template: Box::new(arg_expr(f, obj)) };
                    }
                }
            }
            ArgExpr::Other { text: f.text(n).to_string() }
        }
        "binary_operator" => {
            let op = n.child_by_field_name("operator").map(|o| f.text(o).to_string()).unwrap_or_default();
            let (Some(l), Some(r)) = (n.child_by_field_name("left"), n.child_by_field_name("right")) else {
                return ArgExpr::Other { text: f.text(n).to_string() };
            };
            if op == "%" && is_literal(l) {
                return ArgExpr::Percent { template: Box::new(arg_expr(f, l)) };
            }
            ArgExpr::BinOp { op, left: Box::new(arg_expr(f, l)), right: Box::new(arg_expr(f, r)) }
        }
        _ => ArgExpr::Other { text: f.text(n).to_string() },
    }
}

fn first_error(n: Node) -> Option<Node> {
    if n.is_error() || n.is_missing() {
        return Some(n);
    }
    if !n.has_error() {
        return None;
    }
    let mut c = n.walk();
    let kids: Vec<Node> = n.children(&mut c).collect();
    kids.into_iter().find_map(first_error).or(Some(n))
}

fn indent_of(s: &str) -> i64 {
    s.bytes().take_while(|b| *b == b' ' || *b == b'\t').count() as i64
}

/// Parse `(path, contents)` pairs into one model.
pub fn parse_files(files: &[(String, String)], cfg: &SourceConfig) -> Result<SourceModel, SourceError> {
    if files.is_empty() {
        return Err(SourceError::Empty);
    }
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar loads");

    let mut walker = Walker {
        cfg,
        info: Vec::new(),
        functions: vec![FunctionDef {
            id: FunctionId(0),
            name: "module".into(),
            short_name: "module".into(),
            file: None,
            parent: None,
            class_name: None,
            def_line: None,
            indent: -1,
            body: Vec::new(),
            structure: Vec::new(),
            is_helper: false,
            is_module_scope: true,
        }],
    };
    let mut out_files = Vec::new();
    let mut texts: Vec<String> = Vec::new();
    let mut file_of: Vec<usize> = Vec::new();
    let mut raw_of: Vec<usize> = Vec::new();
    let mut module_structure = Vec::new();

    for (idx, (path, src)) in files.iter().enumerate() {
        let lines: Vec<&str> = src.lines().collect();
        let first = walker.info.len() + 1;
        let mut raw_to_id = Vec::with_capacity(lines.len());
        let mut raw_lines = Vec::new();
        for (row, l) in lines.iter().enumerate() {
            if l.trim().is_empty() {
                raw_to_id.push(None);
            } else {
                walker.info.push(LineInfo::default());
                texts.push(l.to_string());
                file_of.push(idx);
                raw_of.push(row + 1);
                raw_lines.push(row + 1);
                raw_to_id.push(Some(walker.info.len()));
            }
        }
        let tree = parser.parse(src, None).expect("parser has a language");
        let root = tree.root_node();
        if let Some(e) = first_error(root) {
            return Err(SourceError::SyntaxError {
                file: path.clone(),
                line: e.start_position().row + 1,
            });
        }
        let ctx = FileCtx { idx, src, lines, raw_to_id };
        let top = walker.block(&ctx, root, FunctionId(0), None);
        module_structure.extend(top);

        // Lines no statement claimed: comments, owned by indentation.
        let mut last_owner = FunctionId(0);
        for (row, l) in ctx.lines.iter().enumerate() {
            let Some(id) = ctx.id(row) else { continue };
            let li = &walker.info[id - 1];
            if li.head.is_some() {
                last_owner = li.owner.expect("claimed lines have owners");
                continue;
            }
            let col = indent_of(l);
            let mut owner = last_owner;
            while owner.0 != 0 && col <= walker.functions[owner.0].indent {
                owner = walker.functions[owner.0].parent.unwrap_or(FunctionId(0));
            }
            let li = &mut walker.info[id - 1];
            li.head = Some(id);
            li.owner = Some(owner);
            li.kind = Some(StatementKind::Plain);
            li.comment = l.trim_start().starts_with('#');
        }

        let name = path.rsplit(['/', '\\']).next().unwrap_or(path).to_string();
        out_files.push(SourceFile {
            path: path.replace('\\', "/"),
            name,
            first_line: first,
            raw_lines,
        });
    }
    walker.functions[0].structure = module_structure;

    let Walker { info, mut functions, .. } = walker;

    // Qualified names must be unique.
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for f in functions.iter_mut() {
        let n = seen.entry(f.name.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            f.name = format!("{}#{}", f.name, n);
        }
    }

    let stems: Vec<String> = out_files
        .iter()
        .map(|f| f.name.trim_end_matches(".py").to_string())
        .collect();
    let resolve = |callee: &str| -> Vec<FunctionId> {
        match callee.rsplit_once('.') {
            Some((obj, m)) => {
                if let Some(fi) = stems.iter().position(|s| s == obj) {
                    functions
                        .iter()
                        .filter(|f| f.file == Some(fi) && f.parent == Some(FunctionId(0)) && f.class_name.is_none() && f.short_name == m)
                        .map(|f| f.id)
                        .collect()
                } else {
                    functions
                        .iter()
                        .filter(|f| f.class_name.is_some() && f.short_name == m)
                        .map(|f| f.id)
                        .collect()
                }
            }
            None => functions
                .iter()
                .filter(|f| !f.is_module_scope && f.class_name.is_none() && f.short_name == callee)
                .map(|f| f.id)
                .collect(),
        }
    };

    let mut statements = Vec::with_capacity(info.len());
    let mut call_sites = Vec::new();
    for (i, li) in info.iter().enumerate() {
        let id = i + 1;
        let head = li.head.unwrap_or(id);
        let owner = li.owner.unwrap_or(FunctionId(0));
        let kind = li.kind.unwrap_or(StatementKind::Plain);
        let (mut targets, mut external) = (Vec::<String>::new(), Vec::<String>::new());
        for callee in &li.callees {
            if cfg.logger_prefixes.iter().any(|p| callee.starts_with(p.as_str())) {
                external.push(callee.clone());
                continue;
            }
            let hits = resolve(callee);
            if hits.is_empty() {
                external.push(callee.clone());
            }
            for h in hits {
                let name = functions[h.0].name.clone();
                if !targets.contains(&name) {
                    targets.push(name);
                    call_sites.push(CallSite { function: h, line: id });
                }
            }
        }
        statements.push(Statement {
            id,
            file: file_of[i],
            raw_line: raw_of[i],
            function: owner,
            text: texts[i].clone(),
            kind,
            head,
            is_comment: li.comment,
            call_targets: targets,
            external_calls: external,
            call: li.call.clone(),
        });
    }
    for s in &statements {
        functions[s.function.0].body.push(s.id);
    }

    Ok(SourceModel {
        files: out_files,
        statements,
        functions,
        call_sites,
        config: cfg.clone(),
    })
}
