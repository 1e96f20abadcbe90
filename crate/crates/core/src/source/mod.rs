//! Parsed view of a set of test scripts.
//!
//! Blank lines are dropped and every remaining physical line receives a
//! global 1-based id, running across files in the order they were given.

mod python;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SourceConfig;

pub use python::parse_files;

pub type LineId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionId(pub usize);

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("syntax error in {file} at line {line}")]
    SyntaxError { file: String, line: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no test scripts given")]
    Empty,
    #[error("bad model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    LogCall,
    ErrorStmt,
    Plain,
    DefHeader,
    BranchHeader,
}

/// One piece of a string literal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrPart {
    Lit(String),
    Hole,
}

/// Just enough of a call argument's shape to recover its constant text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ArgExpr {
    Str { fstring: bool, parts: Vec<StrPart> },
    /// Adjacent literals, `"a" f"b"`.
    Concat { items: Vec<ArgExpr> },
    /// `"...{}...".format(..)`
    Format { template: Box<ArgExpr> },
    /// `"...%s..." % x`
    Percent { template: Box<ArgExpr> },
    BinOp { op: String, left: Box<ArgExpr>, right: Box<ArgExpr> },
    Other { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallExpr {
    pub callee: String,
    pub args: Vec<ArgExpr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub name: String,
    pub first_line: LineId,
    /// Raw (1-based, blank lines included) line number of each id in the file.
    pub raw_lines: Vec<usize>,
}

impl SourceFile {
    pub fn line_count(&self) -> usize {
        self.raw_lines.len()
    }

    pub fn ids(&self) -> std::ops::Range<LineId> {
        self.first_line..self.first_line + self.raw_lines.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: LineId,
    pub file: usize,
    pub raw_line: usize,
    pub function: FunctionId,
    pub text: String,
    pub kind: StatementKind,
    /// First line of the logical statement this line is part of.
    pub head: LineId,
    pub is_comment: bool,
    /// Qualified names of test-code functions called from this line.
    pub call_targets: Vec<String>,
    pub external_calls: Vec<String>,
    /// Top-level call of an expression statement, kept on head lines only.
    pub call: Option<CallExpr>,
}

impl Statement {
    pub fn is_head(&self) -> bool {
        self.head == self.id
    }
}

/// Control structure of a function body, used to build its CFG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum StmtNode {
    Simple {
        line: LineId,
        /// `return` / `raise`
        exits: bool,
    },
    Branch {
        header: LineId,
        arms: Vec<Arm>,
        /// Some arm always runs (an `else` is present).
        exhaustive: bool,
    },
    Loop {
        header: LineId,
        body: Vec<StmtNode>,
        orelse: Option<Arm>,
    },
    Try {
        header: LineId,
        body: Vec<StmtNode>,
        handlers: Vec<Arm>,
        orelse: Option<Arm>,
        finalbody: Option<Arm>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub header: Option<LineId>,
    pub body: Vec<StmtNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub id: FunctionId,
    /// Qualified name; `module` for global scope.
    pub name: String,
    pub short_name: String,
    pub file: Option<usize>,
    pub parent: Option<FunctionId>,
    pub class_name: Option<String>,
    pub def_line: Option<LineId>,
    /// Column of the `def` (or first decorator); -1 for module scope.
    pub indent: i64,
    pub body: Vec<LineId>,
    pub structure: Vec<StmtNode>,
    pub is_helper: bool,
    pub is_module_scope: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub function: FunctionId,
    pub line: LineId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub files: Vec<SourceFile>,
    pub statements: Vec<Statement>,
    pub functions: Vec<FunctionDef>,
    pub call_sites: Vec<CallSite>,
    pub config: SourceConfig,
}

impl SourceModel {
    pub fn line_count(&self) -> usize {
        self.statements.len()
    }

    pub fn all_lines(&self) -> BTreeSet<LineId> {
        (1..=self.statements.len()).collect()
    }

    pub fn stmt(&self, id: LineId) -> &Statement {
        &self.statements[id - 1]
    }

    pub fn function(&self, id: FunctionId) -> &FunctionDef {
        &self.functions[id.0]
    }

    pub fn module_function(&self) -> &FunctionDef {
        self.functions
            .iter()
            .find(|f| f.is_module_scope)
            .expect("model always has a module function")
    }

    pub fn function_by_name(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Locate a file by exact path, path suffix or bare file name.
    pub fn file_index(&self, name: &str) -> Option<usize> {
        let norm = name.replace('\\', "/");
        if let Some(i) = self.files.iter().position(|f| f.path == norm) {
            return Some(i);
        }
        if let Some(i) = self
            .files
            .iter()
            .position(|f| norm.ends_with(&format!("/{}", f.path)) || f.path.ends_with(&format!("/{norm}")))
        {
            return Some(i);
        }
        let base = norm.rsplit('/').next().unwrap_or(&norm);
        let hits: Vec<usize> = (0..self.files.len()).filter(|&i| self.files[i].name == base).collect();
        (hits.len() == 1).then(|| hits[0])
    }

    /// Global id of a raw line, `None` for blank or out-of-range lines.
    pub fn line_id(&self, file: usize, raw_line: usize) -> Option<LineId> {
        let f = &self.files[file];
        f.raw_lines.binary_search(&raw_line).ok().map(|i| f.first_line + i)
    }

    pub fn call_sites_of(&self, f: FunctionId) -> impl Iterator<Item = &CallSite> {
        self.call_sites.iter().filter(move |c| c.function == f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SourceError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Read and parse scripts from disk. Paths are recorded relative to `root` when given.
pub fn load_test_scripts(
    paths: &[PathBuf],
    root: Option<&Path>,
    config: &SourceConfig,
) -> Result<SourceModel, SourceError> {
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| SourceError::Io {
            path: p.clone(),
            source,
        })?;
        let shown = root
            .and_then(|r| p.strip_prefix(r).ok())
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/");
        files.push((shown, text));
    }
    parse_files(&files, config)
}

/// All `.py` files under `dir`, sorted by relative path.
pub fn python_files_in(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fn walk(d: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for e in std::fs::read_dir(d)? {
            let p = e?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "py") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn is_log_statement(s: &Statement) -> bool {
    s.kind == StatementKind::LogCall && s.call.is_some()
}

/// Log statements in id order.
pub fn detect_log_statements(model: &SourceModel) -> Vec<LineId> {
    model
        .statements
        .iter()
        .filter(|s| is_log_statement(s))
        .map(|s| s.id)
        .collect()
}
