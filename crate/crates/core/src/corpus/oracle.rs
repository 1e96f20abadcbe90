//! Client for the line-tracing oracle script.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::source::{LineId, SourceModel};

const SCRIPT: &str = include_str!("../../oracle/trace_oracle.py");

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("could not run the oracle: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("script exceeded {0:?}")]
    Timeout(Duration),
    #[error("script failed outside the corpus: {0}")]
    CrashOutsideCorpus(String),
    #[error("unreadable oracle output: {0}")]
    BadOutput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub python: String,
    pub timeout_secs: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { python: "python3".into(), timeout_secs: 10.0 }
    }
}

/// How to start the script under test.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub entry: PathBuf,
    pub corpus: PathBuf,
    pub import_paths: Vec<PathBuf>,
    pub inject: Option<PathBuf>,
    pub call: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedLine {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub executed: Vec<ExecutedLine>,
    /// "passed" or "failed".
    pub status: String,
    pub exception: Option<String>,
    pub message: Option<String>,
    pub log: String,
    pub line_map: BTreeMap<String, Vec<usize>>,
    #[serde(skip)]
    pub seconds: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.status == "passed"
    }
}

/// The bundled oracle script, written once per content hash under the temp dir.
pub fn oracle_script() -> std::io::Result<PathBuf> {
    let h = Sha256::digest(SCRIPT.as_bytes());
    let tag: String = h.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let path = std::env::temp_dir().join(format!("tcfl_trace_oracle_{tag}.py"));
    if !path.exists() {
        let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
        std::fs::write(&tmp, SCRIPT)?;
        std::fs::rename(&tmp, &path)?;
    }
    Ok(path)
}

pub fn run_traced(run: &RunSpec, cfg: &OracleConfig) -> Result<OracleResult, OracleError> {
    let script = oracle_script()?;
    let out = tempfile_path("oracle_out", "json");
    let mut cmd = Command::new(&cfg.python);
    cmd.arg(&script)
        .arg("--entry")
        .arg(&run.entry)
        .arg("--corpus")
        .arg(&run.corpus)
        .arg("--out")
        .arg(&out)
        .arg("--timeout")
        .arg(cfg.timeout_secs.to_string());
    for p in &run.import_paths {
        cmd.arg("--path").arg(p);
    }
    if let Some(i) = &run.inject {
        cmd.arg("--inject").arg(i);
    }
    if let Some(c) = &run.call {
        cmd.arg("--call").arg(c);
    }
    cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());

    let start = Instant::now();
    let limit = Duration::from_secs_f64(cfg.timeout_secs + 2.0);
    let mut child = cmd.spawn()?;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break s;
        }
        if start.elapsed() > limit {
            let _ = child.kill();
            let _ = child.wait();
            let _ = std::fs::remove_file(&out);
            return Err(OracleError::Timeout(limit));
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let mut stderr = String::new();
    if let Some(mut e) = child.stderr.take() {
        let _ = e.read_to_string(&mut stderr);
    }
    let text = std::fs::read_to_string(&out);
    let _ = std::fs::remove_file(&out);
    let text = text.map_err(|e| OracleError::BadOutput(format!("{e} (exit {status}): {}", stderr.trim())))?;
    let mut r: OracleResult = serde_json::from_str(&text).map_err(|e| OracleError::BadOutput(e.to_string()))?;
    r.seconds = start.elapsed().as_secs_f64();
    match r.status.as_str() {
        "passed" | "failed" => Ok(r),
        "timeout" => Err(OracleError::Timeout(Duration::from_secs_f64(cfg.timeout_secs))),
        _ => Err(OracleError::CrashOutsideCorpus(r.log.lines().last().unwrap_or_default().to_string())),
    }
}

fn tempfile_path(stem: &str, ext: &str) -> PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static N: AtomicUsize = AtomicUsize::new(0);
    let n = N.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("tcfl_{stem}_{}_{n}.{ext}", std::process::id()))
}

/// Executed statements in the model's numbering. Every line of a multi-line
/// statement counts once any of its lines ran.
pub fn true_trace(model: &SourceModel, r: &OracleResult) -> Result<BTreeSet<LineId>, OracleError> {
    for f in &model.files {
        let key = Path::new(&f.path).to_string_lossy().replace('\\', "/");
        if let Some(m) = r.line_map.get(&key) {
            if *m != f.raw_lines {
                return Err(OracleError::BadOutput(format!("line map of {key} disagrees with the model")));
            }
        }
    }
    let mut heads = BTreeSet::new();
    for e in &r.executed {
        let Some(fi) = model.file_index(&e.file) else { continue };
        if let Some(id) = model.line_id(fi, e.line) {
            heads.insert(model.stmt(id).head);
        }
    }
    Ok(model.statements.iter().filter(|s| heads.contains(&s.head)).map(|s| s.id).collect())
}
