//! Synthetic faulty/fixed test-script pairs and corpus loading.

mod ingest;
mod oracle;
mod program;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_external, load_case, Case, Corpus};
pub use oracle::{oracle_script, run_traced, true_trace, ExecutedLine, OracleConfig, OracleError, OracleResult, RunSpec};
pub use program::FaultKind;

use crate::config::SourceConfig;
use crate::source::{load_test_scripts, python_files_in, LineId, SourceError};
use program::{generate_program, Program, Site, Stmt};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("case {case}: no failing fault found in {attempts} attempts")]
    GenerationBudgetExceeded { case: String, attempts: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("case {0}: {1}")]
    Oracle(String, OracleError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("layout error in {0}: {1}")]
    Layout(PathBuf, String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub case_count: usize,
    pub lines_per_case: Span,
    pub mean_lines: f64,
    pub functions_per_case: Span,
    /// Chance that a plain statement slot becomes an extra log call.
    pub log_density: f64,
    pub static_log_fraction: f64,
    pub branch_density: f64,
    pub fault_count: Span,
    pub fault_kinds: Vec<FaultKind>,
    /// Callee used for logging, `object.method`.
    pub logger_call: String,
    pub max_attempts: usize,
    pub oracle: OracleConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            case_count: 20,
            lines_per_case: Span { min: 56, max: 1070 },
            mean_lines: 244.0,
            functions_per_case: Span { min: 2, max: 26 },
            log_density: 0.12,
            static_log_fraction: 1.0,
            branch_density: 0.12,
            fault_count: Span { min: 1, max: 2 },
            fault_kinds: FaultKind::ALL.to_vec(),
            logger_call: "Log.log".into(),
            max_attempts: 30,
            oracle: OracleConfig::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        for (name, s) in [("lines_per_case", self.lines_per_case), ("functions_per_case", self.functions_per_case), ("fault_count", self.fault_count)] {
            if s.min > s.max || s.max == 0 {
                return bad(&format!("{name} is empty"));
            }
        }
        for (name, f) in [("log_density", self.log_density), ("static_log_fraction", self.static_log_fraction), ("branch_density", self.branch_density)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must be within [0, 1]"));
            }
        }
        if self.fault_kinds.is_empty() {
            return bad("fault_kinds is empty");
        }
        let (obj, method) = self.logger_call.split_once('.').unwrap_or(("", ""));
        let ident = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.starts_with(|c: char| c.is_ascii_digit());
        if !ident(obj) || !ident(method) {
            return bad("logger_call must look like `object.method`");
        }
        Ok(())
    }

    /// Source settings that recognise this spec's logger.
    pub fn source_config(&self) -> SourceConfig {
        let obj = self.logger_call.split('.').next().unwrap_or("Log");
        SourceConfig { logger_prefixes: vec![format!("{obj}.")], ..SourceConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub file: String,
    pub raw_line: usize,
    pub line_id: LineId,
    pub kind: FaultKind,
    pub fixed_text: String,
    pub faulty_text: String,
}

/// Contents of `case.json`. Everything is optional for hand-made cases.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseMeta {
    pub id: String,
    pub seed: Option<u64>,
    /// Script to run, relative to `faulty/`.
    pub entry: Option<String>,
    /// Extra import directories, relative to the case directory.
    pub import_dirs: Vec<String>,
    /// Script whose public names are made global before running.
    pub inject: Option<String>,
    /// Function to call after the entry script is loaded.
    pub call: Option<String>,
    pub faults: Vec<FaultRecord>,
    pub known_faulty_lines: BTreeSet<LineId>,
    pub true_trace: BTreeSet<LineId>,
    pub exception: Option<String>,
    pub attempts: usize,
}

impl CaseMeta {
    pub fn run_spec(&self, case_dir: &Path, version: &str) -> Option<RunSpec> {
        let corpus = case_dir.join(version);
        Some(RunSpec {
            entry: corpus.join(self.entry.as_ref()?),
            corpus,
            import_paths: self.import_dirs.iter().map(|d| case_dir.join(d)).collect(),
            inject: self.inject.as_ref().map(|i| case_dir.join(i)),
            call: self.call.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub meta: CaseMeta,
    pub dir: PathBuf,
    pub faulty_files: Vec<(String, String)>,
    pub fixed_files: Vec<(String, String)>,
    pub execution_log: String,
}

fn stubs_source(logger_call: &str) -> String {
    let obj = logger_call.split('.').next().unwrap_or("Log");
    format!(
        "class _Logger:\n    def __getattr__(self, name):\n        def emit(*args):\n            print(\"[INFO]\", *args)\n\n        return emit\n\n\n\
class _Sut:\n    def read(self, name, value):\n        return value + len(name)\n\n    def send(self, name, value):\n        return None\n\n\n\
{obj} = _Logger()\nsut = _Sut()\n"
    )
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), CorpusError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(())
}

fn case_seed(seed: u64, index: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r.next_u64()
}

fn executed_sites(p: &Program, r: &OracleResult) -> BTreeSet<Site> {
    r.executed
        .iter()
        .filter_map(|e| Some((p.file_index(&e.file)?, e.line.checked_sub(1)?)))
        .collect()
}

fn pick_faults(p: &Program, sites: &BTreeSet<Site>, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> BTreeMap<Site, (FaultKind, Stmt)> {
    let want = rng.random_range(spec.fault_count.min..=spec.fault_count.max);
    let mut chosen = BTreeMap::new();
    for _ in 0..want * 8 {
        if chosen.len() == want {
            break;
        }
        let kind = *spec.fault_kinds.choose(rng).unwrap();
        let fits: Vec<Site> = sites
            .iter()
            .copied()
            .filter(|s| !chosen.contains_key(s) && p.stmt_at(*s).is_some_and(|st| st.mutate(kind, &mut rng.clone()).is_some()))
            .collect();
        if let Some(&site) = fits.choose(rng) {
            if let Some(m) = p.stmt_at(site).and_then(|st| st.mutate(kind, rng)) {
                chosen.insert(site, (kind, m));
            }
        }
    }
    chosen
}

/// Generate, execute and fault one case under `out/<id>`.
pub fn generate_case(spec: &CorpusSpec, index: usize, out: &Path) -> Result<GeneratedCase, CorpusError> {
    let id = format!("case_{index:04}");
    let dir = out.join(&id);
    let seed = case_seed(spec.seed, index);
    let scfg = spec.source_config();
    let oracle_err = |e| CorpusError::Oracle(id.clone(), e);
    write_files(&dir.join("stubs"), &[("sut_stubs.py".into(), stubs_source(&spec.logger_call))])?;

    for attempt in 0..spec.max_attempts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let program = generate_program(spec, ChaCha8Rng::seed_from_u64(rng.next_u64()));
        let fixed_files = program.render(&BTreeMap::new());
        write_files(&dir.join("fixed"), &fixed_files)?;
        let mut meta = CaseMeta {
            id: id.clone(),
            seed: Some(seed),
            entry: Some(program::ENTRY_FILE.into()),
            import_dirs: vec!["stubs".into()],
            attempts: attempt + 1,
            ..CaseMeta::default()
        };
        let fixed_run = run_traced(&meta.run_spec(&dir, "fixed").unwrap(), &spec.oracle).map_err(oracle_err)?;
        if !fixed_run.passed() {
            tracing::debug!(case = %id, attempt, "fixed twin failed; regenerating");
            continue;
        }
        let sites = executed_sites(&program, &fixed_run);
        for _ in 0..6 {
            let faults = pick_faults(&program, &sites, spec, &mut rng);
            if faults.is_empty() {
                break;
            }
            let overrides: BTreeMap<Site, Stmt> = faults.iter().map(|(s, (_, m))| (*s, m.clone())).collect();
            let faulty_files = program.render(&overrides);
            write_files(&dir.join("faulty"), &faulty_files)?;
            let run = run_traced(&meta.run_spec(&dir, "faulty").unwrap(), &spec.oracle).map_err(oracle_err)?;
            if run.passed() {
                continue;
            }
            let faulty_dir = dir.join("faulty");
            let paths = python_files_in(&faulty_dir).map_err(io_err(&faulty_dir))?;
            let model = load_test_scripts(&paths, Some(&faulty_dir), &scfg)?;
            meta.true_trace = true_trace(&model, &run).map_err(oracle_err)?;
            for (site, (kind, m)) in &faults {
                let file = program.files[site.0].name.clone();
                let fi = model.file_index(&file).expect("generated file is loaded");
                let line_id = model.line_id(fi, site.1 + 1).expect("fault sits on code");
                meta.faults.push(FaultRecord {
                    file,
                    raw_line: site.1 + 1,
                    line_id,
                    kind: *kind,
                    fixed_text: program.stmt_at(*site).unwrap().render(),
                    faulty_text: m.render(),
                });
                meta.known_faulty_lines.insert(line_id);
            }
            meta.exception = run.exception.clone();
            let log_path = dir.join("execution.log");
            std::fs::write(&log_path, &run.log).map_err(io_err(&log_path))?;
            let meta_path = dir.join("case.json");
            std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(io_err(&meta_path))?;
            return Ok(GeneratedCase { meta, dir, faulty_files, fixed_files, execution_log: run.log });
        }
    }
    Err(CorpusError::GenerationBudgetExceeded { case: id, attempts: spec.max_attempts })
}

/// Generate `spec.case_count` cases under `out`, in parallel.
pub fn generate(spec: &CorpusSpec, out: &Path) -> Result<Vec<GeneratedCase>, CorpusError> {
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    (0..spec.case_count).into_par_iter().map(|i| generate_case(spec, i, out)).collect()
}
