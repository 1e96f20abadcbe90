use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{io_err, CaseMeta, CorpusError};
use crate::cfg::ProgramCfg;
use crate::config::SourceConfig;
use crate::eval::{flag_outliers, label_ground_truth, EvalError, GroundTruth};
use crate::source::{load_test_scripts, python_files_in, SourceModel};

/// One test case: faulty and fixed scripts plus the failure log.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub dir: PathBuf,
    pub faulty: SourceModel,
    pub fixed: SourceModel,
    pub cfgs: ProgramCfg,
    pub log_text: String,
    pub ground_truth: GroundTruth,
    pub meta: CaseMeta,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub cases: Vec<Case>,
    /// (case id, reason)
    pub rejected: Vec<(String, String)>,
}

fn load_version(dir: &Path, cfg: &SourceConfig) -> Result<SourceModel, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::Layout(dir.to_path_buf(), "missing directory".into()));
    }
    let paths = python_files_in(dir).map_err(io_err(dir))?;
    if paths.is_empty() {
        return Err(CorpusError::Layout(dir.to_path_buf(), "no Python files".into()));
    }
    Ok(load_test_scripts(&paths, Some(dir), cfg)?)
}

/// Read `{faulty/, fixed/, execution.log[, case.json]}` from `dir`.
pub fn load_case(dir: &Path, cfg: &SourceConfig) -> Result<Result<Case, EvalError>, CorpusError> {
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let log_path = dir.join("execution.log");
    if !log_path.is_file() {
        return Err(CorpusError::Layout(dir.to_path_buf(), "missing execution.log".into()));
    }
    let faulty = load_version(&dir.join("faulty"), cfg)?;
    let fixed = load_version(&dir.join("fixed"), cfg)?;
    let log_text = std::fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
    let meta_path = dir.join("case.json");
    let mut meta: CaseMeta = if meta_path.is_file() {
        let t = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        serde_json::from_str(&t).map_err(|e| CorpusError::Layout(meta_path.clone(), e.to_string()))?
    } else {
        CaseMeta::default()
    };
    if meta.id.is_empty() {
        meta.id = id.clone();
    }
    let cfgs = ProgramCfg::build(&faulty);
    Ok(label_ground_truth(&faulty, &fixed, &cfgs).map(|ground_truth| Case {
        id: meta.id.clone(),
        dir: dir.to_path_buf(),
        faulty,
        fixed,
        cfgs,
        log_text,
        ground_truth,
        meta,
    }))
}

/// Load every case directory under `dir` (or `dir` itself if it is a case),
/// then flag faulty-line-ratio outliers.
pub fn ingest_external(dir: &Path, cfg: &SourceConfig) -> Result<Corpus, CorpusError> {
    let mut dirs: Vec<PathBuf> = if dir.join("faulty").is_dir() {
        vec![dir.to_path_buf()]
    } else {
        std::fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect()
    };
    dirs.sort();
    let mut corpus = Corpus::default();
    for d in dirs {
        let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match load_case(&d, cfg) {
            Ok(Ok(case)) => corpus.cases.push(case),
            Ok(Err(e)) => corpus.rejected.push((id, e.to_string())),
            Err(e @ (CorpusError::Layout(..) | CorpusError::Source(_))) => corpus.rejected.push((id, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let ratios: BTreeMap<String, f64> =
        corpus.cases.iter().map(|c| (c.id.clone(), c.ground_truth.line_ratio(&c.faulty))).collect();
    let flagged = flag_outliers(&ratios);
    for c in &mut corpus.cases {
        c.ground_truth.outlier = flagged.contains(&c.id);
    }
    Ok(corpus)
}
