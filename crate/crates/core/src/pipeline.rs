//! End-to-end runs: corpus → match → estimate → localize → evaluate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::ProgramCfg;
use crate::config::{LogConfig, SourceConfig};
use crate::corpus::{generate, ingest_external, Case, CorpusError, CorpusSpec};
use crate::eval::{fault_preservation, line_to_block, mpf1_grid, topk_metrics, GroundTruth, MetricReport, DEFAULT_MASK_RATES};
use crate::fl::{localize, BackendConfig, ElementRef, FlError, FlRun, Granularity, LlmBackend, LocalizeInput};
use crate::logmatch::{match_log, parse_log, MatchOutcome};
use crate::trace::{estimate, Known, Variant};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Backend(#[from] FlError),
    #[error("case {0}: {1}")]
    Case(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// When present the corpus directory is (re)generated from this spec first.
    pub generate: Option<CorpusSpec>,
    pub variants: Vec<String>,
    pub granularities: Vec<Granularity>,
    pub k: Vec<usize>,
    pub function_k: Vec<usize>,
    pub mask_rates: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub backend: BackendConfig,
    /// 0 means one per core.
    pub workers: usize,
    pub localize: bool,
    pub skip_outliers: bool,
    pub source: SourceConfig,
    pub log: LogConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            generate: None,
            variants: Variant::all().iter().map(|v| v.to_string()).collect(),
            granularities: Granularity::ALL.to_vec(),
            k: vec![1, 3, 5, 10],
            function_k: vec![1, 3],
            mask_rates: DEFAULT_MASK_RATES.to_vec(),
            repetitions: 5,
            seed: 1,
            backend: BackendConfig::default(),
            workers: 0,
            localize: true,
            skip_outliers: true,
            source: SourceConfig::default(),
            log: LogConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.corpus.is_relative() {
            cfg.corpus = base.join(&cfg.corpus);
        }
        if let Some(m) = &cfg.backend.mock_responses {
            if m.is_relative() {
                cfg.backend.mock_responses = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn parsed_variants(&self) -> Result<Vec<Variant>, PipelineError> {
        self.variants
            .iter()
            .map(|v| v.parse::<Variant>().map_err(|e| PipelineError::Config(e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<Vec<Variant>, PipelineError> {
        let variants = self.parsed_variants()?;
        if variants.is_empty() {
            return Err(PipelineError::Config("no trace variants".into()));
        }
        if self.k.contains(&0) || self.function_k.contains(&0) {
            return Err(PipelineError::Config("k must be positive".into()));
        }
        if let Some(r) = self.mask_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(PipelineError::Config(format!("mask rate {r} outside [0, 1]")));
        }
        if let Some(spec) = &self.generate {
            spec.validate()?;
        }
        Ok(variants)
    }

    pub fn ks_for(&self, g: Granularity) -> &[usize] {
        if g == Granularity::Function {
            &self.function_k
        } else {
            &self.k
        }
    }
}

/// A loaded case with its log matched.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub case: Case,
    pub outcome: MatchOutcome,
    pub known: Known,
}

pub fn prepare(case: Case, log_cfg: &LogConfig) -> Result<PreparedCase, PipelineError> {
    let log = parse_log(&case.log_text, log_cfg).map_err(|e| PipelineError::Config(format!("log level pattern: {e}")))?;
    let outcome = match_log(&case.faulty, &log);
    let known = Known::from(&outcome);
    Ok(PreparedCase { case, outcome, known })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub rate: f64,
    pub mean_mpf1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCase {
    pub case: String,
    pub pruning_rate: f64,
    pub partial_preservation: bool,
    pub full_preservation: bool,
    /// Mean over repetitions, one per rate; empty when the case has no known statements.
    pub mpf1: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub variant: String,
    pub mean_pruning_rate: f64,
    pub partial_preservation: f64,
    pub full_preservation: f64,
    pub mpf1: Vec<RateRow>,
    pub per_case: Vec<TraceCase>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Seed for one case: the run seed mixed with the case id, so adding cases leaves others untouched.
fn case_seed(seed: u64, id: &str) -> u64 {
    id.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn trace_rows(cases: &[PreparedCase], variants: &[Variant], rates: &[f64], reps: usize, seed: u64) -> Vec<TraceRow> {
    variants
        .iter()
        .map(|&v| {
            let per_case: Vec<TraceCase> = cases
                .par_iter()
                .map(|p| {
                    let c = &p.case;
                    let t = estimate(&c.faulty, &c.cfgs, &p.known, v);
                    let (partial, full) = fault_preservation(&t, &c.ground_truth);
                    let s = case_seed(seed, &c.id);
                    let (mpf1, seeds) = match mpf1_grid(&c.faulty, &c.cfgs, &p.known, v, rates, reps, s) {
                        Ok(res) => {
                            let by_rate = rates
                                .iter()
                                .map(|&r| mean(res.iter().filter(|m| m.mask_rate == r).map(|m| m.f1)))
                                .collect();
                            (by_rate, res.iter().map(|m| m.seed).collect())
                        }
                        Err(_) => (Vec::new(), Vec::new()),
                    };
                    TraceCase {
                        case: c.id.clone(),
                        pruning_rate: t.pruning_rate,
                        partial_preservation: partial,
                        full_preservation: full,
                        mpf1,
                        seeds,
                    }
                })
                .collect();
            let scored: Vec<&TraceCase> = per_case.iter().filter(|c| !c.mpf1.is_empty()).collect();
            let mpf1 = rates
                .iter()
                .enumerate()
                .map(|(i, &rate)| RateRow {
                    rate,
                    mean_mpf1: mean(scored.iter().map(|c| c.mpf1[i])),
                    runs: scored.len() * if rate <= 0.0 { 1 } else { reps.max(1) },
                })
                .collect();
            TraceRow {
                variant: v.to_string(),
                mean_pruning_rate: mean(per_case.iter().map(|c| c.pruning_rate)),
                partial_preservation: mean(per_case.iter().map(|c| c.partial_preservation as u8 as f64)),
                full_preservation: mean(per_case.iter().map(|c| c.full_preservation as u8 as f64)),
                mpf1,
                per_case,
            }
        })
        .collect()
}

/// One localization request per case for a (variant, granularity, k) cell.
pub fn localize_cases(cases: &[PreparedCase], variant: Variant, g: Granularity, k: usize, backend: &dyn LlmBackend) -> Vec<FlRun> {
    cases
        .par_iter()
        .map(|p| {
            let c = &p.case;
            let trace = estimate(&c.faulty, &c.cfgs, &p.known, variant);
            let input = LocalizeInput {
                case_id: &c.id,
                model: &c.faulty,
                cfgs: &c.cfgs,
                trace: &trace,
                granularity: g,
                k,
                error_message: p.outcome.error_message.as_deref().unwrap_or(""),
            };
            localize(&input, backend).0
        })
        .collect()
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| PipelineError::Config(e.to_string()))
}

/// [`localize_cases`] with at most `parallelism` requests in flight.
pub fn localize_bounded(
    cases: &[PreparedCase],
    variant: Variant,
    g: Granularity,
    k: usize,
    backend: &dyn LlmBackend,
    parallelism: usize,
) -> Result<Vec<FlRun>, PipelineError> {
    Ok(pool(parallelism.max(1))?.install(|| localize_cases(cases, variant, g, k, backend)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Predictions at the prompted granularity.
    Direct,
    /// Block predictions obtained by mapping line predictions.
    LineToBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocCell {
    pub variant: String,
    pub granularity: Granularity,
    pub k: usize,
    pub route: Route,
    /// k of the runs the cell was computed from.
    pub run_k: usize,
    pub metrics: MetricReport,
    pub entries: usize,
    pub flagged_entries: usize,
    pub failed_runs: usize,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_inference_seconds: f64,
    pub approximate_tokens: bool,
}

/// Score runs at each requested k. A cell uses the runs prompted with that k, or
/// failing that the smallest larger k, truncated.
pub fn evaluate_runs(
    runs: &[FlRun],
    gts: &BTreeMap<String, GroundTruth>,
    cfgs: Option<&BTreeMap<String, &ProgramCfg>>,
    ks: &[usize],
) -> Vec<LocCell> {
    let mut groups: BTreeMap<(String, Granularity), BTreeMap<usize, Vec<&FlRun>>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.variant.clone(), r.granularity)).or_default().entry(r.k).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((variant, g), by_k) in &groups {
        for &k in ks {
            let Some((&run_k, group)) = by_k.range(k..).next() else { continue };
            let stats = |route: Route, granularity: Granularity, metrics: MetricReport| LocCell {
                variant: variant.clone(),
                granularity,
                k,
                route,
                run_k,
                metrics,
                entries: group.iter().map(|r| r.ranked.len()).sum(),
                flagged_entries: group.iter().map(|r| r.flagged_entries()).sum(),
                failed_runs: group.iter().filter(|r| r.error.is_some()).count(),
                mean_input_tokens: mean(group.iter().map(|r| r.stats.input_tokens as f64)),
                mean_output_tokens: mean(group.iter().map(|r| r.stats.output_tokens as f64)),
                mean_inference_seconds: mean(group.iter().map(|r| r.stats.inference_seconds)),
                approximate_tokens: group.iter().any(|r| r.stats.approximate_tokens),
            };
            let with_gt = |g: Granularity, map: &dyn Fn(&FlRun) -> Vec<Option<ElementRef>>| {
                let rows: Vec<_> = group
                    .iter()
                    .filter_map(|r| gts.get(&r.case_id).map(|gt| (r.case_id.clone(), map(r), gt.elements(g))))
                    .collect();
                topk_metrics(&rows, g, k).0
            };
            cells.push(stats(Route::Direct, *g, with_gt(*g, &|r| r.ranked_elements())));
            if *g == Granularity::Line {
                if let Some(cfgs) = cfgs {
                    let m = with_gt(Granularity::Block, &|r| match cfgs.get(&r.case_id) {
                        Some(c) => line_to_block(&r.ranked_elements(), c),
                        None => Vec::new(),
                    });
                    cells.push(stats(Route::LineToBlock, Granularity::Block, m));
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub cases: Vec<String>,
    pub rejected: Vec<(String, String)>,
    pub outliers: Vec<String>,
    pub mask_rates: Vec<f64>,
    pub traces: Vec<TraceRow>,
    pub localization: Vec<LocCell>,
    pub runs: Vec<FlRun>,
}

/// Load the corpus named by `cfg` and match every log.
pub fn load_corpus(cfg: &PipelineConfig) -> Result<(Vec<PreparedCase>, Vec<(String, String)>, Vec<String>), PipelineError> {
    if let Some(spec) = &cfg.generate {
        generate(spec, &cfg.corpus)?;
    }
    let corpus = ingest_external(&cfg.corpus, &cfg.source)?;
    let mut outliers = Vec::new();
    let mut cases = Vec::new();
    for c in corpus.cases {
        if c.ground_truth.outlier {
            outliers.push(c.id.clone());
            if cfg.skip_outliers {
                continue;
            }
        }
        cases.push(prepare(c, &cfg.log)?);
    }
    Ok((cases, corpus.rejected, outliers))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report, PipelineError> {
    cfg.validate()?;
    let backend = if cfg.localize { Some(cfg.backend.build()?) } else { None };
    run_pipeline_with(cfg, backend.as_deref())
}

/// As [`run_pipeline`] with a caller-supplied backend; `None` skips localization.
pub fn run_pipeline_with(cfg: &PipelineConfig, backend: Option<&dyn LlmBackend>) -> Result<Report, PipelineError> {
    let variants = cfg.validate()?;
    let pool = pool(cfg.workers)?;

    let (cases, rejected, outliers) = pool.install(|| load_corpus(cfg))?;
    if cases.is_empty() {
        return Err(PipelineError::Config(format!("no usable cases under {}", cfg.corpus.display())));
    }
    tracing::info!(cases = cases.len(), "corpus loaded");
    let traces = pool.install(|| trace_rows(&cases, &variants, &cfg.mask_rates, cfg.repetitions, cfg.seed));

    let mut runs = Vec::new();
    let mut localization = Vec::new();
    if let Some(backend) = backend {
        for &v in &variants {
            for &g in &cfg.granularities {
                for &k in cfg.ks_for(g) {
                    tracing::info!(variant = %v, granularity = %g, k, "localizing");
                    runs.extend(localize_bounded(&cases, v, g, k, backend, cfg.backend.parallelism)?);
                }
            }
        }
        let gts: BTreeMap<String, GroundTruth> = cases.iter().map(|p| (p.case.id.clone(), p.case.ground_truth.clone())).collect();
        let cfgs: BTreeMap<String, &ProgramCfg> = cases.iter().map(|p| (p.case.id.clone(), &p.case.cfgs)).collect();
        let all_k: BTreeSet<usize> = cfg.granularities.iter().flat_map(|&g| cfg.ks_for(g).iter().copied()).collect();
        localization = evaluate_runs(&runs, &gts, Some(&cfgs), &all_k.into_iter().collect::<Vec<_>>());
        // a granularity only reports the k values configured for it
        localization.retain(|c| c.route == Route::LineToBlock || cfg.ks_for(c.granularity).contains(&c.k));
    }
    Ok(Report {
        seed: cfg.seed,
        cases: cases.iter().map(|p| p.case.id.clone()).collect(),
        rejected,
        outliers,
        mask_rates: cfg.mask_rates.clone(),
        traces,
        localization,
        runs,
    })
}

/// Plain-text rendering of the report's aggregate tables.
pub fn render_table(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cases: {}  rejected: {}  outliers: {}", r.cases.len(), r.rejected.len(), r.outliers.len());
    let _ = writeln!(s);
    let _ = write!(s, "{:<22} {:>8} {:>8} {:>8}", "trace", "prune%", "part%", "full%");
    for rate in &r.mask_rates {
        let _ = write!(s, " {:>9}", format!("MPF1@{:.0}%", rate * 100.0));
    }
    let _ = writeln!(s);
    for t in &r.traces {
        let _ = write!(
            s,
            "{:<22} {:>8.1} {:>8.1} {:>8.1}",
            t.variant,
            t.mean_pruning_rate * 100.0,
            t.partial_preservation * 100.0,
            t.full_preservation * 100.0
        );
        for m in &t.mpf1 {
            let _ = write!(s, " {:>9.1}", m.mean_mpf1 * 100.0);
        }
        let _ = writeln!(s);
    }
    if !r.localization.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<22} {:<9} {:<5} {:>3} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>6}",
            "trace", "level", "route", "k", "P", "R", "Hit", "MAP", "MRR", "in_tok", "sec", "flag%"
        );
        for c in &r.localization {
            let m = &c.metrics;
            let flag = if c.entries == 0 { 0.0 } else { c.flagged_entries as f64 / c.entries as f64 * 100.0 };
            let _ = writeln!(
                s,
                "{:<22} {:<9} {:<5} {:>3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>8.0} {:>8.2} {:>6.1}",
                c.variant,
                c.granularity.as_str(),
                if c.route == Route::Direct { "DP" } else { "LM" },
                c.k,
                m.precision_at_k,
                m.recall_at_k,
                m.hit_at_k,
                m.map_at_k,
                m.mrr_at_k,
                c.mean_input_tokens,
                c.mean_inference_seconds,
                flag
            );
        }
    }
    s
}
