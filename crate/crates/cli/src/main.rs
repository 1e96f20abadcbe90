use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tcfl_core::cfg::ProgramCfg;
use tcfl_core::config::{LogConfig, SourceConfig};
use tcfl_core::corpus::{generate, ingest_external, CorpusSpec};
use tcfl_core::eval::{GroundTruth, DEFAULT_MASK_RATES};
use tcfl_core::fl::{BackendConfig, FlRun, Granularity};
use tcfl_core::logmatch::{match_log, parse_log, MatchOutcome};
use tcfl_core::pipeline::{evaluate_runs, load_corpus, localize_bounded, render_table, run_pipeline, trace_rows, PipelineConfig, Report};
use tcfl_core::source::{load_test_scripts, python_files_in, SourceModel};
use tcfl_core::trace::{estimate, EstimatedTrace, Known, Variant};

#[derive(Parser)]
#[command(name = "tcfl", version, about = "Log-guided trace estimation and LLM fault localization for test scripts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ReadOpts {
    /// JSON file with source-reading options (logger prefixes, fixture names, ...).
    #[arg(long)]
    source_config: Option<PathBuf>,
    /// JSON file with log-reading options.
    #[arg(long)]
    log_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a directory of test scripts into a source model and CFGs.
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cfg_out: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Match a failure log against a model's log statements.
    Match {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Estimate execution traces from a model and a match result.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "match")]
        matched: PathBuf,
        /// Repeatable; defaults to every variant.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask the LLM backend to rank suspicious elements for every case of a corpus.
    Localize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        granularity: Granularity,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        trace_variant: String,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keep_outliers: bool,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Score localization runs, and trace estimates when a corpus is given.
    Evaluate {
        /// Repeatable.
        #[arg(long, required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        k: Vec<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Trace variants scored on the corpus; defaults to those found in the runs.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        mask_rates: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        keep_outliers: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Derive ground truth for a corpus from its faulty/fixed diffs.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        read: ReadOpts,
    },
    /// Generate a synthetic corpus.
    GenCorpus {
        /// CorpusSpec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from one config and write report.json plus a text table.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl ReadOpts {
    fn source(&self) -> Result<SourceConfig> {
        self.source_config.as_deref().map_or_else(|| Ok(SourceConfig::default()), read_json)
    }

    fn log(&self) -> Result<LogConfig> {
        self.log_config.as_deref().map_or_else(|| Ok(LogConfig::default()), read_json)
    }

    fn corpus_config(&self, corpus: &Path, keep_outliers: bool) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            corpus: corpus.to_path_buf(),
            skip_outliers: !keep_outliers,
            source: self.source()?,
            log: self.log()?,
            ..PipelineConfig::default()
        })
    }
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    if names.is_empty() {
        return Ok(Variant::all());
    }
    names.iter().map(|n| n.parse::<Variant>().map_err(anyhow::Error::from)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Analyze { dir, out, cfg_out, dot, read } => {
            let paths = python_files_in(&dir).with_context(|| format!("listing {}", dir.display()))?;
            if paths.is_empty() {
                bail!("no Python files under {}", dir.display());
            }
            let model = load_test_scripts(&paths, Some(&dir), &read.source()?)?;
            write_text(&out, &model.to_json())?;
            let cfgs = ProgramCfg::build(&model);
            if let Some(p) = cfg_out {
                write_text(&p, &cfgs.to_json())?;
            }
            if let Some(p) = dot {
                write_text(&p, &cfgs.to_dot())?;
            }
            eprintln!("{} files, {} lines, {} functions, {} blocks", model.files.len(), model.line_count(), model.functions.len(), cfgs.block_count());
        }
        Cmd::Match { model, log, out, read } => {
            let model = SourceModel::from_json(&std::fs::read_to_string(&model)?)?;
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let parsed = parse_log(&text, &read.log()?)?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            let m = match_log(&model, &parsed);
            write_json(&out, &m)?;
            eprintln!("l_exe {}, l_nexe {}, l_mm {}, errors {}", m.l_exe.len(), m.l_nexe.len(), m.l_mm.len(), m.errors.len());
        }
        Cmd::Estimate { model, matched, variants, out } => {
            let model = SourceModel::from_json(&std::fs::read_to_string(&model)?)?;
            let m: MatchOutcome = read_json(&matched)?;
            let known = Known::from(&m);
            let cfgs = ProgramCfg::build(&model);
            let traces: BTreeMap<String, EstimatedTrace> = parse_variants(&variants)?
                .into_iter()
                .map(|v| (v.to_string(), estimate(&model, &cfgs, &known, v)))
                .collect();
            write_json(&out, &traces)?;
        }
        Cmd::Localize { corpus, granularity, k, trace_variant, backend, out, keep_outliers, read } => {
            if k == 0 {
                bail!("k must be positive");
            }
            let variant: Variant = trace_variant.parse()?;
            let bcfg = BackendConfig::load(&backend)?;
            let client = bcfg.build()?;
            let (cases, _, _) = load_corpus(&read.corpus_config(&corpus, keep_outliers)?)?;
            let runs = localize_bounded(&cases, variant, granularity, k, client.as_ref(), bcfg.parallelism)?;
            let failed = runs.iter().filter(|r| r.error.is_some()).count();
            write_json(&out, &runs)?;
            eprintln!("{} runs, {failed} without a usable answer", runs.len());
        }
        Cmd::Evaluate { runs, ground_truth, k, corpus, variants, mask_rates, repetitions, seed, keep_outliers, out, read } => {
            let mut all: Vec<FlRun> = Vec::new();
            for p in &runs {
                all.extend(read_json::<Vec<FlRun>>(p)?);
            }
            let gts: BTreeMap<String, GroundTruth> = read_json(&ground_truth)?;
            let mut report = Report { runs: Vec::new(), ..Report::default() };
            let mut cases = Vec::new();
            if let Some(dir) = &corpus {
                let (c, rejected, outliers) = load_corpus(&read.corpus_config(dir, keep_outliers)?)?;
                report.rejected = rejected;
                report.outliers = outliers;
                cases = c;
            }
            let cfgs: BTreeMap<String, &ProgramCfg> = cases.iter().map(|p| (p.case.id.clone(), &p.case.cfgs)).collect();
            report.localization = evaluate_runs(&all, &gts, corpus.as_ref().map(|_| &cfgs), &k);
            if !cases.is_empty() {
                let names: Vec<String> = if variants.is_empty() {
                    let mut seen = Vec::new();
                    for r in &all {
                        if !seen.contains(&r.variant) {
                            seen.push(r.variant.clone());
                        }
                    }
                    seen
                } else {
                    variants
                };
                let vs = parse_variants(&names)?;
                let rates = mask_rates.unwrap_or_else(|| DEFAULT_MASK_RATES.to_vec());
                report.traces = trace_rows(&cases, &vs, &rates, repetitions, seed);
                report.mask_rates = rates;
                report.cases = cases.iter().map(|p| p.case.id.clone()).collect();
            } else {
                let ids: BTreeSet<&String> = all.iter().map(|r| &r.case_id).collect();
                report.cases = ids.into_iter().cloned().collect();
            }
            report.seed = seed;
            report.runs = all;
            write_json(&out, &report)?;
            print!("{}", render_table(&report));
        }
        Cmd::Label { corpus, out, read } => {
            let c = ingest_external(&corpus, &read.source()?)?;
            for (id, why) in &c.rejected {
                eprintln!("rejected {id}: {why}");
            }
            let gts: BTreeMap<String, GroundTruth> = c.cases.into_iter().map(|c| (c.id, c.ground_truth)).collect();
            write_json(&out, &gts)?;
            eprintln!("{} cases labeled", gts.len());
        }
        Cmd::GenCorpus { spec, seed, cases, out } => {
            let mut s: CorpusSpec = match &spec {
                Some(p) => read_json(p)?,
                None => CorpusSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(n) = cases {
                s.case_count = n;
            }
            let generated = generate(&s, &out)?;
            let lines: usize = generated.iter().map(|c| c.faulty_files.iter().map(|(_, t)| t.lines().filter(|l| !l.trim().is_empty()).count()).sum::<usize>()).sum();
            eprintln!(
                "{} cases in {} (mean {:.0} lines)",
                generated.len(),
                out.display(),
                lines as f64 / generated.len().max(1) as f64
            );
        }
        Cmd::Pipeline { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = run_pipeline(&cfg)?;
            write_json(&out, &report)?;
            let table = render_table(&report);
            write_text(&out.with_extension("txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
