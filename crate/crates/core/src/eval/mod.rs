//! Ground truth, trace accuracy and ranking metrics.

mod masking;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};
use thiserror::Error;

pub use masking::{mask_known, mpf1, mpf1_grid, sample_mask, score_states, MaskingResult, MaskingRun, DEFAULT_MASK_RATES};
pub use metrics::{case_metrics, line_to_block, topk_metrics, CaseMetrics, MetricReport};

use crate::cfg::ProgramCfg;
use crate::fl::{ElementRef, Granularity};
use crate::source::{LineId, SourceModel};
use crate::trace::EstimatedTrace;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("faulty and fixed versions are identical")]
    IdenticalVersions,
    #[error("no statement has a known execution state")]
    EmptyKnownSet,
    #[error("case `{0}` has no faulty {1}")]
    EmptyGroundTruth(String, Granularity),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub faulty_lines: BTreeSet<LineId>,
    pub faulty_blocks: BTreeSet<usize>,
    pub faulty_functions: BTreeSet<String>,
    pub faulty_files: BTreeSet<String>,
    #[serde(default)]
    pub outlier: bool,
}

impl GroundTruth {
    /// Close `lines` upward to their blocks, functions and files.
    pub fn from_lines(model: &SourceModel, cfgs: &ProgramCfg, lines: BTreeSet<LineId>) -> Self {
        let mut gt = GroundTruth::default();
        for &l in &lines {
            let s = model.stmt(l);
            gt.faulty_blocks.insert(cfgs.block_of(l));
            gt.faulty_functions.insert(model.function(s.function).name.clone());
            gt.faulty_files.insert(model.files[s.file].path.clone());
        }
        gt.faulty_lines = lines;
        gt
    }

    pub fn elements(&self, g: Granularity) -> BTreeSet<ElementRef> {
        match g {
            Granularity::Function => self.faulty_functions.iter().cloned().map(ElementRef::Function).collect(),
            Granularity::Block => self.faulty_blocks.iter().copied().map(ElementRef::Block).collect(),
            Granularity::Line => self.faulty_lines.iter().copied().map(ElementRef::Line).collect(),
        }
    }

    /// Share of the corpus marked faulty.
    pub fn line_ratio(&self, model: &SourceModel) -> f64 {
        if model.line_count() == 0 {
            0.0
        } else {
            self.faulty_lines.len() as f64 / model.line_count() as f64
        }
    }
}

fn file_lines(model: &SourceModel, fi: usize) -> Vec<&str> {
    model.files[fi].ids().map(|l| model.stmt(l).text.as_str()).collect()
}

/// Faulty lines from an LCS line diff of the blank-stripped sources. Removed or
/// changed lines count; a pure insertion marks the line that follows it.
pub fn label_ground_truth(faulty: &SourceModel, fixed: &SourceModel, cfgs: &ProgramCfg) -> Result<GroundTruth, EvalError> {
    let mut lines = BTreeSet::new();
    for (fi, f) in faulty.files.iter().enumerate() {
        let old = file_lines(faulty, fi);
        let new = match fixed.files.iter().position(|g| g.path == f.path) {
            Some(gi) => file_lines(fixed, gi),
            None => Vec::new(),
        };
        let base = f.first_line;
        for op in capture_diff_slices(Algorithm::Lcs, &old, &new) {
            match op {
                DiffOp::Equal { .. } => {}
                DiffOp::Delete { old_index, old_len, .. } | DiffOp::Replace { old_index, old_len, .. } => {
                    lines.extend((old_index..old_index + old_len).map(|i| base + i));
                }
                DiffOp::Insert { old_index, .. } => {
                    if !old.is_empty() {
                        lines.insert(base + old_index.min(old.len() - 1));
                    }
                }
            }
        }
    }
    if lines.is_empty() {
        return Err(EvalError::IdenticalVersions);
    }
    Ok(GroundTruth::from_lines(faulty, cfgs, lines))
}

/// Cases whose ratio exceeds mean + 3 population standard deviations.
pub fn flag_outliers(ratios: &BTreeMap<String, f64>) -> BTreeSet<String> {
    if ratios.len() < 2 {
        return BTreeSet::new();
    }
    let n = ratios.len() as f64;
    let mean = ratios.values().sum::<f64>() / n;
    let sd = (ratios.values().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mean + 3.0 * sd;
    ratios.iter().filter(|(_, &r)| r > limit).map(|(c, _)| c.clone()).collect()
}

/// (at least one faulty line kept, every faulty line kept)
pub fn fault_preservation(trace: &EstimatedTrace, gt: &GroundTruth) -> (bool, bool) {
    let partial = gt.faulty_lines.iter().any(|l| trace.executed.contains(l));
    let full = gt.faulty_lines.iter().all(|l| trace.executed.contains(l));
    (partial, full)
}
