use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cfg::ProgramCfg;
use crate::fl::{ElementRef, Granularity};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub precision: f64,
    pub recall: f64,
    pub hit: f64,
    pub ap: f64,
    pub rr: f64,
    /// Valid entries among the first k.
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub cases: usize,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub hit_at_k: f64,
    pub map_at_k: f64,
    pub mrr_at_k: f64,
    pub mean_emitted: f64,
    pub per_case: Vec<(String, CaseMetrics)>,
    pub skipped: Vec<String>,
}

/// Scores one ranked list. `None` marks an invalid entry that still takes a rank.
pub fn case_metrics(ranked: &[Option<ElementRef>], gt: &BTreeSet<ElementRef>, k: usize) -> CaseMetrics {
    let top = &ranked[..ranked.len().min(k)];
    let mut seen = BTreeSet::new();
    let (mut hits, mut emitted, mut ap_sum, mut rr) = (0usize, 0usize, 0.0, 0.0);
    for (j, e) in top.iter().enumerate() {
        let Some(e) = e else { continue };
        if !seen.insert(e) {
            continue;
        }
        emitted += 1;
        if gt.contains(e) {
            hits += 1;
            ap_sum += hits as f64 / (j + 1) as f64;
            if rr == 0.0 {
                rr = 1.0 / (j + 1) as f64;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CaseMetrics {
        precision: frac(hits, emitted),
        recall: frac(hits, gt.len()),
        hit: if hits > 0 { 1.0 } else { 0.0 },
        ap: if hits == 0 { 0.0 } else { ap_sum / hits as f64 },
        rr,
        emitted,
    }
}

/// Macro-averaged metrics. Cases with an empty ground truth are skipped.
pub fn topk_metrics(
    cases: &[(String, Vec<Option<ElementRef>>, BTreeSet<ElementRef>)],
    granularity: Granularity,
    k: usize,
) -> (MetricReport, Vec<EvalError>) {
    let mut r = MetricReport { k, ..Default::default() };
    let mut warnings = Vec::new();
    for (id, ranked, gt) in cases {
        if gt.is_empty() {
            tracing::warn!(case = %id, "skipping case without ground truth");
            warnings.push(EvalError::EmptyGroundTruth(id.clone(), granularity));
            r.skipped.push(id.clone());
            continue;
        }
        r.per_case.push((id.clone(), case_metrics(ranked, gt, k)));
    }
    let n = r.per_case.len();
    r.cases = n;
    if n > 0 {
        let mean = |f: fn(&CaseMetrics) -> f64| r.per_case.iter().map(|(_, m)| f(m)).sum::<f64>() / n as f64;
        r.precision_at_k = mean(|m| m.precision);
        r.recall_at_k = mean(|m| m.recall);
        r.hit_at_k = mean(|m| m.hit);
        r.map_at_k = mean(|m| m.ap);
        r.mrr_at_k = mean(|m| m.rr);
        r.mean_emitted = mean(|m| m.emitted as f64);
    }
    (r, warnings)
}

/// Replace each ranked line by its block, keeping the first occurrence of each block.
pub fn line_to_block(ranked: &[Option<ElementRef>], cfgs: &ProgramCfg) -> Vec<Option<ElementRef>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in ranked {
        match e {
            Some(ElementRef::Line(l)) if *l >= 1 && *l <= cfgs.block_of_line.len() => {
                let b = cfgs.block_of(*l);
                if seen.insert(b) {
                    out.push(Some(ElementRef::Block(b)));
                }
            }
            _ => out.push(None),
        }
    }
    out
}
