use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cfg::ProgramCfg;
use crate::source::{LineId, SourceModel};
use crate::trace::{estimate, EstimatedTrace, ExecState, Known, Variant};

pub const DEFAULT_MASK_RATES: [f64; 4] = [0.0, 0.2, 0.5, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingRun {
    pub mask_rate: f64,
    pub repetition: usize,
    pub seed: u64,
    pub masked_ids: BTreeSet<LineId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingResult {
    pub mask_rate: f64,
    pub repetition: usize,
    pub seed: u64,
    pub masked: usize,
    pub f1: f64,
}

fn strata(known: &Known) -> (Vec<LineId>, Vec<LineId>) {
    let exe: BTreeSet<LineId> = known.exe.union(&known.errors).copied().collect();
    let nexe = known.nexe.difference(&exe).copied().collect();
    (exe.into_iter().collect(), nexe)
}

/// Stratified sample of known statements: the exe/nexe split of the sample
/// follows the split of the known set. A positive rate hides at least one.
pub fn sample_mask<R: Rng + ?Sized>(known: &Known, rate: f64, rng: &mut R) -> BTreeSet<LineId> {
    let (exe, nexe) = strata(known);
    let total = exe.len() + nexe.len();
    if total == 0 || rate <= 0.0 {
        return BTreeSet::new();
    }
    let n = ((rate * total as f64).round() as usize).clamp(1, total);
    let mut n_exe = ((n * exe.len()) as f64 / total as f64).round() as usize;
    n_exe = n_exe.clamp(n.saturating_sub(nexe.len()), exe.len().min(n));
    let n_nexe = n - n_exe;
    let mut out: BTreeSet<LineId> = sample(rng, exe.len(), n_exe).into_iter().map(|i| exe[i]).collect();
    out.extend(sample(rng, nexe.len(), n_nexe).into_iter().map(|i| nexe[i]));
    out
}

pub fn mask_known(known: &Known, masked: &BTreeSet<LineId>) -> Known {
    Known {
        exe: known.exe.difference(masked).copied().collect(),
        nexe: known.nexe.difference(masked).copied().collect(),
        errors: known.errors.difference(masked).copied().collect(),
    }
}

/// F1 of predicted states against known ones over `scored`, EXE positive.
/// Defined as 1 when there is nothing positive to find or predict.
pub fn score_states(trace: &EstimatedTrace, known: &Known, scored: &BTreeSet<LineId>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for l in scored {
        let truth = known.exe.contains(l) || known.errors.contains(l);
        let pred = trace.states.get(l) == Some(&ExecState::Exe);
        match (truth, pred) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Hide `run.masked_ids`, re-estimate, and score. With nothing masked every
/// known statement is scored; otherwise only the hidden ones.
pub fn mpf1(model: &SourceModel, cfgs: &ProgramCfg, known: &Known, variant: Variant, run: &MaskingRun) -> Result<f64, EvalError> {
    let (exe, nexe) = strata(known);
    if exe.is_empty() && nexe.is_empty() {
        return Err(EvalError::EmptyKnownSet);
    }
    let trace = estimate(model, cfgs, &mask_known(known, &run.masked_ids), variant);
    let scored = if run.masked_ids.is_empty() {
        exe.into_iter().chain(nexe).collect()
    } else {
        run.masked_ids.clone()
    };
    Ok(score_states(&trace, known, &scored))
}

/// Every rate with `reps` seeded repetitions (one at rate 0).
pub fn mpf1_grid(
    model: &SourceModel,
    cfgs: &ProgramCfg,
    known: &Known,
    variant: Variant,
    rates: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<MaskingResult>, EvalError> {
    let mut out = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        let n = if rate <= 0.0 { 1 } else { reps.max(1) };
        for rep in 0..n {
            let run_seed = seed.wrapping_add((ri as u64) << 32 | rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let masked_ids = sample_mask(known, rate, &mut rng);
            let run = MaskingRun { mask_rate: rate, repetition: rep, seed: run_seed, masked_ids };
            let f1 = mpf1(model, cfgs, known, variant, &run)?;
            out.push(MaskingResult { mask_rate: rate, repetition: rep, seed: run_seed, masked: run.masked_ids.len(), f1 });
        }
    }
    Ok(out)
}
