//! Estimated execution traces.

mod csr;
mod t1;
mod t2;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::ProgramCfg;
use crate::logmatch::MatchOutcome;
use crate::source::{LineId, SourceModel};

pub use csr::csr;
pub use t1::estimate_t1;
pub use t2::{estimate_t2, pexe_brute_force, t2_node_states};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("traces cover different corpora ({0} vs {1} lines)")]
    CorpusMismatch(usize, usize),
    #[error("unknown trace variant `{0}`")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecState {
    #[serde(rename = "EXE")]
    Exe,
    #[serde(rename = "NEXE")]
    Nexe,
}

/// Statements whose execution status is known from the log.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Known {
    pub exe: BTreeSet<LineId>,
    pub nexe: BTreeSet<LineId>,
    /// Traceback lines; execution stops after them within their function.
    pub errors: BTreeSet<LineId>,
}

impl From<&MatchOutcome> for Known {
    fn from(m: &MatchOutcome) -> Self {
        Self {
            exe: m.l_exe.clone(),
            nexe: m.l_nexe.clone(),
            errors: m.errors.clone(),
        }
    }
}

impl Known {
    /// Continuation lines inherit the state of their statement's first line.
    pub(crate) fn expanded(&self, model: &SourceModel) -> Known {
        let mut k = self.clone();
        for s in &model.statements {
            if s.is_head() {
                continue;
            }
            if self.exe.contains(&s.head) {
                k.exe.insert(s.id);
                if self.errors.contains(&s.head) {
                    k.errors.insert(s.id);
                }
            } else if self.nexe.contains(&s.head) {
                k.nexe.insert(s.id);
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseVariant {
    T0,
    T1Exe,
    T1Nexe,
    T2,
    T1ExeAndT2,
    T1NexeAndT2,
}

impl BaseVariant {
    pub const ALL: [BaseVariant; 6] = [
        BaseVariant::T0,
        BaseVariant::T1Exe,
        BaseVariant::T1Nexe,
        BaseVariant::T2,
        BaseVariant::T1ExeAndT2,
        BaseVariant::T1NexeAndT2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseVariant::T0 => "T0",
            BaseVariant::T1Exe => "T1_EXE",
            BaseVariant::T1Nexe => "T1_NEXE",
            BaseVariant::T2 => "T2",
            BaseVariant::T1ExeAndT2 => "T1EXE_and_T2",
            BaseVariant::T1NexeAndT2 => "T1NEXE_and_T2",
        }
    }
}

/// A trace variant, optionally refined by call-site refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub base: BaseVariant,
    pub csr: bool,
}

impl Variant {
    pub const fn plain(base: BaseVariant) -> Self {
        Self { base, csr: false }
    }

    pub fn all() -> Vec<Variant> {
        let mut v: Vec<Variant> = BaseVariant::ALL.iter().map(|&b| Variant::plain(b)).collect();
        v.extend(BaseVariant::ALL.iter().map(|&b| Variant { base: b, csr: true }));
        v
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.csr {
            write!(f, "CSR({})", self.base.name())
        } else {
            f.write_str(self.base.name())
        }
    }
}

impl FromStr for Variant {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, TraceError> {
        let t = s.trim();
        let (inner, csr) = match t.strip_prefix("CSR(").and_then(|r| r.strip_suffix(')')) {
            Some(i) => (i, true),
            None => (t, false),
        };
        let norm = inner.to_ascii_uppercase().replace(['-', ' '], "_");
        let base = BaseVariant::ALL
            .into_iter()
            .find(|b| b.name().to_ascii_uppercase() == norm)
            .ok_or_else(|| TraceError::UnknownVariant(s.to_string()))?;
        Ok(Variant { base, csr })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedTrace {
    pub variant: String,
    pub executed: BTreeSet<LineId>,
    pub states: BTreeMap<LineId, ExecState>,
    pub pruning_rate: f64,
}

impl EstimatedTrace {
    pub fn from_states(variant: impl Into<String>, states: BTreeMap<LineId, ExecState>) -> Self {
        let executed: BTreeSet<LineId> = states
            .iter()
            .filter(|(_, s)| **s == ExecState::Exe)
            .map(|(l, _)| *l)
            .collect();
        let total = states.len();
        Self {
            variant: variant.into(),
            pruning_rate: pruning_rate(total, executed.len()),
            executed,
            states,
        }
    }

    pub fn from_executed(variant: impl Into<String>, total: usize, executed: &BTreeSet<LineId>) -> Self {
        let states = (1..=total)
            .map(|l| (l, if executed.contains(&l) { ExecState::Exe } else { ExecState::Nexe }))
            .collect();
        Self::from_states(variant, states)
    }

    pub fn total(&self) -> usize {
        self.states.len()
    }
}

/// (total - executed) / total; 0 for an empty corpus.
pub fn pruning_rate(total: usize, executed: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (total - executed) as f64 / total as f64
    }
}

pub fn estimate_t0(model: &SourceModel) -> EstimatedTrace {
    EstimatedTrace::from_executed("T0", model.line_count(), &model.all_lines())
}

pub fn intersect(a: &EstimatedTrace, b: &EstimatedTrace) -> Result<EstimatedTrace, TraceError> {
    if a.total() != b.total() {
        return Err(TraceError::CorpusMismatch(a.total(), b.total()));
    }
    let both: BTreeSet<LineId> = a.executed.intersection(&b.executed).copied().collect();
    Ok(EstimatedTrace::from_executed(
        format!("{}_and_{}", a.variant, b.variant),
        a.total(),
        &both,
    ))
}

/// Compute one variant.
pub fn estimate(model: &SourceModel, cfgs: &ProgramCfg, known: &Known, v: Variant) -> EstimatedTrace {
    let both = |t1: EstimatedTrace| {
        let t2 = estimate_t2(model, cfgs, known);
        intersect(&t1, &t2).expect("same model")
    };
    let mut t = match v.base {
        BaseVariant::T0 => estimate_t0(model),
        BaseVariant::T1Exe => estimate_t1(model, known, ExecState::Exe),
        BaseVariant::T1Nexe => estimate_t1(model, known, ExecState::Nexe),
        BaseVariant::T2 => estimate_t2(model, cfgs, known),
        BaseVariant::T1ExeAndT2 => both(estimate_t1(model, known, ExecState::Exe)),
        BaseVariant::T1NexeAndT2 => both(estimate_t1(model, known, ExecState::Nexe)),
    };
    if v.csr {
        t = csr(&t, model);
    }
    t.variant = v.to_string();
    t
}

#[cfg(test)]
mod tests;
