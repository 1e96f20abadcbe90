use std::collections::BTreeMap;

use super::{EstimatedTrace, ExecState, Known};
use crate::source::{LineId, SourceModel};

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Open,
    Exe,
    Nexe,
}

/// Fill-in-the-gaps estimation; `dbt` settles gaps the bounds cannot decide.
pub fn estimate_t1(model: &SourceModel, known: &Known, dbt: ExecState) -> EstimatedTrace {
    let k = known.expanded(model);
    let mut states: BTreeMap<LineId, ExecState> = BTreeMap::new();
    for f in &model.functions {
        let body = &f.body;
        if body.is_empty() {
            continue;
        }
        if body.len() == 1 {
            let s = if k.nexe.contains(&body[0]) { ExecState::Nexe } else { ExecState::Exe };
            states.insert(body[0], s);
            continue;
        }
        let known_pos: Vec<usize> = (0..body.len())
            .filter(|&i| k.exe.contains(&body[i]) || k.nexe.contains(&body[i]))
            .collect();
        if known_pos.is_empty() {
            states.extend(body.iter().map(|&l| (l, ExecState::Exe)));
            continue;
        }
        let bound_at = |i: usize, as_begin: bool| {
            let l = body[i];
            if k.exe.contains(&l) {
                // nothing after a failing line runs
                if as_begin && k.errors.contains(&l) {
                    Bound::Nexe
                } else {
                    Bound::Exe
                }
            } else {
                Bound::Nexe
            }
        };
        let resolve = |b: Bound, e: Bound| match (b, e) {
            (Bound::Open | Bound::Exe, Bound::Exe) => ExecState::Exe,
            (Bound::Nexe, Bound::Open | Bound::Nexe) => ExecState::Nexe,
            _ => dbt,
        };
        for &i in &known_pos {
            let l = body[i];
            states.insert(l, if k.exe.contains(&l) { ExecState::Exe } else { ExecState::Nexe });
        }
        let mut fill = |range: std::ops::Range<usize>, s: ExecState| {
            for &l in &body[range] {
                states.insert(l, s);
            }
        };
        let first = known_pos[0];
        if first > 0 {
            fill(0..first, resolve(Bound::Open, bound_at(first, false)));
        }
        for w in known_pos.windows(2) {
            if w[1] > w[0] + 1 {
                fill(w[0] + 1..w[1], resolve(bound_at(w[0], true), bound_at(w[1], false)));
            }
        }
        let last = *known_pos.last().expect("non-empty");
        if last + 1 < body.len() {
            fill(last + 1..body.len(), resolve(bound_at(last, true), Bound::Open));
        }
    }
    let name = match dbt {
        ExecState::Exe => "T1_EXE",
        ExecState::Nexe => "T1_NEXE",
    };
    EstimatedTrace::from_states(name, states)
}
