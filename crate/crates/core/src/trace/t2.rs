use std::collections::BTreeMap;

use super::{EstimatedTrace, ExecState, Known};
use crate::cfg::{FunctionCfg, ProgramCfg};
use crate::source::{LineId, SourceModel};

#[derive(Clone, Copy, PartialEq)]
enum St {
    Unknown,
    Exe,
    Nexe,
}

struct Walk<'a> {
    g: &'a FunctionCfg,
    v_exe: &'a [bool],
    v_nexe: &'a [bool],
    state: Vec<St>,
    pexe: Vec<Vec<usize>>,
}

impl Walk<'_> {
    fn set_state(&mut self, path: &[usize]) {
        let covers = (0..self.v_exe.len()).all(|i| !self.v_exe[i] || path.contains(&i));
        let clean = path.iter().all(|&n| !self.v_nexe[n]);
        if covers && clean {
            for &n in path {
                self.state[n] = St::Exe;
                self.pexe[n] = path.to_vec();
            }
        } else if let Some(pos) = path.iter().rposition(|&n| self.state[n] == St::Exe) {
            for &n in &path[pos + 1..] {
                self.state[n] = St::Nexe;
            }
        }
    }

    fn run(&mut self) {
        let root = self.g.root;
        let mut stack = vec![(root, vec![root])];
        while let Some((n, path)) = stack.pop() {
            let kids = &self.g.nodes[n].children;
            if kids.is_empty() || self.state[n] == St::Nexe {
                let mut p = path;
                if self.v_nexe[n] {
                    p.pop();
                }
                self.set_state(&p);
                continue;
            }
            for &c in kids {
                if self.state[c] == St::Exe {
                    let memo = &self.pexe[c];
                    let at = memo.iter().position(|&x| x == c).expect("pexe path holds its node");
                    let mut full = path.clone();
                    full.extend_from_slice(&memo[at..]);
                    self.set_state(&full);
                } else {
                    let mut p = path.clone();
                    p.push(c);
                    stack.push((c, p));
                }
            }
        }
    }
}

/// EXE flag per node from the pexe traversal.
pub fn t2_node_states(g: &FunctionCfg, v_exe: &[bool], v_nexe: &[bool]) -> Vec<bool> {
    let n = g.nodes.len();
    let mut w = Walk {
        g,
        v_exe,
        v_nexe,
        state: (0..n).map(|i| if v_nexe[i] { St::Nexe } else { St::Unknown }).collect(),
        pexe: vec![Vec::new(); n],
    };
    w.run();
    w.state.iter().map(|s| *s == St::Exe).collect()
}

/// Reference answer: a node is EXE iff it lies on a root-to-leaf path, cut before
/// its first nexe node, that holds every exe node.
pub fn pexe_brute_force(g: &FunctionCfg, v_exe: &[bool], v_nexe: &[bool]) -> Vec<bool> {
    let mut out = vec![false; g.nodes.len()];
    for path in g.enumerate_paths() {
        let cut = path.iter().position(|&n| v_nexe[n]).unwrap_or(path.len());
        let cand = &path[..cut];
        if (0..v_exe.len()).all(|i| !v_exe[i] || cand.contains(&i)) {
            for &n in cand {
                out[n] = true;
            }
        }
    }
    out
}

pub fn estimate_t2(model: &SourceModel, cfgs: &ProgramCfg, known: &Known) -> EstimatedTrace {
    let k = known.expanded(model);
    let mut states: BTreeMap<LineId, ExecState> = BTreeMap::new();
    for g in &cfgs.functions {
        let body = &model.function(g.function).body;
        let any_known = body.iter().any(|l| k.exe.contains(l) || k.nexe.contains(l));
        if !any_known {
            states.extend(body.iter().map(|&l| (l, ExecState::Exe)));
            continue;
        }
        let v_exe: Vec<bool> = g
            .nodes
            .iter()
            .map(|n| n.statements.iter().any(|l| k.exe.contains(l)))
            .collect();
        let v_nexe: Vec<bool> = g
            .nodes
            .iter()
            .zip(&v_exe)
            .map(|(n, &e)| !e && n.statements.iter().any(|l| k.nexe.contains(l)))
            .collect();
        let mut exe = t2_node_states(g, &v_exe, &v_nexe);
        if exe.iter().zip(&v_exe).any(|(&on, &known)| known && !on) {
            // no single path explains the log (e.g. a try body and its handler both
            // logged): keep every node the log does not rule out
            exe = v_nexe.iter().map(|&n| !n).collect();
        }
        for (n, &on) in g.nodes.iter().zip(&exe) {
            let s = if on { ExecState::Exe } else { ExecState::Nexe };
            states.extend(n.statements.iter().map(|&l| (l, s)));
        }
    }
    EstimatedTrace::from_states("T2", states)
}
