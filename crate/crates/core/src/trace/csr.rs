use super::{EstimatedTrace, ExecState};
use crate::source::SourceModel;

/// Drop helpers that appear in the trace while none of their call sites do.
/// One pass in definition order; removals can hide later helpers' call sites.
pub fn csr(trace: &EstimatedTrace, model: &SourceModel) -> EstimatedTrace {
    let mut states = trace.states.clone();
    let on = |states: &std::collections::BTreeMap<usize, ExecState>, l: &usize| states.get(l) == Some(&ExecState::Exe);
    for f in model.functions.iter().filter(|f| f.is_helper) {
        let present = f.body.iter().any(|l| on(&states, l));
        let called = model.call_sites_of(f.id).any(|c| on(&states, &c.line));
        if present && !called {
            for l in &f.body {
                states.insert(*l, ExecState::Nexe);
            }
        }
    }
    EstimatedTrace::from_states(format!("CSR({})", trace.variant), states)
}
