use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::sample::subsequence;

use tcfl_core::cfg::{CfgNode, FunctionCfg, ProgramCfg};
use tcfl_core::config::{LogConfig, SourceConfig};
use tcfl_core::eval::{case_metrics, line_to_block, GroundTruth};
use tcfl_core::fl::{count_tokens, mitigate_mismatch, parse_and_validate, render_prompt, ElementRef, EntryFlag, Granularity, Tokenizer};
use tcfl_core::logmatch::{compile_pattern, extract_static_parts, match_log, parse_log, MatchOutcome, Seg, StaticParts};
use tcfl_core::source::{detect_log_statements, parse_files, FunctionId, LineId, SourceModel};
use tcfl_core::trace::{csr, estimate, pexe_brute_force, t2_node_states, BaseVariant, Known, Variant};

/// Small statement trees rendered as Python; few distinct log texts so matches collide.
#[derive(Debug, Clone)]
enum S {
    Assign(u8),
    Log(u8),
    Call(u8),
    If(Vec<S>, Option<Vec<S>>),
    For(Vec<S>),
    While(Vec<S>),
    Try(Vec<S>, Vec<S>),
}

fn stmt() -> impl Strategy<Value = S> {
    let leaf = prop_oneof![
        3 => (0u8..6).prop_map(S::Assign),
        4 => (0u8..12).prop_map(S::Log),
        1 => (0u8..4).prop_map(S::Call),
    ];
    leaf.prop_recursive(3, 40, 5, |inner| {
        let body = || prop::collection::vec(inner.clone(), 1..4);
        prop_oneof![
            (body(), prop::option::of(body())).prop_map(|(a, b)| S::If(a, b)),
            body().prop_map(S::For),
            body().prop_map(S::While),
            (body(), body()).prop_map(|(a, b)| S::Try(a, b)),
        ]
    })
}

const LOGS: [&str; 12] = [
    "Log.log(\"start\")",
    "Log.log(\"start\")",
    "Log.log(\"value {}\".format(x))",
    "Log.log(f\"value {x}\")",
    "Log.log(\"value\", x)",
    "Log.log(\"step \" + str(x))",
    "Log.log(x)",
    "Log.log(\"done\" \" now\")",
    "Log.log(f\"got {x} of {x}\")",
    "Log.log(\"value %s\" % x)",
    "Log.log(\"end\")",
    "Log.log(\"value 1\")",
];

fn render(s: &S, depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    let block = |b: &[S], out: &mut String| b.iter().for_each(|s| render(s, depth + 1, out));
    match s {
        S::Assign(v) => out.push_str(&format!("{pad}x = x + {v}\n")),
        S::Log(i) => out.push_str(&format!("{pad}{}\n", LOGS[*i as usize])),
        S::Call(f) => out.push_str(&format!("{pad}helper_{f}(x)\n")),
        S::If(a, b) => {
            out.push_str(&format!("{pad}if x > 3:\n"));
            block(a, out);
            if let Some(b) = b {
                out.push_str(&format!("{pad}else:\n"));
                block(b, out);
            }
        }
        S::For(b) => {
            out.push_str(&format!("{pad}for i in range(x):\n"));
            block(b, out);
        }
        S::While(b) => {
            out.push_str(&format!("{pad}while x < 10:\n"));
            block(b, out);
        }
        S::Try(a, b) => {
            out.push_str(&format!("{pad}try:\n"));
            block(a, out);
            out.push_str(&format!("{pad}except ValueError:\n"));
            block(b, out);
        }
    }
}

fn program() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::collection::vec(stmt(), 1..5), 1..5).prop_map(|funcs| {
        let mut src = String::from("from stubs import Log\n\n");
        for (i, body) in funcs.iter().enumerate() {
            src.push_str(&format!("def helper_{i}(x):\n"));
            body.iter().for_each(|s| render(s, 1, &mut src));
            src.push_str("    return x\n\n");
        }
        src.push_str("def main():\n    x = 1\n    helper_0(x)\n\nmain()\n");
        src
    })
}

fn model_of(src: &str) -> SourceModel {
    parse_files(&[("t.py".to_string(), src.to_string())], &SourceConfig::default()).expect("generated source parses")
}

/// A message the statement could have printed, with every hole filled by `fill`.
fn message_for(model: &SourceModel, id: LineId, fill: &str) -> Option<String> {
    let StaticParts::Static { segments, .. } = extract_static_parts(model.stmt(id)) else { return None };
    Some(
        segments
            .iter()
            .map(|s| match s {
                Seg::Lit(l) => l.clone(),
                Seg::Hole => fill.to_string(),
                Seg::Sep => " ".to_string(),
            })
            .collect(),
    )
}

fn log_text(messages: &[String]) -> String {
    messages.iter().map(|m| format!("[INFO] {m}\n")).collect()
}

fn matched(model: &SourceModel, messages: &[String]) -> MatchOutcome {
    match_log(model, &parse_log(&log_text(messages), &LogConfig::default()).unwrap())
}

/// Program plus a log made of messages its own static logs could print, and some noise.
fn program_and_log() -> impl Strategy<Value = (String, Vec<String>)> {
    (program(), prop::collection::vec((0usize..64, prop_oneof![Just("1"), Just("7"), Just("x y")]), 0..14), any::<bool>())
        .prop_map(|(src, picks, noise)| {
            let m = model_of(&src);
            let logs = detect_log_statements(&m);
            let mut msgs: Vec<String> = picks
                .iter()
                .filter_map(|(i, fill)| (!logs.is_empty()).then(|| logs[i % logs.len()]).and_then(|id| message_for(&m, id, fill)))
                .collect();
            if noise {
                msgs.push("unrelated chatter".into());
            }
            (src, msgs)
        })
}

fn seeded_shuffle<T>(v: &mut [T], seed: u64) {
    let mut s = seed | 1;
    for i in (1..v.len()).rev() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        v.swap(i, (s % (i as u64 + 1)) as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn model_round_trips_through_json(src in program()) {
        let m = model_of(&src);
        prop_assert_eq!(SourceModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn function_bodies_partition_statements(src in program()) {
        let m = model_of(&src);
        let total: usize = m.functions.iter().map(|f| f.body.len()).sum();
        prop_assert_eq!(total, m.line_count());
        let all: BTreeSet<LineId> = m.functions.iter().flat_map(|f| f.body.iter().copied()).collect();
        prop_assert_eq!(all, m.all_lines());
    }

    #[test]
    fn local_call_targets_name_one_definition(src in program()) {
        let m = model_of(&src);
        for s in &m.statements {
            for t in &s.call_targets {
                prop_assert_eq!(m.functions.iter().filter(|f| &f.name == t).count(), 1, "{}", t);
            }
        }
    }

    #[test]
    fn cfg_nodes_partition_bodies_and_reach_everything(src in program()) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        prop_assert_eq!(&cfgs, &ProgramCfg::build(&m));
        for f in &m.functions {
            let g = cfgs.for_function(f.id);
            let mut seen: Vec<LineId> = g.nodes.iter().flat_map(|n| n.statements.iter().copied()).collect();
            seen.sort_unstable();
            let mut body = f.body.clone();
            body.sort_unstable();
            prop_assert_eq!(&seen, &body);
            let mut reach = BTreeSet::from([g.root]);
            let mut stack = vec![g.root];
            while let Some(n) = stack.pop() {
                for &c in &g.nodes[n].children {
                    if reach.insert(c) {
                        stack.push(c);
                    }
                }
            }
            prop_assert_eq!(reach.len(), g.nodes.len());
        }
    }

    #[test]
    fn match_partitions_static_logs((src, msgs) in program_and_log()) {
        let m = model_of(&src);
        let out = matched(&m, &msgs);
        for id in detect_log_statements(&m) {
            let in_sets = [&out.l_exe, &out.l_nexe, &out.l_mm].iter().filter(|s| s.contains(&id)).count();
            if out.not_static.contains(&id) {
                prop_assert_eq!(in_sets, 0);
            } else {
                prop_assert_eq!(in_sets, 1, "line {}", id);
            }
        }
    }

    #[test]
    fn unique_matches_are_exclusive((src, msgs) in program_and_log()) {
        let m = model_of(&src);
        let out = matched(&m, &msgs);
        let res: BTreeMap<LineId, regex::Regex> = out.patterns.iter().map(|(l, p)| (*l, regex::Regex::new(p).unwrap())).collect();
        let log = parse_log(&log_text(&msgs), &LogConfig::default()).unwrap();
        for id in out.l_exe.difference(&out.errors) {
            let exclusive = log.messages.iter().any(|msg| {
                res[id].is_match(&msg.text) && res.iter().filter(|(l, _)| *l != id).all(|(_, r)| !r.is_match(&msg.text))
            });
            prop_assert!(exclusive, "line {}", id);
        }
    }

    #[test]
    fn more_messages_never_flip_exe_to_nexe((src, msgs) in program_and_log(), cut in 0usize..16) {
        let m = model_of(&src);
        let cut = cut.min(msgs.len());
        let fewer = matched(&m, &msgs[..cut]);
        let more = matched(&m, &msgs);
        prop_assert!(fewer.l_exe.is_disjoint(&more.l_nexe));
    }

    #[test]
    fn match_ignores_message_order((src, mut msgs) in program_and_log(), seed in any::<u64>()) {
        let m = model_of(&src);
        let a = matched(&m, &msgs);
        seeded_shuffle(&mut msgs, seed);
        let b = matched(&m, &msgs);
        prop_assert_eq!((a.l_exe, a.l_nexe, a.l_mm), (b.l_exe, b.l_nexe, b.l_mm));
    }

    #[test]
    fn estimators_respect_the_log((src, msgs) in program_and_log()) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let out = matched(&m, &msgs);
        let known = Known::from(&out);
        let est = |b| estimate(&m, &cfgs, &known, Variant::plain(b));
        let (t1e, t1n, t2) = (est(BaseVariant::T1Exe), est(BaseVariant::T1Nexe), est(BaseVariant::T2));
        for t in [&t1e, &t1n, &t2] {
            prop_assert!(out.l_exe.is_subset(&t.executed), "{}", t.variant);
        }
        for t in [&t1e, &t1n] {
            prop_assert!(out.l_nexe.is_disjoint(&t.executed), "{}", t.variant);
        }
        prop_assert!(t1n.executed.is_subset(&t1e.executed));
        for b in [BaseVariant::T1ExeAndT2, BaseVariant::T1NexeAndT2] {
            let both = est(b);
            prop_assert!(both.executed.is_subset(&t2.executed));
        }
        prop_assert!(est(BaseVariant::T1ExeAndT2).executed.is_subset(&t1e.executed));
        for t in [&t1e, &t1n, &t2] {
            prop_assert!(csr(t, &m).executed.is_subset(&t.executed));
        }
    }

    #[test]
    fn pruned_prompts_cost_fewer_tokens((src, msgs) in program_and_log()) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let known = Known::from(&matched(&m, &msgs));
        for g in Granularity::ALL {
            let t0 = render_prompt(&m, &cfgs, &estimate(&m, &cfgs, &known, Variant::plain(BaseVariant::T0)), g, 3, "E").unwrap();
            for b in [BaseVariant::T2, BaseVariant::T1NexeAndT2, BaseVariant::T1ExeAndT2] {
                let p = render_prompt(&m, &cfgs, &estimate(&m, &cfgs, &known, Variant { base: b, csr: true }), g, 3, "E").unwrap();
                for tok in [Tokenizer::WordPunct, Tokenizer::CharQuad] {
                    prop_assert!(count_tokens(&p.text, tok) <= count_tokens(&t0.text, tok));
                }
            }
        }
    }
}

fn prompt_case() -> impl Strategy<Value = (String, Granularity, Vec<usize>)> {
    (program(), prop_oneof![Just(Granularity::Function), Just(Granularity::Block), Just(Granularity::Line)], prop::collection::vec(0usize..1000, 0..6))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn correct_answers_parse_back((src, g, picks) in prompt_case()) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let t0 = estimate(&m, &cfgs, &Known::default(), Variant::plain(BaseVariant::T0));
        let p = render_prompt(&m, &cfgs, &t0, g, 10, "E").unwrap();
        prop_assert_eq!(&p, &render_prompt(&m, &cfgs, &t0, g, 10, "E").unwrap());
        let mut ids: Vec<usize> = picks.iter().map(|i| i % p.elements.len() + 1).collect();
        ids.dedup();
        let ids: Vec<usize> = ids.into_iter().fold(Vec::new(), |mut v, i| { if !v.contains(&i) { v.push(i) } v });
        prop_assume!(!ids.is_empty());
        let raw = match g {
            Granularity::Function => {
                let names: Vec<String> = ids.iter().map(|&i| match &p.elements[i - 1] { ElementRef::Function(n) => format!("\"{n}\""), _ => unreachable!() }).collect();
                format!("{{\"faulty_functions\": [{}]}}", names.join(", "))
            }
            Granularity::Block => {
                let v: Vec<String> = ids.iter().map(|i| format!("\"BLOCK {i}\"")).collect();
                format!("{{\"faulty_blocks\": [{}]}}", v.join(", "))
            }
            Granularity::Line => ids.iter().map(|&i| format!("{i}: {}\n", p.line_texts[i - 1].trim())).collect(),
        };
        let pred = parse_and_validate(&raw, &p).unwrap();
        let want: Vec<Option<ElementRef>> = ids.iter().map(|&i| Some(p.elements[i - 1].clone())).collect();
        let got: Vec<Option<ElementRef>> = pred.ranked.iter().map(|e| e.element.clone()).collect();
        prop_assert_eq!(got, want);
        prop_assert!(pred.ranked.iter().all(|e| e.flag == EntryFlag::Ok));
        if g == Granularity::Line {
            prop_assert_eq!(&mitigate_mismatch(pred.clone(), &p), &pred);
        }
    }

    #[test]
    fn repair_stays_in_range(src in program(), n in 0usize..400, content in "[a-z_ ()=+0-9]{0,20}") {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let t0 = estimate(&m, &cfgs, &Known::default(), Variant::plain(BaseVariant::T0));
        let p = render_prompt(&m, &cfgs, &t0, Granularity::Line, 3, "E").unwrap();
        let raw = format!("{n}: {content}\n");
        let Ok(pred) = parse_and_validate(&raw, &p) else { return Ok(()) };
        for e in mitigate_mismatch(pred, &p).ranked {
            if let Some(id) = e.prompt_id.filter(|_| e.flag == EntryFlag::MismatchRepaired) {
                prop_assert!((1..=p.max_element_id).contains(&id));
            }
        }
    }

    #[test]
    fn ground_truth_is_upward_closed(src in program(), picks in subsequence((0usize..60).collect::<Vec<_>>(), 0..5)) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let lines: BTreeSet<LineId> = picks.iter().map(|i| i % m.line_count() + 1).collect();
        let gt = GroundTruth::from_lines(&m, &cfgs, lines.clone());
        for b in 1..=cfgs.block_count() {
            let has = cfgs.block(b).statements.iter().any(|l| lines.contains(l));
            prop_assert_eq!(gt.faulty_blocks.contains(&b), has);
        }
        for f in &m.functions {
            let has = f.body.iter().any(|l| lines.contains(l));
            prop_assert_eq!(gt.faulty_functions.contains(&f.name), has);
        }
    }
}

fn ranked_list() -> impl Strategy<Value = (Vec<Option<usize>>, BTreeSet<usize>)> {
    (prop::collection::vec(prop::option::weighted(0.85, 1usize..12), 0..12), prop::collection::btree_set(1usize..12, 1..5))
}

proptest! {
    #[test]
    fn hit_and_recall_grow_with_k((ranked, gt) in ranked_list()) {
        let r: Vec<Option<ElementRef>> = ranked.iter().map(|e| e.map(ElementRef::Block)).collect();
        let g: BTreeSet<ElementRef> = gt.iter().map(|&b| ElementRef::Block(b)).collect();
        let mut prev = case_metrics(&r, &g, 1);
        for k in 2..=12 {
            let cur = case_metrics(&r, &g, k);
            prop_assert!(cur.hit >= prev.hit && cur.recall >= prev.recall);
            prev = cur;
        }
    }

    #[test]
    fn mapped_blocks_rank_no_worse_than_lines(src in program(), lines in prop::collection::vec(prop::option::weighted(0.9, 0usize..200), 0..10)) {
        let m = model_of(&src);
        let cfgs = ProgramCfg::build(&m);
        let ranked: Vec<Option<ElementRef>> = lines.iter().map(|l| l.map(|l| ElementRef::Line(l % m.line_count() + 1))).collect();
        let mapped = line_to_block(&ranked, &cfgs);
        for (j, e) in ranked.iter().enumerate() {
            let Some(ElementRef::Line(l)) = e else { continue };
            let b = ElementRef::Block(cfgs.block_of(*l));
            let pos = mapped.iter().position(|x| x.as_ref() == Some(&b));
            prop_assert!(pos.is_some_and(|p| p <= j), "line {} at {} maps to {:?}", l, j, pos);
        }
    }

    #[test]
    fn traversal_equals_path_enumeration(
        edges in prop::collection::vec(prop::collection::vec(any::<bool>(), 14), 1..=14),
        labels in prop::collection::vec(0u8..4, 14),
    ) {
        let n = edges.len();
        let mut nodes: Vec<CfgNode> = (0..n).map(|i| CfgNode { block: Some(i + 1), statements: vec![i + 1], children: vec![], parents: vec![] }).collect();
        for j in 1..n {
            let mut ps: Vec<usize> = (0..j).filter(|&i| edges[j][i]).collect();
            if ps.is_empty() {
                ps.push(j - 1);
            }
            for p in ps {
                nodes[p].children.push(j);
                nodes[j].parents.push(p);
            }
        }
        let g = FunctionCfg { function: FunctionId(1), name: "f".into(), root: 0, nodes };
        prop_assume!(g.enumerate_paths().len() <= 4096);
        let exe: Vec<bool> = (0..n).map(|i| labels[i] == 1).collect();
        let nexe: Vec<bool> = (0..n).map(|i| labels[i] == 2).collect();
        prop_assert_eq!(t2_node_states(&g, &exe, &nexe), pexe_brute_force(&g, &exe, &nexe));
    }
}

#[test]
fn compiled_patterns_accept_their_own_messages() {
    let m = model_of(&format!("from stubs import Log\n{}\n", LOGS.join("\n")));
    for id in detect_log_statements(&m) {
        let parts = extract_static_parts(m.stmt(id));
        let (Some(p), Some(msg)) = (compile_pattern(&parts), message_for(&m, id, "42")) else { continue };
        assert!(regex::Regex::new(&p).unwrap().is_match(&msg), "{p} vs {msg}");
    }
}
