use super::*;
use crate::cfg::{CfgNode, FunctionCfg};
use crate::source::FunctionId;
use crate::testutil::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(v: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
    v.into_iter().collect()
}

fn running() -> (SourceModel, ProgramCfg, Known) {
    let m = running_example();
    let p = ProgramCfg::build(&m);
    let k = Known::from(&running_match());
    (m, p, k)
}

fn nexe_lines(t: &EstimatedTrace) -> BTreeSet<usize> {
    t.states.iter().filter(|(_, s)| **s == ExecState::Nexe).map(|(l, _)| *l).collect()
}

#[test]
fn t1_running_example() {
    let (m, _, k) = running();
    let t = estimate_t1(&m, &k, ExecState::Exe);
    for l in 12..=15 {
        assert!(t.executed.contains(&l), "line {l}");
    }
    assert_eq!(nexe_lines(&t), set([18, 19, 24]));
    let tn = estimate_t1(&m, &k, ExecState::Nexe);
    // exe..nexe and exe..end gaps fall to the policy
    assert_eq!(nexe_lines(&tn), set([3, 18, 19, 23, 24]));
    assert!(tn.executed.is_subset(&t.executed));
    assert_eq!(t.states.len(), 24);
}

#[test]
fn t2_running_example() {
    let (m, p, k) = running();
    let t = estimate_t2(&m, &p, &k);
    for l in [13, 14, 15, 16, 17, 18, 19] {
        assert!(t.executed.contains(&l), "line {l}");
    }
    // nexe 18 and 24 share blocks with exe lines, so nothing is pruned here
    assert_eq!(t.executed, m.all_lines());
    let both = estimate(&m, &p, &k, Variant::plain(BaseVariant::T1ExeAndT2));
    assert!(!both.executed.contains(&18) && !both.executed.contains(&19));
    assert!(both.executed.is_superset(&set(12..=17)));
    assert_eq!(both.variant, "T1EXE_and_T2");
}

#[test]
fn csr_removes_uncalled_helper() {
    let (m, _, _) = running();
    let mut ex = m.all_lines();
    ex.remove(&15);
    let t = EstimatedTrace::from_executed("X", 24, &ex);
    let r = csr(&t, &m);
    let removed: BTreeSet<usize> = t.executed.difference(&r.executed).copied().collect();
    // `main` has no call site in the script, so it goes as well
    assert_eq!(removed, set([5, 6, 21, 22, 23, 24]));
    assert_eq!(r.variant, "CSR(X)");

    let mut cfg = m.config.clone();
    cfg.fixture_names.insert("main".into());
    let m2 = crate::source::parse_files(&[("running_example.py".into(), RUNNING_FAULTY.into())], &cfg).unwrap();
    let r2 = csr(&t, &m2);
    assert_eq!(t.executed.difference(&r2.executed).copied().collect::<BTreeSet<_>>(), set([5, 6]));
}

#[test]
fn csr_keeps_called_helpers() {
    let (m, _, _) = running();
    let t = estimate_t0(&m);
    let r = csr(&t, &m);
    assert_eq!(r.executed, t.executed.difference(&set(21..=24)).copied().collect());
}

#[test]
fn empty_knowledge_keeps_everything() {
    let (m, p, _) = running();
    let k = Known::default();
    for v in BaseVariant::ALL {
        assert_eq!(estimate(&m, &p, &k, Variant::plain(v)).executed, m.all_lines(), "{v:?}");
    }
}

#[test]
fn single_statement_function() {
    let m = model_of("def f(): pass\ndef g(): Log.info(\"never\")\n");
    let k = Known { nexe: set([2]), ..Default::default() };
    let t = estimate_t1(&m, &k, ExecState::Exe);
    assert_eq!(t.executed, set([1]));
}

#[test]
fn boundary_gap_rules() {
    let src = "def f(x):\n    a = 1\n    Log.info(\"one\")\n    b = 2\n    Log.info(\"two\")\n    c = 3\n";
    let m = model_of(src);
    // start gap ends at exe -> EXE; tail after nexe -> NEXE; middle exe..nexe -> dbt
    let k = Known { exe: set([3]), nexe: set([5]), ..Default::default() };
    let e = estimate_t1(&m, &k, ExecState::Exe);
    assert_eq!(e.executed, set([1, 2, 3, 4]));
    let n = estimate_t1(&m, &k, ExecState::Nexe);
    assert_eq!(n.executed, set([1, 2, 3]));
    // start gap ending at nexe is dbt
    let k = Known { nexe: set([3]), ..Default::default() };
    assert_eq!(estimate_t1(&m, &k, ExecState::Exe).executed, set([1, 2]));
    assert!(estimate_t1(&m, &k, ExecState::Nexe).executed.is_empty());
}

#[test]
fn error_ends_the_function() {
    let src = "def f(x):\n    Log.info(\"one\")\n    y = 1 / x\n    z = 2\n    w = 3\n";
    let m = model_of(src);
    let k = Known { exe: set([2, 3]), errors: set([3]), ..Default::default() };
    assert_eq!(estimate_t1(&m, &k, ExecState::Exe).executed, set([1, 2, 3]));
}

#[test]
fn continuation_lines_follow_their_head() {
    let src = "def f():\n    Log.info(\n        \"one\")\n    x = 1\n    Log.info(\"two\")\n";
    let m = model_of(src);
    let k = Known { exe: set([5]), nexe: set([2]), ..Default::default() };
    let t = estimate_t1(&m, &k, ExecState::Nexe);
    assert!(!t.executed.contains(&3));
}

#[test]
fn sibling_arm_of_exe_node_is_nexe() {
    let src = "def f(x):\n    if x:\n        Log.info(\"a\")\n    else:\n        b = 1\n    c = 2\n";
    let m = model_of(src);
    let p = ProgramCfg::build(&m);
    let k = Known { exe: set([3]), ..Default::default() };
    let t = estimate_t2(&m, &p, &k);
    assert_eq!(t.executed, set([1, 2, 3, 6]));
}

#[test]
fn intersection_laws() {
    let (m, p, k) = running();
    let t0 = estimate_t0(&m);
    for v in BaseVariant::ALL {
        let x = estimate(&m, &p, &k, Variant::plain(v));
        assert_eq!(intersect(&x, &t0).unwrap().executed, x.executed);
        assert_eq!(intersect(&x, &x).unwrap().executed, x.executed);
    }
    let other = EstimatedTrace::from_executed("Y", 3, &set([1]));
    assert!(matches!(intersect(&t0, &other), Err(TraceError::CorpusMismatch(24, 3))));
}

#[test]
fn pruning_rate_arithmetic() {
    assert_eq!(pruning_rate(244, 244), 0.0);
    assert!((pruning_rate(244, 180) - 0.2623).abs() < 1e-4);
    assert_eq!(pruning_rate(0, 0), 0.0);
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::all() {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("csr(t2)".parse::<Variant>().unwrap_err().to_string(), "unknown trace variant `csr(t2)`");
    assert_eq!("t1_exe".parse::<Variant>().unwrap(), Variant::plain(BaseVariant::T1Exe));
}

pub(crate) fn random_dag(rng: &mut impl Rng, n: usize) -> FunctionCfg {
    let mut nodes: Vec<CfgNode> = (0..n)
        .map(|i| CfgNode { block: Some(i + 1), statements: vec![i + 1], children: vec![], parents: vec![] })
        .collect();
    for j in 1..n {
        let first = rng.random_range(0..j);
        let mut ps = vec![first];
        for i in 0..j {
            if i != first && rng.random_bool(0.25) {
                ps.push(i);
            }
        }
        for p in ps {
            nodes[p].children.push(j);
            nodes[j].parents.push(p);
        }
    }
    FunctionCfg { function: FunctionId(1), name: "f".into(), root: 0, nodes }
}

#[test]
fn traversal_matches_brute_force_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.random_range(1..=9);
        let g = random_dag(&mut rng, n);
        let lab: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let v_exe: Vec<bool> = lab.iter().map(|&x| x == 1).collect();
        let v_nexe: Vec<bool> = lab.iter().map(|&x| x == 2).collect();
        assert_eq!(t2_node_states(&g, &v_exe, &v_nexe), pexe_brute_force(&g, &v_exe, &v_nexe), "{g:?} {lab:?}");
    }
}


#[test]
fn t2_keeps_known_lines_when_no_path_explains_them() {
    let src = "def f(x):\n    try:\n        Log.info(\"a\")\n    except ValueError:\n        Log.info(\"b\")\n    Log.info(\"c\")\n    y = 2\n";
    let m = model_of(src);
    let p = ProgramCfg::build(&m);
    let k = Known { exe: set([3, 5]), nexe: set([6]), ..Default::default() };
    let t = estimate_t2(&m, &p, &k);
    assert!(t.executed.is_superset(&set([3, 5])));
    assert!(!t.executed.contains(&6));
}
