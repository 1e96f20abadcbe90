use super::*;
use crate::testutil::*;

fn cfg_of(src: &str, name: &str) -> (SourceModel, FunctionCfg) {
    let m = model_of(src);
    let f = m.function_by_name(name).unwrap().id;
    let g = build_cfg(&m, f);
    validate(&m, &g).unwrap();
    (m, g)
}

fn shape(g: &FunctionCfg) -> Vec<(Vec<LineId>, Vec<usize>)> {
    g.nodes.iter().map(|n| (n.statements.clone(), n.children.clone())).collect()
}

#[test]
fn running_example_blocks() {
    let m = running_example();
    let p = ProgramCfg::build(&m);
    let blocks: Vec<Vec<LineId>> = (1..=p.block_count()).map(|b| p.block(b).statements.clone()).collect();
    assert_eq!(
        blocks,
        vec![
            vec![1, 2, 3],
            vec![5, 6],
            vec![8, 9, 10, 11, 12],
            vec![13],
            vec![14, 15],
            vec![16, 17, 18, 19],
            vec![21, 22, 23, 24],
            vec![4, 7, 20],
        ]
    );
    let et = p.for_function(m.function_by_name("execute_tests").unwrap().id);
    let mut paths = et.block_paths();
    paths.sort();
    assert_eq!(paths, vec![vec![3, 4, 6], vec![3, 5, 6]]);
    for g in &p.functions {
        validate(&m, g).unwrap();
    }
    assert_eq!(p.block_of(17), 6);
    assert!(p.to_dot().contains("B6\\nlines 16-19"));
}

#[test]
fn straight_line_is_one_node() {
    let (_, g) = cfg_of("def f():\n    a = 1\n    b = 2\n", "f");
    assert_eq!(shape(&g), vec![(vec![1, 2, 3], vec![])]);
    let (_, g) = cfg_of("def f(): return 1\n", "f");
    assert_eq!(g.nodes.len(), 1);
    assert_eq!(g.edge_count(), 0);
}

#[test]
fn elif_ladder_has_sibling_arms() {
    let src = "def f(x):\n    if x == 1:\n        a = 1\n    elif x == 2:\n        a = 2\n    else:\n        a = 3\n    return a\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(
        shape(&g),
        vec![
            (vec![1, 2], vec![1, 2, 3]),
            (vec![3], vec![4]),
            (vec![4, 5], vec![4]),
            (vec![6, 7], vec![4]),
            (vec![8], vec![]),
        ]
    );
    assert_eq!(g.enumerate_paths().len(), 3);
}

#[test]
fn if_without_else_falls_through() {
    let src = "def f(x):\n    if x:\n        a = 1\n    b = 2\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(shape(&g), vec![(vec![1, 2], vec![1, 2]), (vec![3], vec![2]), (vec![4], vec![])]);
}

#[test]
fn trailing_if_gets_exit_node() {
    let src = "def f(x):\n    if x:\n        a = 1\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(g.nodes.len(), 3);
    assert!(g.nodes[2].is_exit());
    assert_eq!(g.block_paths(), vec![vec![1, 2], vec![1]]);
}

#[test]
fn loop_drops_back_edge() {
    let src = "def f(xs):\n    t = 0\n    for x in xs:\n        t += x\n        Log.info(\"step\")\n    return t\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(shape(&g), vec![(vec![1, 2, 3], vec![1, 2]), (vec![4, 5], vec![2]), (vec![6], vec![])]);
}

#[test]
fn early_return_is_a_leaf() {
    let src = "def f(x):\n    if x:\n        return 1\n    y = 2\n    return y\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(shape(&g), vec![(vec![1, 2], vec![1, 2]), (vec![3], vec![]), (vec![4, 5], vec![])]);
}

#[test]
fn try_except_finally() {
    let src = "def f():\n    try:\n        a()\n    except ValueError:\n        b()\n    except KeyError:\n        c()\n    finally:\n        d()\n    e()\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(
        shape(&g),
        vec![
            (vec![1, 2], vec![1, 2, 3]),
            (vec![3], vec![4]),
            (vec![4, 5], vec![4]),
            (vec![6, 7], vec![4]),
            (vec![8, 9, 10], vec![]),
        ]
    );
}

#[test]
fn comments_and_continuations_join_neighbours() {
    let src = "def f(x):\n    # lead\n    if x:\n        # inside\n        call(1,\n             2)\n    # tail\n    return 0\n";
    let (_, g) = cfg_of(src, "f");
    assert_eq!(shape(&g), vec![(vec![1, 2, 3], vec![1, 2]), (vec![4, 5, 6], vec![2]), (vec![7, 8], vec![])]);
}

#[test]
fn module_scope_blocks_come_last() {
    let m = model_of("import os\ndef f():\n    return 1\nf()\n");
    let p = ProgramCfg::build(&m);
    assert_eq!(p.block(1).statements, vec![2, 3]);
    assert_eq!(p.block(2).statements, vec![1, 4]);
}
