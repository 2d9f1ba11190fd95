//! Every shipped scenario passes its expectations and every oracle, and
//! replays byte for byte.

mod common;

use std::fs;

use nestedtx::harness::{parse, run, RunOptions};

#[test]
fn corpus_scenarios_pass() {
    let files = common::corpus();
    assert!(files.len() >= 30, "corpus shrank to {} files", files.len());
    let mut failed = Vec::new();
    for path in &files {
        let text = fs::read_to_string(path).unwrap();
        let s = parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let r = run(&s, &RunOptions { oracles: true, ..Default::default() });
        if !r.passed() {
            failed.push(format!("{}\n{}", path.display(), r.summary()));
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn corpus_traces_are_deterministic() {
    for path in common::corpus() {
        let s = parse(&fs::read_to_string(&path).unwrap()).unwrap();
        let a = run(&s, &RunOptions::default());
        let b = run(&s, &RunOptions::default());
        assert!(!a.trace.is_empty(), "{} produced no trace", path.display());
        assert_eq!(a.trace, b.trace, "{}", path.display());
    }
}

#[test]
fn commit_failure_family_covers_every_boundary() {
    let kinds = ["REQCOMMIT", "GRTCOMMIT", "TSSCOMMIT", "RTSSCOMMIT", "SUBCOMMIT", "SUBCMTFAIL"];
    let names: Vec<String> = common::corpus()
        .iter()
        .filter(|p| p.parent().unwrap().ends_with("commit_failure"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    for k in kinds {
        for when in ["before-send", "after-deliver"] {
            assert!(names.iter().any(|n| n.contains(when) && n.ends_with(k)), "no {when} case for {k}");
        }
    }
}

#[test]
fn orphan_sweep_trace_pops_from_the_bottommost_orphan() {
    let s = parse(&fs::read_to_string(common::corpus_path("orphan_sweep_chain.scn")).unwrap()).unwrap();
    let r = run(&s, &RunOptions::default());
    let pops: Vec<&str> = r
        .trace
        .lines()
        .filter(|l| l.contains(" s5 lock pop ") && l.contains("t=40 "))
        .collect();
    assert_eq!(pops.len(), 3, "{}", r.trace);
    assert!(pops[2].contains("tid=s1.t1/s2.t1 "), "{}", pops[2]);
}
