//! Property tests for the t-lock, checked against the reference model in
//! `common`.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{check_structure, random_tree, rules_allow, Driver};
use nestedtx::ids::{SiteId, Tid};
use nestedtx::tlock::{Holders, LockMode, OpenOutcome, TLock};

fn driven(seed: u64, nodes: usize, steps: usize) -> (Driver, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = rng.gen_range(1..=2);
    let tree = random_tree(&mut rng, roots, nodes.max(roots), 4);
    let mut d = Driver::new(tree);
    d.run(&mut rng, steps, |_| Ok(())).unwrap();
    (d, rng)
}

fn accessible_subset(rng: &mut impl Rng) -> BTreeSet<SiteId> {
    (1..=4).filter(|_| rng.gen_bool(0.6)).map(SiteId).collect()
}

/// Transactions the sweep would remove. A top-level commit in progress is
/// left to the two-phase commit recovery path.
fn swept(l: &TLock, acc: &BTreeSet<SiteId>) -> Vec<Tid> {
    let lost_us: Vec<Tid> = match l.holders() {
        Holders::None => vec![],
        Holders::Read(rs) => rs.iter().filter(|r| !r.using.is_subset(acc)).map(|r| r.tid.clone()).collect(),
        Holders::Write(h) => {
            if h.using.is_subset(acc) {
                vec![]
            } else {
                vec![h.tid.clone()]
            }
        }
    };
    l.mentioned_tids()
        .into_iter()
        .filter(|t| Some(t) != l.committing())
        .filter(|t| t.ancestor_sites().any(|s| !acc.contains(&s)) || lost_us.iter().any(|u| t.is_descendant_of(u)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn version_stack_matches_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let roots = rng.gen_range(1..=2);
        let tree = random_tree(&mut rng, roots, 5, 4);
        let mut d = Driver::new(tree);
        let r = d.run(&mut rng, 80, |d| {
            check_structure(&d.lock)?;
            let got = d.lock.current().page_texts();
            let want = d.model.expected();
            if got != want {
                return Err(format!("current {got:?}, reference {want:?}"));
            }
            Ok(())
        });
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }

    #[test]
    fn grants_follow_locking_rules(seed in any::<u64>(), steps in 0usize..60) {
        let (d, _) = driven(seed, 8, steps);
        for t in &d.tree {
            for mode in [LockMode::Read, LockMode::Write] {
                let mut l = d.lock.clone();
                let granted = l.open(t, mode, SiteId(1), &mut Vec::new()) == OpenOutcome::Granted;
                prop_assert_eq!(granted, rules_allow(&d.lock, t, mode), "{} {} on {}", t, mode, d.lock.render());
                if granted {
                    prop_assert!(check_structure(&l).is_ok());
                }
            }
        }
    }

    #[test]
    fn abort_is_idempotent(seed in any::<u64>(), steps in 0usize..60, pick in any::<prop::sample::Index>()) {
        let (d, _) = driven(seed, 8, steps);
        let t = pick.get(&d.tree);
        let mut once = d.lock.clone();
        once.abort(t, &mut Vec::new());
        let mut twice = once.clone();
        twice.abort(t, &mut Vec::new());
        prop_assert_eq!(once.digest(), twice.digest());
        prop_assert!(check_structure(&once).is_ok());
    }

    #[test]
    fn sweep_is_idempotent(seed in any::<u64>(), steps in 0usize..60) {
        let (d, mut rng) = driven(seed, 8, steps);
        let acc = accessible_subset(&mut rng);
        let mut once = d.lock.clone();
        once.sweep(&acc, &mut Vec::new());
        let mut twice = once.clone();
        twice.sweep(&acc, &mut Vec::new());
        prop_assert_eq!(once.digest(), twice.digest());
        prop_assert!(swept(&once, &acc).is_empty(), "sweep left {:?}", swept(&once, &acc));
        prop_assert!(check_structure(&once).is_ok());
    }

    #[test]
    fn sweep_then_covering_abort_equals_abort(seed in any::<u64>(), steps in 0usize..60, pick in any::<prop::sample::Index>()) {
        let (d, mut rng) = driven(seed, 8, steps);
        let s = pick.get(&d.tree);
        // `s` survives; the sweep may only remove transactions beneath it.
        let mut acc = accessible_subset(&mut rng);
        acc.extend(s.ancestor_sites());
        if !swept(&d.lock, &acc).iter().all(|t| t.is_descendant_of(s)) {
            return Ok(());
        }
        let mut a = d.lock.clone();
        a.sweep(&acc, &mut Vec::new());
        a.abort(s, &mut Vec::new());
        let mut b = d.lock.clone();
        b.abort(s, &mut Vec::new());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn sweep_with_all_sites_accessible_changes_nothing() {
    let all: BTreeSet<SiteId> = (1..=4).map(SiteId).collect();
    for seed in 0..200 {
        let (d, _) = driven(seed, 8, 40);
        let mut l = d.lock.clone();
        l.sweep(&all, &mut Vec::new());
        assert_eq!(l, d.lock, "seed {seed}");
    }
}

#[test]
fn reference_model_tracks_aborted_subtrees() {
    let t1 = Tid::root(SiteId(1), 1);
    let t2 = t1.child(SiteId(2), 2);
    let mut d = Driver::new(vec![t1.clone(), t2.clone()]);
    d.model.writes.push((t1.clone(), 0, "a".into()));
    d.model.writes.push((t2.clone(), 0, "b".into()));
    assert_eq!(d.model.expected()[0], "b");
    d.abort(&t2);
    assert_eq!(d.model.expected()[0], "a");
    assert!(d.model.active(&t1));
    assert!(!d.model.active(&t2));
}
