//! Shared test support: random transaction trees, a driver that pushes a
//! t-lock through random legal operation sequences, and an independent
//! reference model of what the file should contain.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use nestedtx::filestore::{FileName, FileState, Page};
use nestedtx::ids::{SiteId, Tid};
use nestedtx::tlock::{Holders, LockMode, OpenOutcome, TLock};

pub const PAGES: usize = 2;

/// A random forest of at most `max_nodes` transactions under `roots`
/// top-level transactions, no deeper than `max_depth`. Home sites are drawn
/// from 1..=4.
pub fn random_tree(rng: &mut impl Rng, roots: usize, max_nodes: usize, max_depth: usize) -> Vec<Tid> {
    let mut tids: Vec<Tid> = Vec::new();
    for serial in 1..=roots as u32 {
        tids.push(Tid::root(SiteId(rng.gen_range(1..=4)), serial));
    }
    let mut serial = roots as u32;
    while tids.len() < max_nodes {
        let parents: Vec<&Tid> = tids.iter().filter(|t| t.depth() < max_depth).collect();
        let parent = (*parents.choose(rng).expect("roots are shallow")).clone();
        serial += 1;
        tids.push(parent.child(SiteId(rng.gen_range(1..=4)), serial));
    }
    tids
}

pub fn initial_state() -> FileState {
    FileState::new(1, 32, (0..PAGES).map(|p| Page::from(format!("init{p}").as_str())).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Live,
    Committed,
    Aborted,
}

/// What the file should look like, computed without looking at the t-lock:
/// replay every accepted write whose writer and superiors have not aborted.
#[derive(Clone, Debug)]
pub struct Model {
    pub fate: BTreeMap<Tid, Fate>,
    pub writes: Vec<(Tid, usize, String)>,
    pub initial: FileState,
}

impl Model {
    pub fn new(tree: &[Tid]) -> Self {
        Model {
            fate: tree.iter().map(|t| (t.clone(), Fate::Live)).collect(),
            writes: Vec::new(),
            initial: initial_state(),
        }
    }

    fn discarded(&self, t: &Tid) -> bool {
        self.fate.iter().any(|(a, f)| *f == Fate::Aborted && a.is_ancestor_of(t))
    }

    /// Active: neither it nor any superior has finished.
    pub fn active(&self, t: &Tid) -> bool {
        self.fate.iter().all(|(a, f)| *f == Fate::Live || !a.is_ancestor_of(t))
    }

    pub fn expected(&self) -> Vec<String> {
        let mut pages = self.initial.page_texts();
        for (t, page, text) in &self.writes {
            if !self.discarded(t) {
                pages[*page] = text.clone();
            }
        }
        pages
    }
}

/// One step the driver took, for failure messages.
#[derive(Clone, Debug)]
pub enum Step {
    Open(Tid, LockMode, bool),
    Read(Tid, usize, bool),
    Write(Tid, usize, bool),
    Close(Tid),
    Commit(Tid),
    Abort(Tid),
}

pub struct Driver {
    pub tree: Vec<Tid>,
    pub lock: TLock,
    pub model: Model,
    pub log: Vec<Step>,
    counter: usize,
}

impl Driver {
    pub fn new(tree: Vec<Tid>) -> Self {
        let model = Model::new(&tree);
        Driver { lock: TLock::new(FileName::from("F"), initial_state()), tree, model, log: Vec::new(), counter: 0 }
    }

    /// Drives `steps` random operations by active transactions. Every step
    /// is followed by `check`, which may fail the test.
    pub fn run(&mut self, rng: &mut impl Rng, steps: usize, mut check: impl FnMut(&Driver) -> Result<(), String>) -> Result<(), String> {
        for _ in 0..steps {
            let active: Vec<Tid> = self.tree.iter().filter(|t| self.model.active(t)).cloned().collect();
            let Some(t) = active.choose(rng).cloned() else { break };
            self.step(rng, &t);
            check(self).map_err(|e| format!("{e}\nafter {:?}", self.log))?;
        }
        Ok(())
    }

    fn step(&mut self, rng: &mut impl Rng, t: &Tid) {
        let mut ev = Vec::new();
        match rng.gen_range(0..100) {
            0..=24 => {
                let mode = if rng.gen_bool(0.6) { LockMode::Write } else { LockMode::Read };
                let us = SiteId(rng.gen_range(1..=4));
                let ok = self.lock.open(t, mode, us, &mut ev) == OpenOutcome::Granted;
                self.log.push(Step::Open(t.clone(), mode, ok));
            }
            25..=44 => {
                self.counter += 1;
                let page = rng.gen_range(0..PAGES);
                let text = format!("w{}", self.counter);
                let ok = self.lock.write(t, page, Page::from(text.as_str())).is_ok();
                if ok {
                    self.model.writes.push((t.clone(), page, text));
                }
                self.log.push(Step::Write(t.clone(), page, ok));
            }
            45..=54 => {
                let page = rng.gen_range(0..PAGES);
                let ok = self.lock.read(t, page).is_ok();
                self.log.push(Step::Read(t.clone(), page, ok));
            }
            55..=79 => {
                self.lock.close(t, &mut ev);
                self.log.push(Step::Close(t.clone()));
            }
            80..=91 => self.commit(t),
            _ => self.abort(t),
        }
    }

    /// Children still running when `t` finishes are aborted first, as the
    /// home site does before a commit.
    pub fn commit(&mut self, t: &Tid) {
        let mut ev = Vec::new();
        let mut live: Vec<Tid> = self
            .tree
            .iter()
            .filter(|d| d.is_inferior_of(t) && self.model.active(d))
            .cloned()
            .collect();
        live.sort_by_key(|d| std::cmp::Reverse(d.depth()));
        for d in live {
            if self.model.active(&d) {
                self.abort(&d);
            }
        }
        self.lock.commit(t, &mut ev);
        self.model.fate.insert(t.clone(), Fate::Committed);
        self.log.push(Step::Commit(t.clone()));
    }

    pub fn abort(&mut self, t: &Tid) {
        let mut ev = Vec::new();
        self.lock.abort(t, &mut ev);
        self.model.fate.insert(t.clone(), Fate::Aborted);
        self.log.push(Step::Abort(t.clone()));
    }
}

/// Structural invariants every reachable t-lock must satisfy.
pub fn check_structure(l: &TLock) -> Result<(), String> {
    let stack = l.write_retainers();
    for w in stack.windows(2) {
        if !w[0].tid.is_superior_of(&w[1].tid) {
            return Err(format!("stack out of order: {} below {}", w[0].tid, w[1].tid));
        }
    }
    let ids: BTreeSet<&Tid> = stack.iter().map(|e| &e.tid).collect();
    if ids.len() != stack.len() {
        return Err("duplicate stack entry".into());
    }
    let rr: BTreeSet<&Tid> = l.read_retainers().iter().collect();
    if rr.len() != l.read_retainers().len() {
        return Err("duplicate read retainer".into());
    }
    if let Some(top) = stack.last() {
        for h in l.holder_tids() {
            if !top.tid.is_ancestor_of(&h) {
                return Err(format!("holder {h} is not a descendant of stack top {}", top.tid));
            }
        }
    }
    if let Holders::Read(rs) = l.holders() {
        if rs.is_empty() {
            return Err("empty read-holder set instead of no holders".into());
        }
    }
    Ok(())
}

/// The grant rules, restated from the locking rules: may `t` hold `mode`
/// given the state before the request?
pub fn rules_allow(l: &TLock, t: &Tid, mode: LockMode) -> bool {
    if l.committing().is_some() {
        return false;
    }
    let others_hold = |only_writers: bool| match l.holders() {
        Holders::None => false,
        Holders::Read(rs) => !only_writers && rs.iter().any(|r| &r.tid != t),
        Holders::Write(h) => &h.tid != t,
    };
    let write_retainers_ok = l.write_retainers().iter().all(|e| e.tid.is_ancestor_of(t));
    match mode {
        LockMode::Write => {
            !others_hold(false) && write_retainers_ok && l.read_retainers().iter().all(|r| r.is_ancestor_of(t))
        }
        LockMode::Read => !others_hold(true) && write_retainers_ok,
    }
}

/// All `.scn` files under the shipped corpus, sorted.
pub fn corpus() -> Vec<PathBuf> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir).expect("corpus dir").map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out);
            } else if p.extension().is_some_and(|e| e == "scn") {
                out.push(p);
            }
        }
    }
    let mut out = Vec::new();
    walk(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios"), &mut out);
    out
}

pub fn corpus_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(rel)
}
