//! The simulated system: sites, network, durable store and the event loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::filestore::{DurableStore, FileName, Page};
use crate::ids::SiteId;
use crate::msg::Msg;
use crate::net::{Event, Network, SendOutcome, Topology, TopologyError};
use crate::trace::{Trace, TraceKind};
use crate::txn::{Config, Cx, Env, Script, Site};

/// When a fault fires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trigger {
    /// At simulated time `n`, before anything else scheduled then.
    At(u64),
    /// Just before the `nth` remote send of a message kind (1-based).
    BeforeSend { kind: String, nth: u64 },
    /// Right after the handler for the `nth` remote delivery of a kind.
    AfterDeliver { kind: String, nth: u64 },
    /// Just before the `n`th remote send of any kind.
    AtMessage(u64),
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::At(n) => write!(f, "at {n}"),
            Trigger::BeforeSend { kind, nth } => write!(f, "before-send {kind} {nth}"),
            Trigger::AfterDeliver { kind, nth } => write!(f, "after-deliver {kind} {nth}"),
            Trigger::AtMessage(n) => write!(f, "at-message {n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaultAction {
    Partition(Vec<BTreeSet<SiteId>>),
    Heal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fault {
    pub trigger: Trigger,
    pub action: FaultAction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileDecl {
    pub name: FileName,
    pub replicas: Vec<SiteId>,
    pub pages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootDecl {
    pub label: String,
    pub site: SiteId,
    pub script: String,
    pub start: u64,
}

/// Everything needed to build a [`World`].
#[derive(Clone, Debug, Default)]
pub struct WorldSpec {
    pub sites: BTreeSet<SiteId>,
    pub page_size: usize,
    pub config: Config,
    pub files: Vec<FileDecl>,
    pub scripts: BTreeMap<String, Arc<Script>>,
    pub roots: Vec<RootDecl>,
    pub faults: Vec<Fault>,
    /// Reconnect every site whenever the system goes quiet while partitioned.
    pub heal_at_end: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Quiescent,
    StepLimit,
}

pub struct World {
    pub sites: BTreeMap<SiteId, Site>,
    pub net: Network,
    pub durable: DurableStore,
    pub trace: Trace,
    pub env: Env,
    faults: Vec<Fault>,
    fired: Vec<bool>,
    heal_at_end: bool,
    sent_by_kind: BTreeMap<&'static str, u64>,
    delivered_by_kind: BTreeMap<&'static str, u64>,
    sent_total: u64,
    local: VecDeque<(SiteId, SiteId, Msg)>,
    topo_pending: BTreeSet<SiteId>,
    steps: u64,
    /// Broken runtime invariants, with the step they were detected at.
    pub violations: Vec<String>,
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self, TopologyError> {
        let mut durable = DurableStore::new();
        for f in &spec.files {
            for &s in &f.replicas {
                if !spec.sites.contains(&s) {
                    return Err(TopologyError::Unknown(s));
                }
                let pages = f.pages.iter().map(|p| Page::from(p.as_str())).collect();
                durable.install(f.name.clone(), s, pages, spec.page_size);
            }
        }
        let sites = spec
            .sites
            .iter()
            .map(|&s| (s, Site::new(s, spec.sites.clone())))
            .collect();
        let mut net = Network::new(Topology::connected(spec.sites.iter().copied()));
        for (i, f) in spec.faults.iter().enumerate() {
            if let Trigger::At(n) = f.trigger {
                net.schedule_fault(n, i);
            }
        }
        let mut world = World {
            sites,
            net,
            durable,
            trace: Trace::new(),
            env: Env::new(spec.config.clone(), spec.scripts.clone()),
            fired: vec![false; spec.faults.len()],
            faults: spec.faults.clone(),
            heal_at_end: spec.heal_at_end,
            sent_by_kind: BTreeMap::new(),
            delivered_by_kind: BTreeMap::new(),
            sent_total: 0,
            local: VecDeque::new(),
            topo_pending: BTreeSet::new(),
            steps: 0,
            violations: Vec::new(),
        };
        for r in &spec.roots {
            if !spec.sites.contains(&r.site) {
                return Err(TopologyError::Unknown(r.site));
            }
            let script = spec.scripts[&r.script].clone();
            world.with_site(r.site, |s, cx| {
                s.spawn_root(&r.label, script, r.start.max(1), cx);
            });
        }
        Ok(world)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn now(&self) -> u64 {
        self.net.now()
    }

    /// Runs `f` against one site, then dispatches what it produced.
    fn with_site(&mut self, site: SiteId, f: impl FnOnce(&mut Site, &mut Cx)) {
        let s = self.sites.get_mut(&site).expect("known site");
        let mut cx = Cx::new(site, &mut self.trace, &mut self.durable, &mut self.net.metrics, &mut self.env);
        f(s, &mut cx);
        let Cx { out, wakes, .. } = cx;
        for (pid, token, delay) in wakes {
            self.net.schedule_wake(site, pid, token, delay);
        }
        for (to, msg) in out {
            self.dispatch(site, to, msg);
        }
    }

    fn dispatch(&mut self, from: SiteId, to: SiteId, msg: Msg) {
        if from != to {
            let kind = msg.kind();
            self.sent_total += 1;
            let n = self.sent_by_kind.entry(kind).or_default();
            *n += 1;
            let n = *n;
            let total = self.sent_total;
            let due: Vec<usize> = self
                .faults
                .iter()
                .enumerate()
                .filter(|(_, f)| match &f.trigger {
                    Trigger::AtMessage(m) => *m == total,
                    Trigger::BeforeSend { kind: k, nth } => k == kind && *nth == n,
                    _ => false,
                })
                .map(|(i, _)| i)
                .collect();
            for i in due {
                self.fire(i);
            }
        }
        if let SendOutcome::Local(m) = self.net.send(from, to, msg, &mut self.trace) {
            self.local.push_back((from, to, m));
        }
    }

    fn heal(&mut self) {
        self.steps += 1;
        self.trace.set_clock(self.steps, self.net.now());
        let next = Topology::connected(self.net.topology().sites());
        self.trace.push(None, TraceKind::Fault, format!("final heal -> {next}"));
        let changed = self.net.repartition(next, &mut self.trace);
        self.topo_pending.extend(changed);
        let before = self.durable.digest();
        self.env.applies.clear();
        self.drain();
        self.check_durable(before);
    }

    fn fire(&mut self, i: usize) {
        if self.fired[i] {
            return;
        }
        self.fired[i] = true;
        let all = self.net.topology().sites();
        let next = match &self.faults[i].action {
            FaultAction::Heal => Topology::connected(all.iter().copied()),
            FaultAction::Partition(groups) => match Topology::from_groups(&all, groups) {
                Ok(t) => t,
                Err(e) => {
                    self.violations.push(format!("step {}: bad fault #{i}: {e}", self.steps));
                    return;
                }
            },
        };
        self.trace.push(
            None,
            TraceKind::Fault,
            format!("#{i} {} -> {next}", self.faults[i].trigger),
        );
        let changed = self.net.repartition(next, &mut self.trace);
        self.topo_pending.extend(changed);
    }

    /// Handles one event plus everything it triggers locally. Returns false
    /// when nothing is pending.
    pub fn step(&mut self) -> bool {
        let Some(ev) = self.net.pop() else { return false };
        self.steps += 1;
        self.trace.set_clock(self.steps, self.net.now());
        let before = self.durable.digest();
        self.env.applies.clear();
        match ev {
            Event::Deliver(e) => {
                let kind = e.payload.kind();
                let (from, to) = (e.from, e.to);
                self.with_site(to, |s, cx| s.handle(from, e.payload, cx));
                let n = self.delivered_by_kind.entry(kind).or_default();
                *n += 1;
                let n = *n;
                let due: Vec<usize> = self
                    .faults
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| {
                        matches!(&f.trigger, Trigger::AfterDeliver { kind: k, nth } if k == kind && *nth == n)
                    })
                    .map(|(i, _)| i)
                    .collect();
                for i in due {
                    self.fire(i);
                }
            }
            Event::Wake { site, pid, token } => self.with_site(site, |s, cx| s.on_wake(pid, token, cx)),
            Event::Fault(i) => self.fire(i),
        }
        self.drain();
        self.check_durable(before);
        true
    }

    /// Pending topology procedures first, then same-site calls.
    fn drain(&mut self) {
        loop {
            if let Some(site) = self.topo_pending.pop_first() {
                let table = self.net.topology().partition_of(site);
                self.with_site(site, |s, cx| s.topology_change(table, cx));
                continue;
            }
            if let Some((from, to, msg)) = self.local.pop_front() {
                self.with_site(to, |s, cx| s.handle(from, msg, cx));
                continue;
            }
            break;
        }
    }

    /// The durable store may only change through a commit decided by a
    /// coordinator or through a plain close.
    fn check_durable(&mut self, before: [u8; 32]) {
        let changed = self.durable.digest() != before;
        if changed && self.env.applies.is_empty() {
            self.violations
                .push(format!("step {}: durable state changed with no commit", self.steps));
        }
        for t in self.env.applies.iter().flatten() {
            if !self.env.commit_points.contains(t) {
                self.violations
                    .push(format!("step {}: durable write for {t} before its commit point", self.steps));
            }
        }
    }

    pub fn run(&mut self, step_limit: u64) -> RunStatus {
        while self.steps < step_limit {
            if !self.step() {
                if self.heal_at_end && self.net.topology().sites().len() > 1 {
                    let any = self.net.topology().sites().into_iter().next().unwrap();
                    if self.net.topology().partition_of(any) != self.net.topology().sites() {
                        let before: Vec<String> = self
                            .quiescent_violations()
                            .into_iter()
                            .map(|v| format!("before final heal: {v}"))
                            .collect();
                        self.violations.extend(before);
                        self.heal();
                        continue;
                    }
                }
                return RunStatus::Quiescent;
            }
        }
        if self.net.is_quiescent() {
            RunStatus::Quiescent
        } else {
            RunStatus::StepLimit
        }
    }

    /// Runs every event scheduled at or before `time`.
    pub fn run_until(&mut self, time: u64, step_limit: u64) -> RunStatus {
        while self.steps < step_limit {
            match self.net.peek_time() {
                Some(t) if t <= time => {
                    self.step();
                }
                Some(_) => return RunStatus::Quiescent,
                None => return RunStatus::Quiescent,
            }
        }
        RunStatus::StepLimit
    }

    /// Structural invariants that must hold once the system is quiescent.
    pub fn quiescent_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (id, site) in &self.sites {
            for t in site.trans.keys() {
                if t.superior_sites().any(|s| !site.table.contains(&s)) {
                    out.push(format!("{id}: orphan record {t} survived"));
                }
            }
            for (f, lock) in site.locks.iter() {
                for t in lock.mentioned_tids() {
                    let in_doubt = lock.committing() == Some(&t)
                        && site.prepared.contains_key(&(t.clone(), f.clone()));
                    if !in_doubt && t.ancestor_sites().any(|s| !site.table.contains(&s)) {
                        out.push(format!("{id}: t-lock {f} still references orphan {t}"));
                    }
                }
            }
            for p in site.procs.values() {
                if p.is_blocked() {
                    out.push(format!("{id}: process {} ({}) parked on {:?}", p.pid, p.label, p.wait));
                }
            }
        }
        out
    }
}
