//! Deterministic simulated network with partitions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ids::{Pid, SiteId};
use crate::msg::{Envelope, Msg, Phase};
use crate::trace::{Trace, TraceKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("site {0} appears in more than one partition")]
    Overlap(SiteId),
    #[error("site {0} is not in any partition")]
    Missing(SiteId),
    #[error("unknown site {0}")]
    Unknown(SiteId),
}

/// Assignment of every site to exactly one partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    part: BTreeMap<SiteId, usize>,
}

impl Topology {
    /// Everyone in one partition.
    pub fn connected(sites: impl IntoIterator<Item = SiteId>) -> Self {
        Topology {
            part: sites.into_iter().map(|s| (s, 0)).collect(),
        }
    }

    pub fn from_groups(
        all: &BTreeSet<SiteId>,
        groups: &[BTreeSet<SiteId>],
    ) -> Result<Self, TopologyError> {
        let mut part = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            for &s in g {
                if !all.contains(&s) {
                    return Err(TopologyError::Unknown(s));
                }
                if part.insert(s, i).is_some() {
                    return Err(TopologyError::Overlap(s));
                }
            }
        }
        if let Some(&s) = all.iter().find(|s| !part.contains_key(s)) {
            return Err(TopologyError::Missing(s));
        }
        Ok(Topology { part })
    }

    pub fn sites(&self) -> BTreeSet<SiteId> {
        self.part.keys().copied().collect()
    }

    pub fn reachable(&self, a: SiteId, b: SiteId) -> bool {
        matches!((self.part.get(&a), self.part.get(&b)), (Some(x), Some(y)) if x == y)
    }

    /// The sites `site` can talk to, itself included.
    pub fn partition_of(&self, site: SiteId) -> BTreeSet<SiteId> {
        match self.part.get(&site) {
            Some(p) => self
                .part
                .iter()
                .filter(|(_, q)| *q == p)
                .map(|(s, _)| *s)
                .collect(),
            None => BTreeSet::new(),
        }
    }

    /// Sites whose set of reachable peers differs between `self` and `next`.
    pub fn changed_sites(&self, next: &Topology) -> Vec<SiteId> {
        self.sites()
            .into_iter()
            .filter(|&s| self.partition_of(s) != next.partition_of(s))
            .collect()
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut groups: BTreeMap<usize, Vec<SiteId>> = BTreeMap::new();
        for (s, p) in &self.part {
            groups.entry(*p).or_default().push(*s);
        }
        let mut groups: Vec<_> = groups.into_values().collect();
        groups.sort();
        let text: Vec<String> = groups
            .iter()
            .map(|g| {
                let ids: Vec<String> = g.iter().map(|s| s.0.to_string()).collect();
                format!("{{{}}}", ids.join(","))
            })
            .collect();
        f.write_str(&text.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Counter {
    Remote,
    Local,
    Dropped,
    DurableWrites,
}

impl Counter {
    pub const ALL: [Counter; 4] = [
        Counter::Remote,
        Counter::Local,
        Counter::Dropped,
        Counter::DurableWrites,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Counter::Remote => "remote",
            Counter::Local => "local",
            Counter::Dropped => "dropped",
            Counter::DurableWrites => "durable_writes",
        }
    }

    pub fn parse(s: &str) -> Option<Counter> {
        Counter::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Counters keyed by phase.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    counts: BTreeMap<(Counter, Phase), u64>,
}

impl Metrics {
    pub fn add(&mut self, counter: Counter, phase: Phase, n: u64) {
        if n > 0 {
            *self.counts.entry((counter, phase)).or_default() += n;
        }
    }

    pub fn get(&self, counter: Counter, phase: Phase) -> u64 {
        self.counts.get(&(counter, phase)).copied().unwrap_or(0)
    }

    pub fn total(&self, counter: Counter) -> u64 {
        self.counts
            .iter()
            .filter(|((c, _), _)| *c == counter)
            .map(|(_, n)| n)
            .sum()
    }

    /// `counter` restricted to `phase` when given.
    pub fn lookup(&self, counter: Counter, phase: Option<Phase>) -> u64 {
        match phase {
            Some(p) => self.get(counter, p),
            None => self.total(counter),
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in Counter::ALL {
            write!(f, "{}={}", c.name(), self.total(c))?;
            for p in Phase::ALL {
                let n = self.get(c, p);
                if n > 0 {
                    write!(f, " {}.{}={}", c.name(), p, n)?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Event {
    Deliver(Envelope),
    Wake { site: SiteId, pid: Pid, token: u64 },
    /// Index into the scenario's fault list.
    Fault(usize),
}

/// What happened to a message handed to [`Network::send`].
#[derive(Debug)]
pub enum SendOutcome {
    /// Same site: the caller runs the handler directly.
    Local(Msg),
    Queued,
    Dropped,
}

type Key = (u64, SiteId, SiteId, u64);

/// Event queue plus the physical topology.
#[derive(Debug)]
pub struct Network {
    topology: Topology,
    queue: BTreeMap<Key, Event>,
    seqs: BTreeMap<(SiteId, SiteId), u64>,
    now: u64,
    pub metrics: Metrics,
}

impl Network {
    pub fn new(topology: Topology) -> Self {
        Network {
            topology,
            queue: BTreeMap::new(),
            seqs: BTreeMap::new(),
            now: 0,
            metrics: Metrics::default(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn next_seq(&mut self, from: SiteId, to: SiteId) -> u64 {
        let s = self.seqs.entry((from, to)).or_default();
        *s += 1;
        *s
    }

    pub fn send(&mut self, from: SiteId, to: SiteId, payload: Msg, trace: &mut Trace) -> SendOutcome {
        let phase = payload.phase();
        if from == to {
            self.metrics.add(Counter::Local, phase, 1);
            trace.push(
                Some(from),
                TraceKind::Local,
                format!("{} {}", payload.kind(), payload.detail()),
            );
            return SendOutcome::Local(payload);
        }
        if !self.topology.reachable(from, to) {
            self.metrics.add(Counter::Dropped, phase, 1);
            trace.push(
                Some(from),
                TraceKind::Drop,
                format!("{} {from}->{to} {}", payload.kind(), payload.detail()),
            );
            return SendOutcome::Dropped;
        }
        self.metrics.add(Counter::Remote, phase, 1);
        trace.push(
            Some(from),
            TraceKind::Send,
            format!("{} {from}->{to} {}", payload.kind(), payload.detail()),
        );
        let seq = self.next_seq(from, to);
        self.queue.insert(
            (self.now + 1, from, to, seq),
            Event::Deliver(Envelope { from, to, seq, payload }),
        );
        SendOutcome::Queued
    }

    pub fn schedule_wake(&mut self, site: SiteId, pid: Pid, token: u64, delay: u64) {
        let seq = self.next_seq(site, site);
        self.queue
            .insert((self.now + delay.max(1), site, site, seq), Event::Wake { site, pid, token });
    }

    /// Fault events sort ahead of everything else scheduled for the same time.
    pub fn schedule_fault(&mut self, at: u64, index: usize) {
        self.queue
            .insert((at, SiteId(0), SiteId(0), index as u64), Event::Fault(index));
    }

    pub fn pop(&mut self) -> Option<Event> {
        let (key, ev) = self.queue.pop_first()?;
        self.now = key.0;
        Some(ev)
    }

    /// Time of the next pending event.
    pub fn peek_time(&self) -> Option<u64> {
        self.queue.keys().next().map(|k| k.0)
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    /// Installs `next` and drops envelopes whose endpoints it separates.
    /// Returns the sites whose partition changed.
    pub fn repartition(&mut self, next: Topology, trace: &mut Trace) -> Vec<SiteId> {
        let changed = self.topology.changed_sites(&next);
        self.topology = next;
        let severed: Vec<Key> = self
            .queue
            .iter()
            .filter_map(|(k, ev)| match ev {
                Event::Deliver(e) if !self.topology.reachable(e.from, e.to) => Some(*k),
                _ => None,
            })
            .collect();
        for k in severed {
            if let Some(Event::Deliver(e)) = self.queue.remove(&k) {
                self.metrics.add(Counter::Dropped, e.payload.phase(), 1);
                trace.push(
                    Some(e.from),
                    TraceKind::Drop,
                    format!("{} {}->{} in-flight {}", e.payload.kind(), e.from, e.to, e.payload.detail()),
                );
            }
        }
        changed
    }

    /// Human-readable pending events, for livelock diagnostics.
    pub fn pending(&self) -> Vec<String> {
        self.queue
            .iter()
            .map(|((t, a, b, s), ev)| match ev {
                Event::Deliver(e) => format!("t={t} {} {a}->{b}#{s} {}", e.payload.kind(), e.payload.detail()),
                Event::Wake { pid, token, .. } => format!("t={t} wake {pid} token={token}"),
                Event::Fault(i) => format!("t={t} fault #{i}"),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::Tid;

    fn sites(v: &[u32]) -> BTreeSet<SiteId> {
        v.iter().map(|&s| SiteId(s)).collect()
    }

    fn msg() -> Msg {
        Msg::AbortReq { tid: Tid::root(SiteId(1), 1) }
    }

    #[test]
    fn local_send_is_not_a_message() {
        let mut net = Network::new(Topology::connected(sites(&[1, 2])));
        let mut tr = Trace::new();
        assert!(matches!(net.send(SiteId(1), SiteId(1), msg(), &mut tr), SendOutcome::Local(_)));
        assert_eq!(net.metrics.total(Counter::Remote), 0);
        assert_eq!(net.metrics.total(Counter::Local), 1);
        assert!(net.is_quiescent());
    }

    #[test]
    fn cross_partition_send_is_dropped() {
        let all = sites(&[1, 2, 3]);
        let topo = Topology::from_groups(&all, &[sites(&[1]), sites(&[2, 3])]).unwrap();
        let mut net = Network::new(topo);
        let mut tr = Trace::new();
        assert!(matches!(net.send(SiteId(1), SiteId(2), msg(), &mut tr), SendOutcome::Dropped));
        assert_eq!(net.metrics.total(Counter::Dropped), 1);
        assert!(net.is_quiescent());
    }

    #[test]
    fn fifo_per_pair() {
        let mut net = Network::new(Topology::connected(sites(&[1, 2])));
        let mut tr = Trace::new();
        net.send(SiteId(1), SiteId(2), Msg::AbortReq { tid: Tid::root(SiteId(1), 1) }, &mut tr);
        net.send(SiteId(1), SiteId(2), Msg::AbortReq { tid: Tid::root(SiteId(1), 2) }, &mut tr);
        let mut seen = vec![];
        while let Some(Event::Deliver(e)) = net.pop() {
            if let Msg::AbortReq { tid } = e.payload {
                seen.push(tid.path()[0].serial);
            }
        }
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn lower_pair_delivered_first() {
        let mut net = Network::new(Topology::connected(sites(&[1, 2, 3])));
        let mut tr = Trace::new();
        net.send(SiteId(3), SiteId(1), msg(), &mut tr);
        net.send(SiteId(2), SiteId(1), msg(), &mut tr);
        let Some(Event::Deliver(e)) = net.pop() else { panic!() };
        assert_eq!(e.from, SiteId(2));
    }

    #[test]
    fn repartition_drops_in_flight_and_reports_changes() {
        let all = sites(&[1, 2, 3]);
        let mut net = Network::new(Topology::connected(all.clone()));
        let mut tr = Trace::new();
        net.send(SiteId(1), SiteId(2), msg(), &mut tr);
        net.send(SiteId(2), SiteId(3), msg(), &mut tr);
        let split = Topology::from_groups(&all, &[sites(&[1]), sites(&[2, 3])]).unwrap();
        let changed = net.repartition(split.clone(), &mut tr);
        assert_eq!(changed, vec![SiteId(1), SiteId(2), SiteId(3)]);
        assert_eq!(net.metrics.total(Counter::Dropped), 1);
        assert_eq!(net.pending().len(), 1);
        assert_eq!(split.partition_of(SiteId(1)), sites(&[1]));
        assert!(net.repartition(split, &mut tr).is_empty());
    }

    #[test]
    fn bad_topologies_are_rejected() {
        let all = sites(&[1, 2]);
        assert_eq!(
            Topology::from_groups(&all, &[sites(&[1, 2]), sites(&[2])]),
            Err(TopologyError::Overlap(SiteId(2)))
        );
        assert_eq!(
            Topology::from_groups(&all, &[sites(&[1])]),
            Err(TopologyError::Missing(SiteId(2)))
        );
        assert_eq!(
            Topology::from_groups(&all, &[sites(&[1, 2, 5])]),
            Err(TopologyError::Unknown(SiteId(5)))
        );
    }
}
