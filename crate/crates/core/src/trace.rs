//! Append-only execution trace.

use std::fmt;

use crate::ids::SiteId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Send,
    Local,
    Drop,
    Lock,
    Status,
    DurableWrite,
    Sweep,
    Topology,
    Process,
    Fault,
    Note,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Send => "send",
            TraceKind::Local => "local",
            TraceKind::Drop => "drop",
            TraceKind::Lock => "lock",
            TraceKind::Status => "status",
            TraceKind::DurableWrite => "durable-write",
            TraceKind::Sweep => "sweep",
            TraceKind::Topology => "topology",
            TraceKind::Process => "proc",
            TraceKind::Fault => "fault",
            TraceKind::Note => "note",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    /// Index of the event being handled when this record was written.
    pub step: u64,
    /// Simulated time of that event.
    pub time: u64,
    pub site: Option<SiteId>,
    pub kind: TraceKind,
    pub detail: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06} t={} ", self.step, self.time)?;
        match self.site {
            Some(s) => write!(f, "{s}")?,
            None => f.write_str("--")?,
        }
        write!(f, " {} {}", self.kind.name(), self.detail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
    step: u64,
    time: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_clock(&mut self, step: u64, time: u64) {
        debug_assert!(step >= self.step);
        self.step = step;
        self.time = time;
    }

    pub fn push(&mut self, site: Option<SiteId>, kind: TraceKind, detail: impl Into<String>) {
        self.records.push(TraceRecord {
            step: self.step,
            time: self.time,
            site,
            kind,
            detail: detail.into(),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One record per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_is_stable() {
        let mut t = Trace::new();
        t.set_clock(3, 7);
        t.push(Some(SiteId(2)), TraceKind::Send, "TSSCOMMIT s2->s3");
        t.push(None, TraceKind::Fault, "heal");
        assert_eq!(
            t.render(),
            "000003 t=7 s2 send TSSCOMMIT s2->s3\n000003 t=7 -- fault heal\n"
        );
    }
}
