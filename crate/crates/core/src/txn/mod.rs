//! Transaction engine running at each simulated site.
//!
//! A [`Site`] plays three roles at once: home site for the transactions it
//! created, TSS for the file copies it stores, and using site for the
//! processes it runs. Handlers never block; a process that needs a reply
//! parks on a [`process::Wait`] and is resumed by the reply handler.

mod abort;
mod access;
mod commit;
mod partition;
pub mod process;
mod two_phase;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::filestore::{DurableStore, FileName, FileState, Page};
use crate::ids::{Pid, SiteId, Tid};
use crate::msg::{FileEntry, Msg};
use crate::net::Metrics;
use crate::tlock::{LockEvent, LockTable};
use crate::trace::{Trace, TraceKind};

pub use process::{ExitSpec, Instr, Process, Script, Wait};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Undefined,
    Committed,
    Aborted,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Undefined => "undefined",
            Status::Committed => "committed",
            Status::Aborted => "aborted",
        })
    }
}

/// A value a script variable can hold: a completion code from a call, or a
/// child process's exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Value {
    Committed,
    Aborted,
    /// The called top-level transaction was partitioned away.
    Unknown,
    Ok,
    Fail,
}

impl Value {
    pub fn is_success(self) -> bool {
        matches!(self, Value::Committed | Value::Ok)
    }

    pub fn parse(s: &str) -> Option<Value> {
        Some(match s {
            "committed" => Value::Committed,
            "aborted" => Value::Aborted,
            "unknown" => Value::Unknown,
            "ok" => Value::Ok,
            "fail" => Value::Fail,
            _ => return None,
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Value::Committed => "committed",
            Value::Aborted => "aborted",
            Value::Unknown => "unknown",
            Value::Ok => "ok",
            Value::Fail => "fail",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Member {
    /// The subtransaction this member is currently waiting on.
    pub subtrans: Option<Tid>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxnPhase {
    Running,
    /// REQCOMMIT sent, waiting for GRTCOMMIT.
    AwaitGrant,
    /// TSSCOMMIT sent to `pending` (subtransaction).
    SubCommitting { pending: BTreeSet<SiteId>, failed: bool },
    /// TSSCOMMIT sent to `pending` (top-level).
    TopCommitting { pending: BTreeSet<SiteId>, failed: bool },
    /// Two-phase commit, phase one.
    Preparing { pending: BTreeSet<(FileName, SiteId)> },
    /// Past the commit point; waiting for acknowledgements.
    Decided { unacked: BTreeSet<(FileName, SiteId)> },
    Aborting {
        children: BTreeSet<Tid>,
        tss: Option<BTreeSet<SiteId>>,
        /// Sites that sent FORCEABT and want RFORCEABT.
        force_requesters: BTreeSet<SiteId>,
    },
}

/// Home-site record of one transaction.
#[derive(Clone, Debug)]
pub struct TransRecord {
    pub tid: Tid,
    pub status: Status,
    pub caller: Pid,
    pub top_pid: Pid,
    pub members: BTreeMap<Pid, Member>,
    pub files: Vec<FileEntry>,
    /// Children that received GRTCOMMIT and whose outcome the caller has not
    /// yet reported.
    pub granted: BTreeSet<Tid>,
    pub phase: TxnPhase,
}

impl TransRecord {
    /// Adds a participant file, deduplicating on (file, TSS) and keeping the
    /// stronger mode.
    pub fn add_file(&mut self, entry: FileEntry) {
        match self
            .files
            .iter_mut()
            .find(|e| e.file == entry.file && e.tss == entry.tss)
        {
            Some(e) => e.mode = e.mode.stronger(entry.mode),
            None => self.files.push(entry),
        }
    }

    pub fn tss_sites(&self) -> BTreeSet<SiteId> {
        self.files.iter().map(|e| e.tss).collect()
    }

    pub fn files_at(&self, tss: SiteId) -> Vec<FileName> {
        self.files
            .iter()
            .filter(|e| e.tss == tss)
            .map(|e| e.file.clone())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Write,
}

/// A successful page access, recorded at the TSS when it happens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub tid: Tid,
    pub file: FileName,
    pub site: SiteId,
    pub kind: OpKind,
    pub page: usize,
    pub content: Page,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    pub retry_limit: u32,
    /// Simulated time between lock retries.
    pub retry_delay: u64,
    /// (file, TSS) pairs whose participant votes no in two-phase commit.
    pub refuse_prepare: BTreeSet<(FileName, SiteId)>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            retry_limit: 3,
            retry_delay: 2,
            refuse_prepare: BTreeSet::new(),
        }
    }
}

/// Final observable state of a root (non-transactional) process.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProcResult {
    pub vars: BTreeMap<String, Value>,
    /// `None` while the process has not exited.
    pub exit: Option<bool>,
}

/// State shared by every site: configuration, allocators and the records
/// the oracles read.
#[derive(Debug, Default)]
pub struct Env {
    pub config: Config,
    pub scripts: BTreeMap<String, Arc<Script>>,
    next_tid: BTreeMap<SiteId, u32>,
    next_pid: BTreeMap<SiteId, u32>,
    pub ops: Vec<OpRecord>,
    pub outcomes: BTreeMap<Tid, Status>,
    pub commit_points: BTreeSet<Tid>,
    /// Durable applies made while handling the current event; `None` marks a
    /// plain close.
    pub applies: Vec<Option<Tid>>,
    /// Durable installs made outside any transaction.
    pub plain_installs: u64,
    pub results: BTreeMap<String, ProcResult>,
}

impl Env {
    pub fn new(config: Config, scripts: BTreeMap<String, Arc<Script>>) -> Self {
        Env {
            config,
            scripts,
            ..Env::default()
        }
    }

    pub fn alloc_tid_serial(&mut self, site: SiteId) -> u32 {
        let n = self.next_tid.entry(site).or_default();
        *n += 1;
        *n
    }

    pub fn alloc_pid(&mut self, site: SiteId) -> Pid {
        let n = self.next_pid.entry(site).or_default();
        *n += 1;
        Pid::new(site, *n)
    }
}

/// Handler context: everything a site handler may touch besides its own
/// state. Outgoing messages and timers are buffered and dispatched by the
/// world after the handler returns.
pub struct Cx<'a> {
    pub site: SiteId,
    pub out: Vec<(SiteId, Msg)>,
    pub wakes: Vec<(Pid, u64, u64)>,
    pub trace: &'a mut Trace,
    pub durable: &'a mut DurableStore,
    pub metrics: &'a mut Metrics,
    pub env: &'a mut Env,
}

impl<'a> Cx<'a> {
    pub fn new(
        site: SiteId,
        trace: &'a mut Trace,
        durable: &'a mut DurableStore,
        metrics: &'a mut Metrics,
        env: &'a mut Env,
    ) -> Self {
        Cx {
            site,
            out: Vec::new(),
            wakes: Vec::new(),
            trace,
            durable,
            metrics,
            env,
        }
    }

    pub fn send(&mut self, to: SiteId, msg: Msg) {
        self.out.push((to, msg));
    }

    pub fn note(&mut self, kind: TraceKind, detail: impl Into<String>) {
        self.trace.push(Some(self.site), kind, detail);
    }

    pub fn lock_events(&mut self, ev: Vec<LockEvent>) {
        for e in ev {
            self.trace.push(Some(self.site), TraceKind::Lock, e.to_string());
        }
    }

    pub fn wake(&mut self, pid: Pid, token: u64, delay: u64) {
        self.wakes.push((pid, token, delay));
    }

    pub fn set_outcome(&mut self, tid: &Tid, status: Status) {
        self.env.outcomes.insert(tid.clone(), status);
        self.note(TraceKind::Status, format!("tid={tid} status={status}"));
    }
}

/// Per-site state.
#[derive(Debug)]
pub struct Site {
    pub id: SiteId,
    /// Sites this site believes it can reach (its site table).
    pub table: BTreeSet<SiteId>,
    pub locks: LockTable,
    pub procs: BTreeMap<Pid, Process>,
    pub trans: BTreeMap<Tid, TransRecord>,
    /// Coordinator commit records: participants still to acknowledge.
    pub coord_log: BTreeMap<Tid, BTreeSet<(FileName, SiteId)>>,
    /// Participant prepare records: the state to install and the coordinator.
    pub prepared: BTreeMap<(Tid, FileName), (FileState, SiteId)>,
    /// Buffers of files opened outside any transaction.
    pub plain: BTreeMap<(Pid, FileName), FileState>,
}

impl Site {
    pub fn new(id: SiteId, table: BTreeSet<SiteId>) -> Self {
        Site {
            id,
            table,
            locks: LockTable::new(),
            procs: BTreeMap::new(),
            trans: BTreeMap::new(),
            coord_log: BTreeMap::new(),
            prepared: BTreeMap::new(),
            plain: BTreeMap::new(),
        }
    }

    pub fn reachable(&self, s: SiteId) -> bool {
        self.table.contains(&s)
    }

    /// True iff every transaction on `t`'s path, `t` included, is homed at a
    /// reachable site.
    pub fn chain_reachable(&self, t: &Tid) -> bool {
        t.ancestor_sites().all(|s| self.reachable(s))
    }

    pub fn handle(&mut self, from: SiteId, msg: Msg, cx: &mut Cx) {
        match msg {
            Msg::Open { tid, pid, file, mode } => self.on_open(tid, pid, file, mode, cx),
            Msg::OpenR { pid, file, granted } => self.on_open_reply(pid, file, granted, cx),
            Msg::Read { tid, pid, file, page } => self.on_read(tid, pid, file, page, cx),
            Msg::ReadR { pid, file, result } => self.on_read_reply(pid, file, result, cx),
            Msg::Write { tid, pid, file, page, content } => {
                self.on_write(tid, pid, file, page, content, cx)
            }
            Msg::WriteR { pid, file, result } => self.on_write_reply(pid, file, result, cx),
            Msg::Close { tid, pid, file } => self.on_close(tid, pid, file, cx),
            Msg::CloseR { pid, file, .. } => self.on_close_reply(pid, file, cx),
            Msg::Relcall { tid, caller, script } => self.on_relcall(tid, caller, script, cx),
            Msg::ForkReq { tid, parent, child, script, stage } => {
                self.on_fork_req(tid, parent, child, script, stage, cx)
            }
            Msg::ForkR { parent, child, ok } => self.on_fork_reply(parent, child, ok, cx),
            Msg::MemberUpd { tid, pid, update } => self.on_member_update(from, tid, pid, update, cx),
            Msg::MemberUpdR { pid } => self.on_member_update_reply(pid, cx),
            Msg::ChildExit { parent, child, success } => {
                self.on_child_exit(parent, child, success, cx)
            }
            Msg::Destroy { pid } => self.destroy_local(pid, cx),
            Msg::AbortReq { tid } => self.abort_transaction(&tid, None, cx),
            Msg::ReqCommit { child, files } => self.on_req_commit(child, files, cx),
            Msg::GrtCommit { child } => self.on_grant_commit(child, cx),
            Msg::TssCommit { tid, files } => self.on_tss_commit(from, tid, files, cx),
            Msg::RTssCommit { tid, ok } => self.on_tss_commit_reply(from, tid, ok, cx),
            Msg::SubCommit { tid, caller } => self.on_completion(tid, caller, Value::Committed, false, cx),
            Msg::SubCmtFail { tid, caller } => self.on_completion(tid, caller, Value::Aborted, true, cx),
            Msg::SubAbort { tid, caller } | Msg::TopAbort { tid, caller } => {
                self.on_completion(tid, caller, Value::Aborted, false, cx)
            }
            Msg::TopCommit { tid, caller } => self.on_completion(tid, caller, Value::Committed, false, cx),
            Msg::ForceAbt { tid } => self.abort_transaction(&tid, Some(from), cx),
            Msg::RForceAbt { tid } => self.on_force_abort_reply(tid, cx),
            Msg::TssAbort { tid, files } => self.on_tss_abort(from, tid, files, cx),
            Msg::RTssAbort { tid } => self.on_tss_abort_reply(from, tid, cx),
            Msg::Prepare { tid, file } => self.on_prepare(from, tid, file, cx),
            Msg::Vote { tid, file, yes } => self.on_vote(from, tid, file, yes, cx),
            Msg::Commit { tid, file } => self.on_commit(from, tid, file, cx),
            Msg::Ack { tid, file } => self.on_ack(from, tid, file, cx),
            Msg::Inquire { tid, file } => self.on_inquire(from, tid, file, cx),
            Msg::Propagate { tid, file, state } => self.on_propagate(tid, file, state, cx),
        }
    }
}
