//! Protocol messages exchanged between simulated sites.

use std::fmt;

use crate::filestore::{FileName, FileState, Page};
use crate::ids::{Pid, SiteId, Tid};
use crate::tlock::{AccessError, LockMode};

/// One participant file copy of a transaction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FileEntry {
    pub file: FileName,
    pub tss: SiteId,
    pub mode: LockMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForkStage {
    /// Remote member asks the home site to register a new member.
    Register { target: SiteId },
    /// Home site (or a plain process) asks `target` to create the process.
    Create,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemberUpdate {
    AddFile(FileEntry),
    SetSubtrans(Tid),
    /// The caller learned the outcome of `child`. `failed` means the child's
    /// commit failed part way; `severed` means the caller gave up on it
    /// because the child became unreachable.
    ResetSubtrans { child: Tid, failed: bool, severed: bool },
    Exit { success: bool },
}

#[derive(Clone, Debug)]
pub enum Msg {
    Open { tid: Option<Tid>, pid: Pid, file: FileName, mode: LockMode },
    OpenR { pid: Pid, file: FileName, granted: bool },
    Read { tid: Option<Tid>, pid: Pid, file: FileName, page: usize },
    ReadR { pid: Pid, file: FileName, result: Result<Page, AccessError> },
    Write { tid: Option<Tid>, pid: Pid, file: FileName, page: usize, content: Page },
    WriteR { pid: Pid, file: FileName, result: Result<(), AccessError> },
    Close { tid: Option<Tid>, pid: Pid, file: FileName },
    CloseR { pid: Pid, file: FileName, plain: bool },

    Relcall { tid: Tid, caller: Pid, script: String },
    ForkReq { tid: Option<Tid>, parent: Pid, child: Pid, script: String, stage: ForkStage },
    ForkR { parent: Pid, child: Pid, ok: bool },
    MemberUpd { tid: Tid, pid: Pid, update: MemberUpdate },
    MemberUpdR { pid: Pid },
    ChildExit { parent: Pid, child: Pid, success: bool },
    Destroy { pid: Pid },
    AbortReq { tid: Tid },

    ReqCommit { child: Tid, files: Vec<FileEntry> },
    GrtCommit { child: Tid },
    TssCommit { tid: Tid, files: Vec<FileName> },
    RTssCommit { tid: Tid, ok: bool },
    SubCommit { tid: Tid, caller: Pid },
    SubCmtFail { tid: Tid, caller: Pid },
    ForceAbt { tid: Tid },
    RForceAbt { tid: Tid },
    TssAbort { tid: Tid, files: Vec<FileName> },
    RTssAbort { tid: Tid },
    SubAbort { tid: Tid, caller: Pid },
    TopAbort { tid: Tid, caller: Pid },
    TopCommit { tid: Tid, caller: Pid },

    Prepare { tid: Tid, file: FileName },
    Vote { tid: Tid, file: FileName, yes: bool },
    Commit { tid: Tid, file: FileName },
    Ack { tid: Tid, file: FileName },
    Inquire { tid: Tid, file: FileName },
    /// Committed contents pushed to another replica. `tid` is absent for a
    /// plain close.
    Propagate { tid: Option<Tid>, file: FileName, state: FileState },
}

/// Accounting bucket for message and durable-write counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Access,
    Control,
    SubCommit,
    LockCommit,
    Abort,
    /// Making updates durable: two-phase commit, or a plain close.
    Commit,
    Propagate,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Access,
        Phase::Control,
        Phase::SubCommit,
        Phase::LockCommit,
        Phase::Abort,
        Phase::Commit,
        Phase::Propagate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Access => "access",
            Phase::Control => "control",
            Phase::SubCommit => "subcommit",
            Phase::LockCommit => "lockcommit",
            Phase::Abort => "abort",
            Phase::Commit => "commit",
            Phase::Propagate => "propagate",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every message kind name, as used in traces and fault triggers.
pub const KINDS: &[&str] = &[
    "OPEN", "OPENR", "READ", "READR", "WRITE", "WRITER", "CLOSE", "CLOSER", "RELCALL", "FORKREQ",
    "FORKR", "MEMBERUPD", "MEMBERUPDR", "CHILDEXIT", "DESTROY", "ABORTREQ", "REQCOMMIT",
    "GRTCOMMIT", "TSSCOMMIT", "RTSSCOMMIT", "SUBCOMMIT", "SUBCMTFAIL", "FORCEABT", "RFORCEABT",
    "TSSABORT", "RTSSABORT", "SUBABORT", "TOPABORT", "TOPCOMMIT", "PREPARE", "VOTE", "COMMIT",
    "ACK", "INQUIRE", "PROPAGATE",
];

impl Msg {
    pub fn kind(&self) -> &'static str {
        match self {
            Msg::Open { .. } => "OPEN",
            Msg::OpenR { .. } => "OPENR",
            Msg::Read { .. } => "READ",
            Msg::ReadR { .. } => "READR",
            Msg::Write { .. } => "WRITE",
            Msg::WriteR { .. } => "WRITER",
            Msg::Close { .. } => "CLOSE",
            Msg::CloseR { .. } => "CLOSER",
            Msg::Relcall { .. } => "RELCALL",
            Msg::ForkReq { .. } => "FORKREQ",
            Msg::ForkR { .. } => "FORKR",
            Msg::MemberUpd { .. } => "MEMBERUPD",
            Msg::MemberUpdR { .. } => "MEMBERUPDR",
            Msg::ChildExit { .. } => "CHILDEXIT",
            Msg::Destroy { .. } => "DESTROY",
            Msg::AbortReq { .. } => "ABORTREQ",
            Msg::ReqCommit { .. } => "REQCOMMIT",
            Msg::GrtCommit { .. } => "GRTCOMMIT",
            Msg::TssCommit { .. } => "TSSCOMMIT",
            Msg::RTssCommit { .. } => "RTSSCOMMIT",
            Msg::SubCommit { .. } => "SUBCOMMIT",
            Msg::SubCmtFail { .. } => "SUBCMTFAIL",
            Msg::ForceAbt { .. } => "FORCEABT",
            Msg::RForceAbt { .. } => "RFORCEABT",
            Msg::TssAbort { .. } => "TSSABORT",
            Msg::RTssAbort { .. } => "RTSSABORT",
            Msg::SubAbort { .. } => "SUBABORT",
            Msg::TopAbort { .. } => "TOPABORT",
            Msg::TopCommit { .. } => "TOPCOMMIT",
            Msg::Prepare { .. } => "PREPARE",
            Msg::Vote { .. } => "VOTE",
            Msg::Commit { .. } => "COMMIT",
            Msg::Ack { .. } => "ACK",
            Msg::Inquire { .. } => "INQUIRE",
            Msg::Propagate { .. } => "PROPAGATE",
        }
    }

    pub fn phase(&self) -> Phase {
        match self {
            Msg::Close { tid: None, .. } | Msg::CloseR { plain: true, .. } => Phase::Commit,
            Msg::Open { .. }
            | Msg::OpenR { .. }
            | Msg::Read { .. }
            | Msg::ReadR { .. }
            | Msg::Write { .. }
            | Msg::WriteR { .. }
            | Msg::Close { .. }
            | Msg::CloseR { .. } => Phase::Access,
            Msg::Relcall { .. }
            | Msg::ForkReq { .. }
            | Msg::ForkR { .. }
            | Msg::MemberUpd { .. }
            | Msg::MemberUpdR { .. }
            | Msg::ChildExit { .. }
            | Msg::Destroy { .. }
            | Msg::AbortReq { .. }
            | Msg::TopCommit { .. } => Phase::Control,
            Msg::ReqCommit { .. }
            | Msg::GrtCommit { .. }
            | Msg::SubCommit { .. }
            | Msg::SubCmtFail { .. } => Phase::SubCommit,
            Msg::TssCommit { .. } | Msg::RTssCommit { .. } => Phase::LockCommit,
            Msg::ForceAbt { .. }
            | Msg::RForceAbt { .. }
            | Msg::TssAbort { .. }
            | Msg::RTssAbort { .. }
            | Msg::SubAbort { .. }
            | Msg::TopAbort { .. } => Phase::Abort,
            Msg::Prepare { .. }
            | Msg::Vote { .. }
            | Msg::Commit { .. }
            | Msg::Ack { .. }
            | Msg::Inquire { .. } => Phase::Commit,
            Msg::Propagate { .. } => Phase::Propagate,
        }
    }

    /// Short field summary for trace lines.
    pub fn detail(&self) -> String {
        fn opt(t: &Option<Tid>) -> String {
            t.as_ref().map(|t| t.to_string()).unwrap_or_else(|| "-".into())
        }
        fn names(files: &[FileName]) -> String {
            files.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(",")
        }
        match self {
            Msg::Open { tid, pid, file, mode } => {
                format!("tid={} pid={pid} file={file} mode={mode}", opt(tid))
            }
            Msg::OpenR { pid, file, granted } => format!("pid={pid} file={file} granted={granted}"),
            Msg::Read { tid, pid, file, page } => {
                format!("tid={} pid={pid} file={file} page={page}", opt(tid))
            }
            Msg::ReadR { pid, file, result } => {
                format!("pid={pid} file={file} ok={}", result.is_ok())
            }
            Msg::Write { tid, pid, file, page, .. } => {
                format!("tid={} pid={pid} file={file} page={page}", opt(tid))
            }
            Msg::WriteR { pid, file, result } => {
                format!("pid={pid} file={file} ok={}", result.is_ok())
            }
            Msg::Close { tid, pid, file } => format!("tid={} pid={pid} file={file}", opt(tid)),
            Msg::CloseR { pid, file, .. } => format!("pid={pid} file={file}"),
            Msg::Relcall { tid, caller, script } => {
                format!("tid={tid} caller={caller} script={script}")
            }
            Msg::ForkReq { tid, parent, child, stage, .. } => {
                let stage = match stage {
                    ForkStage::Register { target } => format!("register@{target}"),
                    ForkStage::Create => "create".into(),
                };
                format!("tid={} parent={parent} child={child} stage={stage}", opt(tid))
            }
            Msg::ForkR { parent, child, ok } => format!("parent={parent} child={child} ok={ok}"),
            Msg::MemberUpd { tid, pid, update } => {
                let u = match update {
                    MemberUpdate::AddFile(e) => format!("add-file={}@{}:{}", e.file, e.tss, e.mode),
                    MemberUpdate::SetSubtrans(c) => format!("subtrans={c}"),
                    MemberUpdate::ResetSubtrans { child, failed, severed } => {
                        format!("reset={child} failed={failed} severed={severed}")
                    }
                    MemberUpdate::Exit { success } => format!("exit={success}"),
                };
                format!("tid={tid} pid={pid} {u}")
            }
            Msg::MemberUpdR { pid } => format!("pid={pid}"),
            Msg::ChildExit { parent, child, success } => {
                format!("parent={parent} child={child} success={success}")
            }
            Msg::Destroy { pid } => format!("pid={pid}"),
            Msg::AbortReq { tid } => format!("tid={tid}"),
            Msg::ReqCommit { child, files } => format!(
                "tid={child} files={}",
                files
                    .iter()
                    .map(|e| format!("{}@{}:{}", e.file, e.tss, e.mode))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            Msg::GrtCommit { child } => format!("tid={child}"),
            Msg::TssCommit { tid, files } | Msg::TssAbort { tid, files } => {
                format!("tid={tid} files={}", names(files))
            }
            Msg::RTssCommit { tid, ok } => format!("tid={tid} ok={ok}"),
            Msg::SubCommit { tid, caller }
            | Msg::SubCmtFail { tid, caller }
            | Msg::SubAbort { tid, caller }
            | Msg::TopAbort { tid, caller }
            | Msg::TopCommit { tid, caller } => format!("tid={tid} caller={caller}"),
            Msg::ForceAbt { tid } | Msg::RForceAbt { tid } | Msg::RTssAbort { tid } => {
                format!("tid={tid}")
            }
            Msg::Prepare { tid, file }
            | Msg::Commit { tid, file }
            | Msg::Ack { tid, file }
            | Msg::Inquire { tid, file } => format!("tid={tid} file={file}"),
            Msg::Vote { tid, file, yes } => format!("tid={tid} file={file} yes={yes}"),
            Msg::Propagate { tid, file, state } => {
                format!("tid={} file={file} v={}", opt(tid), state.version_id())
            }
        }
    }
}

/// A message in flight between two distinct sites.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub from: SiteId,
    pub to: SiteId,
    pub seq: u64,
    pub payload: Msg,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_close_counts_as_commit_phase() {
        let pid = Pid::new(SiteId(1), 1);
        let plain = Msg::Close { tid: None, pid, file: "F".into() };
        let txn = Msg::Close { tid: Some(Tid::root(SiteId(1), 1)), pid, file: "F".into() };
        assert_eq!(plain.phase(), Phase::Commit);
        assert_eq!(txn.phase(), Phase::Access);
    }

    #[test]
    fn kind_list_is_complete() {
        let tid = Tid::root(SiteId(1), 1);
        for m in [
            Msg::Prepare { tid: tid.clone(), file: "F".into() },
            Msg::SubCmtFail { tid: tid.clone(), caller: Pid::new(SiteId(1), 1) },
            Msg::RForceAbt { tid },
        ] {
            assert!(KINDS.contains(&m.kind()));
        }
        for p in Phase::ALL {
            assert_eq!(Phase::parse(p.name()), Some(p));
        }
    }
}
