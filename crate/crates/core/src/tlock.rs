//! Per-file-copy lock and recovery records kept at a transaction
//! synchronization site (TSS).
//!
//! A [`TLock`] combines the holders of a file, its read retainers, and the
//! version stack of write retainers. The stack is ordered by transaction
//! depth: every entry's transaction is a proper ancestor of the entry above
//! it, so the inferiors of any transaction always form a contiguous run at
//! the top of the stack.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::filestore::{FileName, FileState, Page, PageError};
use crate::ids::{SiteId, Tid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockMode {
    Read,
    Write,
}

impl LockMode {
    pub fn stronger(self, other: LockMode) -> LockMode {
        self.max(other)
    }
}

impl fmt::Display for LockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LockMode::Read => "READ",
            LockMode::Write => "WRITE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadHolder {
    pub tid: Tid,
    pub using: BTreeSet<SiteId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteHolder {
    pub tid: Tid,
    pub saved: FileState,
    pub using: BTreeSet<SiteId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Holders {
    #[default]
    None,
    Read(Vec<ReadHolder>),
    Write(WriteHolder),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackEntry {
    pub tid: Tid,
    pub saved: FileState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpenOutcome {
    Granted,
    Denied,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("request denied: transaction holds no sufficient lock")]
    Denied,
    #[error(transparent)]
    Page(#[from] PageError),
}

/// Everything observable a t-lock operation did, for traces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LockEvent {
    Created { file: FileName, version: String },
    Grant { file: FileName, tid: Tid, mode: LockMode },
    Deny { file: FileName, tid: Tid, mode: LockMode },
    Close { file: FileName, tid: Tid },
    ForceClose { file: FileName, tid: Tid },
    StaleClose { file: FileName, tid: Tid },
    Push { file: FileName, tid: Tid, version: String },
    Pop { file: FileName, tid: Tid, version: String },
    Relabel { file: FileName, from: Tid, to: Tid },
    Restore { file: FileName, version: String },
    Committing { file: FileName, tid: Tid, version: String },
    Discard { file: FileName },
}

impl fmt::Display for LockEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockEvent::Created { file, version } => write!(f, "create file={file} v={version}"),
            LockEvent::Grant { file, tid, mode } => {
                write!(f, "grant file={file} tid={tid} mode={mode}")
            }
            LockEvent::Deny { file, tid, mode } => {
                write!(f, "deny file={file} tid={tid} mode={mode}")
            }
            LockEvent::Close { file, tid } => write!(f, "close file={file} tid={tid}"),
            LockEvent::ForceClose { file, tid } => write!(f, "force-close file={file} tid={tid}"),
            LockEvent::StaleClose { file, tid } => write!(f, "stale-close file={file} tid={tid}"),
            LockEvent::Push { file, tid, version } => {
                write!(f, "push file={file} tid={tid} v={version}")
            }
            LockEvent::Pop { file, tid, version } => {
                write!(f, "pop file={file} tid={tid} v={version}")
            }
            LockEvent::Relabel { file, from, to } => {
                write!(f, "relabel file={file} from={from} to={to}")
            }
            LockEvent::Restore { file, version } => write!(f, "restore file={file} v={version}"),
            LockEvent::Committing { file, tid, version } => {
                write!(f, "committing file={file} tid={tid} v={version}")
            }
            LockEvent::Discard { file } => write!(f, "discard file={file}"),
        }
    }
}

/// Lock and recovery state for one physical copy of a file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TLock {
    file: FileName,
    current: FileState,
    /// Durable contents when the t-lock was created. Restored if a top-level
    /// transaction aborts after its own commit already emptied the stack.
    original: FileState,
    holders: Holders,
    read_retainers: Vec<Tid>,
    write_retainers: Vec<StackEntry>,
    /// Top-level transaction whose commit has begun: stack already popped,
    /// waiting for two-phase commit to make `current` durable.
    committing: Option<Tid>,
}

impl TLock {
    pub fn new(file: FileName, durable: FileState) -> Self {
        TLock {
            file,
            current: durable.clone(),
            original: durable,
            holders: Holders::None,
            read_retainers: Vec::new(),
            write_retainers: Vec::new(),
            committing: None,
        }
    }

    pub fn file(&self) -> &FileName {
        &self.file
    }

    pub fn current(&self) -> &FileState {
        &self.current
    }

    pub fn original(&self) -> &FileState {
        &self.original
    }

    pub fn holders(&self) -> &Holders {
        &self.holders
    }

    pub fn read_retainers(&self) -> &[Tid] {
        &self.read_retainers
    }

    pub fn write_retainers(&self) -> &[StackEntry] {
        &self.write_retainers
    }

    pub fn committing(&self) -> Option<&Tid> {
        self.committing.as_ref()
    }

    /// Test and fuzzing hook: build an arbitrary t-lock state.
    pub fn from_parts(
        file: FileName,
        current: FileState,
        original: FileState,
        holders: Holders,
        read_retainers: Vec<Tid>,
        write_retainers: Vec<StackEntry>,
    ) -> Self {
        TLock {
            file,
            current,
            original,
            holders,
            read_retainers,
            write_retainers,
            committing: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.holders, Holders::None)
            && self.read_retainers.is_empty()
            && self.write_retainers.is_empty()
            && self.committing.is_none()
    }

    /// Which lock `t` holds, if any.
    pub fn held_mode(&self, t: &Tid) -> Option<LockMode> {
        match &self.holders {
            Holders::Write(h) if &h.tid == t => Some(LockMode::Write),
            Holders::Read(rs) if rs.iter().any(|r| &r.tid == t) => Some(LockMode::Read),
            _ => None,
        }
    }

    pub fn holder_tids(&self) -> Vec<Tid> {
        match &self.holders {
            Holders::None => vec![],
            Holders::Read(rs) => rs.iter().map(|r| r.tid.clone()).collect(),
            Holders::Write(h) => vec![h.tid.clone()],
        }
    }

    /// Every transaction the t-lock mentions.
    pub fn mentioned_tids(&self) -> Vec<Tid> {
        let mut v = self.holder_tids();
        v.extend(self.read_retainers.iter().cloned());
        v.extend(self.write_retainers.iter().map(|e| e.tid.clone()));
        v.extend(self.committing.iter().cloned());
        v
    }

    fn in_write_retainers(&self, t: &Tid) -> bool {
        self.write_retainers.iter().any(|e| &e.tid == t)
    }

    fn top_is(&self, t: &Tid) -> bool {
        self.write_retainers.last().is_some_and(|e| &e.tid == t)
    }

    /// Lock request from transaction `t` on behalf of a process at `us`.
    pub fn open(
        &mut self,
        t: &Tid,
        mode: LockMode,
        us: SiteId,
        ev: &mut Vec<LockEvent>,
    ) -> OpenOutcome {
        let granted = self.committing.is_none()
            && match mode {
                LockMode::Write => {
                    let no_other_holder = match &self.holders {
                        Holders::None => true,
                        Holders::Read(rs) => rs.iter().all(|r| &r.tid == t),
                        Holders::Write(h) => &h.tid == t,
                    };
                    no_other_holder
                        && self.read_retainers.iter().all(|r| r.is_ancestor_of(t))
                        && self.write_retainers.iter().all(|e| e.tid.is_ancestor_of(t))
                }
                LockMode::Read => {
                    let no_other_writer = match &self.holders {
                        Holders::Write(h) => &h.tid == t,
                        _ => true,
                    };
                    no_other_writer && self.write_retainers.iter().all(|e| e.tid.is_ancestor_of(t))
                }
            };
        if !granted {
            ev.push(LockEvent::Deny {
                file: self.file.clone(),
                tid: t.clone(),
                mode,
            });
            return OpenOutcome::Denied;
        }
        match (mode, &mut self.holders) {
            (_, Holders::Write(h)) => {
                h.using.insert(us);
            }
            (LockMode::Write, holders) => {
                // Either no holder, or `t` upgrading its own read hold.
                let mut using = BTreeSet::from([us]);
                if let Holders::Read(rs) = holders {
                    for r in rs.drain(..) {
                        using.extend(r.using);
                    }
                }
                *holders = Holders::Write(WriteHolder {
                    tid: t.clone(),
                    saved: self.current.snapshot(),
                    using,
                });
            }
            (LockMode::Read, Holders::Read(rs)) => match rs.iter_mut().find(|r| &r.tid == t) {
                Some(r) => {
                    r.using.insert(us);
                }
                None => rs.push(ReadHolder {
                    tid: t.clone(),
                    using: BTreeSet::from([us]),
                }),
            },
            (LockMode::Read, holders) => {
                *holders = Holders::Read(vec![ReadHolder {
                    tid: t.clone(),
                    using: BTreeSet::from([us]),
                }]);
            }
        }
        ev.push(LockEvent::Grant {
            file: self.file.clone(),
            tid: t.clone(),
            mode,
        });
        OpenOutcome::Granted
    }

    /// Turns `t`'s held lock into a retained one. Returns false, changing
    /// nothing, when `t` holds no lock (a stale close).
    pub fn close(&mut self, t: &Tid, ev: &mut Vec<LockEvent>) -> bool {
        match &mut self.holders {
            Holders::Read(rs) if rs.iter().any(|r| &r.tid == t) => {
                rs.retain(|r| &r.tid != t);
                if rs.is_empty() {
                    self.holders = Holders::None;
                }
                if !self.read_retainers.contains(t) && !self.in_write_retainers(t) {
                    self.read_retainers.push(t.clone());
                }
            }
            Holders::Write(h) if &h.tid == t => {
                let Holders::Write(h) = std::mem::take(&mut self.holders) else {
                    unreachable!()
                };
                if !self.top_is(t) {
                    ev.push(LockEvent::Push {
                        file: self.file.clone(),
                        tid: t.clone(),
                        version: h.saved.version_id(),
                    });
                    self.write_retainers.push(StackEntry {
                        tid: h.tid,
                        saved: h.saved,
                    });
                }
                self.read_retainers.retain(|r| r != t);
            }
            _ => {
                ev.push(LockEvent::StaleClose {
                    file: self.file.clone(),
                    tid: t.clone(),
                });
                return false;
            }
        }
        ev.push(LockEvent::Close {
            file: self.file.clone(),
            tid: t.clone(),
        });
        true
    }

    /// Closes every holder matching `dead`. Dead read holders are dropped
    /// without being retained; a dead write holder goes through the normal
    /// close so its saved state lands on the stack for the caller to pop.
    fn close_holders_where(&mut self, dead: impl Fn(&Tid) -> bool, ev: &mut Vec<LockEvent>) {
        match &mut self.holders {
            Holders::Read(rs) => {
                let file = self.file.clone();
                rs.retain(|r| {
                    let kill = dead(&r.tid);
                    if kill {
                        ev.push(LockEvent::ForceClose {
                            file: file.clone(),
                            tid: r.tid.clone(),
                        });
                    }
                    !kill
                });
                if rs.is_empty() {
                    self.holders = Holders::None;
                }
            }
            Holders::Write(h) if dead(&h.tid) => {
                let tid = h.tid.clone();
                ev.push(LockEvent::ForceClose {
                    file: self.file.clone(),
                    tid: tid.clone(),
                });
                self.close(&tid, ev);
            }
            _ => {}
        }
    }

    /// Pops while the top entry satisfies `pred`; restores the current state
    /// from the last entry popped.
    fn pop_while(&mut self, mut pred: impl FnMut(&Tid) -> bool, ev: &mut Vec<LockEvent>) {
        let mut last = None;
        while let Some(top) = self.write_retainers.last() {
            if !pred(&top.tid) {
                break;
            }
            let e = self.write_retainers.pop().expect("nonempty");
            ev.push(LockEvent::Pop {
                file: self.file.clone(),
                tid: e.tid.clone(),
                version: e.saved.version_id(),
            });
            last = Some(e.saved);
        }
        if let Some(saved) = last {
            ev.push(LockEvent::Restore {
                file: self.file.clone(),
                version: saved.version_id(),
            });
            self.current = saved;
        }
    }

    /// Commit of `t` at this file: inferiors still present are treated as
    /// aborted, then `t`'s locks pass to its parent (or, for a top-level
    /// transaction, are released pending two-phase commit).
    pub fn commit(&mut self, t: &Tid, ev: &mut Vec<LockEvent>) {
        if self.held_mode(t).is_some() {
            self.close(t, ev);
        }
        self.close_holders_where(|h| h.is_inferior_of(t), ev);
        self.read_retainers.retain(|r| !r.is_inferior_of(t));
        self.pop_while(|top| top.is_inferior_of(t), ev);

        match t.parent() {
            Some(parent) => {
                if let Some(pos) = self.read_retainers.iter().position(|r| r == t) {
                    self.read_retainers.remove(pos);
                    if !self.read_retainers.contains(&parent) && !self.in_write_retainers(&parent) {
                        self.read_retainers.push(parent);
                    }
                } else if self.top_is(t) {
                    if self.in_write_retainers(&parent) {
                        let e = self.write_retainers.pop().expect("top exists");
                        ev.push(LockEvent::Pop {
                            file: self.file.clone(),
                            tid: e.tid,
                            version: e.saved.version_id(),
                        });
                    } else {
                        let top = self.write_retainers.last_mut().expect("top exists");
                        top.tid = parent.clone();
                        ev.push(LockEvent::Relabel {
                            file: self.file.clone(),
                            from: t.clone(),
                            to: parent.clone(),
                        });
                        // A transaction retains in at most one mode.
                        self.read_retainers.retain(|r| r != &parent);
                    }
                }
            }
            None => {
                if let Some(pos) = self.read_retainers.iter().position(|r| r == t) {
                    self.read_retainers.remove(pos);
                } else if self.top_is(t) {
                    let e = self.write_retainers.pop().expect("top exists");
                    ev.push(LockEvent::Pop {
                        file: self.file.clone(),
                        tid: e.tid,
                        version: e.saved.version_id(),
                    });
                    self.committing = Some(t.clone());
                    ev.push(LockEvent::Committing {
                        file: self.file.clone(),
                        tid: t.clone(),
                        version: self.current.version_id(),
                    });
                }
            }
        }
    }

    /// Abort of `t`: undoes the effects of `t` and all its descendants on
    /// this file. Idempotent, and harmless for transactions the t-lock
    /// has never seen.
    pub fn abort(&mut self, t: &Tid, ev: &mut Vec<LockEvent>) {
        self.close_holders_where(|h| h.is_descendant_of(t), ev);
        self.read_retainers.retain(|r| !r.is_descendant_of(t));
        self.pop_while(|top| top.is_descendant_of(t), ev);
        if self.committing.as_ref().is_some_and(|c| c.is_descendant_of(t)) {
            self.committing = None;
            self.current = self.original.clone();
            ev.push(LockEvent::Restore {
                file: self.file.clone(),
                version: self.current.version_id(),
            });
        }
    }

    /// File-site-driven orphan removal after a topology change. A
    /// transaction is dead if any ancestor's home site is inaccessible, or
    /// if it descends from a holder using the file from an inaccessible site.
    pub fn sweep(&mut self, accessible: &BTreeSet<SiteId>, ev: &mut Vec<LockEvent>) {
        let lost_us: Vec<Tid> = match &self.holders {
            Holders::None => vec![],
            Holders::Read(rs) => rs
                .iter()
                .filter(|r| !r.using.is_subset(accessible))
                .map(|r| r.tid.clone())
                .collect(),
            Holders::Write(h) if !h.using.is_subset(accessible) => vec![h.tid.clone()],
            Holders::Write(_) => vec![],
        };
        let dead = |t: &Tid| {
            t.ancestor_sites().any(|s| !accessible.contains(&s))
                || lost_us.iter().any(|u| t.is_descendant_of(u))
        };
        self.close_holders_where(&dead, ev);
        self.read_retainers.retain(|r| !dead(r));
        if let Some(bottom) = self.write_retainers.iter().position(|e| dead(&e.tid)) {
            let depth = self.write_retainers.len() - bottom;
            let mut n = 0;
            self.pop_while(
                |_| {
                    n += 1;
                    n <= depth
                },
                ev,
            );
        }
    }

    /// Unilateral abort of an unprepared top-level commit whose coordinator
    /// is unreachable.
    pub fn abandon_commit(&mut self, ev: &mut Vec<LockEvent>) -> Option<Tid> {
        let t = self.committing.take()?;
        self.current = self.original.clone();
        ev.push(LockEvent::Restore {
            file: self.file.clone(),
            version: self.current.version_id(),
        });
        Some(t)
    }

    pub fn read(&self, t: &Tid, page: usize) -> Result<Page, AccessError> {
        if self.committing.is_some() || self.held_mode(t).is_none() {
            return Err(AccessError::Denied);
        }
        Ok(self.current.read_page(page)?)
    }

    pub fn write(&mut self, t: &Tid, page: usize, content: Page) -> Result<(), AccessError> {
        if self.committing.is_some() || self.held_mode(t) != Some(LockMode::Write) {
            return Err(AccessError::Denied);
        }
        self.current = self.current.write_page(page, content)?;
        Ok(())
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.render().as_bytes()).into()
    }

    /// Canonical one-line rendering, used by traces and scenario assertions.
    pub fn render(&self) -> String {
        let holders = match &self.holders {
            Holders::None => "-".to_string(),
            Holders::Read(rs) => rs
                .iter()
                .map(|r| format!("R:{}", r.tid))
                .collect::<Vec<_>>()
                .join(","),
            Holders::Write(h) => format!("W:{}@{}", h.tid, h.saved.version_id()),
        };
        let rr = if self.read_retainers.is_empty() {
            "-".to_string()
        } else {
            self.read_retainers
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let wr = if self.write_retainers.is_empty() {
            "-".to_string()
        } else {
            self.write_retainers
                .iter()
                .map(|e| format!("{}@{}", e.tid, e.saved.version_id()))
                .collect::<Vec<_>>()
                .join(",")
        };
        let committing = self
            .committing
            .as_ref()
            .map(|t| t.to_string())
            .unwrap_or_else(|| "-".into());
        format!(
            "file={} current={} holders={} rr={} wr={} committing={}",
            self.file,
            self.current.version_id(),
            holders,
            rr,
            wr,
            committing
        )
    }
}

/// All t-locks managed by one TSS.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LockTable {
    locks: BTreeMap<FileName, TLock>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, file: &FileName) -> Option<&TLock> {
        self.locks.get(file)
    }

    pub fn get_mut(&mut self, file: &FileName) -> Option<&mut TLock> {
        self.locks.get_mut(file)
    }

    pub fn insert(&mut self, lock: TLock) {
        self.locks.insert(lock.file.clone(), lock);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FileName, &TLock)> {
        self.locks.iter()
    }

    pub fn files(&self) -> Vec<FileName> {
        self.locks.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.locks.is_empty()
    }

    fn discard_if_idle(&mut self, file: &FileName, ev: &mut Vec<LockEvent>) {
        if self.locks.get(file).is_some_and(TLock::is_idle) {
            self.locks.remove(file);
            ev.push(LockEvent::Discard { file: file.clone() });
        }
    }

    /// Lock request. The t-lock is created on first use, its current state
    /// taken from `durable`.
    pub fn open(
        &mut self,
        file: &FileName,
        durable: impl FnOnce() -> FileState,
        t: &Tid,
        mode: LockMode,
        us: SiteId,
        ev: &mut Vec<LockEvent>,
    ) -> OpenOutcome {
        let lock = self.locks.entry(file.clone()).or_insert_with(|| {
            let state = durable();
            ev.push(LockEvent::Created {
                file: file.clone(),
                version: state.version_id(),
            });
            TLock::new(file.clone(), state)
        });
        let out = lock.open(t, mode, us, ev);
        self.discard_if_idle(file, ev);
        out
    }

    pub fn close(&mut self, file: &FileName, t: &Tid, ev: &mut Vec<LockEvent>) -> bool {
        match self.locks.get_mut(file) {
            Some(lock) => lock.close(t, ev),
            None => {
                ev.push(LockEvent::StaleClose {
                    file: file.clone(),
                    tid: t.clone(),
                });
                false
            }
        }
    }

    pub fn commit(&mut self, file: &FileName, t: &Tid, ev: &mut Vec<LockEvent>) {
        if let Some(lock) = self.locks.get_mut(file) {
            lock.commit(t, ev);
            self.discard_if_idle(file, ev);
        }
    }

    pub fn abort(&mut self, file: &FileName, t: &Tid, ev: &mut Vec<LockEvent>) {
        if let Some(lock) = self.locks.get_mut(file) {
            lock.abort(t, ev);
            self.discard_if_idle(file, ev);
        }
    }

    pub fn sweep_file(&mut self, file: &FileName, accessible: &BTreeSet<SiteId>, ev: &mut Vec<LockEvent>) {
        if let Some(lock) = self.locks.get_mut(file) {
            lock.sweep(accessible, ev);
            self.discard_if_idle(file, ev);
        }
    }

    pub fn sweep(&mut self, accessible: &BTreeSet<SiteId>, ev: &mut Vec<LockEvent>) {
        for file in self.files() {
            self.sweep_file(&file, accessible, ev);
        }
    }

    pub fn abandon_commit(&mut self, file: &FileName, ev: &mut Vec<LockEvent>) -> Option<Tid> {
        let t = self.locks.get_mut(file)?.abandon_commit(ev);
        self.discard_if_idle(file, ev);
        t
    }

    /// Removes the t-lock after the second phase of two-phase commit.
    pub fn remove(&mut self, file: &FileName, ev: &mut Vec<LockEvent>) -> Option<TLock> {
        let lock = self.locks.remove(file)?;
        ev.push(LockEvent::Discard { file: file.clone() });
        Some(lock)
    }

    pub fn read(&self, file: &FileName, t: &Tid, page: usize) -> Result<Page, AccessError> {
        self.locks.get(file).ok_or(AccessError::Denied)?.read(t, page)
    }

    pub fn write(
        &mut self,
        file: &FileName,
        t: &Tid,
        page: usize,
        content: Page,
    ) -> Result<(), AccessError> {
        self.locks
            .get_mut(file)
            .ok_or(AccessError::Denied)?
            .write(t, page, content)
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for lock in self.locks.values() {
            h.update(lock.digest());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::TidElem;

    fn tid(elems: &[(u32, u32)]) -> Tid {
        Tid::from_path(
            elems
                .iter()
                .map(|&(s, n)| TidElem {
                    site: SiteId(s),
                    serial: n,
                })
                .collect(),
        )
    }

    fn f0() -> FileState {
        FileState::new(1, 16, vec![Page::from("f0")])
    }

    fn state(text: &str) -> FileState {
        FileState::new(1, 16, vec![Page::from(text)])
    }

    const US: SiteId = SiteId(1);

    /// T1 and its child T2 both modified F.
    fn parent_and_child_wrote() -> (TLock, Tid, Tid) {
        let t1 = tid(&[(1, 1)]);
        let t2 = tid(&[(1, 1), (2, 1)]);
        let mut ev = vec![];
        let mut lock = TLock::new("F".into(), f0());
        assert_eq!(lock.open(&t1, LockMode::Write, US, &mut ev), OpenOutcome::Granted);
        lock.write(&t1, 0, "f1".into()).unwrap();
        lock.close(&t1, &mut ev);
        assert_eq!(lock.open(&t2, LockMode::Write, US, &mut ev), OpenOutcome::Granted);
        lock.write(&t2, 0, "f2".into()).unwrap();
        lock.close(&t2, &mut ev);
        (lock, t1, t2)
    }

    #[test]
    fn fresh_write_open_saves_current_state() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        assert_eq!(lock.open(&t1, LockMode::Write, US, &mut vec![]), OpenOutcome::Granted);
        match lock.holders() {
            Holders::Write(h) => {
                assert_eq!(h.tid, t1);
                assert_eq!(h.saved, f0());
                assert!(h.using.contains(&US));
            }
            other => panic!("unexpected holders {other:?}"),
        }
    }

    #[test]
    fn child_may_open_what_ancestor_retains() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.close(&t1, &mut ev);
        assert_eq!(
            lock.open(&t1.child(SiteId(1), 2), LockMode::Write, US, &mut ev),
            OpenOutcome::Granted
        );
    }

    #[test]
    fn non_descendant_cannot_read_write_retained_file() {
        let root = tid(&[(1, 1)]);
        let t1 = root.child(SiteId(1), 2);
        let t3 = root.child(SiteId(1), 3);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.close(&t1, &mut ev);
        assert_eq!(lock.open(&t3, LockMode::Read, US, &mut ev), OpenOutcome::Denied);
        assert_eq!(lock.open(&root, LockMode::Read, US, &mut ev), OpenOutcome::Denied);
    }

    #[test]
    fn close_pushes_saved_state() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.write(&t1, 0, "f1".into()).unwrap();
        lock.close(&t1, &mut ev);
        assert_eq!(lock.holders(), &Holders::None);
        assert_eq!(
            lock.write_retainers(),
            &[StackEntry {
                tid: t1,
                saved: f0()
            }]
        );
    }

    #[test]
    fn reopen_after_child_commit_does_not_duplicate_entry() {
        let t1 = tid(&[(1, 1)]);
        let t2 = t1.child(SiteId(2), 1);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t2, LockMode::Write, US, &mut ev);
        lock.write(&t2, 0, "f1".into()).unwrap();
        lock.close(&t2, &mut ev);
        lock.commit(&t2, &mut ev);
        assert_eq!(lock.write_retainers().len(), 1);
        assert_eq!(lock.write_retainers()[0].tid, t1);
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.write(&t1, 0, "f2".into()).unwrap();
        lock.close(&t1, &mut ev);
        assert_eq!(lock.write_retainers().len(), 1);
        assert_eq!(lock.write_retainers()[0].saved, f0());
    }

    #[test]
    fn double_close_of_reader_is_ignored() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Read, US, &mut ev);
        assert!(lock.close(&t1, &mut ev));
        let before = lock.clone();
        assert!(!lock.close(&t1, &mut ev));
        assert_eq!(lock, before);
        assert_eq!(lock.read_retainers(), &[t1]);
    }

    #[test]
    fn child_commit_pops_when_parent_on_stack() {
        let (mut lock, t1, t2) = parent_and_child_wrote();
        lock.commit(&t2, &mut vec![]);
        assert_eq!(
            lock.write_retainers(),
            &[StackEntry {
                tid: t1,
                saved: f0()
            }]
        );
        assert_eq!(lock.current(), &state("f2"));
    }

    #[test]
    fn child_abort_restores_its_saved_state() {
        let (mut lock, t1, t2) = parent_and_child_wrote();
        lock.abort(&t2, &mut vec![]);
        assert_eq!(
            lock.write_retainers(),
            &[StackEntry {
                tid: t1,
                saved: f0()
            }]
        );
        assert_eq!(lock.current(), &state("f1"));
        let once = lock.clone();
        lock.abort(&t2, &mut vec![]);
        assert_eq!(lock, once);
    }

    #[test]
    fn top_level_commit_leaves_final_state_for_two_phase_commit() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.write(&t1, 0, "fin".into()).unwrap();
        lock.close(&t1, &mut ev);
        lock.commit(&t1, &mut ev);
        assert!(lock.write_retainers().is_empty());
        assert_eq!(lock.current(), &state("fin"));
        assert_eq!(lock.committing(), Some(&t1));
        // nobody may look at the committing state
        let other = tid(&[(2, 1)]);
        assert_eq!(lock.open(&other, LockMode::Read, US, &mut ev), OpenOutcome::Denied);
    }

    #[test]
    fn top_level_abort_after_own_commit_restores_original() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, US, &mut ev);
        lock.write(&t1, 0, "fin".into()).unwrap();
        lock.close(&t1, &mut ev);
        lock.commit(&t1, &mut ev);
        lock.abort(&t1, &mut ev);
        assert_eq!(lock.current(), &f0());
        assert!(lock.is_idle());
    }

    #[test]
    fn commit_cleans_unswept_orphan_inferiors() {
        // stack [(t1,F0),(t2,F1),(t3,F2)]: t3 is an aborted child of t2
        // that nobody cleaned up
        let t1 = tid(&[(1, 1)]);
        let t2 = t1.child(SiteId(2), 1);
        let t3 = t2.child(SiteId(3), 1);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        for (t, text) in [(&t1, "f1"), (&t2, "f2"), (&t3, "f3")] {
            lock.open(t, LockMode::Write, US, &mut ev);
            lock.write(t, 0, text.into()).unwrap();
            lock.close(t, &mut ev);
        }
        lock.commit(&t2, &mut ev);
        assert_eq!(
            lock.write_retainers(),
            &[StackEntry {
                tid: t1,
                saved: f0()
            }]
        );
        assert_eq!(lock.current(), &state("f2"));
    }

    #[test]
    fn read_retention_passes_to_parent() {
        let t1 = tid(&[(1, 1)]);
        let t2 = t1.child(SiteId(1), 2);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t2, LockMode::Read, US, &mut ev);
        lock.close(&t2, &mut ev);
        lock.commit(&t2, &mut ev);
        assert_eq!(lock.read_retainers(), &[t1.clone()]);
        lock.commit(&t1, &mut ev);
        assert!(lock.is_idle());
    }

    #[test]
    fn sweep_severed_chain() {
        let t1 = tid(&[(1, 1)]);
        let t2 = t1.child(SiteId(2), 1);
        let t3 = t2.child(SiteId(3), 1);
        let t4 = t3.child(SiteId(4), 1);
        let mut lock = TLock::new("F".into(), state("F0"));
        let mut ev = vec![];
        for (t, text) in [(&t1, "F1"), (&t2, "F2"), (&t3, "F3"), (&t4, "F4")] {
            lock.open(t, LockMode::Write, US, &mut ev);
            lock.write(t, 0, text.into()).unwrap();
            lock.close(t, &mut ev);
        }
        let accessible = BTreeSet::from([SiteId(1), SiteId(4), SiteId(5)]);
        lock.sweep(&accessible, &mut ev);
        assert_eq!(
            lock.write_retainers(),
            &[StackEntry {
                tid: t1,
                saved: state("F0")
            }]
        );
        assert_eq!(lock.current(), &state("F1"));
    }

    #[test]
    fn sweep_with_everyone_reachable_changes_nothing() {
        let (mut lock, _, _) = parent_and_child_wrote();
        let before = lock.clone();
        lock.sweep(&BTreeSet::from([SiteId(1), SiteId(2)]), &mut vec![]);
        assert_eq!(lock, before);
    }

    #[test]
    fn sweep_drops_read_retainers_with_lost_ancestors() {
        let t1 = tid(&[(1, 1)]);
        let t2 = t1.child(SiteId(2), 1);
        let mut lock = TLock::from_parts(
            "F".into(),
            f0(),
            f0(),
            Holders::None,
            vec![t1.clone(), t2],
            vec![],
        );
        lock.sweep(&BTreeSet::from([SiteId(1), SiteId(3)]), &mut vec![]);
        assert_eq!(lock.read_retainers(), &[t1]);
    }

    #[test]
    fn sweep_treats_lost_using_site_as_dead() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Write, SiteId(2), &mut ev);
        lock.write(&t1, 0, "x".into()).unwrap();
        lock.sweep(&BTreeSet::from([SiteId(1), SiteId(3)]), &mut ev);
        assert!(lock.is_idle());
        assert_eq!(lock.current(), &f0());
    }

    #[test]
    fn access_requires_sufficient_lock() {
        let t1 = tid(&[(1, 1)]);
        let t2 = tid(&[(2, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Read, US, &mut ev);
        assert_eq!(lock.read(&t1, 0).unwrap(), Page::from("f0"));
        assert_eq!(lock.write(&t1, 0, "x".into()), Err(AccessError::Denied));
        assert_eq!(lock.read(&t2, 0), Err(AccessError::Denied));
        assert!(matches!(lock.read(&t1, 9), Err(AccessError::Page(_))));
        lock.abort(&t1, &mut ev);
        // a swept orphan's late write is refused
        assert_eq!(lock.write(&t1, 0, "x".into()), Err(AccessError::Denied));
    }

    #[test]
    fn lock_table_discards_idle_locks() {
        let t1 = tid(&[(1, 1)]);
        let file = FileName::new("F");
        let mut table = LockTable::new();
        let mut ev = vec![];
        table.open(&file, f0, &t1, LockMode::Read, US, &mut ev);
        table.close(&file, &t1, &mut ev);
        table.commit(&file, &t1, &mut ev);
        assert!(table.get(&file).is_none());
        assert!(ev.iter().any(|e| matches!(e, LockEvent::Discard { .. })));
    }

    #[test]
    fn reader_may_upgrade_to_writer() {
        let t1 = tid(&[(1, 1)]);
        let mut lock = TLock::new("F".into(), f0());
        let mut ev = vec![];
        lock.open(&t1, LockMode::Read, SiteId(1), &mut ev);
        assert_eq!(lock.open(&t1, LockMode::Write, SiteId(2), &mut ev), OpenOutcome::Granted);
        match lock.holders() {
            Holders::Write(h) => assert_eq!(h.using, BTreeSet::from([SiteId(1), SiteId(2)])),
            other => panic!("{other:?}"),
        }
    }
}
