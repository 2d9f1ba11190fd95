//! Process scripts and their execution at the using site.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::filestore::{FileName, Page};
use crate::ids::{Pid, SiteId, Tid};
use crate::msg::{FileEntry, ForkStage, MemberUpdate, Msg};
use crate::tlock::{AccessError, LockMode};
use crate::trace::TraceKind;

use super::{Cx, Member, ProcResult, Site, TransRecord, TxnPhase, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitSpec {
    Ok,
    Fail,
    /// Succeed iff every named variable holds a success value.
    All(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    /// Invoke `script` as a (sub)transaction at `at` (default: here) and wait.
    Relcall { script: String, at: Option<SiteId>, var: Option<String> },
    /// Start `script` as a new process in the same transaction.
    Fork { script: String, at: Option<SiteId>, name: String },
    /// Wait for the forked process `name` to exit.
    Wait { name: String, var: Option<String> },
    Open { file: FileName, mode: LockMode },
    Read { file: FileName, page: usize },
    Write { file: FileName, page: usize, content: Page },
    Close { file: FileName },
    Sleep(u64),
    Exit(ExitSpec),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub name: String,
    pub body: Vec<Instr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpenFile {
    pub tss: SiteId,
    pub mode: LockMode,
}

/// What a parked process is waiting for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Wait {
    Timer,
    Open { file: FileName, tss: SiteId, mode: LockMode },
    /// Lock granted; waiting for the home site to record the participant file.
    HomeUpdate { home: SiteId, file: FileName, tss: SiteId, mode: LockMode },
    Access { file: FileName, tss: SiteId },
    Close { file: FileName, tss: SiteId },
    Relcall { tid: Tid, var: Option<String> },
    Fork { name: String, child: Pid, via: BTreeSet<SiteId> },
    Child { pid: Pid, var: Option<String> },
}

#[derive(Clone, Debug)]
pub struct Process {
    pub pid: Pid,
    pub label: String,
    pub script: Arc<Script>,
    pub pc: usize,
    pub vars: BTreeMap<String, Value>,
    pub txn: Option<Tid>,
    pub parent: Option<Pid>,
    pub children: BTreeMap<String, Pid>,
    pub exits: BTreeMap<Pid, bool>,
    pub open: BTreeMap<FileName, OpenFile>,
    pub wait: Option<Wait>,
    pub token: u64,
    pub retries: u32,
    pub exiting: Option<bool>,
    pub halted: bool,
    /// Root processes report their variables under this name.
    pub root: bool,
}

impl Process {
    pub fn new(pid: Pid, label: String, script: Arc<Script>, txn: Option<Tid>, parent: Option<Pid>) -> Self {
        Process {
            pid,
            label,
            script,
            pc: 0,
            vars: BTreeMap::new(),
            txn,
            parent,
            children: BTreeMap::new(),
            exits: BTreeMap::new(),
            open: BTreeMap::new(),
            wait: None,
            token: 0,
            retries: 0,
            exiting: None,
            halted: false,
            root: false,
        }
    }

    fn set_var(&mut self, var: &Option<String>, v: Value) {
        if let Some(name) = var {
            self.vars.insert(name.clone(), v);
        }
    }

    pub fn is_blocked(&self) -> bool {
        !self.halted && self.wait.is_some()
    }
}

impl Site {
    /// Adds a root process that starts after `delay`.
    pub fn spawn_root(&mut self, label: &str, script: Arc<Script>, delay: u64, cx: &mut Cx) -> Pid {
        let pid = cx.env.alloc_pid(self.id);
        let mut p = Process::new(pid, label.to_string(), script, None, None);
        p.root = true;
        p.wait = Some(Wait::Timer);
        p.token = 1;
        self.procs.insert(pid, p);
        cx.env.results.insert(label.to_string(), ProcResult::default());
        cx.wake(pid, 1, delay);
        pid
    }

    pub(crate) fn on_wake(&mut self, pid: Pid, token: u64, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        if p.halted || p.token != token || p.wait != Some(Wait::Timer) {
            return;
        }
        p.wait = None;
        self.run(pid, cx);
    }

    fn start_process(&mut self, mut p: Process, cx: &mut Cx) {
        let pid = p.pid;
        cx.note(
            TraceKind::Process,
            format!(
                "start pid={pid} label={} tid={}",
                p.label,
                p.txn.as_ref().map(|t| t.to_string()).unwrap_or_else(|| "-".into())
            ),
        );
        p.wait = None;
        self.procs.insert(pid, p);
        self.run(pid, cx);
    }

    /// Executes instructions until the process parks or halts.
    pub(crate) fn run(&mut self, pid: Pid, cx: &mut Cx) {
        loop {
            let Some(p) = self.procs.get_mut(&pid) else { return };
            if p.halted || p.wait.is_some() {
                return;
            }
            if let Some(success) = p.exiting {
                self.continue_exit(pid, success, cx);
                return;
            }
            let Some(instr) = p.script.body.get(p.pc).cloned() else {
                self.begin_exit(pid, true, cx);
                return;
            };
            p.pc += 1;
            self.exec(pid, instr, cx);
        }
    }

    fn exec(&mut self, pid: Pid, instr: Instr, cx: &mut Cx) {
        let here = self.id;
        match instr {
            Instr::Relcall { script, at, var } => self.exec_relcall(pid, script, at.unwrap_or(here), var, cx),
            Instr::Fork { script, at, name } => self.exec_fork(pid, script, at.unwrap_or(here), name, cx),
            Instr::Wait { name, var } => {
                let p = self.procs.get_mut(&pid).expect("running process");
                match p.children.get(&name).copied() {
                    None => p.set_var(&var, Value::Fail),
                    Some(child) => match p.exits.remove(&child) {
                        Some(ok) => p.set_var(&var, if ok { Value::Ok } else { Value::Fail }),
                        None => p.wait = Some(Wait::Child { pid: child, var }),
                    },
                }
            }
            Instr::Open { file, mode } => self.exec_open(pid, file, mode, cx),
            Instr::Read { file, page } => {
                let p = &self.procs[&pid];
                let Some(of) = p.open.get(&file).copied() else {
                    return self.begin_exit(pid, false, cx);
                };
                if !self.reachable(of.tss) {
                    cx.note(TraceKind::Process, format!("tss-unreachable pid={pid} file={file}"));
                    return self.access_lost(pid, file, cx);
                }
                let msg = Msg::Read { tid: p.txn.clone(), pid, file: file.clone(), page };
                self.procs.get_mut(&pid).unwrap().wait = Some(Wait::Access { file, tss: of.tss });
                cx.send(of.tss, msg);
            }
            Instr::Write { file, page, content } => {
                let p = &self.procs[&pid];
                let Some(of) = p.open.get(&file).copied() else {
                    return self.begin_exit(pid, false, cx);
                };
                if !self.reachable(of.tss) {
                    cx.note(TraceKind::Process, format!("tss-unreachable pid={pid} file={file}"));
                    return self.access_lost(pid, file, cx);
                }
                let msg = Msg::Write { tid: p.txn.clone(), pid, file: file.clone(), page, content };
                self.procs.get_mut(&pid).unwrap().wait = Some(Wait::Access { file, tss: of.tss });
                cx.send(of.tss, msg);
            }
            Instr::Close { file } => {
                let p = &self.procs[&pid];
                let Some(of) = p.open.get(&file).copied() else { return };
                if !self.reachable(of.tss) {
                    cx.note(TraceKind::Process, format!("tss-unreachable pid={pid} file={file}"));
                    return self.access_lost(pid, file, cx);
                }
                let msg = Msg::Close { tid: p.txn.clone(), pid, file: file.clone() };
                self.procs.get_mut(&pid).unwrap().wait = Some(Wait::Close { file, tss: of.tss });
                cx.send(of.tss, msg);
            }
            Instr::Sleep(n) => self.park_timer(pid, n, cx),
            Instr::Exit(spec) => {
                let p = &self.procs[&pid];
                let success = match &spec {
                    ExitSpec::Ok => true,
                    ExitSpec::Fail => false,
                    ExitSpec::All(vars) => vars
                        .iter()
                        .all(|v| p.vars.get(v).is_some_and(|x| x.is_success())),
                };
                self.begin_exit(pid, success, cx);
            }
        }
    }

    fn park_timer(&mut self, pid: Pid, delay: u64, cx: &mut Cx) {
        let p = self.procs.get_mut(&pid).expect("running process");
        p.token += 1;
        p.wait = Some(Wait::Timer);
        cx.wake(pid, p.token, delay);
    }

    fn exec_relcall(&mut self, pid: Pid, script: String, at: SiteId, var: Option<String>, cx: &mut Cx) {
        if !self.reachable(at) {
            self.procs.get_mut(&pid).unwrap().set_var(&var, Value::Aborted);
            return;
        }
        let serial = cx.env.alloc_tid_serial(at);
        let p = self.procs.get_mut(&pid).unwrap();
        let tid = match &p.txn {
            Some(t) => t.child(at, serial),
            None => Tid::root(at, serial),
        };
        p.wait = Some(Wait::Relcall { tid: tid.clone(), var });
        if let Some(t0) = p.txn.clone() {
            self.member_update(&t0, pid, MemberUpdate::SetSubtrans(tid.clone()), cx);
        }
        cx.send(at, Msg::Relcall { tid, caller: pid, script });
    }

    fn exec_fork(&mut self, pid: Pid, script: String, at: SiteId, name: String, cx: &mut Cx) {
        if !self.reachable(at) {
            return;
        }
        let child = cx.env.alloc_pid(at);
        let txn = self.procs[&pid].txn.clone();
        let here = self.id;
        let create = |cx: &mut Cx| {
            cx.send(
                at,
                Msg::ForkReq { tid: txn.clone(), parent: pid, child, script: script.clone(), stage: ForkStage::Create },
            )
        };
        let via = match &txn {
            None => {
                create(cx);
                BTreeSet::from([at])
            }
            Some(t) if t.home_site() == here => {
                let Some(rec) = self.trans.get_mut(t) else { return };
                rec.members.insert(child, Member::default());
                create(cx);
                BTreeSet::from([at])
            }
            Some(t) => {
                let home = t.home_site();
                cx.send(
                    home,
                    Msg::ForkReq {
                        tid: txn.clone(),
                        parent: pid,
                        child,
                        script: script.clone(),
                        stage: ForkStage::Register { target: at },
                    },
                );
                BTreeSet::from([home, at])
            }
        };
        self.procs.get_mut(&pid).unwrap().wait = Some(Wait::Fork { name, child, via });
    }

    fn exec_open(&mut self, pid: Pid, file: FileName, mode: LockMode, cx: &mut Cx) {
        let p = &self.procs[&pid];
        if p.open.contains_key(&file) {
            return;
        }
        let tss = cx
            .durable
            .sites_of(&file)
            .into_iter()
            .find(|s| self.table.contains(s));
        let Some(tss) = tss else {
            cx.note(TraceKind::Process, format!("open-unavailable pid={pid} file={file}"));
            return self.begin_exit(pid, false, cx);
        };
        let msg = Msg::Open { tid: p.txn.clone(), pid, file: file.clone(), mode };
        self.procs.get_mut(&pid).unwrap().wait = Some(Wait::Open { file, tss, mode });
        cx.send(tss, msg);
    }

    /// Sends a member update to the home site of `t`, or applies it directly
    /// when that is this site.
    fn member_update(&mut self, t: &Tid, pid: Pid, update: MemberUpdate, cx: &mut Cx) {
        let home = t.home_site();
        if home == self.id {
            self.apply_member_update(t, pid, update, cx);
        } else {
            cx.send(home, Msg::MemberUpd { tid: t.clone(), pid, update });
        }
    }

    fn apply_member_update(&mut self, t: &Tid, pid: Pid, update: MemberUpdate, cx: &mut Cx) {
        match update {
            MemberUpdate::AddFile(e) => {
                let reachable = self.reachable(e.tss);
                if let Some(rec) = self.trans.get_mut(t) {
                    if rec.phase == TxnPhase::Running {
                        rec.add_file(e);
                        if !reachable {
                            cx.note(TraceKind::Note, format!("storage-unreachable tid={t}"));
                            self.abort_transaction(t, None, cx);
                        }
                    }
                }
            }
            MemberUpdate::SetSubtrans(c) => {
                if let Some(m) = self.trans.get_mut(t).and_then(|r| r.members.get_mut(&pid)) {
                    m.subtrans = Some(c);
                }
            }
            MemberUpdate::ResetSubtrans { child, failed, severed } => {
                let Some(rec) = self.trans.get_mut(t) else { return };
                if let Some(m) = rec.members.get_mut(&pid) {
                    if m.subtrans.as_ref() == Some(&child) {
                        m.subtrans = None;
                    }
                }
                let was_granted = rec.granted.remove(&child);
                if failed || (severed && was_granted) {
                    cx.note(
                        TraceKind::Note,
                        format!("parent-abort tid={t} child={child} failed={failed} severed={severed}"),
                    );
                    self.abort_transaction(t, None, cx);
                }
            }
            MemberUpdate::Exit { success } => self.home_member_exit(t, pid, success, cx),
        }
    }

    pub(crate) fn on_member_update(&mut self, from: SiteId, t: Tid, pid: Pid, update: MemberUpdate, cx: &mut Cx) {
        let reply = matches!(update, MemberUpdate::AddFile(_));
        self.apply_member_update(&t, pid, update, cx);
        if reply {
            cx.send(from, Msg::MemberUpdR { pid });
        }
    }

    pub(crate) fn on_member_update_reply(&mut self, pid: Pid, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        if let Some(Wait::HomeUpdate { file, tss, mode, .. }) = p.wait.clone() {
            p.open.insert(file, OpenFile { tss, mode });
            p.wait = None;
            self.run(pid, cx);
        }
    }

    pub(crate) fn on_relcall(&mut self, tid: Tid, caller: Pid, script: String, cx: &mut Cx) {
        let Some(body) = cx.env.scripts.get(&script).cloned() else {
            cx.note(TraceKind::Note, format!("unknown-script tid={tid} script={script}"));
            return;
        };
        if !tid.superior_sites().all(|s| self.reachable(s)) {
            cx.note(TraceKind::Note, format!("refuse-orphan-call tid={tid}"));
            return;
        }
        let top_pid = cx.env.alloc_pid(self.id);
        let rec = TransRecord {
            tid: tid.clone(),
            status: super::Status::Undefined,
            caller,
            top_pid,
            members: BTreeMap::from([(top_pid, Member::default())]),
            files: Vec::new(),
            granted: BTreeSet::new(),
            phase: TxnPhase::Running,
        };
        self.trans.insert(tid.clone(), rec);
        cx.set_outcome(&tid, super::Status::Undefined);
        let p = Process::new(top_pid, format!("{script}@{tid}"), body, Some(tid), None);
        self.start_process(p, cx);
    }

    pub(crate) fn on_fork_req(
        &mut self,
        tid: Option<Tid>,
        parent: Pid,
        child: Pid,
        script: String,
        stage: ForkStage,
        cx: &mut Cx,
    ) {
        match stage {
            ForkStage::Register { target } => {
                let t = tid.clone().expect("registration needs a transaction");
                let ok = self.reachable(target)
                    && match self.trans.get_mut(&t) {
                        Some(rec) if rec.phase == TxnPhase::Running => {
                            rec.members.insert(child, Member::default());
                            true
                        }
                        _ => false,
                    };
                if !ok {
                    cx.send(parent.site, Msg::ForkR { parent, child, ok: false });
                    return;
                }
                cx.send(target, Msg::ForkReq { tid, parent, child, script, stage: ForkStage::Create });
            }
            ForkStage::Create => {
                let body = cx.env.scripts.get(&script).cloned();
                let alive = tid.as_ref().map_or(true, |t| self.chain_reachable(t));
                let Some(body) = body.filter(|_| alive) else {
                    cx.send(parent.site, Msg::ForkR { parent, child, ok: false });
                    return;
                };
                cx.send(parent.site, Msg::ForkR { parent, child, ok: true });
                let label = format!("{script}@{child}");
                let p = Process::new(child, label, body, tid, Some(parent));
                self.start_process(p, cx);
            }
        }
    }

    pub(crate) fn on_fork_reply(&mut self, parent: Pid, child: Pid, ok: bool, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&parent) else { return };
        let Some(Wait::Fork { name, child: c, .. }) = p.wait.clone() else { return };
        if c != child {
            return;
        }
        if ok {
            p.children.insert(name, child);
        }
        p.wait = None;
        self.run(parent, cx);
    }

    pub(crate) fn on_child_exit(&mut self, parent: Pid, child: Pid, success: bool, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&parent) else { return };
        if p.halted {
            return;
        }
        match p.wait.clone() {
            Some(Wait::Child { pid, var }) if pid == child => {
                p.set_var(&var, if success { Value::Ok } else { Value::Fail });
                p.wait = None;
                self.run(parent, cx);
            }
            _ => {
                p.exits.insert(child, success);
            }
        }
    }

    /// Completion code for a call made by `caller`.
    pub(crate) fn on_completion(&mut self, tid: Tid, caller: Pid, code: Value, failed: bool, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&caller) else { return };
        if p.halted {
            return;
        }
        let Some(Wait::Relcall { tid: waiting, var }) = p.wait.clone() else { return };
        if waiting != tid {
            return;
        }
        self.deliver_completion(caller, tid, var, code, failed, false, cx);
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn deliver_completion(
        &mut self,
        caller: Pid,
        child: Tid,
        var: Option<String>,
        code: Value,
        failed: bool,
        severed: bool,
        cx: &mut Cx,
    ) {
        let p = self.procs.get_mut(&caller).expect("caller exists");
        p.set_var(&var, code);
        p.wait = None;
        let txn = p.txn.clone();
        cx.note(TraceKind::Process, format!("completion pid={caller} tid={child} code={code}"));
        if let Some(t0) = txn {
            self.member_update(&t0, caller, MemberUpdate::ResetSubtrans { child, failed, severed }, cx);
        }
        self.run(caller, cx);
    }

    pub(crate) fn on_open_reply(&mut self, pid: Pid, file: FileName, granted: bool, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        let Some(Wait::Open { file: f, tss, mode }) = p.wait.clone() else { return };
        if p.halted || f != file {
            return;
        }
        if !granted {
            p.retries += 1;
            if p.retries > cx.env.config.retry_limit {
                p.wait = None;
                p.retries = 0;
                cx.note(TraceKind::Process, format!("open-failed pid={pid} file={file}"));
                return self.begin_exit(pid, false, cx);
            }
            p.pc -= 1;
            let delay = cx.env.config.retry_delay;
            return self.park_timer(pid, delay, cx);
        }
        p.retries = 0;
        match p.txn.clone() {
            Some(t) if t.home_site() != self.id => {
                let home = t.home_site();
                p.wait = Some(Wait::HomeUpdate { home, file: file.clone(), tss, mode });
                cx.send(
                    home,
                    Msg::MemberUpd { tid: t, pid, update: MemberUpdate::AddFile(FileEntry { file, tss, mode }) },
                );
            }
            Some(t) => {
                p.open.insert(file.clone(), OpenFile { tss, mode });
                p.wait = None;
                self.apply_member_update(&t, pid, MemberUpdate::AddFile(FileEntry { file, tss, mode }), cx);
                self.run(pid, cx);
            }
            None => {
                p.open.insert(file, OpenFile { tss, mode });
                p.wait = None;
                self.run(pid, cx);
            }
        }
    }

    /// The file's TSS refused the access or cannot be reached: the enclosing
    /// transaction aborts and the process is destroyed. A plain process just
    /// forgets the file and fails.
    fn access_lost(&mut self, pid: Pid, file: FileName, cx: &mut Cx) {
        let p = self.procs.get_mut(&pid).expect("live process");
        p.wait = None;
        match p.txn.clone() {
            Some(t) => {
                if t.home_site() == self.id {
                    self.abort_transaction(&t, None, cx);
                } else if self.reachable(t.home_site()) {
                    cx.send(t.home_site(), Msg::AbortReq { tid: t });
                }
                self.destroy_local(pid, cx);
            }
            None => {
                p.open.remove(&file);
                if p.exiting.is_none() {
                    self.begin_exit(pid, false, cx);
                } else {
                    let success = p.exiting.unwrap_or(false);
                    self.continue_exit(pid, success, cx);
                }
            }
        }
    }

    fn on_access_reply(&mut self, pid: Pid, file: FileName, err: Option<AccessError>, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        if p.halted || !matches!(&p.wait, Some(Wait::Access { file: f, .. }) if *f == file) {
            return;
        }
        p.wait = None;
        match err {
            None => self.run(pid, cx),
            Some(AccessError::Denied) => {
                cx.note(TraceKind::Process, format!("access-denied pid={pid} file={file}"));
                self.access_lost(pid, file, cx);
            }
            Some(AccessError::Page(e)) => {
                cx.note(TraceKind::Process, format!("page-error pid={pid} file={file} {e}"));
                self.begin_exit(pid, false, cx);
            }
        }
    }

    pub(crate) fn on_read_reply(&mut self, pid: Pid, file: FileName, result: Result<Page, AccessError>, cx: &mut Cx) {
        self.on_access_reply(pid, file, result.err(), cx);
    }

    pub(crate) fn on_write_reply(&mut self, pid: Pid, file: FileName, result: Result<(), AccessError>, cx: &mut Cx) {
        self.on_access_reply(pid, file, result.err(), cx);
    }

    pub(crate) fn on_close_reply(&mut self, pid: Pid, file: FileName, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        if p.halted || !matches!(&p.wait, Some(Wait::Close { file: f, .. }) if *f == file) {
            return;
        }
        p.open.remove(&file);
        p.wait = None;
        self.run(pid, cx);
    }

    pub(crate) fn begin_exit(&mut self, pid: Pid, success: bool, cx: &mut Cx) {
        let p = self.procs.get_mut(&pid).expect("exiting process");
        p.exiting = Some(success);
        self.continue_exit(pid, success, cx);
    }

    /// Closes the remaining open files one at a time, then finishes the exit.
    fn continue_exit(&mut self, pid: Pid, success: bool, cx: &mut Cx) {
        let p = self.procs.get_mut(&pid).expect("exiting process");
        if let Some((file, of)) = p.open.iter().next().map(|(f, o)| (f.clone(), *o)) {
            if !self.table.contains(&of.tss) {
                cx.note(TraceKind::Process, format!("tss-unreachable pid={pid} file={file}"));
                return self.access_lost(pid, file, cx);
            }
            let p = self.procs.get_mut(&pid).expect("exiting process");
            let msg = Msg::Close { tid: p.txn.clone(), pid, file: file.clone() };
            p.wait = Some(Wait::Close { file, tss: of.tss });
            cx.send(of.tss, msg);
            return;
        }
        p.halted = true;
        p.wait = None;
        cx.note(TraceKind::Process, format!("exit pid={pid} success={success}"));
        if p.root {
            let r = cx.env.results.entry(p.label.clone()).or_default();
            r.vars = p.vars.clone();
            r.exit = Some(success);
        }
        let parent = p.parent;
        if let Some(t) = p.txn.clone() {
            self.member_update(&t, pid, MemberUpdate::Exit { success }, cx);
        }
        if let Some(parent) = parent {
            cx.send(parent.site, Msg::ChildExit { parent, child: pid, success });
        }
    }

    /// Home-site bookkeeping when a member process finishes.
    fn home_member_exit(&mut self, t: &Tid, pid: Pid, success: bool, cx: &mut Cx) {
        let Some(rec) = self.trans.get_mut(t) else { return };
        if rec.phase != TxnPhase::Running || rec.members.remove(&pid).is_none() {
            return;
        }
        if pid != rec.top_pid {
            return;
        }
        let mut success = success;
        if success && !rec.members.is_empty() {
            cx.note(TraceKind::Note, format!("incomplete-children tid={t}"));
            success = false;
        }
        if success {
            self.begin_commit(t, cx);
        } else {
            self.abort_transaction(t, None, cx);
        }
    }

    /// Halts a process without running its exit path.
    pub(crate) fn destroy_local(&mut self, pid: Pid, cx: &mut Cx) {
        let Some(p) = self.procs.get_mut(&pid) else { return };
        if p.halted {
            return;
        }
        p.halted = true;
        p.wait = None;
        cx.note(TraceKind::Process, format!("destroy pid={pid}"));
    }
}
