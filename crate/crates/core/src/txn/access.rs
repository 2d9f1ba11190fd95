//! TSS-side file access: lock requests, page reads and writes, closes.
//! Requests without a transaction take the plain path, which writes the
//! durable copy on close.

use crate::filestore::{FileName, FileState, Page};
use crate::ids::{Pid, Tid};
use crate::msg::{Msg, Phase};
use crate::net::Counter;
use crate::tlock::{AccessError, LockMode, OpenOutcome};
use crate::trace::TraceKind;

use super::{Cx, OpKind, OpRecord, Site};

impl Site {
    pub(crate) fn on_open(&mut self, tid: Option<Tid>, pid: Pid, file: FileName, mode: LockMode, cx: &mut Cx) {
        let Some(durable) = cx.durable.state(&file, self.id).cloned() else {
            cx.send(pid.site, Msg::OpenR { pid, file, granted: false });
            return;
        };
        let granted = match &tid {
            None => {
                let free = self.locks.get(&file).is_none();
                if free {
                    self.plain.insert((pid, file.clone()), durable);
                }
                free
            }
            Some(t) => {
                if !self.chain_reachable(t) || !self.reachable(pid.site) {
                    false
                } else {
                    let mut ev = Vec::new();
                    let out = self.locks.open(&file, || durable, t, mode, pid.site, &mut ev);
                    cx.lock_events(ev);
                    out == OpenOutcome::Granted
                }
            }
        };
        cx.send(pid.site, Msg::OpenR { pid, file, granted });
    }

    fn record_op(&self, t: &Tid, file: &FileName, kind: OpKind, page: usize, content: Page, cx: &mut Cx) {
        cx.env.ops.push(OpRecord {
            tid: t.clone(),
            file: file.clone(),
            site: self.id,
            kind,
            page,
            content,
        });
    }

    pub(crate) fn on_read(&mut self, tid: Option<Tid>, pid: Pid, file: FileName, page: usize, cx: &mut Cx) {
        let result = match &tid {
            None => match self.plain.get(&(pid, file.clone())) {
                Some(st) => st.read_page(page).map_err(AccessError::from),
                None => Err(AccessError::Denied),
            },
            Some(t) => {
                let r = self.locks.read(&file, t, page);
                if let Ok(content) = &r {
                    self.record_op(t, &file, OpKind::Read, page, content.clone(), cx);
                }
                r
            }
        };
        cx.send(pid.site, Msg::ReadR { pid, file, result });
    }

    pub(crate) fn on_write(
        &mut self,
        tid: Option<Tid>,
        pid: Pid,
        file: FileName,
        page: usize,
        content: Page,
        cx: &mut Cx,
    ) {
        let result = match &tid {
            None => match self.plain.get_mut(&(pid, file.clone())) {
                Some(st) => st
                    .write_page(page, content)
                    .map(|next| *st = next)
                    .map_err(AccessError::from),
                None => Err(AccessError::Denied),
            },
            Some(t) => {
                let r = self.locks.write(&file, t, page, content.clone());
                if r.is_ok() {
                    self.record_op(t, &file, OpKind::Write, page, content, cx);
                }
                r
            }
        };
        cx.send(pid.site, Msg::WriteR { pid, file, result });
    }

    pub(crate) fn on_close(&mut self, tid: Option<Tid>, pid: Pid, file: FileName, cx: &mut Cx) {
        match &tid {
            None => {
                if let Some(st) = self.plain.remove(&(pid, file.clone())) {
                    self.install_committed(None, &file, &st, Phase::Commit, cx);
                    self.propagate(None, &file, &st, cx);
                }
                cx.send(pid.site, Msg::CloseR { pid, file, plain: true });
            }
            Some(t) => {
                let mut ev = Vec::new();
                self.locks.close(&file, t, &mut ev);
                cx.lock_events(ev);
                cx.send(pid.site, Msg::CloseR { pid, file, plain: false });
            }
        }
    }

    /// Writes `state` to this site's durable copy of `file`.
    pub(crate) fn install_committed(
        &mut self,
        tid: Option<&Tid>,
        file: &FileName,
        state: &FileState,
        phase: Phase,
        cx: &mut Cx,
    ) {
        match cx.durable.apply_committed(file, self.id, state) {
            Ok(n) => {
                cx.metrics.add(Counter::DurableWrites, phase, n);
                cx.env.applies.push(tid.cloned());
                if tid.is_none() {
                    cx.env.plain_installs += 1;
                }
                cx.note(
                    TraceKind::DurableWrite,
                    format!(
                        "file={file} tid={} pages={n} v={}",
                        tid.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                        state.version_id()
                    ),
                );
            }
            Err(e) => cx.note(TraceKind::Note, format!("durable-write-failed {e}")),
        }
    }

    /// Pushes committed contents to the other replicas this site can reach.
    pub(crate) fn propagate(&mut self, tid: Option<&Tid>, file: &FileName, state: &FileState, cx: &mut Cx) {
        for r in cx.durable.sites_of(file) {
            if r != self.id && self.reachable(r) {
                cx.send(
                    r,
                    Msg::Propagate { tid: tid.cloned(), file: file.clone(), state: state.clone() },
                );
            }
        }
    }

    pub(crate) fn on_propagate(&mut self, tid: Option<Tid>, file: FileName, state: FileState, cx: &mut Cx) {
        self.install_committed(tid.as_ref(), &file, &state, Phase::Propagate, cx);
    }
}
