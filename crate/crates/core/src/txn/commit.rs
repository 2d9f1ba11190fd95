//! Subtransaction and top-level commit, up to the start of two-phase commit.

use std::collections::BTreeSet;

use crate::filestore::FileName;
use crate::ids::{SiteId, Tid};
use crate::msg::{FileEntry, Msg};
use crate::trace::TraceKind;

use super::{Cx, Site, Status, TxnPhase};

impl Site {
    /// Entered at the home site once the top-level process exited successfully.
    pub(crate) fn begin_commit(&mut self, t: &Tid, cx: &mut Cx) {
        let Some(rec) = self.trans.get(t) else { return };
        let unreachable = rec.tss_sites().into_iter().find(|s| !self.reachable(*s));
        if let Some(s) = unreachable {
            cx.note(TraceKind::Note, format!("commit-precheck-failed tid={t} tss={s}"));
            return self.abort_transaction(t, None, cx);
        }
        match t.parent() {
            Some(parent) => {
                let files = rec.files.clone();
                self.trans.get_mut(t).unwrap().phase = TxnPhase::AwaitGrant;
                cx.send(parent.home_site(), Msg::ReqCommit { child: t.clone(), files });
            }
            None => self.send_tss_commits(t, true, cx),
        }
    }

    fn send_tss_commits(&mut self, t: &Tid, top: bool, cx: &mut Cx) {
        let rec = self.trans.get_mut(t).expect("record exists");
        let pending = rec.tss_sites();
        let batches: Vec<(SiteId, Vec<FileName>)> =
            pending.iter().map(|&s| (s, rec.files_at(s))).collect();
        rec.phase = if top {
            TxnPhase::TopCommitting { pending: pending.clone(), failed: false }
        } else {
            TxnPhase::SubCommitting { pending: pending.clone(), failed: false }
        };
        for (s, files) in batches {
            cx.send(s, Msg::TssCommit { tid: t.clone(), files });
        }
        if pending.is_empty() {
            self.finish_tss_commits(t, cx);
        }
    }

    pub(crate) fn on_req_commit(&mut self, child: Tid, files: Vec<FileEntry>, cx: &mut Cx) {
        let parent = child.parent().expect("only subtransactions request commit");
        let known = self.trans.get(&parent).is_some_and(|rec| {
            rec.phase == TxnPhase::Running
                && rec.members.values().any(|m| m.subtrans.as_ref() == Some(&child))
        });
        if !known {
            cx.note(TraceKind::Note, format!("unknown-child tid={child}"));
            cx.send(child.home_site(), Msg::ForceAbt { tid: child });
            return;
        }
        let rec = self.trans.get_mut(&parent).unwrap();
        for e in files {
            rec.add_file(e);
        }
        rec.granted.insert(child.clone());
        cx.send(child.home_site(), Msg::GrtCommit { child });
    }

    pub(crate) fn on_grant_commit(&mut self, child: Tid, cx: &mut Cx) {
        if self.trans.get(&child).is_some_and(|r| r.phase == TxnPhase::AwaitGrant) {
            self.send_tss_commits(&child, false, cx);
        }
    }

    /// TSS side. Fails when some file no longer carries any lock of `tid`,
    /// which means the locks were swept while the commit was in flight.
    pub(crate) fn on_tss_commit(&mut self, from: SiteId, tid: Tid, files: Vec<FileName>, cx: &mut Cx) {
        let ok = files.iter().all(|f| {
            self.locks
                .get(f)
                .is_some_and(|l| l.mentioned_tids().contains(&tid))
        });
        let mut ev = Vec::new();
        if ok {
            for f in &files {
                self.locks.commit(f, &tid, &mut ev);
            }
        }
        cx.lock_events(ev);
        cx.send(from, Msg::RTssCommit { tid, ok });
    }

    pub(crate) fn on_tss_commit_reply(&mut self, from: SiteId, tid: Tid, ok: bool, cx: &mut Cx) {
        let Some(rec) = self.trans.get_mut(&tid) else { return };
        match &mut rec.phase {
            TxnPhase::SubCommitting { pending, failed } | TxnPhase::TopCommitting { pending, failed } => {
                pending.remove(&from);
                *failed |= !ok;
                if pending.is_empty() {
                    self.finish_tss_commits(&tid, cx);
                }
            }
            _ => {}
        }
    }

    /// Called once no TSSCOMMIT reply is outstanding.
    fn finish_tss_commits(&mut self, t: &Tid, cx: &mut Cx) {
        let rec = self.trans.get(t).expect("record exists");
        let failed = match &rec.phase {
            TxnPhase::SubCommitting { failed, .. } | TxnPhase::TopCommitting { failed, .. } => *failed,
            _ => return,
        };
        let top = matches!(rec.phase, TxnPhase::TopCommitting { .. });
        let caller = rec.caller;
        if top {
            if failed {
                return self.abort_transaction(t, None, cx);
            }
            return self.start_two_phase(t, cx);
        }
        let rec = self.trans.remove(t).unwrap();
        if failed {
            cx.set_outcome(t, Status::Aborted);
            cx.send(caller.site, Msg::SubCmtFail { tid: t.clone(), caller });
        } else {
            cx.set_outcome(t, Status::Committed);
            cx.send(caller.site, Msg::SubCommit { tid: t.clone(), caller });
        }
        drop(rec);
    }

    /// Subtransaction waiting on TSSCOMMIT replies from a now unreachable TSS.
    pub(crate) fn fail_sub_commit(&mut self, t: &Tid, lost: &BTreeSet<SiteId>, cx: &mut Cx) {
        let Some(rec) = self.trans.get(t) else { return };
        let TxnPhase::SubCommitting { pending, .. } = &rec.phase else { return };
        if pending.is_disjoint(lost) {
            return;
        }
        let caller = rec.caller;
        self.trans.remove(t);
        cx.set_outcome(t, Status::Aborted);
        cx.send(caller.site, Msg::SubCmtFail { tid: t.clone(), caller });
    }
}
