//! Two-phase commit over the write participants of a top-level transaction.
//! Logs are presumed-abort: a coordinator with no commit record for a
//! transaction answers an inquiry with TSSABORT.

use std::collections::BTreeSet;

use crate::filestore::FileName;
use crate::ids::{SiteId, Tid};
use crate::msg::{Msg, Phase};
use crate::tlock::LockMode;
use crate::trace::TraceKind;

use super::{Cx, Site, Status, TxnPhase};

impl Site {
    pub(crate) fn start_two_phase(&mut self, t: &Tid, cx: &mut Cx) {
        let rec = self.trans.get_mut(t).expect("record exists");
        let participants: BTreeSet<(FileName, SiteId)> = rec
            .files
            .iter()
            .filter(|e| e.mode == LockMode::Write)
            .map(|e| (e.file.clone(), e.tss))
            .collect();
        if participants.is_empty() {
            let caller = rec.caller;
            self.trans.remove(t);
            cx.set_outcome(t, Status::Committed);
            cx.send(caller.site, Msg::TopCommit { tid: t.clone(), caller });
            return;
        }
        rec.phase = TxnPhase::Preparing { pending: participants.clone() };
        for (file, s) in participants {
            cx.send(s, Msg::Prepare { tid: t.clone(), file });
        }
    }

    pub(crate) fn on_prepare(&mut self, from: SiteId, tid: Tid, file: FileName, cx: &mut Cx) {
        let refused = cx.env.config.refuse_prepare.contains(&(file.clone(), self.id));
        let state = self
            .locks
            .get(&file)
            .filter(|l| l.committing() == Some(&tid))
            .map(|l| l.current().snapshot());
        let yes = match state {
            Some(st) if !refused => {
                cx.note(TraceKind::Note, format!("prepare-log tid={tid} file={file} v={}", st.version_id()));
                self.prepared.insert((tid.clone(), file.clone()), (st, from));
                true
            }
            _ => false,
        };
        cx.send(from, Msg::Vote { tid, file, yes });
    }

    pub(crate) fn on_vote(&mut self, from: SiteId, tid: Tid, file: FileName, yes: bool, cx: &mut Cx) {
        let Some(rec) = self.trans.get_mut(&tid) else { return };
        let TxnPhase::Preparing { pending } = &mut rec.phase else { return };
        if !yes {
            cx.note(TraceKind::Note, format!("vote-no tid={tid} file={file} site={from}"));
            return self.abort_transaction(&tid, None, cx);
        }
        pending.remove(&(file, from));
        if !pending.is_empty() {
            return;
        }
        let participants: BTreeSet<(FileName, SiteId)> = rec
            .files
            .iter()
            .filter(|e| e.mode == LockMode::Write)
            .map(|e| (e.file.clone(), e.tss))
            .collect();
        let caller = rec.caller;
        rec.phase = TxnPhase::Decided { unacked: participants.clone() };
        self.coord_log.insert(tid.clone(), participants.clone());
        cx.env.commit_points.insert(tid.clone());
        cx.note(TraceKind::Note, format!("commit-point tid={tid}"));
        cx.set_outcome(&tid, Status::Committed);
        for (file, s) in participants {
            cx.send(s, Msg::Commit { tid: tid.clone(), file });
        }
        cx.send(caller.site, Msg::TopCommit { tid, caller });
    }

    pub(crate) fn on_commit(&mut self, from: SiteId, tid: Tid, file: FileName, cx: &mut Cx) {
        if let Some((state, _)) = self.prepared.remove(&(tid.clone(), file.clone())) {
            self.install_committed(Some(&tid), &file, &state, Phase::Commit, cx);
            if self.locks.get(&file).is_some_and(|l| l.committing() == Some(&tid)) {
                let mut ev = Vec::new();
                self.locks.remove(&file, &mut ev);
                cx.lock_events(ev);
            }
            self.propagate(Some(&tid), &file, &state, cx);
        }
        cx.send(from, Msg::Ack { tid, file });
    }

    pub(crate) fn on_ack(&mut self, from: SiteId, tid: Tid, file: FileName, cx: &mut Cx) {
        let key = (file, from);
        if let Some(rec) = self.trans.get_mut(&tid) {
            if let TxnPhase::Decided { unacked } = &mut rec.phase {
                unacked.remove(&key);
                if unacked.is_empty() {
                    self.trans.remove(&tid);
                    cx.note(TraceKind::Note, format!("commit-complete tid={tid}"));
                }
            }
        }
        if let Some(rest) = self.coord_log.get_mut(&tid) {
            rest.remove(&key);
            if rest.is_empty() {
                self.coord_log.remove(&tid);
            }
        }
    }

    pub(crate) fn on_inquire(&mut self, from: SiteId, tid: Tid, file: FileName, cx: &mut Cx) {
        if self.coord_log.contains_key(&tid) {
            cx.send(from, Msg::Commit { tid, file });
        } else if !self
            .trans
            .get(&tid)
            .is_some_and(|r| matches!(r.phase, TxnPhase::Preparing { .. }))
        {
            cx.send(from, Msg::TssAbort { tid, files: vec![file] });
        }
    }

    /// After a merge: resend decisions and ask about in-doubt prepares.
    pub(crate) fn resolve_in_doubt(&mut self, newly: &BTreeSet<SiteId>, cx: &mut Cx) {
        if newly.is_empty() {
            return;
        }
        for (tid, rest) in &self.coord_log {
            for (file, s) in rest {
                if newly.contains(s) {
                    cx.send(*s, Msg::Commit { tid: tid.clone(), file: file.clone() });
                }
            }
        }
        for ((tid, file), (_, coord)) in &self.prepared {
            if newly.contains(coord) {
                cx.send(*coord, Msg::Inquire { tid: tid.clone(), file: file.clone() });
            }
        }
    }
}
