//! Transaction abort, forced child abort, and silent abort of orphans.

use std::collections::BTreeSet;

use crate::filestore::FileName;
use crate::ids::{SiteId, Tid};
use crate::msg::Msg;
use crate::trace::TraceKind;

use super::{Cx, Site, Status, TxnPhase};

impl Site {
    /// Aborts `t` at its home site. `force_from` is the site that sent
    /// FORCEABT, if any; it gets RFORCEABT once the abort is done.
    pub(crate) fn abort_transaction(&mut self, t: &Tid, force_from: Option<SiteId>, cx: &mut Cx) {
        let Some(rec) = self.trans.get_mut(t) else {
            if let Some(s) = force_from {
                cx.send(s, Msg::RForceAbt { tid: t.clone() });
            }
            return;
        };
        match &mut rec.phase {
            TxnPhase::Decided { .. } => return,
            TxnPhase::Aborting { force_requesters, .. } => {
                force_requesters.extend(force_from);
                return;
            }
            _ => {}
        }
        rec.status = Status::Aborted;
        let members: Vec<_> = rec.members.keys().copied().collect();
        let children: BTreeSet<Tid> = rec
            .members
            .values()
            .filter_map(|m| m.subtrans.clone())
            .chain(rec.granted.iter().cloned())
            .filter(|c| self.table.contains(&c.home_site()))
            .collect();
        rec.phase = TxnPhase::Aborting {
            children: children.clone(),
            tss: None,
            force_requesters: force_from.into_iter().collect(),
        };
        cx.set_outcome(t, Status::Aborted);
        for pid in members {
            if pid.site == self.id {
                self.destroy_local(pid, cx);
            } else if self.reachable(pid.site) {
                cx.send(pid.site, Msg::Destroy { pid });
            }
        }
        for c in children {
            cx.send(c.home_site(), Msg::ForceAbt { tid: c });
        }
        self.advance_abort(t, cx);
    }

    /// Moves an aborting transaction forward: TSSABORT once every child
    /// answered, completion once every TSS answered.
    pub(crate) fn advance_abort(&mut self, t: &Tid, cx: &mut Cx) {
        let Some(rec) = self.trans.get_mut(t) else { return };
        let TxnPhase::Aborting { children, tss, .. } = &rec.phase else { return };
        if !children.is_empty() {
            return;
        }
        if tss.is_none() {
            let sites: BTreeSet<SiteId> = rec
                .tss_sites()
                .into_iter()
                .filter(|s| self.table.contains(s))
                .collect();
            let batches: Vec<(SiteId, Vec<FileName>)> =
                sites.iter().map(|&s| (s, rec.files_at(s))).collect();
            if let TxnPhase::Aborting { tss, .. } = &mut rec.phase {
                *tss = Some(sites);
            }
            for (s, files) in batches {
                cx.send(s, Msg::TssAbort { tid: t.clone(), files });
            }
        }
        let rec = self.trans.get(t).unwrap();
        let TxnPhase::Aborting { tss: Some(tss), force_requesters, .. } = &rec.phase else { return };
        if !tss.is_empty() {
            return;
        }
        let caller = rec.caller;
        let requesters = force_requesters.clone();
        self.trans.remove(t);
        let done = if t.is_top_level() {
            Msg::TopAbort { tid: t.clone(), caller }
        } else {
            Msg::SubAbort { tid: t.clone(), caller }
        };
        cx.send(caller.site, done);
        for s in requesters {
            cx.send(s, Msg::RForceAbt { tid: t.clone() });
        }
    }

    pub(crate) fn on_force_abort_reply(&mut self, child: Tid, cx: &mut Cx) {
        let Some(parent) = child.parent() else { return };
        if let Some(rec) = self.trans.get_mut(&parent) {
            if let TxnPhase::Aborting { children, .. } = &mut rec.phase {
                if children.remove(&child) {
                    self.advance_abort(&parent, cx);
                }
            }
        }
    }

    pub(crate) fn on_tss_abort(&mut self, from: SiteId, tid: Tid, files: Vec<FileName>, cx: &mut Cx) {
        let mut ev = Vec::new();
        for f in &files {
            self.locks.abort(f, &tid, &mut ev);
            if self.prepared.remove(&(tid.clone(), f.clone())).is_some() {
                cx.note(TraceKind::Note, format!("prepare-discard tid={tid} file={f}"));
            }
        }
        cx.lock_events(ev);
        cx.send(from, Msg::RTssAbort { tid });
    }

    pub(crate) fn on_tss_abort_reply(&mut self, from: SiteId, tid: Tid, cx: &mut Cx) {
        if let Some(rec) = self.trans.get_mut(&tid) {
            if let TxnPhase::Aborting { tss: Some(tss), .. } = &mut rec.phase {
                if tss.remove(&from) {
                    self.advance_abort(&tid, cx);
                }
            }
        }
    }

    /// Removes an orphaned transaction: its members are destroyed, but its
    /// locks and children are left to their own sites' sweeps.
    pub(crate) fn silent_abort(&mut self, t: &Tid, cx: &mut Cx) {
        let Some(rec) = self.trans.remove(t) else { return };
        cx.note(TraceKind::Sweep, format!("silent-abort tid={t}"));
        if rec.status == Status::Undefined {
            cx.set_outcome(t, Status::Aborted);
        }
        for pid in rec.members.keys() {
            if pid.site == self.id {
                self.destroy_local(*pid, cx);
            } else if self.reachable(pid.site) {
                cx.send(pid.site, Msg::Destroy { pid: *pid });
            }
        }
    }
}
