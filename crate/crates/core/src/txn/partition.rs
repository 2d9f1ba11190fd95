//! The topology change procedure run at a site when its partition changes.

use std::collections::BTreeSet;

use crate::ids::{Pid, SiteId, Tid};
use crate::trace::TraceKind;

use super::{Cx, Site, TxnPhase, Value, Wait};

impl Site {
    /// Installs the new site table and repairs everything that depended on a
    /// site now out of reach.
    pub fn topology_change(&mut self, table: BTreeSet<SiteId>, cx: &mut Cx) {
        let old = std::mem::replace(&mut self.table, table);
        let lost: BTreeSet<SiteId> = old.difference(&self.table).copied().collect();
        let newly: BTreeSet<SiteId> = self.table.difference(&old).copied().collect();
        let ids: Vec<String> = self.table.iter().map(|s| s.0.to_string()).collect();
        cx.note(TraceKind::Topology, format!("table={{{}}}", ids.join(",")));
        if !newly.is_empty() {
            cx.note(TraceKind::Note, "recovery");
        }

        self.orphan_sweep_home(cx);
        self.orphan_sweep_file(cx);
        self.notify_waiters(&lost, cx);
        self.abort_on_inaccessible_storage(cx);
        self.resolve_in_doubt(&newly, cx);
    }

    fn orphan_sweep_home(&mut self, cx: &mut Cx) {
        let orphans: Vec<Tid> = self
            .trans
            .keys()
            .filter(|t| t.superior_sites().any(|s| !self.table.contains(&s)))
            .cloned()
            .collect();
        for t in orphans {
            self.silent_abort(&t, cx);
        }
        // Remote members of transactions whose home is gone.
        let stranded: Vec<Pid> = self
            .procs
            .values()
            .filter(|p| !p.halted)
            .filter(|p| p.txn.as_ref().is_some_and(|t| !self.table.contains(&t.home_site())))
            .map(|p| p.pid)
            .collect();
        for pid in stranded {
            self.destroy_local(pid, cx);
        }
    }

    fn orphan_sweep_file(&mut self, cx: &mut Cx) {
        let mut ev = Vec::new();
        self.locks.sweep(&self.table, &mut ev);
        for file in self.locks.files() {
            let committing = self.locks.get(&file).and_then(|l| l.committing().cloned());
            if let Some(t) = committing {
                let in_doubt = self.prepared.contains_key(&(t.clone(), file.clone()));
                if !in_doubt && !self.table.contains(&t.home_site()) {
                    self.locks.abandon_commit(&file, &mut ev);
                }
            }
        }
        if !ev.is_empty() {
            cx.note(TraceKind::Sweep, format!("file-sweep events={}", ev.len()));
        }
        cx.lock_events(ev);
    }

    fn notify_waiters(&mut self, lost: &BTreeSet<SiteId>, cx: &mut Cx) {
        let waiting: Vec<Pid> = self
            .procs
            .values()
            .filter(|p| p.is_blocked())
            .map(|p| p.pid)
            .collect();
        for pid in waiting {
            let p = &self.procs[&pid];
            let Some(wait) = p.wait.clone() else { continue };
            let chain_ok = p.txn.as_ref().map_or(true, |t| self.chain_reachable(t));
            match wait {
                Wait::Timer | Wait::HomeUpdate { .. } => {}
                Wait::Open { tss, .. } | Wait::Access { tss, .. } | Wait::Close { tss, .. } => {
                    if !self.reachable(tss) {
                        let p = self.procs.get_mut(&pid).unwrap();
                        if let Wait::Close { file, .. } = &wait {
                            p.open.remove(file);
                        }
                        p.wait = None;
                        let success = p.exiting.unwrap_or(false) && matches!(wait, Wait::Close { .. });
                        cx.note(TraceKind::Process, format!("severed pid={pid} tss={tss}"));
                        self.begin_exit(pid, success, cx);
                    }
                }
                Wait::Relcall { tid, var } => {
                    if !self.reachable(tid.home_site()) && chain_ok {
                        let code = if tid.is_top_level() { Value::Unknown } else { Value::Aborted };
                        self.deliver_completion(pid, tid, var, code, false, true, cx);
                    }
                }
                Wait::Fork { via, .. } => {
                    if via.iter().any(|s| !self.reachable(*s)) {
                        self.procs.get_mut(&pid).unwrap().wait = None;
                        self.run(pid, cx);
                    }
                }
                Wait::Child { pid: child, var } => {
                    if !self.reachable(child.site) {
                        let p = self.procs.get_mut(&pid).unwrap();
                        if let Some(v) = &var {
                            p.vars.insert(v.clone(), Value::Fail);
                        }
                        p.wait = None;
                        self.run(pid, cx);
                    }
                }
            }
        }

        let home: Vec<Tid> = self.trans.keys().cloned().collect();
        for t in home {
            let Some(rec) = self.trans.get_mut(&t) else { continue };
            let table = &self.table;
            match &mut rec.phase {
                TxnPhase::SubCommitting { .. } => self.fail_sub_commit(&t, lost, cx),
                TxnPhase::Aborting { children, tss, .. } => {
                    children.retain(|c| table.contains(&c.home_site()));
                    if let Some(tss) = tss {
                        tss.retain(|s| table.contains(s));
                    }
                    self.advance_abort(&t, cx);
                }
                _ => {}
            }
        }
    }

    fn abort_on_inaccessible_storage(&mut self, cx: &mut Cx) {
        let doomed: Vec<(Tid, String)> = self
            .trans
            .values()
            .filter(|r| {
                matches!(
                    r.phase,
                    TxnPhase::Running
                        | TxnPhase::AwaitGrant
                        | TxnPhase::TopCommitting { .. }
                        | TxnPhase::Preparing { .. }
                )
            })
            .filter_map(|r| {
                if let Some(e) = r.files.iter().find(|e| !self.table.contains(&e.tss)) {
                    return Some((r.tid.clone(), format!("tss={} file={}", e.tss, e.file)));
                }
                if let Some(c) = r.granted.iter().find(|c| !self.table.contains(&c.home_site())) {
                    return Some((r.tid.clone(), format!("granted-child={c}")));
                }
                if let Some(m) = r.members.keys().find(|m| !self.table.contains(&m.site)) {
                    return Some((r.tid.clone(), format!("member={m}")));
                }
                None
            })
            .collect();
        for (t, why) in doomed {
            cx.note(TraceKind::Sweep, format!("abort-severed tid={t} {why}"));
            self.abort_transaction(&t, None, cx);
        }
    }
}
