//! Serializability oracle: brute force over serial orders of the committed
//! top-level transactions.

use std::collections::{BTreeMap, BTreeSet};

use crate::filestore::{FileName, FileState};
use crate::ids::Tid;
use crate::txn::{OpKind, OpRecord, Status};

/// Most top-level transactions the brute force will try.
pub const MAX_TOP_LEVEL: usize = 6;

/// True iff `t` and every superior committed.
pub fn on_committed_path(t: &Tid, outcomes: &BTreeMap<Tid, Status>) -> bool {
    let mut cur = Some(t.clone());
    while let Some(c) = cur {
        if outcomes.get(&c) != Some(&Status::Committed) {
            return false;
        }
        cur = c.parent();
    }
    true
}

fn permutations(items: &[Tid]) -> Vec<Vec<Tid>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Replays each committed top-level transaction's surviving operations in
/// some serial order. Succeeds with the first order in which every read sees
/// the value it saw in the real run and the end state equals `final_state`.
pub fn check_serializable(
    ops: &[OpRecord],
    outcomes: &BTreeMap<Tid, Status>,
    initial: &BTreeMap<FileName, FileState>,
    final_state: &BTreeMap<FileName, FileState>,
) -> Result<Vec<Tid>, String> {
    let tops: BTreeSet<Tid> = outcomes
        .iter()
        .filter(|(t, s)| t.is_top_level() && **s == Status::Committed)
        .map(|(t, _)| t.clone())
        .collect();
    if tops.len() > MAX_TOP_LEVEL {
        return Err(format!("{} committed top-level transactions exceed the brute-force bound", tops.len()));
    }
    let mut by_top: BTreeMap<Tid, Vec<&OpRecord>> = BTreeMap::new();
    for op in ops {
        if on_committed_path(&op.tid, outcomes) {
            by_top.entry(op.tid.top()).or_default().push(op);
        }
    }
    let tops: Vec<Tid> = tops.into_iter().collect();
    let mut last_err = String::from("no committed transactions and final state differs from initial");
    for order in permutations(&tops) {
        match replay(&order, &by_top, initial, final_state) {
            Ok(()) => return Ok(order),
            Err(e) => last_err = e,
        }
    }
    Err(format!("no serial order reproduces the run; last attempt: {last_err}"))
}

fn replay(
    order: &[Tid],
    by_top: &BTreeMap<Tid, Vec<&OpRecord>>,
    initial: &BTreeMap<FileName, FileState>,
    final_state: &BTreeMap<FileName, FileState>,
) -> Result<(), String> {
    let mut state = initial.clone();
    for top in order {
        for op in by_top.get(top).into_iter().flatten() {
            let st = state
                .get_mut(&op.file)
                .ok_or_else(|| format!("unknown file {}", op.file))?;
            match op.kind {
                OpKind::Read => {
                    let seen = st.read_page(op.page).map_err(|e| e.to_string())?;
                    if seen != op.content {
                        return Err(format!(
                            "{} read {}[{}] = {:?} but the serial state has {:?}",
                            op.tid,
                            op.file,
                            op.page,
                            op.content.text(),
                            seen.text()
                        ));
                    }
                }
                OpKind::Write => {
                    *st = st.write_page(op.page, op.content.clone()).map_err(|e| e.to_string())?;
                }
            }
        }
    }
    for (f, want) in final_state {
        match state.get(f) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(format!(
                    "file {f}: serial result {:?} differs from durable {:?}",
                    got.page_texts(),
                    want.page_texts()
                ))
            }
            None => return Err(format!("unknown file {f}")),
        }
    }
    Ok(())
}
