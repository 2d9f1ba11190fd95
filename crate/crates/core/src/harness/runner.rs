//! Runs a scenario to quiescence and evaluates its expectations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::filestore::{FileName, FileState, Page};
use crate::ids::{SiteId, Tid};
use crate::net::Metrics;
use crate::txn::{ProcResult, Status};
use crate::world::{RunStatus, World};

use super::oracle::check_serializable;
use super::scenario::{Check, Scenario};

pub const DEFAULT_STEP_LIMIT: u64 = 200_000;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub step_limit: u64,
    /// Also run the serializability oracle.
    pub oracles: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { step_limit: DEFAULT_STEP_LIMIT, oracles: false }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub status: RunStatus,
    pub steps: u64,
    pub trace: String,
    pub metrics: Metrics,
    /// Expectations that did not hold.
    pub failures: Vec<String>,
    /// Runtime and quiescent invariant violations.
    pub violations: Vec<String>,
    /// Pending events when the step limit was hit.
    pub pending: Vec<String>,
    pub serial: Option<Result<Vec<Tid>, String>>,
    /// The serializability oracle was requested but does not apply because
    /// processes outside any transaction updated files.
    pub serial_skipped: bool,
    pub outcomes: BTreeMap<Tid, Status>,
    pub results: BTreeMap<String, ProcResult>,
    pub durable: Vec<(FileName, SiteId, Vec<String>)>,
    pub locks: Vec<(SiteId, String)>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Quiescent
            && self.failures.is_empty()
            && self.violations.is_empty()
            && !matches!(self.serial, Some(Err(_)))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let status = match self.status {
            RunStatus::Quiescent => "quiescent",
            RunStatus::StepLimit => "livelock: step limit reached",
        };
        let _ = writeln!(s, "status: {status} after {} steps", self.steps);
        for (t, st) in &self.outcomes {
            let _ = writeln!(s, "txn {t} {st}");
        }
        for (label, r) in &self.results {
            let exit = match r.exit {
                Some(true) => "ok",
                Some(false) => "fail",
                None => "running",
            };
            let vars: Vec<String> = r.vars.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "process {label} exit={exit} {}", vars.join(" "));
        }
        for (f, site, pages) in &self.durable {
            let _ = writeln!(s, "durable {f}@{site} {pages:?}");
        }
        for (site, l) in &self.locks {
            let _ = writeln!(s, "lock {site} {l}");
        }
        let _ = write!(s, "{}", self.metrics);
        match &self.serial {
            Some(Ok(order)) => {
                let o: Vec<String> = order.iter().map(Tid::to_string).collect();
                let _ = writeln!(s, "serializable: witness [{}]", o.join(", "));
            }
            Some(Err(e)) => {
                let _ = writeln!(s, "serializable: VIOLATION {e}");
            }
            None if self.serial_skipped => {
                let _ = writeln!(s, "serializable: not checked (non-transactional updates)");
            }
            None => {}
        }
        for v in &self.violations {
            let _ = writeln!(s, "VIOLATION {v}");
        }
        for f in &self.failures {
            let _ = writeln!(s, "FAILED {f}");
        }
        for p in &self.pending {
            let _ = writeln!(s, "pending {p}");
        }
        s
    }
}

fn text_of(st: &FileState, page: usize) -> Option<String> {
    st.read_page(page).ok().map(|p| p.text())
}

fn evaluate(world: &World, check: &Check) -> Result<(), String> {
    let lock = |file: &FileName, site: SiteId| world.sites.get(&site).and_then(|s| s.locks.get(file));
    match check {
        Check::DurablePage { file, site, page, text } => {
            let got = world.durable.state(file, *site).and_then(|st| text_of(st, *page));
            if got.as_deref() == Some(text.as_str()) {
                Ok(())
            } else {
                Err(format!("durable {file}@{site}[{page}] is {got:?}, expected {text:?}"))
            }
        }
        Check::DurablePages { file, site, pages } => {
            let got = world.durable.state(file, *site).map(FileState::page_texts);
            if got.as_ref() == Some(pages) {
                Ok(())
            } else {
                Err(format!("durable {file}@{site} is {got:?}, expected {pages:?}"))
            }
        }
        Check::Var { label, var, value } => {
            let got = world.env.results.get(label).and_then(|r| r.vars.get(var));
            if got == Some(value) {
                Ok(())
            } else {
                Err(format!("{label}.{var} is {got:?}, expected {value}"))
            }
        }
        Check::Exit { label, ok } => {
            let got = world.env.results.get(label).and_then(|r| r.exit);
            if got == Some(*ok) {
                Ok(())
            } else {
                Err(format!("{label} exit is {got:?}, expected {ok}"))
            }
        }
        Check::Txn { tid, status } => {
            let got = world.env.outcomes.get(tid);
            if got == Some(status) {
                Ok(())
            } else {
                Err(format!("{tid} is {got:?}, expected {status}"))
            }
        }
        Check::LockNone { file, site } => match lock(file, *site) {
            None => Ok(()),
            Some(l) => Err(format!("expected no t-lock, found {}", l.render())),
        },
        Check::LockWriteRetainers { file, site, tids } => {
            let got: Option<Vec<Tid>> =
                lock(file, *site).map(|l| l.write_retainers().iter().map(|e| e.tid.clone()).collect());
            if got.as_ref().unwrap_or(&vec![]) == tids {
                Ok(())
            } else {
                Err(format!("write retainers of {file}@{site} are {got:?}, expected {tids:?}"))
            }
        }
        Check::LockReadRetainers { file, site, tids } => {
            let got: Option<Vec<Tid>> = lock(file, *site).map(|l| l.read_retainers().to_vec());
            let got_set: BTreeSet<&Tid> = got.iter().flatten().collect();
            let want: BTreeSet<&Tid> = tids.iter().collect();
            if got_set == want {
                Ok(())
            } else {
                Err(format!("read retainers of {file}@{site} are {got:?}, expected {tids:?}"))
            }
        }
        Check::LockCurrent { file, site, page, text } => {
            let got = lock(file, *site).and_then(|l| text_of(l.current(), *page));
            if got.as_deref() == Some(text.as_str()) {
                Ok(())
            } else {
                Err(format!("current {file}@{site}[{page}] is {got:?}, expected {text:?}"))
            }
        }
        Check::Counter { counter, phase, op, value } => {
            let got = world.net.metrics.lookup(*counter, *phase);
            if op.eval(got, *value) {
                Ok(())
            } else {
                let name = match phase {
                    Some(p) => format!("{}.{p}", counter.name()),
                    None => counter.name().to_string(),
                };
                Err(format!("counter {name} is {got}, expected {op} {value}"))
            }
        }
    }
}

/// Initial contents of each file's lowest-numbered replica.
pub fn initial_states(s: &Scenario) -> BTreeMap<FileName, FileState> {
    s.spec
        .files
        .iter()
        .map(|f| {
            let pages = f.pages.iter().map(|p| Page::from(p.as_str())).collect();
            (f.name.clone(), FileState::new(1, s.spec.page_size, pages))
        })
        .collect()
}

/// Durable contents of each file's lowest-numbered replica.
pub fn final_states(s: &Scenario, world: &World) -> BTreeMap<FileName, FileState> {
    s.spec
        .files
        .iter()
        .filter_map(|f| {
            let site = *f.replicas.iter().min()?;
            Some((f.name.clone(), world.durable.state(&f.name, site)?.clone()))
        })
        .collect()
}

/// Runs `s` and returns the report together with the final world.
pub fn run_world(s: &Scenario, opts: &RunOptions) -> (RunReport, World) {
    let mut failures = Vec::new();
    let mut world = match World::new(s.spec.clone()) {
        Ok(w) => w,
        Err(e) => panic!("scenario was validated but the world rejected it: {e}"),
    };
    let mut checkpoints: Vec<u64> = s.expects.iter().filter_map(|e| e.at).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    for t in checkpoints {
        world.run_until(t, opts.step_limit);
        for e in s.expects.iter().filter(|e| e.at == Some(t)) {
            if let Err(msg) = evaluate(&world, &e.check) {
                failures.push(format!("line {} (at {t}): {msg}", e.line));
            }
        }
    }
    let status = world.run(opts.step_limit);
    for e in s.expects.iter().filter(|e| e.at.is_none()) {
        if let Err(msg) = evaluate(&world, &e.check) {
            failures.push(format!("line {}: {msg}", e.line));
        }
    }
    let mut violations = world.violations.clone();
    let mut pending = Vec::new();
    match status {
        RunStatus::Quiescent => violations.extend(world.quiescent_violations()),
        RunStatus::StepLimit => pending = world.net.pending(),
    }
    let serial_skipped = opts.oracles && world.env.plain_installs > 0;
    let serial = (opts.oracles && !serial_skipped).then(|| {
        check_serializable(&world.env.ops, &world.env.outcomes, &initial_states(s), &final_states(s, &world))
    });
    let durable = world
        .durable
        .copies()
        .map(|(f, site, st)| (f.clone(), site, st.page_texts()))
        .collect();
    let locks = world
        .sites
        .iter()
        .flat_map(|(id, site)| site.locks.iter().map(move |(_, l)| (*id, l.render())))
        .collect();
    let report = RunReport {
        status,
        steps: world.steps(),
        trace: world.trace.render(),
        metrics: world.net.metrics.clone(),
        failures,
        violations,
        pending,
        serial,
        serial_skipped,
        outcomes: world.env.outcomes.clone(),
        results: world.env.results.clone(),
        durable,
        locks,
    };
    (report, world)
}

pub fn run(s: &Scenario, opts: &RunOptions) -> RunReport {
    run_world(s, opts).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::parse;

    #[test]
    fn empty_scenario_is_quiescent_with_empty_trace() {
        let r = run(&parse("sites 1\n").unwrap(), &RunOptions::default());
        assert_eq!(r.status, RunStatus::Quiescent);
        assert!(r.trace.is_empty());
        assert!(r.passed());
    }

    #[test]
    fn single_site_commit() {
        let s = parse(
            r#"
sites 1
file F at 1 pages "a"
script t
  open F write
  write F 0 "b"
  close F
end
script main
  relcall t -> r
  exit all r
end
root P at 1 main
expect durable F@1 0 "b"
expect var P.r committed
expect exit P ok
expect txn s1.t1 committed
expect lock F@1 none
expect counter remote == 0
expect counter durable_writes == 1
"#,
        )
        .unwrap();
        let r = run(&s, &RunOptions { oracles: true, ..Default::default() });
        assert!(r.passed(), "{}\n{}", r.summary(), r.trace);
    }

    #[test]
    fn failing_expectation_is_reported() {
        let s = parse("sites 1\nfile F at 1 pages \"a\"\nexpect durable F@1 0 \"zzz\"\n").unwrap();
        let r = run(&s, &RunOptions::default());
        assert!(!r.passed());
        assert_eq!(r.failures.len(), 1);
    }
}
