//! Seeded random scenarios checked against every oracle.
//!
//! Generated scenarios stay within small bounds: at most 3 sites, 2 files
//! (one replica each), 4 top-level transactions, call trees of depth 3 and
//! 40 file operations. Each is written as scenario text and parsed back, so
//! a failing seed can be replayed from its printed text.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runner::{run, RunOptions};
use super::scenario::{parse, quote};
use crate::txn::Status;
use crate::world::RunStatus;

pub const MAX_SITES: u32 = 3;
pub const MAX_FILES: usize = 2;
pub const MAX_TOP_LEVEL: usize = 4;
pub const MAX_DEPTH: usize = 3;
pub const MAX_OPS: usize = 40;

struct Gen {
    rng: ChaCha8Rng,
    sites: u32,
    /// (name, page count)
    files: Vec<(String, usize)>,
    scripts: Vec<String>,
    ops_left: usize,
    next_script: usize,
    next_value: usize,
}

impl Gen {
    fn site(&mut self) -> u32 {
        self.rng.gen_range(1..=self.sites)
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.next_script += 1;
        format!("{prefix}{}", self.next_script)
    }

    /// open, a few reads and writes, usually a close.
    fn access_block(&mut self, body: &mut Vec<String>, tag: &str) {
        if self.ops_left == 0 {
            return;
        }
        let (file, pages) = self.files.choose(&mut self.rng).cloned().expect("at least one file");
        let write = self.rng.gen_bool(0.6);
        body.push(format!("open {file} {}", if write { "write" } else { "read" }));
        let n = self.rng.gen_range(1..=3).min(self.ops_left);
        for _ in 0..n {
            self.ops_left -= 1;
            let page = self.rng.gen_range(0..pages);
            if write && self.rng.gen_bool(0.6) {
                self.next_value += 1;
                body.push(format!("write {file} {page} {}", quote(&format!("{tag}.{}", self.next_value))));
            } else {
                body.push(format!("read {file} {page}"));
            }
        }
        if self.rng.gen_bool(0.8) {
            body.push(format!("close {file}"));
        }
    }

    /// Emits a transaction script and returns its name.
    fn txn_script(&mut self, depth: usize) -> String {
        let name = self.fresh("t");
        let mut body = Vec::new();
        let mut forks = Vec::new();
        for _ in 0..self.rng.gen_range(1..=5) {
            match self.rng.gen_range(0..10) {
                0..=4 => self.access_block(&mut body, &name),
                5..=6 if depth < MAX_DEPTH => {
                    let child = self.txn_script(depth + 1);
                    let at = self.site();
                    let var = self.fresh("r");
                    body.push(format!("relcall {child} at {at} -> {var}"));
                }
                7 if depth < MAX_DEPTH => {
                    let helper = self.helper_script(depth);
                    let at = self.site();
                    let h = self.fresh("h");
                    body.push(format!("fork {helper} at {at} -> {h}"));
                    forks.push(h);
                }
                _ => body.push(format!("sleep {}", self.rng.gen_range(1..=4))),
            }
        }
        for h in forks {
            body.push(format!("wait {h}"));
        }
        body.push(if self.rng.gen_bool(0.85) { "exit ok".into() } else { "exit fail".into() });
        self.emit(&name, &body);
        name
    }

    fn helper_script(&mut self, depth: usize) -> String {
        let name = self.fresh("p");
        let mut body = Vec::new();
        self.access_block(&mut body, &name);
        if depth + 1 < MAX_DEPTH && self.rng.gen_bool(0.3) {
            let child = self.txn_script(depth + 1);
            let at = self.site();
            body.push(format!("relcall {child} at {at}"));
        }
        self.emit(&name, &body);
        name
    }

    fn emit(&mut self, name: &str, body: &[String]) {
        let mut s = format!("script {name}\n");
        for line in body {
            let _ = writeln!(s, "  {line}");
        }
        s.push_str("end\n");
        self.scripts.push(s);
    }
}

/// Scenario text for `seed`.
pub fn generate(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = rng.gen_range(2..=MAX_SITES);
    let nfiles = rng.gen_range(1..=MAX_FILES);
    let mut g = Gen {
        rng,
        sites,
        files: Vec::new(),
        scripts: Vec::new(),
        ops_left: MAX_OPS,
        next_script: 0,
        next_value: 0,
    };
    let mut out = format!("# generated from seed {seed}\nsites {sites}\npage-size 64\nheal-at-end\n");
    let _ = writeln!(out, "retry-delay {}", g.rng.gen_range(1..=3));
    for i in 0..nfiles {
        let name = format!("F{i}");
        let pages = g.rng.gen_range(1..=2);
        let site = g.site();
        let init: Vec<String> = (0..pages).map(|p| quote(&format!("{name}.init{p}"))).collect();
        let _ = writeln!(out, "file {name} at {site} pages {}", init.join(" "));
        g.files.push((name, pages));
    }
    let tops = g.rng.gen_range(1..=MAX_TOP_LEVEL);
    let mut roots = String::new();
    for k in 0..tops {
        let t = g.txn_script(1);
        let main = format!("main{k}");
        let at = g.site();
        g.emit(&main, &[format!("relcall {t} at {at} -> r"), "exit all r".into()]);
        let site = g.site();
        let start = g.rng.gen_range(1..=8);
        let _ = writeln!(roots, "root P{k} at {site} start {start} {main}");
    }
    for s in &g.scripts {
        out.push_str(s);
    }
    out.push_str(&roots);
    if g.rng.gen_bool(0.6) {
        let mut ids: Vec<u32> = (1..=sites).collect();
        ids.shuffle(&mut g.rng);
        let cut = g.rng.gen_range(1..sites as usize);
        let side = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let groups = format!("{} | {}", side(&ids[..cut]), side(&ids[cut..]));
        if g.rng.gen_bool(0.5) {
            let at = g.rng.gen_range(2..=30);
            let _ = writeln!(out, "fault at {at} partition {groups}");
            let _ = writeln!(out, "fault at {} heal", at + g.rng.gen_range(3..=30));
        } else {
            let kinds = [
                "REQCOMMIT", "GRTCOMMIT", "TSSCOMMIT", "RTSSCOMMIT", "SUBCOMMIT", "PREPARE", "VOTE",
                "COMMIT", "ACK", "OPEN", "WRITE", "RELCALL", "FORCEABT", "TSSABORT",
            ];
            let kind = kinds.choose(&mut g.rng).unwrap();
            let _ = writeln!(out, "fault before-send {kind} {} partition {groups}", g.rng.gen_range(1..=2));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct FuzzFailure {
    pub seed: u64,
    pub scenario: String,
    pub report: String,
}

#[derive(Clone, Debug, Default)]
pub struct FuzzSummary {
    pub runs: u64,
    pub failures: Vec<FuzzFailure>,
    /// Committed top-level transactions across all runs.
    pub committed: usize,
}

/// Runs one seed; returns the number of committed top-level transactions.
pub fn check_seed(seed: u64, opts: &RunOptions) -> Result<usize, FuzzFailure> {
    let text = generate(seed);
    let fail = |report: String| FuzzFailure { seed, scenario: text.clone(), report };
    let scenario = parse(&text).map_err(|e| fail(format!("generator produced bad text: {e}")))?;
    let opts = RunOptions { oracles: true, ..opts.clone() };
    let report = run(&scenario, &opts);
    let blocked_roots = report.results.values().any(|r| r.exit.is_none());
    if !report.passed() || report.status != RunStatus::Quiescent || blocked_roots {
        return Err(fail(report.summary()));
    }
    Ok(report
        .outcomes
        .iter()
        .filter(|(t, s)| t.is_top_level() && **s == Status::Committed)
        .count())
}

pub fn run_many(first_seed: u64, count: u64, opts: &RunOptions) -> FuzzSummary {
    let mut summary = FuzzSummary::default();
    for seed in first_seed..first_seed + count {
        summary.runs += 1;
        match check_seed(seed, opts) {
            Ok(n) => summary.committed += n,
            Err(f) => summary.failures.push(f),
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_parses() {
        for seed in 0..50 {
            let a = generate(seed);
            assert_eq!(a, generate(seed));
            let s = parse(&a).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{a}"));
            assert!(s.spec.sites.len() <= MAX_SITES as usize);
            assert!(s.spec.files.len() <= MAX_FILES);
            assert!(s.spec.roots.len() <= MAX_TOP_LEVEL);
            let ops: usize = s
                .spec
                .scripts
                .values()
                .flat_map(|sc| sc.body.iter())
                .filter(|i| matches!(i, crate::txn::Instr::Read { .. } | crate::txn::Instr::Write { .. }))
                .count();
            assert!(ops <= MAX_OPS);
        }
    }
}
