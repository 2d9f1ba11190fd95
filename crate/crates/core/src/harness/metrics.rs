//! Message and durable-write counts of a transactional run against a
//! plain-close baseline over the same files.

use std::fmt;
use std::fmt::Write as _;

use super::runner::{run, RunOptions};
use super::scenario::Scenario;
use crate::msg::Phase;
use crate::net::{Counter, Metrics};

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub base: Metrics,
    pub txn: Metrics,
    pub base_passed: bool,
    pub txn_passed: bool,
    /// Files both scenarios declare; the comparison is only meaningful when
    /// they match.
    pub same_files: bool,
}

impl MetricsReport {
    pub fn base_commit_messages(&self) -> u64 {
        self.base.get(Counter::Remote, Phase::Commit)
    }

    pub fn txn_commit_messages(&self) -> u64 {
        self.txn.get(Counter::Remote, Phase::Commit)
    }

    /// Commit-phase remote messages, transactional over baseline. `None`
    /// when the baseline sent none (nothing to commit).
    pub fn message_ratio(&self) -> Option<f64> {
        ratio(self.txn_commit_messages(), self.base_commit_messages())
    }

    pub fn durable_write_ratio(&self) -> Option<f64> {
        ratio(self.txn.total(Counter::DurableWrites), self.base.total(Counter::DurableWrites))
    }
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b != 0).then(|| a as f64 / b as f64)
}

fn show(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.same_files {
            writeln!(f, "warning: scenarios declare different files")?;
        }
        for (name, m, ok) in [("base", &self.base, self.base_passed), ("txn", &self.txn, self.txn_passed)] {
            writeln!(
                f,
                "{name}: commit-phase remote {} durable writes {} remote total {} ({})",
                m.get(Counter::Remote, Phase::Commit),
                m.total(Counter::DurableWrites),
                m.total(Counter::Remote),
                if ok { "passed" } else { "FAILED" }
            )?;
        }
        writeln!(f, "commit message ratio: {}", show(self.message_ratio()))?;
        writeln!(f, "durable write ratio: {}", show(self.durable_write_ratio()))
    }
}

pub fn compare_metrics(base: &Scenario, txn: &Scenario, opts: &RunOptions) -> MetricsReport {
    let names = |s: &Scenario| s.spec.files.iter().map(|f| f.name.clone()).collect::<Vec<_>>();
    let b = run(base, opts);
    let t = run(txn, opts);
    MetricsReport {
        base_passed: b.passed(),
        txn_passed: t.passed(),
        base: b.metrics,
        txn: t.metrics,
        same_files: names(base) == names(txn),
    }
}

/// Two-page files F1..Fn with 1024-byte pages, each on one of sites 2..4;
/// the writer runs at site 1 and updates the second page of each.
fn header(n: usize) -> String {
    let mut s = String::from("sites 4\npage-size 1024\n");
    for i in 1..=n {
        let _ = writeln!(s, "file F{i} at {} pages \"first\" \"old\"", site_of(i));
    }
    s
}

fn site_of(i: usize) -> usize {
    2 + (i - 1) % 3
}

fn write_all(n: usize, body: &mut String) {
    for i in 1..=n {
        let _ = writeln!(body, "  open F{i} write\n  write F{i} 1 \"new\"\n  close F{i}");
    }
}

/// A process outside any transaction writes each file and closes it.
pub fn plain_close_scenario(n: usize) -> String {
    let mut s = header(n);
    s.push_str("script main\n");
    write_all(n, &mut s);
    s.push_str("  exit ok\nend\nroot P at 1 main\n");
    for i in 1..=n {
        let _ = writeln!(s, "expect durable F{i}@{} 1 \"new\"", site_of(i));
    }
    s
}

/// One top-level transaction at site 1 writes every file.
pub fn top_level_scenario(n: usize) -> String {
    let mut s = header(n);
    s.push_str("script t\n");
    write_all(n, &mut s);
    s.push_str("  exit ok\nend\nscript main\n  relcall t at 1 -> r\n  exit all r\nend\nroot P at 1 main\n");
    s.push_str("expect var P.r committed\n");
    for i in 1..=n {
        let _ = writeln!(s, "expect durable F{i}@{} 1 \"new\"", site_of(i));
    }
    s
}

/// A top-level transaction whose only work is a subtransaction writing every
/// file. The top level waits 20 steps after the child returns, then commits
/// or aborts.
pub fn subtransaction_scenario(n: usize, commit: bool) -> String {
    let mut s = header(n);
    s.push_str("script child\n");
    write_all(n, &mut s);
    s.push_str("  exit ok\nend\n");
    let _ = writeln!(
        s,
        "script t\n  relcall child at 1 -> c\n  sleep 20\n  exit {}\nend",
        if commit { "ok" } else { "fail" }
    );
    s.push_str("script main\n  relcall t at 1 -> r\n  exit all r\nend\nroot P at 1 main\n");
    let (outcome, text) = if commit { ("committed", "new") } else { ("aborted", "old") };
    let _ = writeln!(s, "expect var P.r {outcome}");
    for i in 1..=n {
        let _ = writeln!(s, "expect durable F{i}@{} 1 \"{text}\"", site_of(i));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::parse;

    fn compare(n: usize) -> MetricsReport {
        let b = parse(&plain_close_scenario(n)).unwrap();
        let t = parse(&top_level_scenario(n)).unwrap();
        compare_metrics(&b, &t, &RunOptions::default())
    }

    #[test]
    fn zero_files_ratio_undefined() {
        let r = compare(0);
        assert_eq!(r.message_ratio(), None);
        assert!(r.to_string().contains("undefined"));
    }

    #[test]
    fn one_file_ratio_two() {
        let r = compare(1);
        assert!(r.base_passed && r.txn_passed, "{r}");
        assert_eq!(r.base_commit_messages(), 2);
        assert_eq!(r.message_ratio(), Some(2.0), "{r}");
    }
}
