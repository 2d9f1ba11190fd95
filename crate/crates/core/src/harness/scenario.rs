//! Line-oriented scenario files.
//!
//! ```text
//! sites 3
//! file F at 3 pages "a" "b"
//! script top
//!   open F write
//!   write F 0 "x"
//!   exit ok
//! end
//! script main
//!   relcall top at 2 -> r
//!   exit all r
//! end
//! root P at 1 main
//! fault before-send TSSCOMMIT partition 1,2 | 3
//! expect var P.r committed
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::filestore::{FileName, DEFAULT_PAGE_SIZE};
use crate::ids::{SiteId, Tid};
use crate::msg::{Phase, KINDS};
use crate::net::Counter;
use crate::tlock::LockMode;
use crate::txn::{Config, ExitSpec, Instr, Script, Status, Value};
use crate::world::{Fault, FaultAction, FileDecl, RootDecl, Trigger, WorldSpec};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ScenarioError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Le,
    Ge,
    Lt,
    Gt,
}

impl CmpOp {
    pub fn eval(self, a: u64, b: u64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "==",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Check {
    /// One durable page of a copy.
    DurablePage { file: FileName, site: SiteId, page: usize, text: String },
    /// Every durable page of a copy.
    DurablePages { file: FileName, site: SiteId, pages: Vec<String> },
    Var { label: String, var: String, value: Value },
    Exit { label: String, ok: bool },
    Txn { tid: Tid, status: Status },
    LockNone { file: FileName, site: SiteId },
    /// Write retainers, bottom of the stack first.
    LockWriteRetainers { file: FileName, site: SiteId, tids: Vec<Tid> },
    LockReadRetainers { file: FileName, site: SiteId, tids: Vec<Tid> },
    LockCurrent { file: FileName, site: SiteId, page: usize, text: String },
    Counter { counter: Counter, phase: Option<Phase>, op: CmpOp, value: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expect {
    /// Simulated time to check at; `None` means after the run.
    pub at: Option<u64>,
    pub check: Check,
    pub line: usize,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: WorldSpec,
    pub expects: Vec<Expect>,
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Splits a line into words; double-quoted strings are single words and
/// understand `\"`, `\\` and `\n`. A `#` outside quotes starts a comment.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => return Err("unterminated string".into()),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('n') => s.push('\n'),
                        Some(e @ ('"' | '\\')) => s.push(e),
                        other => return Err(format!("bad escape {other:?}")),
                    },
                    Some(c) => s.push(c),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

/// Quotes a string for scenario text.
pub fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

struct Words<'a> {
    words: &'a [String],
    pos: usize,
}

impl<'a> Words<'a> {
    fn next(&mut self) -> Result<&'a str, String> {
        let w = self.words.get(self.pos).ok_or("unexpected end of line")?;
        self.pos += 1;
        Ok(w)
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).map(String::as_str)
    }

    fn eat(&mut self, w: &str) -> bool {
        if self.peek() == Some(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, w: &str) -> Result<(), String> {
        let got = self.next()?;
        if got == w {
            Ok(())
        } else {
            Err(format!("expected `{w}`, found `{got}`"))
        }
    }

    fn num<T: FromStr>(&mut self) -> Result<T, String> {
        let w = self.next()?;
        w.parse().map_err(|_| format!("expected a number, found `{w}`"))
    }

    fn site(&mut self) -> Result<SiteId, String> {
        parse_site(self.next()?)
    }

    fn rest(&mut self) -> &'a [String] {
        let r = &self.words[self.pos.min(self.words.len())..];
        self.pos = self.words.len();
        r
    }

    fn done(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(w) => Err(format!("unexpected `{w}`")),
        }
    }
}

fn parse_site(w: &str) -> Result<SiteId, String> {
    w.strip_prefix('s')
        .unwrap_or(w)
        .parse()
        .map(SiteId)
        .map_err(|_| format!("bad site `{w}`"))
}

fn parse_site_list(w: &str) -> Result<Vec<SiteId>, String> {
    w.split(',').filter(|s| !s.is_empty()).map(parse_site).collect()
}

fn parse_tid_list(w: &str) -> Result<Vec<Tid>, String> {
    if w == "-" {
        return Ok(vec![]);
    }
    w.split(',')
        .map(|t| t.parse::<Tid>().map_err(|e| e.to_string()))
        .collect()
}

/// `FILE@SITE`
fn parse_copy(w: &str) -> Result<(FileName, SiteId), String> {
    let (f, s) = w.split_once('@').ok_or_else(|| format!("expected FILE@SITE, found `{w}`"))?;
    Ok((FileName::from(f), parse_site(s)?))
}

fn parse_instr(w: &mut Words) -> Result<Instr, String> {
    let op = w.next()?;
    let instr = match op {
        "relcall" => {
            let script = w.next()?.to_string();
            let at = if w.eat("at") { Some(w.site()?) } else { None };
            let var = if w.eat("->") { Some(w.next()?.to_string()) } else { None };
            Instr::Relcall { script, at, var }
        }
        "fork" => {
            let script = w.next()?.to_string();
            let at = if w.eat("at") { Some(w.site()?) } else { None };
            w.expect("->")?;
            Instr::Fork { script, at, name: w.next()?.to_string() }
        }
        "wait" => {
            let name = w.next()?.to_string();
            let var = if w.eat("->") { Some(w.next()?.to_string()) } else { None };
            Instr::Wait { name, var }
        }
        "open" => {
            let file = FileName::from(w.next()?);
            let mode = match w.next()? {
                "read" => LockMode::Read,
                "write" => LockMode::Write,
                m => return Err(format!("bad mode `{m}`")),
            };
            Instr::Open { file, mode }
        }
        "read" => Instr::Read { file: FileName::from(w.next()?), page: w.num()? },
        "write" => Instr::Write {
            file: FileName::from(w.next()?),
            page: w.num()?,
            content: w.next()?.into(),
        },
        "close" => Instr::Close { file: FileName::from(w.next()?) },
        "sleep" => Instr::Sleep(w.num()?),
        "exit" => Instr::Exit(match w.next()? {
            "ok" => ExitSpec::Ok,
            "fail" => ExitSpec::Fail,
            "all" => ExitSpec::All(w.rest().to_vec()),
            e => return Err(format!("bad exit `{e}`")),
        }),
        other => return Err(format!("unknown instruction `{other}`")),
    };
    w.done()?;
    Ok(instr)
}

fn parse_trigger(w: &mut Words) -> Result<Trigger, String> {
    let kind_arg = |w: &mut Words| -> Result<(String, u64), String> {
        let kind = w.next()?.to_string();
        if !KINDS.contains(&kind.as_str()) {
            return Err(format!("unknown message kind `{kind}`"));
        }
        let nth = match w.peek() {
            Some(n) if n.parse::<u64>().is_ok() => w.num()?,
            _ => 1,
        };
        Ok((kind, nth))
    };
    Ok(match w.next()? {
        "at" => Trigger::At(w.num()?),
        "at-message" => Trigger::AtMessage(w.num()?),
        "before-send" => {
            let (kind, nth) = kind_arg(w)?;
            Trigger::BeforeSend { kind, nth }
        }
        "after-deliver" => {
            let (kind, nth) = kind_arg(w)?;
            Trigger::AfterDeliver { kind, nth }
        }
        t => return Err(format!("unknown trigger `{t}`")),
    })
}

fn parse_action(w: &mut Words) -> Result<FaultAction, String> {
    match w.next()? {
        "heal" => Ok(FaultAction::Heal),
        "partition" => {
            let mut groups = vec![BTreeSet::new()];
            for word in w.rest() {
                if word == "|" {
                    groups.push(BTreeSet::new());
                } else {
                    groups.last_mut().unwrap().extend(parse_site_list(word)?);
                }
            }
            if groups.iter().any(BTreeSet::is_empty) {
                return Err("empty partition".into());
            }
            Ok(FaultAction::Partition(groups))
        }
        a => Err(format!("unknown fault action `{a}`")),
    }
}

fn parse_check(w: &mut Words) -> Result<Check, String> {
    let check = match w.next()? {
        "durable" => {
            let (file, site) = parse_copy(w.next()?)?;
            if w.eat("pages") {
                Check::DurablePages { file, site, pages: w.rest().to_vec() }
            } else {
                Check::DurablePage { file, site, page: w.num()?, text: w.next()?.to_string() }
            }
        }
        "var" => {
            let (label, var) = w
                .next()?
                .split_once('.')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or("expected PROCESS.VAR")?;
            let v = w.next()?;
            Check::Var { label, var, value: Value::parse(v).ok_or(format!("bad value `{v}`"))? }
        }
        "exit" => {
            let label = w.next()?.to_string();
            let ok = match w.next()? {
                "ok" => true,
                "fail" => false,
                v => return Err(format!("bad exit `{v}`")),
            };
            Check::Exit { label, ok }
        }
        "txn" => {
            let tid = w.next()?.parse::<Tid>().map_err(|e| e.to_string())?;
            let status = match w.next()? {
                "committed" => Status::Committed,
                "aborted" => Status::Aborted,
                "undefined" => Status::Undefined,
                s => return Err(format!("bad status `{s}`")),
            };
            Check::Txn { tid, status }
        }
        "lock" => {
            let (file, site) = parse_copy(w.next()?)?;
            match w.next()? {
                "none" => Check::LockNone { file, site },
                "wr" => Check::LockWriteRetainers { file, site, tids: parse_tid_list(w.next()?)? },
                "rr" => Check::LockReadRetainers { file, site, tids: parse_tid_list(w.next()?)? },
                "current" => Check::LockCurrent { file, site, page: w.num()?, text: w.next()?.to_string() },
                k => return Err(format!("unknown lock check `{k}`")),
            }
        }
        "counter" => {
            let name = w.next()?;
            let (c, p) = match name.split_once('.') {
                Some((c, p)) => (c, Some(Phase::parse(p).ok_or(format!("unknown phase `{p}`"))?)),
                None => (name, None),
            };
            let counter = Counter::parse(c).ok_or(format!("unknown counter `{c}`"))?;
            let op = match w.next()? {
                "==" => CmpOp::Eq,
                "<=" => CmpOp::Le,
                ">=" => CmpOp::Ge,
                "<" => CmpOp::Lt,
                ">" => CmpOp::Gt,
                o => return Err(format!("bad comparison `{o}`")),
            };
            Check::Counter { counter, phase: p, op, value: w.num()? }
        }
        k => return Err(format!("unknown expectation `{k}`")),
    };
    w.done()?;
    Ok(check)
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let mut spec = WorldSpec {
        page_size: DEFAULT_PAGE_SIZE,
        config: Config::default(),
        ..WorldSpec::default()
    };
    let mut expects = Vec::new();
    let mut current: Option<(String, Vec<Instr>, usize)> = None;
    let mut root_lines = Vec::new();
    let mut refs: Vec<(String, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ScenarioError { line, msg };
        let words = tokenize(raw).map_err(err)?;
        if words.is_empty() {
            continue;
        }
        let mut w = Words { words: &words, pos: 0 };
        if let Some((name, body, _)) = &mut current {
            if w.eat("end") {
                let (name, body) = (std::mem::take(name), std::mem::take(body));
                spec.scripts.insert(name.clone(), Arc::new(Script { name, body }));
                current = None;
                continue;
            }
            let instr = parse_instr(&mut w).map_err(err)?;
            if let Instr::Relcall { script, .. } | Instr::Fork { script, .. } = &instr {
                refs.push((script.clone(), line));
            }
            body.push(instr);
            continue;
        }
        let directive = w.next().map_err(err)?;
        let result: Result<(), String> = (|| {
            match directive {
                "sites" => {
                    let n: u32 = w.num()?;
                    spec.sites = (1..=n).map(SiteId).collect();
                }
                "page-size" => spec.page_size = w.num()?,
                "retry-limit" => spec.config.retry_limit = w.num()?,
                "retry-delay" => spec.config.retry_delay = w.num()?,
                "heal-at-end" => spec.heal_at_end = true,
                "file" => {
                    let name = FileName::from(w.next()?);
                    w.expect("at")?;
                    let replicas = parse_site_list(w.next()?)?;
                    let pages = if w.eat("pages") { w.rest().to_vec() } else { vec![] };
                    spec.files.push(FileDecl { name, replicas, pages });
                }
                "refuse-prepare" => {
                    let file = FileName::from(w.next()?);
                    w.expect("at")?;
                    spec.config.refuse_prepare.insert((file, w.site()?));
                }
                "script" => {
                    let name = w.next()?.to_string();
                    if spec.scripts.contains_key(&name) {
                        return Err(format!("duplicate script `{name}`"));
                    }
                    current = Some((name, Vec::new(), line));
                }
                "root" => {
                    let label = w.next()?.to_string();
                    w.expect("at")?;
                    let site = w.site()?;
                    let start = if w.eat("start") { w.num()? } else { 1 };
                    let script = w.next()?.to_string();
                    refs.push((script.clone(), line));
                    root_lines.push(line);
                    spec.roots.push(RootDecl { label, site, script, start });
                }
                "fault" => {
                    let trigger = parse_trigger(&mut w)?;
                    let action = parse_action(&mut w)?;
                    spec.faults.push(Fault { trigger, action });
                }
                d if d == "expect" || d.starts_with("expect@") => {
                    let at = match d.strip_prefix("expect@") {
                        Some(n) => Some(n.parse().map_err(|_| format!("bad time `{n}`"))?),
                        None => None,
                    };
                    let check = parse_check(&mut w)?;
                    expects.push(Expect { at, check, line });
                }
                d => return Err(format!("unknown directive `{d}`")),
            }
            w.done()
        })();
        result.map_err(err)?;
    }
    if let Some((name, _, line)) = current {
        return Err(ScenarioError { line, msg: format!("script `{name}` has no `end`") });
    }
    validate(&spec, &refs)?;
    Ok(Scenario { spec, expects })
}

fn validate(spec: &WorldSpec, refs: &[(String, usize)]) -> Result<(), ScenarioError> {
    for (script, line) in refs {
        if !spec.scripts.contains_key(script) {
            return Err(ScenarioError { line: *line, msg: format!("unknown script `{script}`") });
        }
    }
    let bad_site = |s: &SiteId| !spec.sites.contains(s);
    let mut labels = BTreeSet::new();
    for r in &spec.roots {
        if bad_site(&r.site) {
            return Err(ScenarioError { line: 0, msg: format!("root {} at unknown site {}", r.label, r.site) });
        }
        if !labels.insert(&r.label) {
            return Err(ScenarioError { line: 0, msg: format!("duplicate root `{}`", r.label) });
        }
    }
    let mut names = BTreeMap::new();
    for f in &spec.files {
        if f.replicas.is_empty() || f.replicas.iter().any(bad_site) {
            return Err(ScenarioError { line: 0, msg: format!("file {} has a bad replica list", f.name) });
        }
        if names.insert(f.name.clone(), ()).is_some() {
            return Err(ScenarioError { line: 0, msg: format!("duplicate file {}", f.name) });
        }
    }
    for s in spec.scripts.values() {
        for i in &s.body {
            let at = match i {
                Instr::Relcall { at, .. } | Instr::Fork { at, .. } => *at,
                _ => None,
            };
            if at.as_ref().is_some_and(bad_site) {
                return Err(ScenarioError { line: 0, msg: format!("script {} names an unknown site", s.name) });
            }
        }
    }
    let mut last_at = 0;
    for f in &spec.faults {
        if let FaultAction::Partition(groups) = &f.action {
            let listed: BTreeSet<SiteId> = groups.iter().flatten().copied().collect();
            let count: usize = groups.iter().map(BTreeSet::len).sum();
            if listed != spec.sites || count != listed.len() {
                return Err(ScenarioError {
                    line: 0,
                    msg: format!("partition for fault `{}` must list every site exactly once", f.trigger),
                });
            }
        }
        if let Trigger::At(n) = f.trigger {
            if n <= last_at {
                return Err(ScenarioError { line: 0, msg: "timed faults must be strictly increasing".into() });
            }
            last_at = n;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# two sites
sites 2
page-size 16
file F at 2 pages "a" "b c"
script child
  open F write
  write F 1 "say \"hi\""
  close F
  exit ok
end
script main
  relcall child at 2 -> r
  fork helper -> h
  wait h -> hv
  exit all r hv
end
script helper
  sleep 3
end
root P at 1 start 4 main
fault before-send TSSCOMMIT partition 1 | 2
fault at 20 heal
expect durable F@2 1 "x"
expect@10 lock F@2 wr s1.t1,s1.t1/s2.t1
expect counter remote.commit == 8
expect var P.r committed
"#;

    #[test]
    fn parses_sample() {
        let s: Scenario = SAMPLE.parse().unwrap();
        assert_eq!(s.spec.sites.len(), 2);
        assert_eq!(s.spec.page_size, 16);
        assert_eq!(s.spec.files[0].pages, vec!["a", "b c"]);
        let child = &s.spec.scripts["child"];
        assert_eq!(
            child.body[1],
            Instr::Write { file: "F".into(), page: 1, content: "say \"hi\"".into() }
        );
        assert_eq!(s.spec.roots[0].start, 4);
        assert_eq!(s.spec.faults.len(), 2);
        assert_eq!(s.expects.len(), 4);
        assert_eq!(s.expects[1].at, Some(10));
        assert!(matches!(
            &s.expects[1].check,
            Check::LockWriteRetainers { tids, .. } if tids.len() == 2
        ));
    }

    #[test]
    fn reports_line_of_error() {
        let e = parse("sites 2\nscript a\n  jump\nend\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse("sites 2\nroot P at 1 nope\n").unwrap_err();
        assert!(e.msg.contains("unknown script"));
        let e = parse("sites 3\nscript a\nend\nfault at 2 partition 1 | 2\n").unwrap_err();
        assert!(e.msg.contains("every site"));
        let e = parse("sites 2\nfault at 5 heal\nfault at 5 heal\n").unwrap_err();
        assert!(e.msg.contains("increasing"));
    }

    #[test]
    fn quote_roundtrips() {
        for s in ["plain", "with \"quotes\"", "back\\slash", "two\nlines", ""] {
            let toks = tokenize(&format!("write F 0 {}", quote(s))).unwrap();
            assert_eq!(toks[3], s);
        }
    }

    #[test]
    fn empty_scenario_is_valid() {
        let s = parse("").unwrap();
        assert!(s.spec.roots.is_empty());
    }
}
