//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! [scenario]
//! mode = vhaha
//! heartbeat_period = 100ms
//!
//! [ha ha1]
//! link = 1
//! role = active
//!
//! [fa fa1]
//! [mn mn1]
//! at = fa1
//! [cn cn1]
//! [router core]
//!
//! [edges]
//! ha1 -- core = 5ms
//!
//! [traffic]
//! cn1 -> mn1 = 100/s from 1s to 20s
//!
//! [events]
//! fail = ha1 @ 10s permanent
//! fail = link 2 @ 12s
//! fail = active @ 15s
//! recover = ha1 @ 14s
//! register = mn1 @ 3s
//! move = mn1 -> fa2 @ 4s
//! ```
//!
//! Durations are a decimal number with a `us`, `ms` or `s` suffix and must
//! be a whole number of microseconds. Event times count from the start of
//! the run.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;
use vhaha_core::scenario::{
    ConfiguredRole, EdgeSpec, FailTarget, FailureSpec, HaSpec, Issue, MnSpec, Mode, MoveSpec, RecoverSpec,
    RegisterSpec, ScenarioConfig, Subject, TrafficSpec,
};
use vhaha_core::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{message}")]
    Global { message: String },
}

/// Every problem found in one file, in line order for syntax errors and
/// validation order for the rest.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_char('\n')?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

const SETTINGS: [&str; 12] = [
    "mode",
    "seed",
    "duration",
    "heartbeat_period",
    "backups_per_mn",
    "mn_timeout_periods",
    "security_bits",
    "processing",
    "wireless",
    "jitter",
    "binding_lifetime",
    "max_events",
];

/// Source line of every entry, for mapping validation issues back.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    settings: BTreeMap<&'static str, usize>,
    has: Vec<usize>,
    fas: Vec<usize>,
    mns: Vec<usize>,
    cns: Vec<usize>,
    routers: Vec<usize>,
    edges: Vec<usize>,
    traffic: Vec<usize>,
    failures: Vec<usize>,
    recoveries: Vec<usize>,
    registrations: Vec<usize>,
    moves: Vec<usize>,
}

impl SourceMap {
    pub fn line_of(&self, subject: Subject) -> Option<usize> {
        let at = |v: &Vec<usize>, i: usize| v.get(i).copied();
        match subject {
            Subject::Setting(k) => self.settings.get(k).copied(),
            Subject::Ha(i) => at(&self.has, i),
            Subject::Fa(i) => at(&self.fas, i),
            Subject::Mn(i) => at(&self.mns, i),
            Subject::Cn(i) => at(&self.cns, i),
            Subject::Router(i) => at(&self.routers, i),
            Subject::Edge(i) => at(&self.edges, i),
            Subject::Traffic(i) => at(&self.traffic, i),
            Subject::Failure(i) => at(&self.failures, i),
            Subject::Recover(i) => at(&self.recoveries, i),
            Subject::Register(i) => at(&self.registrations, i),
            Subject::Move(i) => at(&self.moves, i),
            Subject::Topology => None,
        }
    }

    fn issue(&self, issue: Issue) -> ScenarioError {
        match self.line_of(issue.subject) {
            Some(line) => ScenarioError::Invalid {
                line,
                message: issue.message,
            },
            None => ScenarioError::Global { message: issue.message },
        }
    }
}

/// Parse and validate.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioErrors> {
    let (cfg, map) = parse_unchecked(text)?;
    let issues = cfg.validate();
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ScenarioErrors(issues.into_iter().map(|i| map.issue(i)).collect()))
    }
}

/// Parse syntax only; the result may still fail [`ScenarioConfig::validate`].
pub fn parse_unchecked(text: &str) -> Result<(ScenarioConfig, SourceMap), ScenarioErrors> {
    let mut p = Parser::default();
    for (i, raw) in text.lines().enumerate() {
        p.line(i + 1, raw);
    }
    p.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Scenario,
    Ha(usize),
    Mn(usize),
    /// Header-only entity; any key is an error.
    Bare,
    Edges,
    Traffic,
    Events,
    /// After a bad header; lines are skipped.
    Skip,
}

struct HaDraft {
    name: String,
    line: usize,
    link: Option<u32>,
    role: Option<ConfiguredRole>,
    capacity: u32,
    throughput_max: f64,
    seen: Vec<String>,
}

struct MnDraft {
    name: String,
    line: usize,
    at: Option<String>,
}

struct Parser {
    cfg: ScenarioConfig,
    map: SourceMap,
    errors: Vec<ScenarioError>,
    section: Section,
    has: Vec<HaDraft>,
    mns: Vec<MnDraft>,
    scenario_seen: bool,
}

impl Default for Parser {
    fn default() -> Self {
        Parser {
            cfg: ScenarioConfig::default(),
            map: SourceMap::default(),
            errors: Vec::new(),
            section: Section::None,
            has: Vec::new(),
            mns: Vec::new(),
            scenario_seen: false,
        }
    }
}

type Res<T> = Result<T, String>;

impl Parser {
    fn line(&mut self, n: usize, raw: &str) {
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            return;
        }
        let r = if text.starts_with('[') {
            self.header(n, text)
        } else {
            self.body(n, text)
        };
        if let Err(message) = r {
            self.errors.push(ScenarioError::Syntax { line: n, message });
        }
    }

    fn header(&mut self, n: usize, text: &str) -> Res<()> {
        self.section = Section::Skip;
        let inner = text
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or("unterminated section header")?;
        let words: Vec<&str> = inner.split_whitespace().collect();
        let named = |kind: &str| -> Res<String> {
            match words.as_slice() {
                [_, name] => {
                    check_name(name)?;
                    Ok((*name).to_string())
                }
                _ => Err(format!("expected [{kind} NAME]")),
            }
        };
        self.section = match words.first().copied() {
            Some("scenario") if words.len() == 1 => {
                if std::mem::replace(&mut self.scenario_seen, true) {
                    return Err("duplicate [scenario] section".into());
                }
                Section::Scenario
            }
            Some("edges") if words.len() == 1 => Section::Edges,
            Some("traffic") if words.len() == 1 => Section::Traffic,
            Some("events") if words.len() == 1 => Section::Events,
            Some("ha") => {
                let name = named("ha")?;
                if name == "active" {
                    return Err("\"active\" is reserved for failure targets".into());
                }
                self.has.push(HaDraft {
                    name,
                    line: n,
                    link: None,
                    role: None,
                    capacity: 100,
                    throughput_max: 1000.0,
                    seen: Vec::new(),
                });
                Section::Ha(self.has.len() - 1)
            }
            Some("mn") => {
                self.mns.push(MnDraft {
                    name: named("mn")?,
                    line: n,
                    at: None,
                });
                Section::Mn(self.mns.len() - 1)
            }
            Some("fa") => {
                self.cfg.fas.push(named("fa")?);
                self.map.fas.push(n);
                Section::Bare
            }
            Some("cn") => {
                self.cfg.cns.push(named("cn")?);
                self.map.cns.push(n);
                Section::Bare
            }
            Some("router") => {
                self.cfg.routers.push(named("router")?);
                self.map.routers.push(n);
                Section::Bare
            }
            _ => return Err(format!("unknown section [{inner}]")),
        };
        Ok(())
    }

    fn body(&mut self, n: usize, text: &str) -> Res<()> {
        match self.section {
            Section::None => Err("entry outside any section".into()),
            Section::Skip => Ok(()),
            Section::Bare => Err("this section takes no keys".into()),
            Section::Scenario => {
                let (k, v) = key_value(text)?;
                self.setting(n, k, v)
            }
            Section::Ha(i) => {
                let (k, v) = key_value(text)?;
                let h = &mut self.has[i];
                if h.seen.iter().any(|s| s == k) {
                    return Err(format!("duplicate key {k}"));
                }
                h.seen.push(k.into());
                match k {
                    "link" => h.link = Some(number(v)?),
                    "role" => h.role = Some(ConfiguredRole::parse(v).ok_or_else(|| format!("unknown role {v}"))?),
                    "capacity" => h.capacity = number(v)?,
                    "throughput_max" => h.throughput_max = real(v)?,
                    _ => return Err(format!("unknown ha key {k}")),
                }
                Ok(())
            }
            Section::Mn(i) => {
                let (k, v) = key_value(text)?;
                let m = &mut self.mns[i];
                match k {
                    "at" if m.at.is_some() => Err("duplicate key at".into()),
                    "at" => {
                        check_name(v)?;
                        m.at = Some(v.into());
                        Ok(())
                    }
                    _ => Err(format!("unknown mn key {k}")),
                }
            }
            Section::Edges => {
                let w: Vec<&str> = text.split_whitespace().collect();
                let [a, "--", b, "=", d] = w.as_slice() else {
                    return Err("expected `a -- b = DELAY`".into());
                };
                check_name(a)?;
                check_name(b)?;
                self.cfg.edges.push(EdgeSpec {
                    a: (*a).into(),
                    b: (*b).into(),
                    delay: parse_duration(d)?,
                });
                self.map.edges.push(n);
                Ok(())
            }
            Section::Traffic => {
                let w: Vec<&str> = text.split_whitespace().collect();
                let [cn, "->", mn, "=", rate, "from", start, "to", stop] = w.as_slice() else {
                    return Err("expected `cn -> mn = RATE/s from T to T`".into());
                };
                check_name(cn)?;
                check_name(mn)?;
                let rate = rate.strip_suffix("/s").ok_or("rate needs a /s suffix")?;
                self.cfg.traffic.push(TrafficSpec {
                    cn: (*cn).into(),
                    mn: (*mn).into(),
                    rate: real(rate)?,
                    start: parse_time(start)?,
                    stop: parse_time(stop)?,
                });
                self.map.traffic.push(n);
                Ok(())
            }
            Section::Events => self.event(n, text),
        }
    }

    fn setting(&mut self, n: usize, k: &str, v: &str) -> Res<()> {
        let key = *SETTINGS.iter().find(|s| **s == k).ok_or_else(|| format!("unknown setting {k}"))?;
        if self.map.settings.insert(key, n).is_some() {
            return Err(format!("duplicate key {k}"));
        }
        let c = &mut self.cfg;
        match key {
            "mode" => c.mode = Mode::parse(v).ok_or_else(|| format!("unknown mode {v}"))?,
            "seed" => c.seed = number(v)?,
            "duration" => c.duration = parse_duration(v)?,
            "heartbeat_period" => c.heartbeat_period = parse_duration(v)?,
            "backups_per_mn" => c.backups_per_mn = Some(number(v)?),
            "mn_timeout_periods" => c.mn_timeout_periods = number(v)?,
            "security_bits" => c.security_bits = number(v)?,
            "processing" => c.processing = parse_duration(v)?,
            "wireless" => c.wireless = parse_duration(v)?,
            "jitter" => c.jitter = parse_duration(v)?,
            "binding_lifetime" => c.binding_lifetime = number(v)?,
            "max_events" => c.max_events = number(v)?,
            _ => unreachable!("SETTINGS and this match agree"),
        }
        Ok(())
    }

    fn event(&mut self, n: usize, text: &str) -> Res<()> {
        let (k, v) = key_value(text)?;
        let (what, at) = v.rsplit_once('@').ok_or("event needs `@ TIME`")?;
        let mut tail = at.split_whitespace();
        let at = parse_time(tail.next().ok_or("missing event time")?)?;
        let flag = tail.next();
        if tail.next().is_some() {
            return Err("trailing tokens after event".into());
        }
        if flag.is_some() && k != "fail" {
            return Err(format!("unexpected {} after {k} event", flag.unwrap_or_default()));
        }
        let w: Vec<&str> = what.split_whitespace().collect();
        match (k, w.as_slice()) {
            ("fail", target) => {
                let target = match target {
                    ["active"] => FailTarget::CurrentActive,
                    ["link", l] => FailTarget::Link(number(l)?),
                    [name] => {
                        check_name(name)?;
                        FailTarget::Ha((*name).into())
                    }
                    _ => return Err("expected `fail = HA|active|link N @ TIME [permanent]`".into()),
                };
                let permanent = match flag {
                    None => false,
                    Some("permanent") => true,
                    Some(f) => return Err(format!("unknown failure flag {f}")),
                };
                self.cfg.failures.push(FailureSpec { target, at, permanent });
                self.map.failures.push(n);
            }
            ("recover", [ha]) => {
                check_name(ha)?;
                self.cfg.recoveries.push(RecoverSpec { ha: (*ha).into(), at });
                self.map.recoveries.push(n);
            }
            ("register", [mn]) => {
                check_name(mn)?;
                self.cfg.registrations.push(RegisterSpec { mn: (*mn).into(), at });
                self.map.registrations.push(n);
            }
            ("move", [mn, "->", fa]) => {
                check_name(mn)?;
                check_name(fa)?;
                self.cfg.moves.push(MoveSpec {
                    mn: (*mn).into(),
                    to: (*fa).into(),
                    at,
                });
                self.map.moves.push(n);
            }
            ("recover" | "register" | "move", _) => return Err(format!("malformed {k} event")),
            _ => return Err(format!("unknown event {k}")),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(ScenarioConfig, SourceMap), ScenarioErrors> {
        for h in self.has {
            let (Some(link), Some(role)) = (h.link, h.role) else {
                let missing = if h.link.is_none() { "link" } else { "role" };
                self.errors.push(ScenarioError::Syntax {
                    line: h.line,
                    message: format!("ha {} is missing `{missing}`", h.name),
                });
                continue;
            };
            self.cfg.has.push(HaSpec {
                name: h.name,
                link,
                role,
                capacity: h.capacity,
                throughput_max: h.throughput_max,
            });
            self.map.has.push(h.line);
        }
        for m in self.mns {
            let Some(at) = m.at else {
                self.errors.push(ScenarioError::Syntax {
                    line: m.line,
                    message: format!("mn {} is missing `at`", m.name),
                });
                continue;
            };
            self.cfg.mns.push(MnSpec { name: m.name, at });
            self.map.mns.push(m.line);
        }
        if self.errors.is_empty() {
            Ok((self.cfg, self.map))
        } else {
            self.errors.sort_by_key(|e| match e {
                ScenarioError::Syntax { line, .. } | ScenarioError::Invalid { line, .. } => *line,
                ScenarioError::Global { .. } => usize::MAX,
            });
            Err(ScenarioErrors(self.errors))
        }
    }
}

fn key_value(text: &str) -> Res<(&str, &str)> {
    let (k, v) = text.split_once('=').ok_or("expected `key = value`")?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err("expected `key = value`".into());
    }
    Ok((k, v))
}

fn check_name(s: &str) -> Res<()> {
    let ok = !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b)) && s != "--";
    if ok {
        Ok(())
    } else {
        Err(format!("bad name {s:?}: use letters, digits, `_`, `.` or `-`"))
    }
}

fn number<T: std::str::FromStr>(s: &str) -> Res<T> {
    s.parse().map_err(|_| format!("expected a non-negative integer, got {s:?}"))
}

fn real(s: &str) -> Res<f64> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number, got {s:?}")),
    }
}

/// `12`, `0.5` or `1.25` followed by `us`, `ms` or `s`, exact to the
/// microsecond.
pub fn parse_duration(s: &str) -> Res<SimDuration> {
    let (num, scale) = if let Some(n) = s.strip_suffix("us").or_else(|| s.strip_suffix("µs")) {
        (n, 1u128)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1_000)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1_000_000)
    } else {
        return Err(format!("duration {s:?} needs a unit (us, ms, s)"));
    };
    let (whole, frac) = num.split_once('.').unwrap_or((num, ""));
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !digits(whole) || (num.contains('.') && !digits(frac)) {
        return Err(format!("malformed duration {s:?}"));
    }
    let bad = || format!("duration {s:?} is out of range");
    let mut us: u128 = whole.parse::<u128>().map_err(|_| bad())?.checked_mul(scale).ok_or_else(bad)?;
    let mut unit = scale;
    for d in frac.bytes() {
        if unit % 10 != 0 {
            if d != b'0' {
                return Err(format!("duration {s:?} is finer than a microsecond"));
            }
            continue;
        }
        unit /= 10;
        us += u128::from(d - b'0') * unit;
    }
    u64::try_from(us).map(SimDuration::from_micros).map_err(|_| bad())
}

pub fn parse_time(s: &str) -> Res<SimTime> {
    parse_duration(s).map(|d| SimTime::ZERO + d)
}

/// Largest unit that represents `d` exactly.
pub fn format_duration(d: SimDuration) -> String {
    let us = d.as_micros();
    if us.is_multiple_of(1_000_000) {
        format!("{}s", us / 1_000_000)
    } else if us.is_multiple_of(1_000) {
        format!("{}ms", us / 1_000)
    } else {
        format!("{us}us")
    }
}

fn format_time(t: SimTime) -> String {
    format_duration(t.since(SimTime::ZERO))
}

/// Canonical text: every setting spelled out, sections in a fixed order,
/// events grouped by kind. `parse_unchecked(emit_scenario(c))` yields `c`.
pub fn emit_scenario(c: &ScenarioConfig) -> String {
    let mut s = String::new();
    let mut w = |line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    w("[scenario]".into());
    w(format!("mode = {}", c.mode));
    w(format!("seed = {}", c.seed));
    w(format!("duration = {}", format_duration(c.duration)));
    w(format!("heartbeat_period = {}", format_duration(c.heartbeat_period)));
    if let Some(k) = c.backups_per_mn {
        w(format!("backups_per_mn = {k}"));
    }
    w(format!("mn_timeout_periods = {}", c.mn_timeout_periods));
    w(format!("security_bits = {}", c.security_bits));
    w(format!("processing = {}", format_duration(c.processing)));
    w(format!("wireless = {}", format_duration(c.wireless)));
    w(format!("jitter = {}", format_duration(c.jitter)));
    w(format!("binding_lifetime = {}", c.binding_lifetime));
    w(format!("max_events = {}", c.max_events));
    for h in &c.has {
        w(String::new());
        w(format!("[ha {}]", h.name));
        w(format!("link = {}", h.link));
        w(format!("role = {}", h.role.as_str()));
        w(format!("capacity = {}", h.capacity));
        w(format!("throughput_max = {}", h.throughput_max));
    }
    let bare = |w: &mut dyn FnMut(String), kind: &str, names: &[String]| {
        if !names.is_empty() {
            w(String::new());
        }
        for n in names {
            w(format!("[{kind} {n}]"));
        }
    };
    bare(&mut w, "fa", &c.fas);
    for m in &c.mns {
        w(String::new());
        w(format!("[mn {}]", m.name));
        w(format!("at = {}", m.at));
    }
    bare(&mut w, "cn", &c.cns);
    bare(&mut w, "router", &c.routers);
    if !c.edges.is_empty() {
        w(String::new());
        w("[edges]".into());
        for e in &c.edges {
            w(format!("{} -- {} = {}", e.a, e.b, format_duration(e.delay)));
        }
    }
    if !c.traffic.is_empty() {
        w(String::new());
        w("[traffic]".into());
        for t in &c.traffic {
            w(format!(
                "{} -> {} = {}/s from {} to {}",
                t.cn,
                t.mn,
                t.rate,
                format_time(t.start),
                format_time(t.stop)
            ));
        }
    }
    if !(c.failures.is_empty() && c.recoveries.is_empty() && c.registrations.is_empty() && c.moves.is_empty()) {
        w(String::new());
        w("[events]".into());
        for f in &c.failures {
            let target = match &f.target {
                FailTarget::Link(l) => format!("link {l}"),
                t => t.to_string(),
            };
            let flag = if f.permanent { " permanent" } else { "" };
            w(format!("fail = {target} @ {}{flag}", format_time(f.at)));
        }
        for r in &c.recoveries {
            w(format!("recover = {} @ {}", r.ha, format_time(r.at)));
        }
        for r in &c.registrations {
            w(format!("register = {} @ {}", r.mn, format_time(r.at)));
        }
        for m in &c.moves {
            w(format!("move = {} -> {} @ {}", m.mn, m.to, format_time(m.at)));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[ha ha1]
link = 1
role = active
[ha ha2]
link = 2
role = backup
[fa fa1]
[mn mn1]
at = fa1
[cn cn1]
[edges]
ha1 -- ha2 = 5ms
ha2 -- fa1 = 5ms
fa1 -- cn1 = 5ms
";

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_scenario(MINIMAL).unwrap();
        let d = ScenarioConfig::default();
        assert_eq!(c.mode, Mode::Vhaha);
        assert_eq!(c.heartbeat_period, d.heartbeat_period);
        assert_eq!(c.mn_timeout_periods, 10);
        assert_eq!(c.has[1].capacity, 100);
        assert_eq!(c.edges[0].delay, SimDuration::from_millis(5));
    }

    #[test]
    fn single_home_link_is_rejected_with_a_line() {
        let text = MINIMAL.replace("link = 2", "link = 1");
        let e = parse_scenario(&text).unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert!(matches!(&e.0[0], ScenarioError::Global { message } if message.contains("two home links")));
        let text = format!("{MINIMAL}[events]\nfail = ha9 @ 1s\nmove = mn1 -> fa7 @ 2s\n");
        let e = parse_scenario(&text).unwrap_err();
        let lines: Vec<_> = e
            .0
            .iter()
            .map(|x| match x {
                ScenarioError::Invalid { line, .. } => *line,
                other => panic!("{other}"),
            })
            .collect();
        assert_eq!(lines, [16, 17]);
    }

    #[test]
    fn all_syntax_errors_are_collected() {
        let text = "\
[scenario]
mode = triple
duration = 1.5us
bogus = 1
[ha ha1]
link = x
[edges]
a - b = 5ms
[events]
fail = ha1 @ 1s forever
";
        let e = parse_unchecked(text).unwrap_err();
        let lines: Vec<usize> = e
            .0
            .iter()
            .map(|x| match x {
                ScenarioError::Syntax { line, .. } => *line,
                other => panic!("{other}"),
            })
            .collect();
        assert_eq!(lines, [2, 3, 4, 5, 6, 8, 10]);
    }

    #[test]
    fn durations_are_exact() {
        assert_eq!(parse_duration("0.3s"), Ok(SimDuration::from_millis(300)));
        assert_eq!(parse_duration("1.000001s"), Ok(SimDuration::from_micros(1_000_001)));
        assert_eq!(parse_duration("2.50ms"), Ok(SimDuration::from_micros(2500)));
        assert_eq!(parse_duration("7us"), Ok(SimDuration::from_micros(7)));
        assert_eq!(parse_duration("1.0us"), Ok(SimDuration::from_micros(1)));
        assert!(parse_duration("1.5us").is_err());
        assert!(parse_duration("5").is_err());
        assert!(parse_duration(".5s").is_err());
        assert!(parse_duration("99999999999999999999s").is_err());
        for us in [0, 1, 999, 1000, 1_500_000, 3_000_000] {
            let d = SimDuration::from_micros(us);
            assert_eq!(parse_duration(&format_duration(d)), Ok(d));
        }
    }

    #[test]
    fn emit_is_a_normal_form() {
        let text = format!(
            "# reference\n{MINIMAL}[traffic]\ncn1 -> mn1 = 100/s from 1s to 2.5s   # burst\n\
             [events]\nregister = mn1 @ 0.2s\nfail = link 2 @ 1s permanent\nfail = active @ 2s\n"
        );
        let c = parse_scenario(&text).unwrap();
        let once = emit_scenario(&c);
        assert_eq!(parse_scenario(&once).unwrap(), c);
        assert_eq!(emit_scenario(&parse_scenario(&once).unwrap()), once);
        assert!(once.contains("fail = link 2 @ 1s permanent\nfail = active @ 2s\nregister = mn1 @ 200ms\n"));
    }
}
