//! Report emission in two layouts that carry the same fields.
//!
//! Both are built from one flat `(section, key, value)` list, so the order
//! is fixed and either layout parses back to the identical report. Names
//! (HAs, MNs, message kinds) must not contain whitespace.
//!
//! Values: times and durations as `S.UUUUUU`, `-` for absent, lists
//! comma-separated. `\` escapes `,`, `\`, a lone `-`, control characters
//! and edge spaces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;
use vhaha_core::forwarding::LossReason;
use vhaha_core::metrics::{FailureReport, MessageCounts, MetricsReport, PacketCounts, RegistrationReport, Suspicion};
use vhaha_core::scenario::Mode;
use vhaha_core::time::{SimDuration, SimTime};

pub const TEXT_MAGIC: &str = "# vhaha report";
pub const TABLE_HEADER: &str = "key\tvalue";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "table" => Ok(Format::Table),
            _ => Err(format!("unknown format {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("not a report: expected `{TEXT_MAGIC}` or a `key<TAB>value` header")]
    UnknownLayout,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate key {0}")]
    Duplicate(String),
    #[error("missing key {0}")]
    Missing(String),
    #[error("unknown key {0}")]
    Unknown(String),
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("{key} = {stated} but the parts sum to {sum}")]
    Inconsistent { key: String, stated: u64, sum: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub section: String,
    pub key: String,
    pub value: String,
}

impl Field {
    pub fn full_key(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }
}

const LEG_KEYS: [&str; 4] = ["rreq_mn_fa", "rreq_fa_ha", "rrep_ha_fa", "rrep_fa_mn"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

fn list<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items.into_iter().map(|s| escape(s)).collect::<Vec<_>>().join(",")
}

/// The report as an ordered field list.
pub fn flatten(r: &MetricsReport) -> Vec<Field> {
    let mut out = Vec::new();
    let mut put = |section: &str, key: &str, value: String| {
        out.push(Field {
            section: section.into(),
            key: key.into(),
            value,
        })
    };
    put("run", "mode", r.mode.to_string());
    put("run", "seed", r.seed.to_string());
    put("run", "duration", r.duration.to_string());
    put("run", "heartbeat_period", r.heartbeat_period.to_string());
    put("run", "events", r.events.to_string());
    put("run", "zombies", r.zombies.to_string());
    put("run", "trace_hash", escape(&r.trace_hash));

    let p = &r.packets;
    put("packets", "sent", p.sent.to_string());
    put("packets", "delivered", p.delivered.to_string());
    put("packets", "lost", p.lost_total().to_string());
    for reason in LossReason::ALL {
        let n = p.lost.get(&reason).copied().unwrap_or(0);
        put("packets", &format!("lost.{reason}"), n.to_string());
    }
    put("packets", "corrupted", p.corrupted.to_string());

    let m = &r.messages;
    put("messages", "registration", m.registration.to_string());
    put("messages", "binding_update", m.binding_update.to_string());
    put("messages", "heartbeat", m.heartbeat.to_string());
    put("messages", "recovery", m.recovery.to_string());
    put("messages", "ota", m.ota.to_string());
    put("messages", "ota_during_recovery", m.ota_during_recovery.to_string());
    put("messages", "dropped", m.dropped.to_string());

    for (kind, bytes) in &r.sizes {
        put("sizes", kind, bytes.to_string());
    }
    for (mn, addrs) in &r.global_addresses {
        put("global", mn, list(addrs));
    }

    for (i, f) in r.failures.iter().enumerate() {
        let s = format!("failure.{}", i + 1);
        put(&s, "target", escape(&f.target));
        put(&s, "at", f.at.to_string());
        put(&s, "failed", list(&f.failed));
        put(&s, "active_lost", f.active_lost.to_string());
        put(&s, "permanent", f.permanent.to_string());
        put(&s, "t_fd_r_predicted", f.t_fd_r_predicted.to_string());
        put(&s, "t_fd_r_measured", opt(f.t_fd_r_measured));
        put(&s, "recovered_after", opt(f.recovered_after));
        put(&s, "by_redundancy", f.by_redundancy.to_string());
        put(&s, "actions", list(&f.actions));
        put(&s, "losses", f.losses.to_string());
        put(&s, "in_flight", f.in_flight.to_string());
        put(&s, "ota_messages", f.ota_messages.to_string());
        put(&s, "suspicions", f.suspicions.len().to_string());
        for (j, x) in f.suspicions.iter().enumerate() {
            put(&s, &format!("suspicion.{}", j + 1), format!("{} {} {}", x.watcher, x.suspect, x.after));
        }
    }

    for (i, g) in r.registrations.iter().enumerate() {
        let s = format!("registration.{}", i + 1);
        put(&s, "mn", g.mn.clone());
        put(&s, "fa", g.fa.clone());
        put(&s, "started", g.started.to_string());
        for (k, key) in LEG_KEYS.iter().enumerate() {
            put(&s, key, opt(g.legs.map(|l| l[k])));
        }
        put(&s, "total", opt(g.total));
        put(&s, "backup_updates", g.backup_updates.to_string());
        put(&s, "backup_update_transit", g.backup_update_transit.to_string());
        put(&s, "home_total", opt(g.home_total));
        put(&s, "failed", g.failed.as_deref().map_or_else(|| "-".into(), escape));
    }

    for (i, v) in r.invariant_violations.iter().enumerate() {
        put("violations", &(i + 1).to_string(), escape(v));
    }
    out
}

pub fn emit_report(r: &MetricsReport, format: Format) -> String {
    let fields = flatten(r);
    let mut s = String::new();
    match format {
        Format::Table => {
            s.push_str(TABLE_HEADER);
            s.push('\n');
            for f in &fields {
                let _ = writeln!(s, "{}\t{}", f.full_key(), f.value);
            }
        }
        Format::Text => {
            s.push_str(TEXT_MAGIC);
            s.push('\n');
            let mut i = 0;
            while i < fields.len() {
                let section = &fields[i].section;
                let end = fields[i..].iter().position(|f| &f.section != section).map_or(fields.len(), |n| i + n);
                let width = fields[i..end].iter().map(|f| f.key.len()).max().unwrap_or(0);
                let _ = writeln!(s, "\n[{section}]");
                for f in &fields[i..end] {
                    let line = format!("{:width$}  {}", f.key, f.value);
                    s.push_str(line.trim_end());
                    s.push('\n');
                }
                i = end;
            }
        }
    }
    s
}

/// Read either layout back.
pub fn parse_report(text: &str) -> Result<MetricsReport, ReportError> {
    let pairs = read_pairs(text)?;
    let mut map = BTreeMap::new();
    for (k, v) in pairs {
        if map.insert(k.clone(), v).is_some() {
            return Err(ReportError::Duplicate(k));
        }
    }
    unflatten(map)
}

/// `(full key, raw value)` in file order.
pub fn read_pairs(text: &str) -> Result<Vec<(String, String)>, ReportError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::new();
    match lines.next() {
        Some((_, l)) if l == TABLE_HEADER => {
            for (n, l) in lines {
                let (k, v) = l.split_once('\t').ok_or_else(|| ReportError::Syntax {
                    line: n + 1,
                    message: "expected key<TAB>value".into(),
                })?;
                out.push((k.to_string(), v.to_string()));
            }
        }
        Some((_, l)) if l == TEXT_MAGIC => {
            let mut section = None;
            for (n, l) in lines {
                if let Some(s) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                    section = Some(s.to_string());
                    continue;
                }
                let section = section.as_ref().ok_or_else(|| ReportError::Syntax {
                    line: n + 1,
                    message: "field outside a section".into(),
                })?;
                let (k, v) = l.split_once(' ').unwrap_or((l, ""));
                out.push((format!("{section}.{k}"), v.trim_start().to_string()));
            }
        }
        _ => return Err(ReportError::UnknownLayout),
    }
    Ok(out)
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn raw(&mut self, key: &str) -> Result<String, ReportError> {
        self.0.remove(key).ok_or_else(|| ReportError::Missing(key.into()))
    }

    fn bad(key: &str, value: &str) -> ReportError {
        ReportError::BadValue {
            key: key.into(),
            value: value.into(),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<T, ReportError> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Self::bad(key, &v))
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ReportError> {
        let v = self.raw(key)?;
        if v == "-" {
            return Ok(None);
        }
        v.parse().map(Some).map_err(|_| Self::bad(key, &v))
    }

    fn text(&mut self, key: &str) -> Result<String, ReportError> {
        let v = self.raw(key)?;
        unescape(&v).ok_or_else(|| Self::bad(key, &v))
    }

    fn opt_text(&mut self, key: &str) -> Result<Option<String>, ReportError> {
        let v = self.raw(key)?;
        if v == "-" {
            return Ok(None);
        }
        unescape(&v).map(Some).ok_or_else(|| Self::bad(key, &v))
    }

    fn list(&mut self, key: &str) -> Result<Vec<String>, ReportError> {
        let v = self.raw(key)?;
        split_list(&v).ok_or_else(|| Self::bad(key, &v))
    }

    /// Indices `1..=n` present under `prefix.<i>.`.
    fn count(&self, prefix: &str) -> usize {
        let p = format!("{prefix}.");
        self.0
            .keys()
            .filter_map(|k| k.strip_prefix(&p)?.split('.').next()?.parse::<usize>().ok())
            .max()
            .unwrap_or(0)
    }

    /// Keys `prefix.<name>`, removed.
    fn drain_prefix(&mut self, prefix: &str) -> Vec<(String, String)> {
        let p = format!("{prefix}.");
        let keys: Vec<String> = self.0.keys().filter(|k| k.starts_with(&p)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let v = self.0.remove(&k).unwrap_or_default();
                (k[p.len()..].to_string(), v)
            })
            .collect()
    }
}

fn unflatten(map: BTreeMap<String, String>) -> Result<MetricsReport, ReportError> {
    let mut f = Fields(map);
    let mode_raw = f.raw("run.mode")?;
    let mode = Mode::parse(&mode_raw).ok_or_else(|| Fields::bad("run.mode", &mode_raw))?;
    let mut r = MetricsReport::empty(mode, f.get("run.seed")?);
    r.duration = f.get("run.duration")?;
    r.heartbeat_period = f.get("run.heartbeat_period")?;
    r.events = f.get("run.events")?;
    r.zombies = f.get("run.zombies")?;
    r.trace_hash = f.text("run.trace_hash")?;

    let mut lost = BTreeMap::new();
    for reason in LossReason::ALL {
        let n: u64 = f.get(&format!("packets.lost.{reason}"))?;
        if n > 0 {
            lost.insert(reason, n);
        }
    }
    r.packets = PacketCounts {
        sent: f.get("packets.sent")?,
        delivered: f.get("packets.delivered")?,
        lost,
        corrupted: f.get("packets.corrupted")?,
    };
    let stated: u64 = f.get("packets.lost")?;
    if stated != r.packets.lost_total() {
        return Err(ReportError::Inconsistent {
            key: "packets.lost".into(),
            stated,
            sum: r.packets.lost_total(),
        });
    }
    r.messages = MessageCounts {
        registration: f.get("messages.registration")?,
        binding_update: f.get("messages.binding_update")?,
        heartbeat: f.get("messages.heartbeat")?,
        recovery: f.get("messages.recovery")?,
        ota: f.get("messages.ota")?,
        ota_during_recovery: f.get("messages.ota_during_recovery")?,
        dropped: f.get("messages.dropped")?,
    };
    for (kind, v) in f.drain_prefix("sizes") {
        let n = v.parse().map_err(|_| Fields::bad(&format!("sizes.{kind}"), &v))?;
        r.sizes.insert(kind, n);
    }
    for (mn, v) in f.drain_prefix("global") {
        let addrs = split_list(&v).ok_or_else(|| Fields::bad(&format!("global.{mn}"), &v))?;
        r.global_addresses.insert(mn, addrs.into_iter().collect::<BTreeSet<_>>());
    }

    for i in 1..=f.count("failure") {
        let s = |k: &str| format!("failure.{i}.{k}");
        let n: usize = f.get(&s("suspicions"))?;
        let mut suspicions = Vec::with_capacity(n);
        for j in 1..=n {
            let key = s(&format!("suspicion.{j}"));
            let v = f.raw(&key)?;
            let parsed = match v.split(' ').collect::<Vec<_>>().as_slice() {
                [w, x, a] => a.parse().ok().map(|after| Suspicion {
                    watcher: (*w).into(),
                    suspect: (*x).into(),
                    after,
                }),
                _ => None,
            };
            suspicions.push(parsed.ok_or_else(|| Fields::bad(&key, &v))?);
        }
        r.failures.push(FailureReport {
            target: f.text(&s("target"))?,
            at: f.get::<SimTime>(&s("at"))?,
            failed: f.list(&s("failed"))?,
            active_lost: f.get(&s("active_lost"))?,
            permanent: f.get(&s("permanent"))?,
            t_fd_r_predicted: f.get(&s("t_fd_r_predicted"))?,
            t_fd_r_measured: f.opt(&s("t_fd_r_measured"))?,
            suspicions,
            recovered_after: f.opt(&s("recovered_after"))?,
            by_redundancy: f.get(&s("by_redundancy"))?,
            actions: f.list(&s("actions"))?,
            losses: f.get(&s("losses"))?,
            in_flight: f.get(&s("in_flight"))?,
            ota_messages: f.get(&s("ota_messages"))?,
        });
    }

    for i in 1..=f.count("registration") {
        let s = |k: &str| format!("registration.{i}.{k}");
        let mut legs = [None; 4];
        for (k, key) in LEG_KEYS.iter().enumerate() {
            legs[k] = f.opt::<SimDuration>(&s(key))?;
        }
        let legs = match legs {
            [Some(a), Some(b), Some(c), Some(d)] => Some([a, b, c, d]),
            [None, None, None, None] => None,
            _ => return Err(Fields::bad(&s("legs"), "partially present")),
        };
        r.registrations.push(RegistrationReport {
            mn: f.raw(&s("mn"))?,
            fa: f.raw(&s("fa"))?,
            started: f.get(&s("started"))?,
            legs,
            total: f.opt(&s("total"))?,
            backup_updates: f.get(&s("backup_updates"))?,
            backup_update_transit: f.get(&s("backup_update_transit"))?,
            home_total: f.opt(&s("home_total"))?,
            failed: f.opt_text(&s("failed"))?,
        });
    }

    let mut violations: Vec<(usize, String)> = Vec::new();
    for (k, v) in f.drain_prefix("violations") {
        let i = k.parse().map_err(|_| ReportError::Unknown(format!("violations.{k}")))?;
        violations.push((i, unescape(&v).ok_or_else(|| Fields::bad(&format!("violations.{k}"), &v))?));
    }
    violations.sort();
    if violations.iter().enumerate().any(|(n, (i, _))| *i != n + 1) {
        return Err(ReportError::Missing("violations.<n>".into()));
    }
    r.invariant_violations = violations.into_iter().map(|(_, v)| v).collect();

    if let Some(k) = f.0.into_keys().next() {
        return Err(ReportError::Unknown(k));
    }
    Ok(r)
}

pub fn escape(s: &str) -> String {
    if s == "-" {
        return "\\-".into();
    }
    let last = s.chars().count().saturating_sub(1);
    let mut out = String::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        match c {
            '\\' => out.push_str("\\\\"),
            ',' => out.push_str("\\,"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            ' ' if i == 0 || i == last => out.push_str("\\s"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Option<String> {
    let items = split_raw(s)?;
    match items.as_slice() {
        [one] => Some(one.clone()),
        _ => None,
    }
}

/// Comma-separated escaped items; the empty string is the empty list.
pub fn split_list(s: &str) -> Option<Vec<String>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    split_raw(s)
}

fn split_raw(s: &str) -> Option<Vec<String>> {
    let mut items = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        let cur = items.last_mut()?;
        match c {
            ',' => items.push(String::new()),
            '\\' => match chars.next()? {
                '\\' => cur.push('\\'),
                ',' => cur.push(','),
                '-' => cur.push('-'),
                't' => cur.push('\t'),
                'n' => cur.push('\n'),
                'r' => cur.push('\r'),
                's' => cur.push(' '),
                'u' => {
                    let hex: String = chars.by_ref().take(4).collect();
                    cur.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
                }
                _ => return None,
            },
            c => cur.push(c),
        }
    }
    Some(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_is_all_zero() {
        let r = MetricsReport::empty(Mode::Vhaha, 3);
        let text = emit_report(&r, Format::Text);
        assert!(text.starts_with(TEXT_MAGIC));
        assert!(text.contains("\n[packets]\nsent"));
        for f in flatten(&r).iter().filter(|f| f.section == "packets" || f.section == "messages") {
            assert_eq!(f.value, "0", "{}", f.full_key());
        }
        assert_eq!(parse_report(&text).unwrap(), r);
    }

    #[test]
    fn escapes_round_trip() {
        for s in ["", "-", "a,b", " lead", "trail ", "x\\y", "tab\there", "nl\nx", "\u{1}", "--"] {
            assert_eq!(unescape(&escape(s)).as_deref(), Some(s), "{s:?}");
        }
        let items: Vec<String> = vec!["a,b".into(), "-".into(), "c".into()];
        assert_eq!(split_list(&list(&items)).unwrap(), items);
        assert!(unescape("a\\q").is_none());
    }

    #[test]
    fn unknown_and_inconsistent_keys_are_refused() {
        let r = MetricsReport::empty(Mode::NoRedundancy, 1);
        let table = emit_report(&r, Format::Table);
        let extra = format!("{table}run.colour\tblue\n");
        assert_eq!(parse_report(&extra), Err(ReportError::Unknown("run.colour".into())));
        let wrong = table.replace("packets.lost\t0", "packets.lost\t4");
        assert!(matches!(parse_report(&wrong), Err(ReportError::Inconsistent { .. })));
        assert_eq!(parse_report("hello"), Err(ReportError::UnknownLayout));
    }
}
