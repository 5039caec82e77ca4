//! Registration transcripts as text.
//!
//! ```text
//! # world seed=7 bits=64
//! dir=FA→MN kind=advertisement hex=0a01... expect=accept
//! ```
//!
//! The header fixes the enrolled principals; each following line is one
//! frame delivered to its recipient. `->` is accepted for `→`.

use std::fmt::Write as _;

use thiserror::Error;
use vhaha_core::registration::world::{contains_subslice, mn_identity_bytes, scenarios};
use vhaha_core::registration::{verify, CryptoError, Kind, Line, RegistrationWorld, Role, Transcript, TranscriptReport, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `# world seed=N bits=B` header")]
    MissingHeader,
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

pub fn parse_transcript(text: &str) -> Result<Transcript, TranscriptError> {
    let mut t: Option<Transcript> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        let syntax = |message: String| TranscriptError::Syntax { line: n, message };
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# world ") {
            if t.is_some() {
                return Err(syntax("second world header".into()));
            }
            let mut seed = None;
            let mut bits = None;
            for w in rest.split_whitespace() {
                match w.split_once('=') {
                    Some(("seed", v)) => seed = v.parse().ok(),
                    Some(("bits", v)) => bits = v.parse().ok(),
                    _ => return Err(syntax(format!("unexpected header field {w}"))),
                }
            }
            let (Some(seed), Some(bits)) = (seed, bits) else {
                return Err(syntax("header needs seed=N bits=B".into()));
            };
            t = Some(Transcript::new(seed, bits));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let t = t.as_mut().ok_or(TranscriptError::MissingHeader)?;
        t.lines.push(parse_line(line).map_err(syntax)?);
    }
    t.ok_or(TranscriptError::MissingHeader)
}

fn parse_line(line: &str) -> Result<Line, String> {
    let (mut dir, mut kind, mut hex_frame, mut expect) = (None, None, None, None);
    for w in line.split_whitespace() {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got {w}"))?;
        match k {
            "dir" => {
                let (a, b) = v
                    .split_once('→')
                    .or_else(|| v.split_once("->"))
                    .ok_or_else(|| format!("bad direction {v}"))?;
                let role = |s: &str| Role::parse(s).ok_or_else(|| format!("unknown principal {s}"));
                dir = Some((role(a)?, role(b)?));
            }
            "kind" => kind = Some(Kind::parse(v).ok_or_else(|| format!("unknown kind {v}"))?),
            "hex" => hex_frame = Some(hex::decode(v).map_err(|e| format!("bad hex: {e}"))?),
            "expect" => expect = Some(Verdict::parse(v).ok_or_else(|| format!("unknown verdict {v}"))?),
            _ => return Err(format!("unknown field {k}")),
        }
    }
    let (Some((from, to)), Some(kind), Some(frame)) = (dir, kind, hex_frame) else {
        return Err("line needs dir=, kind= and hex=".into());
    };
    Ok(Line {
        from,
        to,
        kind,
        frame,
        expect,
    })
}

pub fn emit_transcript(t: &Transcript) -> String {
    let mut s = format!("# world seed={} bits={}\n", t.seed, t.bits);
    for l in &t.lines {
        let _ = write!(s, "dir={}→{} kind={} hex={}", l.from, l.to, l.kind, hex::encode(&l.frame));
        if let Some(e) = l.expect {
            let _ = write!(s, " expect={}", e.as_str());
        }
        s.push('\n');
    }
    s
}

/// Names accepted by [`generate`].
pub fn generator_names() -> Vec<String> {
    let mut v = vec!["honest".to_string(), "forged-witness".into(), "two-session-replay".into(), "lost-reply".into()];
    v.extend(Kind::ALL.iter().map(|k| format!("replay-{k}")));
    v.push("tamper:<step>:<bit>".into());
    v
}

/// Build a canned transcript: `honest`, `replay-<kind>`,
/// `tamper:<step>:<bit>`, `forged-witness`, `two-session-replay` or
/// `lost-reply`.
pub fn generate(name: &str, seed: u64, bits: u32) -> Result<Transcript, TranscriptError> {
    let world = RegistrationWorld::new(seed, bits)?;
    let unknown = || TranscriptError::UnknownGenerator(name.into());
    Ok(match name {
        "honest" => scenarios::honest(&world),
        "forged-witness" => scenarios::forged_witness(&world),
        "two-session-replay" => scenarios::two_session_replay(&world),
        "lost-reply" => scenarios::lost_reply_then_reregister(&world),
        _ => {
            if let Some(k) = name.strip_prefix("replay-") {
                let kind = Kind::parse(k).ok_or_else(unknown)?;
                scenarios::replay(&world, kind).ok_or_else(unknown)?
            } else if let Some(rest) = name.strip_prefix("tamper:") {
                let (step, bit) = rest.split_once(':').ok_or_else(unknown)?;
                let step = step.parse().map_err(|_| unknown())?;
                let bit = bit.parse().map_err(|_| unknown())?;
                scenarios::tamper(&world, step, bit)
            } else {
                return Err(unknown());
            }
        }
    })
}

/// Verification outcome plus the anonymity scan.
#[derive(Debug, Clone)]
pub struct Checked {
    pub report: TranscriptReport,
    /// Lines whose frame carries the MN's plaintext identity.
    pub identity_leaks: Vec<usize>,
}

impl Checked {
    pub fn ok(&self) -> bool {
        self.report.all_expectations_met() && self.identity_leaks.is_empty()
    }
}

pub fn check(t: &Transcript) -> Result<Checked, TranscriptError> {
    let report = verify(t)?;
    let identity_leaks = t
        .lines
        .iter()
        .enumerate()
        .filter(|(_, l)| contains_subslice(&l.frame, mn_identity_bytes()))
        .map(|(i, _)| i + 1)
        .collect();
    Ok(Checked { report, identity_leaks })
}

/// One line per frame, then a summary line.
pub fn render(c: &Checked) -> String {
    let mut s = String::new();
    for o in &c.report.lines {
        let status = if o.matches_expectation() { "ok" } else { "MISMATCH" };
        let _ = write!(s, "{:>3} {}→{} {:<18} {:<6}", o.index + 1, o.from, o.to, o.kind.as_str(), o.verdict().as_str());
        if let Err(r) = &o.result {
            let _ = write!(s, " ({r})");
        }
        if let Some(e) = o.expect {
            let _ = write!(s, " expected {}", e.as_str());
        }
        let _ = writeln!(s, " {status}");
    }
    for l in &c.identity_leaks {
        let _ = writeln!(s, "line {l}: frame carries the plaintext MN identity");
    }
    let mismatches = c.report.lines.iter().filter(|o| !o.matches_expectation()).count();
    let _ = writeln!(
        s,
        "{} frames, {} rejected, {} mismatches, {} identity leaks: {}",
        c.report.lines.len(),
        c.report.rejected(),
        mismatches,
        c.identity_leaks.len(),
        if c.ok() { "PASS" } else { "FAIL" }
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t = generate("replay-request", 5, 64).unwrap();
        let text = emit_transcript(&t);
        assert!(text.starts_with("# world seed=5 bits=64\ndir=FA→MN kind=advertisement hex="));
        assert_eq!(parse_transcript(&text).unwrap(), t);
        let ascii = text.replace('→', "->");
        assert_eq!(parse_transcript(&ascii).unwrap(), t);
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let e = parse_transcript("# world seed=1 bits=64\n\ndir=MN→ZZ kind=request hex=00\n").unwrap_err();
        assert!(matches!(e, TranscriptError::Syntax { line: 3, .. }), "{e}");
        assert_eq!(parse_transcript("dir=MN→FA kind=request hex=00"), Err(TranscriptError::MissingHeader));
        assert!(parse_transcript("# world seed=1 bits=64\ndir=MN→FA kind=request hex=0g\n").is_err());
    }

    #[test]
    fn generators_resolve() {
        for name in ["honest", "forged-witness", "two-session-replay", "lost-reply", "replay-reply", "tamper:1:9"] {
            let t = generate(name, 2, 64).unwrap();
            assert!(check(&t).unwrap().ok(), "{name}");
        }
        assert!(matches!(generate("replay-nothing", 2, 64), Err(TranscriptError::UnknownGenerator(_))));
    }
}
