//! Same scenario under every redundancy mode, side by side.

use std::fmt::Write as _;
use std::thread;

use vhaha_core::engine::{run_experiment, EngineError, Outcome};
use vhaha_core::metrics::MetricsReport;
use vhaha_core::scenario::{Mode, ScenarioConfig};
use vhaha_core::time::SimDuration;

/// One mode's aggregate over all injected failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub mode: Mode,
    pub failures: usize,
    /// Slowest measured detection, if every failure was detected.
    pub t_fd_r: Option<SimDuration>,
    /// Slowest recovery, if every failure recovered.
    pub recovery: Option<SimDuration>,
    /// Failures the HA group absorbed without the MN.
    pub by_redundancy: usize,
    pub lost: u64,
    pub recovery_messages: u64,
    pub registration_messages: u64,
    pub binding_updates: u64,
    pub ota_during_recovery: u64,
    pub invariant_violations: usize,
}

impl Row {
    pub fn from_report(r: &MetricsReport) -> Row {
        let all = |v: Vec<Option<SimDuration>>| v.into_iter().try_fold(SimDuration::ZERO, |m, x| x.map(|x| m.max(x)));
        Row {
            mode: r.mode,
            failures: r.failures.len(),
            t_fd_r: all(r.failures.iter().map(|f| f.t_fd_r_measured).collect()),
            recovery: all(r.failures.iter().map(|f| f.recovered_after).collect()),
            by_redundancy: r.failures.iter().filter(|f| f.by_redundancy).count(),
            lost: r.losses(),
            recovery_messages: r.messages.recovery,
            registration_messages: r.messages.registration,
            binding_updates: r.messages.binding_update,
            ota_during_recovery: r.messages.ota_during_recovery,
            invariant_violations: r.invariant_violations.len(),
        }
    }
}

/// Run `base` once per mode, in parallel. Each run is itself sequential
/// and deterministic, so the rows do not depend on scheduling.
pub fn compare_modes(base: &ScenarioConfig) -> Result<Vec<(Row, Outcome)>, EngineError> {
    thread::scope(|s| {
        let handles: Vec<_> = Mode::ALL
            .iter()
            .map(|&mode| {
                let mut cfg = base.clone();
                cfg.mode = mode;
                s.spawn(move || run_experiment(&cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let out = h.join().expect("experiment thread panicked")?;
                Ok((Row::from_report(&out.report), out))
            })
            .collect()
    })
}

pub const COLUMNS: [&str; 10] = [
    "mode",
    "failures",
    "t_fd_r",
    "recovery",
    "redundancy",
    "lost",
    "recovery_msgs",
    "registration_msgs",
    "bu_msgs",
    "ota_during_recovery",
];

pub fn render_table(rows: &[Row]) -> String {
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            let d = |x: Option<SimDuration>, none: &str| match (r.failures, x) {
                (0, _) => "-".to_string(),
                (_, Some(d)) => d.to_string(),
                (_, None) => none.to_string(),
            };
            [
                r.mode.to_string(),
                r.failures.to_string(),
                d(r.t_fd_r, "-"),
                d(r.recovery, "never"),
                format!("{}/{}", r.by_redundancy, r.failures),
                r.lost.to_string(),
                r.recovery_messages.to_string(),
                r.registration_messages.to_string(),
                r.binding_updates.to_string(),
                r.ota_during_recovery.to_string(),
            ]
        })
        .collect();
    let mut width: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let mut line = |items: &[&str]| {
        let joined: Vec<String> = items.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(s, "{}", joined.join("  ").trim_end());
    };
    line(&COLUMNS);
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&refs);
    }
    s
}
