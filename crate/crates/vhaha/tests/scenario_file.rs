use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use vhaha::scenario_file::{emit_scenario, format_duration, parse_duration, parse_scenario, parse_unchecked, ScenarioError};
use vhaha_core::scenario::{
    ConfiguredRole, EdgeSpec, FailTarget, FailureSpec, HaSpec, MnSpec, Mode, MoveSpec, RecoverSpec, RegisterSpec,
    ScenarioConfig, TrafficSpec,
};
use vhaha_core::time::{SimDuration, SimTime};

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_.-]{0,6}".prop_filter("reserved", |s| s != "active")
}

fn dur() -> impl Strategy<Value = SimDuration> {
    prop_oneof![
        (0u64..100).prop_map(SimDuration::from_secs),
        (0u64..100_000).prop_map(SimDuration::from_millis),
        (0u64..u64::MAX / 2).prop_map(SimDuration::from_micros),
    ]
}

fn time() -> impl Strategy<Value = SimTime> {
    dur().prop_map(|d| SimTime::ZERO + d)
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |x| x.is_finite())
}

fn role() -> impl Strategy<Value = ConfiguredRole> {
    prop_oneof![
        Just(ConfiguredRole::Active),
        Just(ConfiguredRole::Backup),
        Just(ConfiguredRole::Inactive),
        Just(ConfiguredRole::Spare),
    ]
}

fn config() -> impl Strategy<Value = ScenarioConfig> {
    let settings = (
        prop_oneof![Just(Mode::Vhaha), Just(Mode::SingleLinkRedundancy), Just(Mode::NoRedundancy)],
        any::<u64>(),
        dur(),
        dur(),
        prop::option::of(any::<u32>()),
        any::<u32>(),
        any::<u32>(),
        (dur(), dur(), dur()),
        any::<u32>(),
        any::<u64>(),
    );
    let ha = (name(), any::<u32>(), role(), any::<u32>(), finite()).prop_map(|(name, link, role, capacity, t)| HaSpec {
        name,
        link,
        role,
        capacity,
        throughput_max: t,
    });
    let entities = (
        prop::collection::vec(ha, 0..4),
        prop::collection::vec(name(), 0..3),
        prop::collection::vec((name(), name()).prop_map(|(name, at)| MnSpec { name, at }), 0..3),
        prop::collection::vec(name(), 0..3),
        prop::collection::vec(name(), 0..3),
        prop::collection::vec((name(), name(), dur()).prop_map(|(a, b, delay)| EdgeSpec { a, b, delay }), 0..5),
        prop::collection::vec(
            (name(), name(), finite(), time(), time()).prop_map(|(cn, mn, rate, start, stop)| TrafficSpec {
                cn,
                mn,
                rate,
                start,
                stop,
            }),
            0..3,
        ),
    );
    let target = prop_oneof![
        name().prop_map(FailTarget::Ha),
        Just(FailTarget::CurrentActive),
        any::<u32>().prop_map(FailTarget::Link),
    ];
    let events = (
        prop::collection::vec(
            (target, time(), any::<bool>()).prop_map(|(target, at, permanent)| FailureSpec { target, at, permanent }),
            0..4,
        ),
        prop::collection::vec((name(), time()).prop_map(|(ha, at)| RecoverSpec { ha, at }), 0..3),
        prop::collection::vec((name(), time()).prop_map(|(mn, at)| RegisterSpec { mn, at }), 0..3),
        prop::collection::vec((name(), name(), time()).prop_map(|(mn, to, at)| MoveSpec { mn, to, at }), 0..3),
    );
    (settings, entities, events).prop_map(|(s, e, v)| ScenarioConfig {
        mode: s.0,
        seed: s.1,
        duration: s.2,
        heartbeat_period: s.3,
        backups_per_mn: s.4,
        mn_timeout_periods: s.5,
        security_bits: s.6,
        processing: s.7 .0,
        wireless: s.7 .1,
        jitter: s.7 .2,
        binding_lifetime: s.8,
        max_events: s.9,
        has: e.0,
        fas: e.1,
        mns: e.2,
        cns: e.3,
        routers: e.4,
        edges: e.5,
        traffic: e.6,
        failures: v.0,
        recoveries: v.1,
        registrations: v.2,
        moves: v.3,
    })
}

proptest! {
    #[test]
    fn emit_then_parse_is_identity(c in config()) {
        let text = emit_scenario(&c);
        let (back, _) = parse_unchecked(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(emit_scenario(&back), text);
    }

    #[test]
    fn durations_print_and_parse_exactly(us in any::<u64>()) {
        let d = SimDuration::from_micros(us);
        prop_assert_eq!(parse_duration(&format_duration(d)), Ok(d));
    }

    #[test]
    fn parser_never_panics(text in "[\\[\\]a-z0-9=@#>. \n-]{0,200}") {
        let _ = parse_scenario(&text);
    }
}

#[test]
fn reference_scenarios_are_valid_and_normalise_idempotently() {
    let mut seen = 0;
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let c = parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let normal = emit_scenario(&c);
        assert_eq!(parse_scenario(&normal).unwrap(), c, "{}", path.display());
        assert_eq!(emit_scenario(&parse_scenario(&normal).unwrap()), normal);
        seen += 1;
    }
    assert!(seen >= 7);
}

#[test]
fn single_link_vhaha_names_the_problem() {
    let text = fs::read_to_string(scenarios_dir().join("quiet.scn")).unwrap();
    let one_link = text.replace("link = 2", "link = 1");
    let errs = parse_scenario(&one_link).unwrap_err().0;
    assert_eq!(errs.len(), 1);
    assert!(matches!(&errs[0], ScenarioError::Global { message } if message.contains("two home links")));
    let as_baseline = one_link.replace("mode = vhaha", "mode = single_link_redundancy");
    assert!(parse_scenario(&as_baseline).is_ok());
}

#[test]
fn semantic_errors_carry_their_line() {
    let text = fs::read_to_string(scenarios_dir().join("quiet.scn")).unwrap();
    let broken = text.replace("at = fa1", "at = fa9").replace("cn1 -> mn1", "cn1 -> mn7");
    let errs = parse_scenario(&broken).unwrap_err().0;
    let line_of = |needle: &str| broken.lines().position(|l| l.contains(needle)).unwrap() + 1;
    let lines: Vec<usize> = errs
        .iter()
        .map(|e| match e {
            ScenarioError::Invalid { line, .. } => *line,
            other => panic!("{other}"),
        })
        .collect();
    assert_eq!(lines, [line_of("[mn mn1]"), line_of("cn1 -> mn7")]);
}
