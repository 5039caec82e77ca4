use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use vhaha::report::{emit_report, flatten, parse_report, read_pairs, Format};
use vhaha::scenario_file::parse_scenario;
use vhaha_core::engine::run_experiment;
use vhaha_core::forwarding::LossReason;
use vhaha_core::metrics::{FailureReport, MessageCounts, MetricsReport, PacketCounts, RegistrationReport, Suspicion};
use vhaha_core::scenario::Mode;
use vhaha_core::time::{SimDuration, SimTime};

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9:_-]{0,6}"
}

/// Free text, including separators and escapes.
fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[ -~]{0,12}", Just("-".to_string()), "[a, \\\\\t\n-]{0,6}"]
}

fn dur() -> impl Strategy<Value = SimDuration> {
    any::<u64>().prop_map(SimDuration::from_micros)
}

fn time() -> impl Strategy<Value = SimTime> {
    any::<u64>().prop_map(SimTime::from_micros)
}

fn failure() -> impl Strategy<Value = FailureReport> {
    let suspicion = (word(), word(), dur()).prop_map(|(watcher, suspect, after)| Suspicion { watcher, suspect, after });
    (
        (text(), time(), prop::collection::vec(text().prop_filter("non-empty", |s| !s.is_empty()), 0..3)),
        (any::<bool>(), any::<bool>(), dur(), prop::option::of(dur())),
        prop::collection::vec(suspicion, 0..3),
        (prop::option::of(dur()), any::<bool>(), prop::collection::vec(word(), 0..3)),
        (any::<u64>(), any::<u64>(), any::<u64>()),
    )
        .prop_map(|(a, b, suspicions, c, d)| FailureReport {
            target: a.0,
            at: a.1,
            failed: a.2,
            active_lost: b.0,
            permanent: b.1,
            t_fd_r_predicted: b.2,
            t_fd_r_measured: b.3,
            suspicions,
            recovered_after: c.0,
            by_redundancy: c.1,
            actions: c.2,
            losses: d.0,
            in_flight: d.1,
            ota_messages: d.2,
        })
}

fn registration() -> impl Strategy<Value = RegistrationReport> {
    (
        (word(), word(), time()),
        prop::option::of([dur(), dur(), dur(), dur()]),
        (prop::option::of(dur()), any::<u32>(), dur(), prop::option::of(dur())),
        prop::option::of(text()),
    )
        .prop_map(|(a, legs, b, failed)| RegistrationReport {
            mn: a.0,
            fa: a.1,
            started: a.2,
            legs,
            total: b.0,
            backup_updates: b.1,
            backup_update_transit: b.2,
            home_total: b.3,
            failed,
        })
}

fn report() -> impl Strategy<Value = MetricsReport> {
    let reason = prop::sample::select(LossReason::ALL.to_vec());
    (
        (prop::sample::select(Mode::ALL.to_vec()), any::<u64>(), dur(), dur(), any::<u64>()),
        prop::collection::vec(failure(), 0..3),
        prop::collection::vec(registration(), 0..3),
        ((0u64..1 << 40), (0u64..1 << 40), prop::collection::btree_map(reason, 1u64..1 << 40, 0..4), any::<u64>()),
        prop::collection::vec(any::<u64>(), 7),
        prop::collection::btree_map(word(), any::<u64>(), 0..4),
        prop::collection::btree_map(word(), prop::collection::btree_set(text(), 0..3), 0..3),
        (any::<u64>(), prop::collection::vec(text(), 0..3), "[0-9a-f]{0,64}"),
    )
        .prop_map(|(run, failures, registrations, p, m, sizes, global, tail)| {
            let mut r = MetricsReport::empty(run.0, run.1);
            r.duration = run.2;
            r.heartbeat_period = run.3;
            r.events = run.4;
            r.failures = failures;
            r.registrations = registrations;
            r.packets = PacketCounts {
                sent: p.0,
                delivered: p.1,
                lost: p.2,
                corrupted: p.3,
            };
            r.messages = MessageCounts {
                registration: m[0],
                binding_update: m[1],
                heartbeat: m[2],
                recovery: m[3],
                ota: m[4],
                ota_during_recovery: m[5],
                dropped: m[6],
            };
            r.sizes = sizes;
            // an empty set and a set holding one empty string print alike
            r.global_addresses = global
                .into_iter()
                .map(|(k, v): (String, BTreeSet<String>)| (k, v.into_iter().filter(|s| !s.is_empty()).collect()))
                .collect();
            r.zombies = tail.0;
            r.invariant_violations = tail.1;
            r.trace_hash = tail.2;
            r
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn both_layouts_round_trip(r in report()) {
        for f in [Format::Text, Format::Table] {
            let text = emit_report(&r, f);
            let back = parse_report(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(&back, &r);
        }
    }

    #[test]
    fn layouts_agree_field_by_field(r in report()) {
        let text = read_pairs(&emit_report(&r, Format::Text)).unwrap();
        let table = read_pairs(&emit_report(&r, Format::Table)).unwrap();
        prop_assert_eq!(text, table);
    }
}

#[test]
fn real_runs_round_trip_and_cross_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in ["two_failures.scn", "roaming.scn", "spare.scn"] {
        let cfg = parse_scenario(&fs::read_to_string(dir.join(name)).unwrap()).unwrap();
        let r = run_experiment(&cfg).unwrap().report;
        let text = emit_report(&r, Format::Text);
        let table = emit_report(&r, Format::Table);
        assert_eq!(parse_report(&text).unwrap(), r, "{name}");
        assert_eq!(parse_report(&table).unwrap(), r, "{name}");
        let flat: BTreeMap<String, String> = flatten(&r).into_iter().map(|f| (f.full_key(), f.value)).collect();
        let from_text: BTreeMap<String, String> = read_pairs(&text).unwrap().into_iter().collect();
        assert_eq!(from_text, flat);
        // sizes list every registration message kind seen on the wire
        for kind in ["advertisement", "request", "forwarded-request", "reply", "inner-reply"] {
            assert!(flat[&format!("sizes.{kind}")].parse::<u64>().unwrap() > 0, "{kind}");
        }
    }
}

#[test]
fn field_order_is_stable() {
    let r = MetricsReport::empty(Mode::Vhaha, 1);
    let keys: Vec<String> = flatten(&r).iter().map(|f| f.full_key()).collect();
    assert_eq!(&keys[..3], ["run.mode", "run.seed", "run.duration"]);
    assert_eq!(keys.last().unwrap(), "messages.dropped");
    assert_eq!(emit_report(&r, Format::Table), emit_report(&r.clone(), Format::Table));
}
