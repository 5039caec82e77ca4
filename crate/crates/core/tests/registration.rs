use num_bigint::BigUint;
use proptest::prelude::*;
use vhaha_core::registration::crypto::{
    derive_shared_key, exponent_hash, key_from_residue, mac, random_key, rng_for, self_certifies, ta_setup, temp_id,
    verify_mac,
};
use vhaha_core::registration::protocol::{HomeRegistrar, Reject, RegistryError};
use vhaha_core::registration::wire::Kind;
use vhaha_core::registration::world::{
    contains_subslice, mn_identity_bytes, run_flow, scenarios, verify, verify_in, Perturbation, RegistrationWorld, Role,
    Transcript, Verdict, MN_ID,
};

/// Square-and-multiply over u128, independent of the bignum library.
fn oracle_modpow(base: u64, exp: &BigUint, n: u64) -> u64 {
    let n128 = n as u128;
    let mut result: u128 = 1 % n128;
    let mut b = base as u128 % n128;
    for byte in exp.to_bytes_le() {
        for i in 0..8 {
            if byte >> i & 1 == 1 {
                result = result * b % n128;
            }
            b = b * b % n128;
        }
    }
    result as u64
}

fn world(seed: u64) -> RegistrationWorld {
    RegistrationWorld::new(seed, 64).unwrap()
}

fn small(x: &BigUint) -> u64 {
    u64::try_from(x).expect("toy parameters fit in 64 bits")
}

#[test]
fn oracle_agrees_with_small_cases() {
    assert_eq!(oracle_modpow(4, &BigUint::from(13u32), 497), 445);
    assert_eq!(oracle_modpow(7, &BigUint::from(0u32), 13), 1);
    assert_eq!(oracle_modpow(u64::MAX - 1, &BigUint::from(2u32), u64::MAX), 1);
}

#[test]
fn self_certification_holds_by_direct_arithmetic() {
    for seed in 0..20u64 {
        let mut ta = ta_setup(64, &seed.to_be_bytes()).unwrap();
        let n = small(&ta.params().n);
        let g = small(&ta.params().g);
        for id in ["nai:a@home", "fa:1", "ha:global", "cn:1"] {
            let k = ta.enroll(id).unwrap();
            let h = exponent_hash(&k.identity, k.witness.salt);
            let lhs = (oracle_modpow(small(&k.witness.w), &h, n) as u128 + small(&k.identity) as u128) % n as u128;
            assert_eq!(lhs as u64, oracle_modpow(g, &k.private, n), "seed {seed} id {id}");
            assert!(self_certifies(ta.params(), &k));
        }
    }
}

#[test]
fn fa_ha_agreement_matches_oracle_over_100_parameter_sets() {
    for seed in 0..100u64 {
        let mut ta = ta_setup(64, &seed.to_be_bytes()).unwrap();
        let fa = ta.enroll("fa:1").unwrap();
        let ha = ta.enroll("ha:global").unwrap();
        let p = ta.params();
        let at_fa = derive_shared_key(p, &fa.private, &ha.identity, &ha.witness);
        let at_ha = derive_shared_key(p, &ha.private, &fa.identity, &fa.witness);
        let residue = oracle_modpow(small(&p.g), &(&fa.private * &ha.private), small(&p.n));
        assert_eq!(at_fa, at_ha, "seed {seed}");
        assert_eq!(at_fa, key_from_residue(p, &BigUint::from(residue)), "seed {seed}");
    }
}

#[test]
fn cn_mn_agreement_matches_oracle_over_100_worlds() {
    for seed in 0..100u64 {
        let t = scenarios::honest(&world(seed));
        let mut w = RegistrationWorld::new(seed, 64).unwrap();
        let report = verify(&t).unwrap();
        assert!(report.lines.iter().all(|l| l.result.is_ok()), "seed {seed}");
        for line in &t.lines {
            if RegistrationWorld::is_origination(line.from, line.kind) {
                w.originate(line.from, line.kind);
            }
            w.deliver(line.to, &line.frame);
        }
        let at_mn = *w.mn.cn_key(w.cn.coa()).expect("MN finished authentication");
        let at_cn = *w.cn.session_key(&w.keys.mn.identity.to_bytes_be()).expect("CN derived a key");
        let p = &w.params;
        let residue = oracle_modpow(small(&p.g), &(&w.keys.mn.private * &w.keys.cn.private), small(&p.n));
        assert_eq!(at_mn, at_cn, "seed {seed}");
        assert_eq!(at_mn, key_from_residue(p, &BigUint::from(residue)), "seed {seed}");
    }
}

#[test]
fn honest_run_uses_four_messages_plus_advertisement() {
    let t = scenarios::honest(&world(7));
    let kinds: Vec<Kind> = t.lines.iter().map(|l| l.kind).collect();
    assert_eq!(
        kinds,
        [
            Kind::Advertisement,
            Kind::Request,
            Kind::ForwardedRequest,
            Kind::Reply,
            Kind::InnerReply,
            Kind::AuthRequest,
            Kind::ForwardedAuth,
            Kind::AuthResponse,
        ]
    );
    let report = verify(&t).unwrap();
    assert!(report.all_expectations_met());
    assert_eq!(report.rejected(), 0);
    assert!(report.lines[0].originated);
}

#[test]
fn registration_ends_with_shared_session_key_and_rotated_pseudonym() {
    let mut w = RegistrationWorld::new(11, 64).unwrap();
    let before = *w.mn.current_nonce();
    let mut lines = Vec::new();
    let (n, ok) = run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut lines);
    assert_eq!((n, ok), (5, true));
    assert_ne!(*w.mn.current_nonce(), before);
    let coa = w.mn.coa().unwrap().to_string();
    assert_eq!(w.fa.session_key(&coa), w.mn.session_key());
    let rec = w.ha.record(MN_ID).unwrap();
    let dynamic = rec.dynamic.expect("accepted registration fills the dynamic base");
    assert_eq!(dynamic.nonce, *w.mn.current_nonce());
    assert_eq!(dynamic.temp_id, *w.mn.current_temp_id());
    assert_eq!(dynamic.temp_id, temp_id(MN_ID, &dynamic.nonce));
    assert_eq!(rec.coa.as_deref(), Some(coa.as_str()));
}

#[test]
fn every_captured_message_is_refused_on_replay() {
    for kind in [
        Kind::Request,
        Kind::ForwardedRequest,
        Kind::Reply,
        Kind::InnerReply,
        Kind::AuthRequest,
        Kind::ForwardedAuth,
        Kind::AuthResponse,
    ] {
        let t = scenarios::replay(&world(3), kind).unwrap();
        let report = verify(&t).unwrap();
        assert!(report.all_expectations_met(), "{kind}: {:?}", report.lines.last());
        let last = report.lines.last().unwrap();
        assert!(last.result.is_err(), "{kind}");
    }
}

#[test]
fn replay_reasons_are_specific() {
    let reason = |kind| {
        let t = scenarios::replay(&world(5), kind).unwrap();
        verify(&t).unwrap().lines.last().unwrap().result
    };
    assert_eq!(reason(Kind::Request), Err(Reject::StaleNonce));
    assert_eq!(reason(Kind::ForwardedRequest), Err(Reject::ReplayedNonce));
    assert_eq!(reason(Kind::Reply), Err(Reject::StaleNonce));
    assert_eq!(reason(Kind::InnerReply), Err(Reject::StaleNonce));
    assert_eq!(reason(Kind::AuthRequest), Err(Reject::ReplayedNonce));
}

#[test]
fn rotated_temp_id_is_unknown() {
    let t = scenarios::two_session_replay(&world(9));
    let report = verify(&t).unwrap();
    assert!(report.all_expectations_met());
    assert_eq!(report.lines.last().unwrap().result, Err(Reject::UnknownTempId));
    assert_eq!(report.rejected(), 1);
}

#[test]
fn single_bit_tampering_never_completes() {
    let base = world(21);
    let honest = scenarios::honest(&base);
    for (step, line) in honest.lines.iter().enumerate() {
        if !line.kind.is_maced() {
            continue;
        }
        for bit in 0..line.frame.len() * 8 {
            let t = scenarios::tamper(&base, step, bit);
            let last = t.lines.last().unwrap();
            assert_eq!(last.expect, Some(Verdict::Reject), "step {step} ({}) bit {bit}", line.kind);
            let report = verify_in(base.clone(), &t);
            assert!(report.all_expectations_met(), "step {step} bit {bit}");
        }
    }
}

#[test]
fn forged_witness_cannot_register() {
    let t = scenarios::forged_witness(&world(13));
    let report = verify(&t).unwrap();
    assert!(report.all_expectations_met());
    let last = report.lines.last().unwrap();
    assert_eq!((last.to, last.result), (Role::Ha, Err(Reject::BadFaMac)));
}

#[test]
fn impersonating_fa_without_its_private_key_fails() {
    let mut w = RegistrationWorld::new(17, 64).unwrap();
    let params = w.params.clone();
    let mut impostor_keys = w.keys.fa.clone();
    impostor_keys.private += 1u32;
    w.fa = vhaha_core::registration::ForeignAgent::new(params, impostor_keys, rng_for(b"x", "impostor"));
    let mut lines = Vec::new();
    let (_, ok) = run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut lines);
    assert!(!ok);
    assert_eq!(lines.last().unwrap().kind, Kind::ForwardedRequest);
}

#[test]
fn no_frame_carries_the_plaintext_identity() {
    for t in [
        scenarios::honest(&world(1)),
        scenarios::two_session_replay(&world(1)),
        scenarios::lost_reply_then_reregister(&world(1)),
    ] {
        for frame in scenarios::wire_frames(&t) {
            assert!(!contains_subslice(frame, mn_identity_bytes()));
        }
    }
}

#[test]
fn lost_reply_leaves_ha_ahead_and_next_registration_recovers() {
    let t = scenarios::lost_reply_then_reregister(&world(23));
    // First flow stops after four deliveries; the second completes.
    assert_eq!(t.lines.len(), 4 + 5);
    let report = verify(&t).unwrap();
    assert!(report.all_expectations_met());
    assert_eq!(report.rejected(), 0);
}

#[test]
fn mac_soundness_sweep() {
    let mut rng = rng_for(b"sweep", "mac");
    let mut cross = 0;
    for i in 0..10_000u32 {
        let k1 = random_key(&mut rng);
        let k2 = random_key(&mut rng);
        let msg = i.to_be_bytes();
        let tag = mac(&k1, &msg);
        assert!(verify_mac(&k1, &msg, &tag));
        if verify_mac(&k2, &msg, &tag) {
            cross += 1;
        }
    }
    assert_eq!(cross, 0);
}

#[test]
fn duplicate_enrolment_is_refused() {
    let mut ta = ta_setup(64, b"dup").unwrap();
    let keys = ta.enroll("ha:global").unwrap();
    let mut ha = HomeRegistrar::new(ta.params().clone(), keys, rng_for(b"dup", "HA"));
    let p = ha.initial_registration("nai:a@home", "hoa:1").unwrap();
    assert_eq!(p.temp_id, temp_id("nai:a@home", &p.n_ha));
    assert_eq!(
        ha.initial_registration("nai:a@home", "hoa:2"),
        Err(RegistryError::DuplicateIdentity("nai:a@home".into()))
    );
}

#[test]
fn mismatched_line_label_is_malformed() {
    let mut t: Transcript = scenarios::honest(&world(2));
    t.lines[1].kind = Kind::Reply;
    let report = verify(&t).unwrap();
    assert_eq!(report.lines[1].result, Err(Reject::Malformed));
}

#[test]
fn production_size_parameters_work_end_to_end() {
    let t = scenarios::honest(&RegistrationWorld::new(1, 512).unwrap());
    let report = verify(&t).unwrap();
    assert_eq!(report.rejected(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn agreement_is_symmetric_for_any_seed(seed in any::<u64>()) {
        let mut ta = ta_setup(64, &seed.to_be_bytes()).unwrap();
        let a = ta.enroll("a").unwrap();
        let b = ta.enroll("b").unwrap();
        let p = ta.params();
        prop_assert!(self_certifies(p, &a));
        prop_assert_eq!(
            derive_shared_key(p, &a.private, &b.identity, &b.witness),
            derive_shared_key(p, &b.private, &a.identity, &a.witness)
        );
    }
}
