mod common;

use std::collections::BTreeSet;

use swapgrid::admm::{run_admm, AdmmParams};
use swapgrid::dualdecomp::{run_dual, DualParams};
use swapgrid::fixtures::instance6;
use swapgrid::simnet::*;

use common::{solver, suite};

fn admm_algo(r: f64) -> Algorithm {
    Algorithm::Admm(AdmmParams::for_rate(r))
}

fn dual_algo(n_evs: usize) -> Algorithm {
    Algorithm::Dual(DualParams::for_fleet(n_evs))
}

#[test]
fn admm_session_is_transparent() {
    for inst in suite(3, 500) {
        let params = AdmmParams::for_rate(inst.scenario.r_mw);
        let direct = run_admm(&inst.grid, &inst.scenario, &params, &solver());
        for engine in [Engine::Synchronous, Engine::Threaded] {
            let out = run_session_with(&inst.grid, &inst.scenario, &admm_algo(inst.scenario.r_mw), &solver(), engine);
            match (&direct, out.result) {
                (Ok(d), Ok(SessionResult::Admm(s))) => assert_eq!(d, &s, "{}", inst.name),
                (d, s) => panic!("{}: direct {d:?} session {s:?}", inst.name),
            }
        }
    }
}

#[test]
fn dual_session_is_transparent() {
    for inst in suite(2, 510) {
        let direct = run_dual(&inst.grid, &inst.scenario, &DualParams::for_fleet(inst.scenario.n_evs()), &solver());
        for engine in [Engine::Synchronous, Engine::Threaded] {
            let out = run_session_with(&inst.grid, &inst.scenario, &dual_algo(inst.scenario.n_evs()), &solver(), engine);
            let same = match (&direct, &out.result) {
                (Ok(d), Ok(SessionResult::Dual(s))) => d == s,
                (
                    Err(swapgrid::dualdecomp::DualError::NonConvergence { best: d, .. }),
                    Err(SessionError::Dual(swapgrid::dualdecomp::DualError::NonConvergence { best: s, .. })),
                ) => d == s,
                _ => false,
            };
            assert!(same, "{} {engine:?}", inst.name);
        }
    }
}

#[test]
fn admm_log_carries_only_loads() {
    let inst = instance6(true);
    let out = run_session(&inst.grid, &inst.scenario, &admm_algo(inst.scenario.r_mw), &solver());
    let iters = match out.result.unwrap() {
        SessionResult::Admm(o) => o.iterations,
        other => panic!("{other:?}"),
    };
    let expected: BTreeSet<_> = link_table(AlgorithmKind::Admm).iter().copied().collect();
    assert_eq!(out.log.observed_links(), expected);
    // the initial assignment plus one exchange per iteration
    assert_eq!(out.log.messages.len(), 1 + 2 * iters);
    assert!(out.log.messages.iter().all(|m| m.payload.tag() != Tag::LambdaPrice));
    assert!(audit_privacy(&out.log).ok());
}

#[test]
fn dual_log_matches_link_table() {
    let inst = instance6(false);
    let out = run_session(&inst.grid, &inst.scenario, &dual_algo(inst.scenario.n_evs()), &solver());
    let expected: BTreeSet<_> = link_table(AlgorithmKind::Dual).iter().copied().collect();
    assert_eq!(out.log.observed_links(), expected);
    let utility_tags: BTreeSet<Tag> = out
        .log
        .messages
        .iter()
        .filter(|m| m.to == Entity::Utility)
        .map(|m| m.payload.tag())
        .collect();
    assert_eq!(utility_tags, BTreeSet::from([Tag::LambdaPrice]));
    let n_evs = inst.scenario.n_evs();
    let round0 = out.log.messages.iter().filter(|m| m.round == 0).count();
    // lambda to the utility, two broadcasts, w back, one choice per EV
    assert_eq!(round0, 4 + n_evs);
    assert!(audit_privacy(&out.log).ok());
}

#[test]
fn sessions_audit_clean_across_suite() {
    for inst in suite(4, 520) {
        for algo in [admm_algo(inst.scenario.r_mw), dual_algo(inst.scenario.n_evs())] {
            let out = run_session(&inst.grid, &inst.scenario, &algo, &solver());
            let report = audit_privacy(&out.log);
            assert!(report.ok(), "{} {:?}: {:?}", inst.name, algo.kind(), report.violations);
        }
    }
}

#[test]
fn repeated_sessions_give_identical_logs() {
    let inst = instance6(true);
    for algo in [admm_algo(inst.scenario.r_mw), dual_algo(inst.scenario.n_evs())] {
        let a = run_session(&inst.grid, &inst.scenario, &algo, &solver()).log;
        let b = run_session_with(&inst.grid, &inst.scenario, &algo, &solver(), Engine::Threaded).log;
        assert_eq!(a, b);
    }
}

#[test]
fn log_round_trips_through_jsonl() {
    let inst = instance6(true);
    let log = run_session(&inst.grid, &inst.scenario, &dual_algo(inst.scenario.n_evs()), &solver()).log;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    let back = MessageLog::read_jsonl(buf.as_slice(), AlgorithmKind::Dual).unwrap();
    assert_eq!(back, log);
    let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["round", "from", "to", "tag", "payload"]));
}

fn msg(round: usize, from: Entity, to: Entity, payload: Payload) -> Message {
    Message { round, from, to, payload }
}

/// A clean log with one extra message appended.
fn injected(algo: AlgorithmKind, extra: Message) -> MessageLog {
    let inst = instance6(true);
    let a = match algo {
        AlgorithmKind::Admm => admm_algo(inst.scenario.r_mw),
        AlgorithmKind::Dual => dual_algo(inst.scenario.n_evs()),
    };
    let mut log = run_session(&inst.grid, &inst.scenario, &a, &solver()).log;
    log.messages.push(extra);
    log
}

#[test]
fn canned_violations_are_detected() {
    let last = 100_000;
    let cases = [
        (
            AlgorithmKind::Dual,
            msg(last, Entity::Ev(3), Entity::Utility, Payload::EvChoice { station: 1 }),
            PrivacyRule::EvDataToUtility,
        ),
        (
            AlgorithmKind::Admm,
            msg(last, Entity::Operator, Entity::Utility, Payload::EvChoice { station: 0 }),
            PrivacyRule::IndividualAssignment,
        ),
        (
            AlgorithmKind::Dual,
            msg(last, Entity::Utility, Entity::Ev(2), Payload::WEstimate { w: vec![0.1, 0.2, 0.3] }),
            PrivacyRule::GridData,
        ),
        (
            AlgorithmKind::Dual,
            msg(last, Entity::Ev(1), Entity::Ev(2), Payload::EvChoice { station: 2 }),
            PrivacyRule::EvToEv,
        ),
    ];
    for (algo, extra, rule) in cases {
        let report = audit_privacy(&injected(algo, extra.clone()));
        assert!(report.has(rule), "{extra:?} not flagged as {rule:?}");
        assert!(report.violations.iter().all(|v| v.index == report.messages - 1));
    }
}

#[test]
fn backwards_round_is_flagged() {
    let mut log = MessageLog::new(AlgorithmKind::Admm);
    let w = |round| msg(round, Entity::Utility, Entity::Operator, Payload::WEstimate { w: vec![0.0] });
    log.messages.extend([w(2), w(1)]);
    assert!(audit_privacy(&log).has(PrivacyRule::Order));
}

#[test]
fn transport_refuses_tags_off_the_link_table() {
    let mut t = Transport::new(AlgorithmKind::Dual);
    let err = t
        .send(0, Entity::Operator, Entity::Utility, Payload::MuPrice { mu: vec![0.0] })
        .unwrap_err();
    assert!(matches!(err, SessionError::TransportViolation { tag: Tag::MuPrice, .. }));
    let ok = t
        .send(0, Entity::Operator, Entity::Utility, Payload::LambdaPrice { lambda: vec![-3.5] })
        .unwrap();
    assert_eq!(ok, Payload::LambdaPrice { lambda: vec![-3.5] });
    assert_eq!(t.log().messages.len(), 1);
}
