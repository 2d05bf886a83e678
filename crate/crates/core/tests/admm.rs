mod common;

use swapgrid::admm::{initialize, lambda_step, run_admm, AdmmError, AdmmParams};
use swapgrid::fixtures::{instance6, Instance};
use swapgrid::fleet::{aggregate, distances, u_update, Ev, Scenario, Station};
use swapgrid::grid::{FeederDocument, GeneratorDoc};
use swapgrid::oracle::solve_centralized_relaxed;

use common::{admm, rel, solver, suite};

fn ev(id: u32, x: f64, y: f64) -> Ev {
    Ev {
        id,
        x,
        y,
        gamma: 10.0,
        charge: 1.0,
    }
}

fn station(id: u32, bus: u32, x: f64, y: f64) -> Station {
    Station {
        id,
        bus,
        x,
        y,
        total: 3,
        available: 2,
    }
}

#[test]
fn converges_on_the_fixture_suite() {
    for inst in suite(6, 300) {
        let scen = &inst.scenario;
        let central = solve_centralized_relaxed(&inst.grid, scen, &solver()).unwrap();
        let (out, converged) = admm(&inst);
        let eps = 1e-4 * scen.r_mw;
        assert!(converged, "{} hit the iteration cap", inst.name);
        assert!(out.residual < eps, "{}: residual {}", inst.name, out.residual);
        assert!(out.iterations <= 500);
        let gap = rel(out.objective, central.objective);
        assert!(gap <= 1e-3, "{}: {} vs {}", inst.name, out.objective, central.objective);
        // trace invariants
        let recs = &out.trace.records;
        assert_eq!(recs.len(), out.iterations);
        assert!(recs.iter().all(|r| r.residual >= 0.0));
        assert!(recs.iter().all(|r| r.lambda.len() == scen.n_stations() && r.w.len() == r.u_agg.len()));
    }
}

#[test]
fn six_bus_objective_matches_the_joint_relaxation() {
    let inst = instance6(false);
    assert_eq!((inst.scenario.n_evs(), inst.scenario.n_stations()), (20, 3));
    let central = solve_centralized_relaxed(&inst.grid, &inst.scenario, &solver()).unwrap();
    let (out, _) = admm(&inst);
    assert!(rel(out.objective, central.objective) <= 1e-3);
}

#[test]
fn penalty_choice_does_not_move_the_optimum() {
    for inst in suite(2, 310) {
        let mut objs = Vec::new();
        for rho in [0.1, 1.0, 10.0] {
            // a small penalty also means a small multiplier step, so the
            // price needs more rounds to reach the marginal generation cost
            let params = AdmmParams {
                rho,
                max_iters: 5000,
                ..AdmmParams::for_rate(inst.scenario.r_mw)
            };
            let out = run_admm(&inst.grid, &inst.scenario, &params, &solver())
                .unwrap_or_else(|e| panic!("{} rho {rho}: {e}", inst.name));
            objs.push(out.objective);
        }
        for o in &objs[1..] {
            assert!(rel(*o, objs[0]) <= 1e-3, "{}: {objs:?}", inst.name);
        }
    }
}

#[test]
fn u_update_consumes_the_fresh_w_and_the_old_lambda() {
    let inst = instance6(true);
    let scen = &inst.scenario;
    let d = distances(&scen.evs, &scen.stations);
    let (out, _) = admm(&inst);
    let recs = &out.trace.records;
    assert!(recs.len() >= 3);
    let rho = AdmmParams::for_rate(scen.r_mw).rho;
    let mut lambda_prev = vec![0.0; scen.n_stations()];
    for rec in recs.iter().take(4) {
        let u = u_update(scen, &d, &rec.w, &lambda_prev, rho, &solver()).unwrap();
        assert_eq!(aggregate(&u), rec.u_agg, "iteration {}", rec.iter);
        let target = scen.station_loads().loads_mw(&rec.u_agg);
        assert_eq!(lambda_step(&lambda_prev, rho, &rec.w, &target), rec.lambda);
        lambda_prev = rec.lambda.clone();
    }
    // the stale w would have produced a different u on the first steps
    let stale = u_update(scen, &d, &recs[0].w, &recs[0].lambda, rho, &solver()).unwrap();
    assert_ne!(aggregate(&stale), recs[1].u_agg);
}

#[test]
fn lambda_step_arithmetic() {
    assert_eq!(lambda_step(&[0.0], 1.0, &[0.05], &[0.03]), vec![0.05 - 0.03]);
}

#[test]
fn single_ev_single_station_converges_to_one() {
    let mut doc: FeederDocument = swapgrid::fixtures::feeder6();
    for b in &mut doc.buses {
        b.station_id = None;
    }
    doc.buses[2].station_id = Some(0);
    doc.buses[0].generator = Some(GeneratorDoc {
        p_min: 0.0,
        p_max: 4.0,
        q_min: -2.0,
        q_max: 2.0,
        cost_quadratic: 0.3,
        cost_linear: 30.0,
    });
    let bus = doc.buses[2].id;
    let inst = Instance {
        name: "one-ev".into(),
        grid: doc.clone().into_grid().unwrap(),
        feeder: doc,
        scenario: Scenario::new(0.01, 0.02, vec![ev(0, 0.0, 0.0)], vec![station(0, bus, 1.0, 0.0)], 0),
    };
    let (out, converged) = admm(&inst);
    assert!(converged);
    assert!((out.assignment.u[0][0] - 1.0).abs() < 1e-8);
    assert!(out.residual < 1e-4 * inst.scenario.r_mw);
}

#[test]
fn initialize_examples() {
    let one = Scenario::new(
        0.01,
        0.02,
        vec![ev(0, 2.9, 0.0)],
        vec![station(0, 1, 0.0, 0.0), station(1, 2, 3.0, 0.0)],
        0,
    );
    let (u, lambda) = initialize(&one).unwrap();
    assert_eq!(u.u, vec![vec![0.0, 1.0]]);
    assert_eq!(lambda, vec![0.0, 0.0]);

    let tie = Scenario::new(
        0.01,
        0.02,
        vec![ev(0, 1.5, 0.0)],
        vec![station(0, 1, 0.0, 0.0), station(1, 2, 3.0, 0.0)],
        0,
    );
    assert_eq!(initialize(&tie).unwrap().0.u, vec![vec![1.0, 0.0]]);

    let empty = Scenario::new(0.01, 0.02, vec![], vec![station(0, 1, 0.0, 0.0)], 0);
    let (u, lambda) = initialize(&empty).unwrap();
    assert!(u.u.is_empty());
    assert_eq!(lambda, vec![0.0]);
}

#[test]
fn invalid_parameters_are_rejected() {
    let inst = instance6(false);
    let params = AdmmParams {
        rho: 0.0,
        ..AdmmParams::for_rate(0.01)
    };
    let err = run_admm(&inst.grid, &inst.scenario, &params, &solver()).unwrap_err();
    assert!(matches!(err, AdmmError::InvalidParams(_)), "{err}");
}
