mod common;

use swapgrid::conic::{build_opf, CouplingObjective, StationLoads};
use swapgrid::dualdecomp::{dual_value, mu_step, run_dual, DualError, DualParams, EvAgent};
use swapgrid::fixtures::{instance6, random_instance, RandomOptions};
use swapgrid::fleet::distances;
use swapgrid::grid::GeneratorDoc;
use swapgrid::oracle::solve_centralized_relaxed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dual, rel, solver, suite};

#[test]
fn recovered_objective_and_certificates_on_the_fixture_suite() {
    for inst in suite(4, 320) {
        let scen = &inst.scenario;
        let central = solve_centralized_relaxed(&inst.grid, scen, &solver()).unwrap();
        let (out, _) = dual(&inst);
        assert!(
            rel(out.objective, central.objective) <= 5e-3,
            "{}: {} vs {}",
            inst.name,
            out.objective,
            central.objective
        );
        let slack = 1e-6 * central.objective.abs().max(1.0);
        for rec in &out.trace.records {
            assert!(rec.mu.iter().all(|&m| m >= 0.0), "{} iter {}", inst.name, rec.iter);
            assert!(rec.dual_value <= central.objective + slack, "{} iter {}: {} > {}", inst.name, rec.iter, rec.dual_value, central.objective);
        }
        assert!(out.dual_bound <= central.objective + slack);
        assert!(out.complementary_slackness <= 1e-3, "{}: {}", inst.name, out.complementary_slackness);
    }
}

#[test]
fn ample_capacity_keeps_mu_at_zero() {
    let opts = RandomOptions {
        policy: Some(swapgrid::fixtures::CapacityPolicy::Ample),
        ..Default::default()
    };
    let mut insts = vec![instance6(false)];
    insts.extend((0..3).map(|s| random_instance(330 + s, &opts)));
    for inst in insts {
        assert!(inst.scenario.stations.iter().all(|s| s.available as usize == inst.scenario.n_evs()));
        let (out, _) = dual(&inst);
        assert!(out.trace.records.iter().all(|r| r.mu.iter().all(|&m| m == 0.0)), "{}", inst.name);
        assert!(out.mu.iter().all(|&m| m == 0.0));
    }
}

#[test]
fn six_bus_binding_objective_within_half_a_percent() {
    let inst = instance6(true);
    let central = solve_centralized_relaxed(&inst.grid, &inst.scenario, &solver()).unwrap();
    let (out, _) = dual(&inst);
    assert!(rel(out.objective, central.objective) <= 5e-3);
}

#[test]
fn permuting_evs_permutes_the_rows() {
    let inst = instance6(true);
    let (base, _) = dual(&inst);
    let mut perm: Vec<usize> = (0..inst.scenario.n_evs()).collect();
    perm.reverse();
    perm.swap(0, 7);
    let mut shuffled = inst.clone();
    shuffled.scenario.evs = perm.iter().map(|&a| inst.scenario.evs[a].clone()).collect();
    let (out, _) = dual(&shuffled);
    // the prices only see station totals, so the price paths are identical
    assert_eq!(out.trace.records.len(), base.trace.records.len());
    for (a, b) in out.trace.records.iter().zip(&base.trace.records) {
        assert_eq!((&a.lambda, &a.mu, &a.u_agg), (&b.lambda, &b.mu, &b.u_agg));
    }
    for (new_row, &old) in out.assignment.u.iter().zip(&perm) {
        for (x, y) in new_row.iter().zip(&base.assignment.u[old]) {
            assert!((x - y).abs() < 1e-6, "{new_row:?} vs {:?}", base.assignment.u[old]);
        }
    }
}

#[test]
fn mu_step_projection() {
    assert_eq!(mu_step(&[0.0], 0.1, &[5.0], &[10.0]), vec![0.0]);
    assert_eq!(mu_step(&[0.2], 0.1, &[12.0], &[10.0]), vec![0.2 + 0.1 * 2.0]);
}

#[test]
fn step_schedule_diminishes_without_summing() {
    let p = DualParams::default();
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for n in 0..10_000 {
        let (r1, r2) = p.steps(n);
        assert!(r1 > 0.0 && r2 > 0.0 && r1 < last);
        assert!((r2 / r1 - p.rho2_0 / p.rho1_0).abs() < 1e-12);
        last = r1;
        sum += r1;
    }
    // partial sums grow like 2 ρ0 √N
    assert!(sum > 1.9 * p.rho1_0 * 100.0);
    assert_eq!(DualParams::for_fleet(20).rho2_0, 0.1);
    assert_eq!(DualParams::for_fleet(300).rho2_0, 0.01);
}

#[test]
fn zero_prices_give_cheapest_grid_plus_nearest_travel() {
    let mut checked = 0;
    for inst in suite(4, 340) {
        let scen = &inst.scenario;
        let n = scen.n_stations();
        let got = dual_value(&inst.grid, scen, &vec![0.0; n], &vec![0.0; n], &solver()).unwrap();
        // Unpriced station draw is a free real-power injection. Model it as
        // a zero-cost generator that cannot touch reactive power and solve
        // the grid with no stations at all.
        let mut doc = inst.feeder.clone();
        if scen.stations.iter().any(|s| doc.buses.iter().any(|b| b.id == s.bus && b.generator.is_some())) {
            continue;
        }
        for b in &mut doc.buses {
            if b.station_id.take().is_some() {
                b.generator = Some(GeneratorDoc {
                    p_min: -100.0,
                    p_max: 100.0,
                    q_min: 0.0,
                    q_max: 0.0,
                    cost_quadratic: 0.0,
                    cost_linear: 0.0,
                });
            }
        }
        let none = StationLoads {
            bus: vec![],
            total: vec![],
            available: vec![],
            rate_mw: 1.0,
        };
        let grid = build_opf(&doc.into_grid().unwrap(), &CouplingObjective::Fixed(vec![]), &none)
            .unwrap()
            .solve(&solver())
            .unwrap()
            .objective_value;
        let d = distances(&scen.evs, &scen.stations);
        let travel: f64 = scen
            .evs
            .iter()
            .enumerate()
            .map(|(a, e)| {
                (0..n)
                    .filter(|&j| d.rows[a][j] <= e.range())
                    .map(|j| scen.alpha_per_km * d.rows[a][j])
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        assert!(rel(got, grid + travel) < 1e-6, "{}: {got} vs {}", inst.name, grid + travel);
        checked += 1;
    }
    assert!(checked >= 3);
}

#[test]
fn random_prices_bound_the_relaxed_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(350);
    for inst in suite(3, 350) {
        let scen = &inst.scenario;
        let n = scen.n_stations();
        let central = solve_centralized_relaxed(&inst.grid, scen, &solver()).unwrap();
        for _ in 0..5 {
            let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..60.0)).collect();
            let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.2)).collect();
            match dual_value(&inst.grid, scen, &lambda, &mu, &solver()) {
                Ok(v) => assert!(v <= central.objective + 1e-6 * central.objective.abs(), "{}: {v}", inst.name),
                // prices above what the grid can absorb leave V unbounded
                Err(DualError::Opf(_)) => {}
                Err(e) => panic!("{}: {e}", inst.name),
            }
        }
    }
}

#[test]
fn huge_capacity_price_drives_evs_away() {
    let inst = instance6(true);
    let n = inst.scenario.n_stations();
    let mut mu = vec![0.0; n];
    mu[1] = 1e9;
    for agent in EvAgent::fleet(&inst.scenario) {
        let row = agent.respond(&vec![0.0; n], &mu).unwrap();
        assert_eq!(row[1], 0.0);
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let inst = instance6(false);
    let params = DualParams {
        window: 0,
        ..DualParams::default()
    };
    let err = run_dual(&inst.grid, &inst.scenario, &params, &solver()).unwrap_err();
    assert!(matches!(err, DualError::InvalidParams(_)), "{err}");
}
