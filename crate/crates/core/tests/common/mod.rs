#![allow(dead_code)]

use swapgrid::admm::{run_admm, AdmmError, AdmmOutcome, AdmmParams};
use swapgrid::conic::ClarabelSolver;
use swapgrid::dualdecomp::{run_dual, DualError, DualOutcome, DualParams};
use swapgrid::fixtures::{instance6, random_suite, Instance, RandomOptions};

/// The two 6-bus fixtures plus `n` random feeders.
pub fn suite(n: usize, base_seed: u64) -> Vec<Instance> {
    let mut all = vec![instance6(false), instance6(true)];
    all.extend(random_suite(n, base_seed, &RandomOptions::default()));
    all
}

pub fn solver() -> ClarabelSolver {
    ClarabelSolver::default()
}

/// ADMM result, taking the best iterate when the iteration cap is hit.
pub fn admm(inst: &Instance) -> (AdmmOutcome, bool) {
    let params = AdmmParams::for_rate(inst.scenario.r_mw);
    match run_admm(&inst.grid, &inst.scenario, &params, &solver()) {
        Ok(o) => (o, true),
        Err(AdmmError::NonConvergence { best, .. }) => (*best, false),
        Err(e) => panic!("{}: {e}", inst.name),
    }
}

pub fn dual(inst: &Instance) -> (DualOutcome, bool) {
    match run_dual(&inst.grid, &inst.scenario, &DualParams::for_fleet(inst.scenario.n_evs()), &solver()) {
        Ok(o) => (o, true),
        Err(DualError::NonConvergence { best, .. }) => (*best, false),
        Err(e) => panic!("{}: {e}", inst.name),
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
