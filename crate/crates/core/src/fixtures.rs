//! Generated test instances: random small feeders with fleets, a 6-bus
//! feeder, and a 56-bus stand-in feeder with the four-generator,
//! four-station layout used for the large scenarios.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fleet::{Ev, Scenario, Station};
use crate::grid::{BusDoc, FeederDocument, GeneratorDoc, Grid, LineDoc, FEEDER_FORMAT};

/// Default charging rate per battery (MW).
pub const DEFAULT_R_MW: f64 = 0.01;
/// Default travel-distance weight ($/km).
pub const DEFAULT_ALPHA: f64 = 0.02;

/// A feeder plus a scenario that fits it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub grid: Grid,
    pub feeder: FeederDocument,
    pub scenario: Scenario,
}

/// How many charged batteries each station holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityPolicy {
    /// `m_j = A` at every station, so capacity never binds.
    Ample,
    /// Uneven capacities summing to roughly `1.1 A`, so capacity binds.
    Uneven,
}

impl CapacityPolicy {
    /// Capacities for `n` stations and `a` EVs.
    ///
    /// `Uneven` scales the pattern `(1/2, 1/10, 1/4, 1/4)` (cycled for more
    /// than four stations) so it sums to `1.1 A`, rounding up.
    pub fn capacities(self, n: usize, a: usize) -> Vec<u32> {
        match self {
            CapacityPolicy::Ample => vec![a as u32; n],
            CapacityPolicy::Uneven => {
                let pattern = [0.5, 0.1, 0.25, 0.25];
                let weights: Vec<f64> = (0..n).map(|j| pattern[j % 4]).collect();
                let total: f64 = weights.iter().sum();
                let mut caps: Vec<u32> = weights
                    .iter()
                    .map(|w| (w / total * 1.1 * a as f64).round() as u32)
                    .collect();
                // rounding must not leave fewer batteries than EVs
                let mut j = 0;
                while (caps.iter().sum::<u32>() as usize) < a {
                    caps[j % n] += 1;
                    j += 1;
                }
                caps
            }
        }
    }
}

/// Station geometry on a square of side `area_km`: the grid points
/// `(1,1), (3,1), (1,3), (3,3)` of a 4 km square, scaled.
pub fn station_positions(area_km: f64) -> [(f64, f64); 4] {
    let s = area_km / 4.0;
    [(s, s), (3.0 * s, s), (s, 3.0 * s), (3.0 * s, 3.0 * s)]
}

/// Uniform EV positions in the square, `gamma = 50` km per unit charge and
/// charge uniform in `[0.2, 1]`.
pub fn random_evs(rng: &mut ChaCha8Rng, a: usize, area_km: f64) -> Vec<Ev> {
    (0..a)
        .map(|i| Ev {
            id: i as u32,
            x: rng.gen_range(0.0..area_km),
            y: rng.gen_range(0.0..area_km),
            gamma: 50.0,
            charge: rng.gen_range(0.2..=1.0),
        })
        .collect()
}

fn gen_doc(p_max: f64, q: f64, c2: f64, c1: f64) -> GeneratorDoc {
    GeneratorDoc {
        p_min: 0.0,
        p_max,
        q_min: -q,
        q_max: q,
        cost_quadratic: c2,
        cost_linear: c1,
    }
}

fn plain_bus(id: u32, p_bg: f64, q_bg: f64) -> BusDoc {
    BusDoc {
        id,
        v_min: 0.81,
        v_max: 1.21,
        p_bg,
        q_bg,
        generator: None,
        station_id: None,
    }
}

/// Parent of each non-root bus in the 56-bus stand-in. The first ten lines
/// follow the published exactness table; the rest form laterals.
fn sce56_edges() -> Vec<(u32, u32)> {
    let mut edges = vec![
        (1, 2),
        (2, 3),
        (2, 4),
        (4, 5),
        (4, 6),
        (4, 7),
        (7, 8),
        (8, 9),
        (8, 10),
        (10, 11),
    ];
    // main trunk continues 11 -> 12 -> ... -> 20
    for b in 12..=20 {
        edges.push((b - 1, b));
    }
    // lateral off 8: 21..=27
    edges.push((8, 21));
    for b in 22..=27 {
        edges.push((b - 1, b));
    }
    // lateral off 10: 28..=35
    edges.push((10, 28));
    for b in 29..=35 {
        edges.push((b - 1, b));
    }
    // lateral off 13: 36..=45
    edges.push((13, 36));
    for b in 37..=45 {
        edges.push((b - 1, b));
    }
    // lateral off 17: 46..=51, and off 5: 52..=56
    edges.push((17, 46));
    for b in 47..=51 {
        edges.push((b - 1, b));
    }
    edges.push((5, 52));
    for b in 53..=56 {
        edges.push((b - 1, b));
    }
    edges
}

/// 56-bus stand-in feeder on a 1 MVA base. Impedances and background
/// loads are synthetic; generators sit at buses 1, 4, 26, 34 and stations
/// 0..=3 at buses 5, 16, 31, 43.
pub fn sce56_standin() -> FeederDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let stations = [(5u32, 0u32), (16, 1), (31, 2), (43, 3)];
    let buses = (1..=56)
        .map(|id| {
            let mut b = if id == 1 {
                plain_bus(id, 0.0, 0.0)
            } else {
                let p: f64 = rng.gen_range(0.02..0.12);
                plain_bus(id, p, p * 0.3)
            };
            b.generator = match id {
                1 => Some(gen_doc(4.0, 2.0, 0.3, 30.0)),
                4 | 26 | 34 => Some(gen_doc(2.5, 1.5, 0.1, 20.0)),
                _ => None,
            };
            b.station_id = stations.iter().find(|s| s.0 == id).map(|s| s.1);
            b
        })
        .collect();
    let lines = sce56_edges()
        .into_iter()
        .map(|(from, to)| {
            let r = rng.gen_range(0.0005..0.003);
            LineDoc {
                from,
                to,
                r,
                x: r * rng.gen_range(0.8..1.6),
                s_max: 12.0,
            }
        })
        .collect();
    FeederDocument {
        format: FEEDER_FORMAT.into(),
        base_mva: 1.0,
        root: 1,
        v_root: 1.0,
        buses,
        lines,
    }
}

/// Station buses of the 56-bus stand-in, in station order.
pub const SCE56_STATION_BUSES: [u32; 4] = [5, 16, 31, 43];

/// Scenario on the stand-in layout: `a` EVs uniformly placed in a square of
/// side `area_km`, `n_stations ≤ 4` stations, capacities by `policy` and
/// `M_j = m_j`.
pub fn layout_scenario(
    a: usize,
    n_stations: usize,
    area_km: f64,
    policy: CapacityPolicy,
    seed: u64,
) -> Scenario {
    assert!((1..=4).contains(&n_stations), "layout has four station sites");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let evs = random_evs(&mut rng, a, area_km);
    let pos = station_positions(area_km);
    let caps = policy.capacities(n_stations, a);
    let stations = (0..n_stations)
        .map(|j| Station {
            id: j as u32,
            bus: SCE56_STATION_BUSES[j],
            x: pos[j].0,
            y: pos[j].1,
            total: caps[j],
            available: caps[j],
        })
        .collect();
    Scenario::new(DEFAULT_R_MW, DEFAULT_ALPHA, evs, stations, seed)
}

/// Options for [`random_instance`].
#[derive(Debug, Clone)]
pub struct RandomOptions {
    pub buses: std::ops::RangeInclusive<usize>,
    pub evs: std::ops::RangeInclusive<usize>,
    pub stations: Vec<usize>,
    pub policy: Option<CapacityPolicy>,
}

impl Default for RandomOptions {
    fn default() -> Self {
        RandomOptions {
            buses: 6..=15,
            evs: 5..=30,
            stations: vec![2, 3, 4],
            policy: None,
        }
    }
}

/// Random radial feeder with a root generator, one distributed generator and
/// a random fleet. Deterministic in `seed`.
pub fn random_instance(seed: u64, opts: &RandomOptions) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bus = rng.gen_range(opts.buses.clone());
    let n_st = *opts.stations.choose(&mut rng).expect("station choices");
    let a = rng.gen_range(opts.evs.clone());
    let policy = opts.policy.unwrap_or(if rng.gen_bool(0.5) {
        CapacityPolicy::Ample
    } else {
        CapacityPolicy::Uneven
    });
    assert!(n_st < n_bus, "need a non-root bus per station");

    let mut lines = Vec::with_capacity(n_bus - 1);
    for b in 1..n_bus as u32 {
        let parent = rng.gen_range(0..b);
        let r = rng.gen_range(0.002..0.01);
        lines.push(LineDoc {
            from: parent,
            to: b,
            r,
            x: r * rng.gen_range(0.8..1.6),
            s_max: 10.0,
        });
    }
    let mut non_root: Vec<u32> = (1..n_bus as u32).collect();
    non_root.shuffle(&mut rng);
    let station_buses: Vec<u32> = non_root[..n_st].to_vec();
    let dg_bus = non_root[n_st % non_root.len()];

    let buses: Vec<BusDoc> = (0..n_bus as u32)
        .map(|id| {
            let mut b = if id == 0 {
                plain_bus(0, 0.0, 0.0)
            } else {
                let p: f64 = rng.gen_range(0.05..0.3);
                plain_bus(id, p, p * rng.gen_range(0.1..0.4))
            };
            if id == 0 {
                b.generator = Some(gen_doc(4.0, 2.0, 0.3, 30.0));
            } else if id == dg_bus {
                b.generator = Some(gen_doc(
                    rng.gen_range(0.3..1.0),
                    0.5,
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(15.0..25.0),
                ));
            }
            b.station_id = station_buses.iter().position(|&s| s == id).map(|j| j as u32);
            b
        })
        .collect();
    let feeder = FeederDocument {
        format: FEEDER_FORMAT.into(),
        base_mva: 1.0,
        root: 0,
        v_root: 1.0,
        buses,
        lines,
    };

    let area = 4.0;
    let evs = random_evs(&mut rng, a, area);
    let caps = policy.capacities(n_st, a);
    let stations = station_buses
        .iter()
        .enumerate()
        .map(|(j, &bus)| Station {
            id: j as u32,
            bus,
            x: rng.gen_range(0.0..area),
            y: rng.gen_range(0.0..area),
            total: caps[j] + rng.gen_range(0..3),
            available: caps[j],
        })
        .collect();
    let scenario = Scenario::new(DEFAULT_R_MW, DEFAULT_ALPHA, evs, stations, seed);
    let grid = feeder.clone().into_grid().expect("generated feeder is valid");
    Instance {
        name: format!("random-{seed}"),
        grid,
        feeder,
        scenario,
    }
}

/// `n` random instances with consecutive seeds from `base_seed`.
pub fn random_suite(n: usize, base_seed: u64, opts: &RandomOptions) -> Vec<Instance> {
    (0..n as u64)
        .map(|i| random_instance(base_seed + i, opts))
        .collect()
}

/// Six-bus feeder with three stations at buses 2, 4 and 5.
pub fn feeder6() -> FeederDocument {
    let parents = [(0, 1), (1, 2), (1, 3), (3, 4), (3, 5)];
    let loads = [0.0, 0.2, 0.15, 0.25, 0.1, 0.2];
    let station = |id: u32| match id {
        2 => Some(0),
        4 => Some(1),
        5 => Some(2),
        _ => None,
    };
    let buses = (0..6u32)
        .map(|id| {
            let mut b = plain_bus(id, loads[id as usize], loads[id as usize] * 0.3);
            b.generator = match id {
                0 => Some(gen_doc(4.0, 2.0, 0.3, 30.0)),
                3 => Some(gen_doc(0.6, 0.5, 0.1, 20.0)),
                _ => None,
            };
            b.station_id = station(id);
            b
        })
        .collect();
    let lines = parents
        .iter()
        .enumerate()
        .map(|(k, &(from, to))| LineDoc {
            from,
            to,
            r: 0.004 + 0.001 * k as f64,
            x: 0.006 + 0.001 * k as f64,
            s_max: 10.0,
        })
        .collect();
    FeederDocument {
        format: FEEDER_FORMAT.into(),
        base_mva: 1.0,
        root: 0,
        v_root: 1.0,
        buses,
        lines,
    }
}

/// Twenty EVs and three stations on [`feeder6`]. With `binding` the
/// capacities are `(8, 4, 10)`, otherwise every station can take all EVs.
pub fn scenario6(binding: bool) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let evs = random_evs(&mut rng, 20, 4.0);
    let sites = [(2u32, 1.0, 1.0), (4, 3.0, 1.0), (5, 2.0, 3.0)];
    let caps: [u32; 3] = if binding { [8, 4, 10] } else { [20, 20, 20] };
    let stations = sites
        .iter()
        .enumerate()
        .map(|(j, &(bus, x, y))| Station {
            id: j as u32,
            bus,
            x,
            y,
            total: caps[j] + 2,
            available: caps[j],
        })
        .collect();
    Scenario::new(DEFAULT_R_MW, DEFAULT_ALPHA, evs, stations, 6)
}

pub fn instance6(binding: bool) -> Instance {
    let feeder = feeder6();
    Instance {
        name: if binding { "feeder6-binding" } else { "feeder6-ample" }.into(),
        grid: feeder.clone().into_grid().expect("valid feeder"),
        feeder,
        scenario: scenario6(binding),
    }
}

/// The 56-bus stand-in with `a` EVs in a 4 km square and the given policy.
pub fn instance56(a: usize, policy: CapacityPolicy, seed: u64) -> Instance {
    let feeder = sce56_standin();
    Instance {
        name: format!("sce56-{a}-{policy:?}"),
        grid: feeder.clone().into_grid().expect("valid feeder"),
        feeder,
        scenario: layout_scenario(a, 4, 4.0, policy, seed),
    }
}
