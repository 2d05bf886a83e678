//! Turning a relaxed assignment into a binary one.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, feasible_stations, AssignmentMatrix, DistanceMatrix, FleetError, Scenario};

/// Round every row to its largest entry, then repair capacity.
pub fn discretize(
    u: &AssignmentMatrix,
    scen: &Scenario,
    d: &DistanceMatrix,
) -> Result<AssignmentMatrix, FleetError> {
    let choices = u.argmax_rows();
    repair_capacity(choices, u, scen, d)
}

/// Sample each row's station from the row treated as a distribution, then
/// repair capacity. Deterministic in `seed`.
pub fn randomized_round(
    u: &AssignmentMatrix,
    scen: &Scenario,
    d: &DistanceMatrix,
    seed: u64,
) -> Result<AssignmentMatrix, FleetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices = u
        .u
        .iter()
        .map(|row| {
            let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
            if total <= 0.0 {
                return argmax(row);
            }
            let mut draw = rng.gen::<f64>() * total;
            let mut last = argmax(row);
            for (j, &v) in row.iter().enumerate() {
                if v <= 0.0 {
                    continue;
                }
                last = j;
                draw -= v;
                if draw < 0.0 {
                    return j;
                }
            }
            last
        })
        .collect();
    repair_capacity(choices, u, scen, d)
}

/// Greedy capacity repair. While some station holds more EVs than it has
/// charged batteries, move the EV whose move to its next preferred station
/// with room costs the least extra travel `α (d_next - d_current)`.
///
/// An EV prefers stations with larger relaxed entries, then shorter
/// distance, then lower index. Ties between EVs go to the lowest index.
pub fn repair_capacity(
    mut choices: Vec<usize>,
    relaxed: &AssignmentMatrix,
    scen: &Scenario,
    d: &DistanceMatrix,
) -> Result<AssignmentMatrix, FleetError> {
    scen.check_capacity()?;
    let n = scen.n_stations();
    let caps: Vec<usize> = scen.stations.iter().map(|s| s.available as usize).collect();
    let mut counts = vec![0usize; n];
    for &j in &choices {
        counts[j] += 1;
    }
    let prefs: Vec<Vec<usize>> = scen
        .evs
        .iter()
        .enumerate()
        .map(|(a, ev)| {
            let mut f = feasible_stations(ev, d.row(a))?;
            let row = &relaxed.u[a];
            f.sort_by(|&x, &y| {
                row[y]
                    .total_cmp(&row[x])
                    .then(d.rows[a][x].total_cmp(&d.rows[a][y]))
                    .then(x.cmp(&y))
            });
            Ok(f)
        })
        .collect::<Result<_, FleetError>>()?;

    while counts.iter().zip(&caps).any(|(c, m)| c > m) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, &cur) in choices.iter().enumerate() {
            if counts[cur] <= caps[cur] {
                continue;
            }
            let Some(&next) = prefs[a].iter().find(|&&j| j != cur && counts[j] < caps[j]) else {
                continue;
            };
            let increase = scen.alpha_per_km * (d.rows[a][next] - d.rows[a][cur]);
            if best.map_or(true, |(b, _, _)| increase < b) {
                best = Some((increase, a, next));
            }
        }
        let (_, a, next) = best.ok_or(FleetError::RepairFailed)?;
        counts[choices[a]] -= 1;
        counts[next] += 1;
        choices[a] = next;
    }
    Ok(AssignmentMatrix::from_choices(&choices, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{count_critical, distances, AssignmentMode, Ev, Station};

    fn scenario(caps: &[u32], evs: &[(f64, f64)]) -> Scenario {
        let stations = caps
            .iter()
            .enumerate()
            .map(|(j, &m)| Station {
                id: j as u32,
                bus: j as u32 + 2,
                x: j as f64 * 2.0,
                y: 0.0,
                total: m,
                available: m,
            })
            .collect();
        let evs = evs
            .iter()
            .enumerate()
            .map(|(a, &(x, y))| Ev {
                id: a as u32,
                x,
                y,
                gamma: 50.0,
                charge: 1.0,
            })
            .collect();
        Scenario::new(0.01, 0.02, evs, stations, 0)
    }

    #[test]
    fn integral_input_is_unchanged() {
        let s = scenario(&[2, 2], &[(0.0, 0.0), (2.0, 0.0)]);
        let d = distances(&s.evs, &s.stations);
        let u = AssignmentMatrix::from_choices(&[0, 1], 2);
        assert_eq!(discretize(&u, &s, &d).unwrap().u, u.u);
    }

    #[test]
    fn repair_moves_the_cheaper_row() {
        // Station 0 has room for one; both EVs lean to it. EV 1 sits at
        // x = 1.5, so moving it to station 1 at x = 2 costs less.
        let s = scenario(&[1, 2], &[(0.0, 0.0), (1.5, 0.0)]);
        let d = distances(&s.evs, &s.stations);
        let u = AssignmentMatrix {
            u: vec![vec![0.6, 0.4], vec![0.6, 0.4]],
            mode: AssignmentMode::Relaxed,
        };
        assert_eq!(count_critical(&u), 2);
        let b = discretize(&u, &s, &d).unwrap();
        assert_eq!(b.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn randomized_round_is_seeded() {
        let s = scenario(&[3, 3], &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let d = distances(&s.evs, &s.stations);
        let u = AssignmentMatrix {
            u: vec![vec![0.5, 0.5]; 3],
            mode: AssignmentMode::Relaxed,
        };
        let a = randomized_round(&u, &s, &d, 7).unwrap();
        let b = randomized_round(&u, &s, &d, 7).unwrap();
        assert_eq!(a, b);
    }
}
