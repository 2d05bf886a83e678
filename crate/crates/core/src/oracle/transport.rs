//! Exact EV-to-station transportation with prescribed station counts.
//!
//! The solver keeps an assignment that is optimal for its own station
//! counts and moves it to new target counts by successive shortest paths on
//! the small station graph: the edge `j -> k` costs the cheapest change of
//! one EV currently at `j` switching to `k`. Because the stored assignment
//! is always optimal for its counts, it serves as a warm start for the next
//! target. Enumerating targets in lexicographic order then needs about one
//! augmentation per target.

/// Below this, a path-length improvement is treated as a tie.
const TIE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TransportSolver {
    costs: Vec<Vec<Option<f64>>>,
    choice: Vec<usize>,
    counts: Vec<usize>,
}

impl TransportSolver {
    /// Start from every EV at its cheapest allowed station (lowest index on
    /// ties). `None` when some EV has no allowed station.
    pub fn new(costs: Vec<Vec<Option<f64>>>, n_stations: usize) -> Option<Self> {
        let mut counts = vec![0; n_stations];
        let mut choice = Vec::with_capacity(costs.len());
        for row in &costs {
            let mut best: Option<(usize, f64)> = None;
            for (j, c) in row.iter().enumerate() {
                if let Some(c) = *c {
                    if best.map_or(true, |(_, b)| c < b) {
                        best = Some((j, c));
                    }
                }
            }
            let (j, _) = best?;
            choice.push(j);
            counts[j] += 1;
        }
        Some(TransportSolver {
            costs,
            choice,
            counts,
        })
    }

    /// Cheapest assignment giving station `j` exactly `target[j]` EVs.
    /// Returns the station per EV and the total cost, or `None` when no
    /// such assignment exists.
    pub fn solve(&mut self, target: &[usize]) -> Option<(Vec<usize>, f64)> {
        let n = self.counts.len();
        if target.len() != n || target.iter().sum::<usize>() != self.choice.len() {
            return None;
        }
        while self.counts != target {
            self.augment(target)?;
        }
        let total = self
            .choice
            .iter()
            .enumerate()
            .map(|(a, &j)| self.costs[a][j].expect("assigned pairs are allowed"))
            .sum();
        Some((self.choice.clone(), total))
    }

    /// Move one EV's worth of count from a station above its target to one
    /// below it along a cheapest path.
    fn augment(&mut self, target: &[usize]) -> Option<()> {
        let n = self.counts.len();
        // cheapest single switch j -> k, with the EV making it
        let mut edge: Vec<Vec<Option<(f64, usize)>>> = vec![vec![None; n]; n];
        for (a, &j) in self.choice.iter().enumerate() {
            let here = self.costs[a][j].expect("assigned pairs are allowed");
            for (k, c) in self.costs[a].iter().enumerate() {
                if let (true, Some(c)) = (k != j, *c) {
                    let delta = c - here;
                    if edge[j][k].map_or(true, |(b, _)| delta < b) {
                        edge[j][k] = Some((delta, a));
                    }
                }
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        for j in 0..n {
            if self.counts[j] > target[j] {
                dist[j] = 0.0;
            }
        }
        // the residual graph has no negative cycle, so n rounds suffice
        for _ in 0..n {
            let mut changed = false;
            for j in 0..n {
                if !dist[j].is_finite() {
                    continue;
                }
                for k in 0..n {
                    if let Some((c, _)) = edge[j][k] {
                        if dist[j] + c < dist[k] - TIE {
                            dist[k] = dist[j] + c;
                            pred[k] = Some(j);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..n)
            .filter(|&k| self.counts[k] < target[k] && dist[k].is_finite())
            .min_by(|&x, &y| dist[x].total_cmp(&dist[y]))?;
        let mut path = vec![sink];
        let mut k = sink;
        while let Some(j) = pred[k] {
            path.push(j);
            k = j;
        }
        // every station appears once on the path, so the moved EVs differ
        for w in path.windows(2) {
            let (k, j) = (w[0], w[1]);
            let (_, a) = edge[j][k].expect("path edges exist");
            self.choice[a] = k;
        }
        self.counts[path[path.len() - 1]] -= 1;
        self.counts[sink] += 1;
        Some(())
    }
}

/// Cheapest assignment of every EV to one station so that station `j`
/// receives exactly `counts[j]` EVs. `costs[a][j]` is `None` for forbidden
/// pairs. Returns the station per EV and the total cost, or `None` when no
/// such assignment exists.
pub fn min_cost_assignment(
    costs: &[Vec<Option<f64>>],
    counts: &[usize],
) -> Option<(Vec<usize>, f64)> {
    TransportSolver::new(costs.to_vec(), counts.len())?.solve(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: try every assignment.
    fn brute(costs: &[Vec<Option<f64>>], counts: &[usize]) -> Option<f64> {
        let n = counts.len();
        let mut best: Option<f64> = None;
        let mut idx = vec![0usize; costs.len()];
        loop {
            let mut c = vec![0; n];
            let mut total = 0.0;
            let mut ok = true;
            for (a, &j) in idx.iter().enumerate() {
                match costs[a][j] {
                    Some(v) => {
                        total += v;
                        c[j] += 1;
                    }
                    None => ok = false,
                }
            }
            if ok && c == counts && best.map_or(true, |b| total < b) {
                best = Some(total);
            }
            let mut a = 0;
            loop {
                if a == idx.len() {
                    return best;
                }
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    #[test]
    fn crossing_is_avoided() {
        let costs = vec![vec![Some(1.0), Some(3.0)], vec![Some(3.0), Some(1.0)]];
        let (choice, total) = min_cost_assignment(&costs, &[1, 1]).unwrap();
        assert_eq!(choice, vec![0, 1]);
        assert_eq!(total, 2.0);
    }

    #[test]
    fn counts_force_a_detour() {
        let costs = vec![vec![Some(1.0), Some(2.0)], vec![Some(1.0), Some(5.0)]];
        let (choice, total) = min_cost_assignment(&costs, &[1, 1]).unwrap();
        assert_eq!(choice, vec![1, 0]);
        assert_eq!(total, 3.0);
    }

    #[test]
    fn forbidden_pairs_make_counts_infeasible() {
        let costs = vec![vec![Some(1.0), None], vec![Some(1.0), None]];
        assert!(min_cost_assignment(&costs, &[1, 1]).is_none());
        assert!(min_cost_assignment(&costs, &[2, 0]).is_some());
    }

    #[test]
    fn warm_started_solves_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let a = rng.gen_range(1..=6);
            let n = rng.gen_range(1..=3);
            let costs: Vec<Vec<Option<f64>>> = (0..a)
                .map(|_| {
                    (0..n)
                        .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..5) as f64))
                        .collect()
                })
                .collect();
            let Some(mut solver) = TransportSolver::new(costs.clone(), n) else {
                continue;
            };
            // reuse one solver across every count vector
            let mut targets = vec![vec![]];
            for _ in 0..n {
                targets = targets
                    .into_iter()
                    .flat_map(|t: Vec<usize>| {
                        (0..=a).map(move |c| {
                            let mut t = t.clone();
                            t.push(c);
                            t
                        })
                    })
                    .collect();
            }
            for t in targets.iter().filter(|t| t.iter().sum::<usize>() == a) {
                let got = solver.solve(t).map(|(_, g)| g);
                let want = brute(&costs, t);
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9, "{t:?}: {g} vs {w}"),
                    (None, None) => {}
                    other => panic!("{t:?}: {other:?}"),
                }
            }
        }
    }
}
