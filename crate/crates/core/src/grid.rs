//! Radial distribution feeder model.
//!
//! A [`Grid`] is loaded from a `swapgrid-feeder/1` JSON document (MW, Mvar,
//! $ units) and stored internally in per-unit on the document's `base_mva`.
//! Once loaded it is immutable and can be shared read-only between solver
//! instances.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format tag every feeder document must carry.
pub const FEEDER_FORMAT: &str = "swapgrid-feeder/1";

pub type BusId = u32;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("non-tree topology: {0}")]
    NonTree(RadialReport),
    #[error("dangling reference at {path}: {message}")]
    Dangling { path: String, message: String },
    #[error("invalid value at {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("nonzero station load {load} at bus {bus}, which hosts no station")]
    StationLoadAtNonStationBus { bus: BusId, load: f64 },
}

/// Generator capability and quadratic cost, stored per-unit.
///
/// Cost over the control interval is `cost_quadratic * p^2 + cost_linear * p`
/// with `p` in per-unit, so the coefficients are rescaled from $/MW^2 and $/MW
/// on load.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost_quadratic: f64,
    pub cost_linear: f64,
}

impl GeneratorSpec {
    /// Cost in $ of producing `p` per-unit.
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p * p + self.cost_linear * p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    /// Squared voltage magnitude bounds (pu^2).
    pub v_min: f64,
    pub v_max: f64,
    /// Background real and reactive load (pu).
    pub p_bg: f64,
    pub q_bg: f64,
    pub generator: Option<GeneratorSpec>,
    pub station_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Apparent power limit (pu).
    pub s_max: f64,
}

impl Line {
    pub fn z_squared(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// Validated radial feeder in per-unit.
#[derive(Debug, Clone)]
pub struct Grid {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    root: BusId,
    v_root: f64,
    base_mva: f64,
    index: HashMap<BusId, usize>,
    /// For every bus index, the index of the line feeding it (None at the root).
    parent_line: Vec<Option<usize>>,
    /// For every bus index, the indices of lines leaving it.
    child_lines: Vec<Vec<usize>>,
    line_ends: Vec<(usize, usize)>,
}

impl Grid {
    /// Assemble a grid from per-unit parts, checking it is a radial tree.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        root: BusId,
        v_root: f64,
        base_mva: f64,
    ) -> Result<Self, GridError> {
        let report = check_radial(&buses, &lines, root);
        if !report.is_ok() {
            return Err(GridError::NonTree(report));
        }
        let index: HashMap<BusId, usize> =
            buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut parent_line = vec![None; buses.len()];
        let mut child_lines = vec![Vec::new(); buses.len()];
        let mut line_ends = Vec::with_capacity(lines.len());
        for (k, line) in lines.iter().enumerate() {
            let f = index[&line.from];
            let t = index[&line.to];
            parent_line[t] = Some(k);
            child_lines[f].push(k);
            line_ends.push((f, t));
        }
        Ok(Grid {
            buses,
            lines,
            root,
            v_root,
            base_mva,
            index,
            parent_line,
            child_lines,
            line_ends,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn root(&self) -> BusId {
        self.root
    }

    pub fn root_index(&self) -> usize {
        self.index[&self.root]
    }

    pub fn v_root(&self) -> f64 {
        self.v_root
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn parent_line(&self, bus_index: usize) -> Option<usize> {
        self.parent_line[bus_index]
    }

    pub fn child_lines(&self, bus_index: usize) -> &[usize] {
        &self.child_lines[bus_index]
    }

    /// (from, to) bus indices of line `k`.
    pub fn line_ends(&self, k: usize) -> (usize, usize) {
        self.line_ends[k]
    }

    /// The bus set hosting swapping stations, in ascending id order.
    pub fn station_buses(&self) -> Vec<BusId> {
        let set: BTreeSet<BusId> = self
            .buses
            .iter()
            .filter(|b| b.station_id.is_some())
            .map(|b| b.id)
            .collect();
        set.into_iter().collect()
    }

    pub fn is_station_bus(&self, id: BusId) -> bool {
        self.bus(id).is_some_and(|b| b.station_id.is_some())
    }

    pub fn mw_to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn pu_to_mw(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }

    /// Net injection `(p_j, q_j)` at a bus, all in per-unit.
    ///
    /// `station_load` is the swapping-station load at the bus; it must be
    /// zero unless the bus hosts a station.
    pub fn net_injection(
        &self,
        bus: BusId,
        gen: (f64, f64),
        station_load: f64,
    ) -> Result<(f64, f64), GridError> {
        let b = self.bus(bus).ok_or(GridError::UnknownBus(bus))?;
        if b.station_id.is_none() && station_load != 0.0 {
            return Err(GridError::StationLoadAtNonStationBus {
                bus,
                load: station_load,
            });
        }
        Ok((gen.0 - b.p_bg - station_load, gen.1 - b.q_bg))
    }

    /// Convert back to a document in physical units.
    pub fn to_document(&self) -> FeederDocument {
        let base = self.base_mva;
        FeederDocument {
            format: FEEDER_FORMAT.to_string(),
            base_mva: base,
            root: self.root,
            v_root: self.v_root,
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    p_bg: b.p_bg * base,
                    q_bg: b.q_bg * base,
                    generator: b.generator.as_ref().map(|g| GeneratorDoc {
                        p_min: g.p_min * base,
                        p_max: g.p_max * base,
                        q_min: g.q_min * base,
                        q_max: g.q_max * base,
                        cost_quadratic: g.cost_quadratic / (base * base),
                        cost_linear: g.cost_linear / base,
                    }),
                    station_id: b.station_id,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineDoc {
                    from: l.from,
                    to: l.to,
                    r: l.r,
                    x: l.x,
                    s_max: l.s_max * base,
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Radial validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RadialViolation {
    /// Root bus id not among the buses.
    MissingRoot(BusId),
    /// Line `index` references an unknown bus.
    UnknownEndpoint { line: usize, bus: BusId },
    /// Line `index` is a self loop.
    SelfLoop { line: usize },
    /// |E| != |N| - 1.
    EdgeCount { buses: usize, lines: usize },
    /// A line points into the root, or a bus is fed by more than one line.
    Orientation { line: usize, from: BusId, to: BusId },
    /// Buses not reachable from the root along line orientations.
    Unreachable(Vec<BusId>),
    DuplicateBus(BusId),
}

/// Outcome of [`validate_radial`]; empty means the lines form a spanning
/// tree oriented away from the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RadialReport {
    pub violations: Vec<RadialViolation>,
}

impl RadialReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for RadialReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

pub fn validate_radial(grid: &Grid) -> RadialReport {
    check_radial(&grid.buses, &grid.lines, grid.root)
}

fn check_radial(buses: &[Bus], lines: &[Line], root: BusId) -> RadialReport {
    let mut violations = Vec::new();
    let mut index = HashMap::new();
    for (i, b) in buses.iter().enumerate() {
        if index.insert(b.id, i).is_some() {
            violations.push(RadialViolation::DuplicateBus(b.id));
        }
    }
    let Some(&root_idx) = index.get(&root) else {
        violations.push(RadialViolation::MissingRoot(root));
        return RadialReport { violations };
    };
    if lines.len() + 1 != buses.len() {
        violations.push(RadialViolation::EdgeCount {
            buses: buses.len(),
            lines: lines.len(),
        });
    }
    let mut fed = vec![false; buses.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); buses.len()];
    for (k, line) in lines.iter().enumerate() {
        let (Some(&f), Some(&t)) = (index.get(&line.from), index.get(&line.to)) else {
            for bus in [line.from, line.to] {
                if !index.contains_key(&bus) {
                    violations.push(RadialViolation::UnknownEndpoint { line: k, bus });
                }
            }
            continue;
        };
        if f == t {
            violations.push(RadialViolation::SelfLoop { line: k });
            continue;
        }
        if t == root_idx || fed[t] {
            violations.push(RadialViolation::Orientation {
                line: k,
                from: line.from,
                to: line.to,
            });
            continue;
        }
        fed[t] = true;
        children[f].push(t);
    }
    let mut seen = vec![false; buses.len()];
    let mut queue = VecDeque::from([root_idx]);
    seen[root_idx] = true;
    while let Some(i) = queue.pop_front() {
        for &c in &children[i] {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    let unreachable: Vec<BusId> = buses
        .iter()
        .zip(&seen)
        .filter(|(_, s)| !**s)
        .map(|(b, _)| b.id)
        .collect();
    if !unreachable.is_empty() {
        violations.push(RadialViolation::Unreachable(unreachable));
    }
    RadialReport { violations }
}

// ---------------------------------------------------------------------------
// Feeder document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost_quadratic: f64,
    pub cost_linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub id: BusId,
    pub v_min: f64,
    pub v_max: f64,
    pub p_bg: f64,
    pub q_bg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

/// On-disk feeder representation in MW / Mvar / $ units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederDocument {
    pub format: String,
    pub base_mva: f64,
    pub root: BusId,
    #[serde(default = "default_v_root")]
    pub v_root: f64,
    pub buses: Vec<BusDoc>,
    pub lines: Vec<LineDoc>,
}

fn default_v_root() -> f64 {
    1.0
}

impl FeederDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feeder document serializes")
    }

    /// Validate and convert to a per-unit [`Grid`].
    pub fn into_grid(self) -> Result<Grid, GridError> {
        if self.format != FEEDER_FORMAT {
            return Err(GridError::Schema {
                path: "format".into(),
                message: format!("expected {FEEDER_FORMAT:?}, found {:?}", self.format),
            });
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return invalid("base_mva", "must be positive");
        }
        if !(self.v_root.is_finite() && self.v_root > 0.0) {
            return invalid("v_root", "must be positive");
        }
        let base = self.base_mva;
        let mut ids = HashMap::new();
        let mut station_ids = HashMap::new();
        let mut buses = Vec::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            let path = format!("buses[{i}]");
            if ids.insert(b.id, i).is_some() {
                return invalid(&format!("{path}.id"), &format!("duplicate bus id {}", b.id));
            }
            if !(b.v_min.is_finite() && b.v_max.is_finite()) || b.v_min > b.v_max || b.v_min <= 0.0
            {
                return invalid(&path, "require 0 < v_min <= v_max");
            }
            if !(b.p_bg >= 0.0 && b.q_bg >= 0.0) {
                return invalid(&path, "background loads must be nonnegative");
            }
            if let Some(sid) = b.station_id {
                if let Some(prev) = station_ids.insert(sid, b.id) {
                    return invalid(
                        &format!("{path}.station_id"),
                        &format!("station {sid} already placed at bus {prev}"),
                    );
                }
            }
            let generator = match &b.generator {
                None => None,
                Some(g) => {
                    let gpath = format!("{path}.generator");
                    if g.p_min > g.p_max || g.q_min > g.q_max {
                        return invalid(&gpath, "require p_min <= p_max and q_min <= q_max");
                    }
                    if !(g.cost_quadratic >= 0.0) || !g.cost_linear.is_finite() {
                        return invalid(&gpath, "cost_quadratic must be nonnegative");
                    }
                    Some(GeneratorSpec {
                        p_min: g.p_min / base,
                        p_max: g.p_max / base,
                        q_min: g.q_min / base,
                        q_max: g.q_max / base,
                        cost_quadratic: g.cost_quadratic * base * base,
                        cost_linear: g.cost_linear * base,
                    })
                }
            };
            buses.push(Bus {
                id: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
                p_bg: b.p_bg / base,
                q_bg: b.q_bg / base,
                generator,
                station_id: b.station_id,
            });
        }
        if !ids.contains_key(&self.root) {
            return Err(GridError::Dangling {
                path: "root".into(),
                message: format!("bus {} does not exist", self.root),
            });
        }
        let mut lines = Vec::with_capacity(self.lines.len());
        for (k, l) in self.lines.iter().enumerate() {
            for (end, id) in [("from", l.from), ("to", l.to)] {
                if !ids.contains_key(&id) {
                    return Err(GridError::Dangling {
                        path: format!("lines[{k}].{end}"),
                        message: format!("bus {id} does not exist"),
                    });
                }
            }
            if !(l.r >= 0.0) || !l.x.is_finite() {
                return invalid(&format!("lines[{k}]"), "require r >= 0 and finite x");
            }
            if !(l.s_max > 0.0) {
                return invalid(&format!("lines[{k}].s_max"), "must be positive");
            }
            lines.push(Line {
                from: l.from,
                to: l.to,
                r: l.r,
                x: l.x,
                s_max: l.s_max / base,
            });
        }
        Grid::new(buses, lines, self.root, self.v_root, base)
    }
}

fn invalid<T>(path: &str, message: &str) -> Result<T, GridError> {
    Err(GridError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    })
}

/// Parse and validate a feeder document.
pub fn load_feeder(document: &[u8]) -> Result<Grid, GridError> {
    let de = &mut serde_json::Deserializer::from_slice(document);
    let doc: FeederDocument =
        serde_path_to_error::deserialize(de).map_err(|e| GridError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    doc.into_grid()
}
