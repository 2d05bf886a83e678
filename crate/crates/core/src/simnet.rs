//! Entity-level simulation of the utility company, the station operator and
//! the EVs.
//!
//! Every value that crosses between two entities is serialized to a JSON
//! line, checked against the link table of the running algorithm, appended
//! to the [`MessageLog`] and parsed back on the receiving side. The
//! algorithms only ever see the parsed copies, so the log is a complete
//! record of what each party learned from the others.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::admm::{run_admm_with, AdmmError, AdmmLinks, AdmmOutcome, AdmmParams};
use crate::conic::ConicSolver;
use crate::dualdecomp::{run_dual_with, DualError, DualLinks, DualOutcome, DualParams};
use crate::fleet::Scenario;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Utility,
    Operator,
    Ev(u32),
    /// Broadcast address reaching every EV.
    AllEvs,
}

impl Entity {
    fn is_ev(self) -> bool {
        matches!(self, Entity::Ev(_) | Entity::AllEvs)
    }

    /// The entity class, used by the link table.
    pub fn kind(self) -> &'static str {
        match self {
            Entity::Utility => "utility",
            Entity::Operator => "operator",
            Entity::Ev(_) | Entity::AllEvs => "ev",
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Utility => f.write_str("utility"),
            Entity::Operator => f.write_str("operator"),
            Entity::Ev(id) => write!(f, "ev:{id}"),
            Entity::AllEvs => f.write_str("ev:*"),
        }
    }
}

impl FromStr for Entity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utility" => Ok(Entity::Utility),
            "operator" => Ok(Entity::Operator),
            "ev:*" => Ok(Entity::AllEvs),
            _ => s
                .strip_prefix("ev:")
                .and_then(|id| id.parse().ok())
                .map(Entity::Ev)
                .ok_or_else(|| format!("unknown entity {s:?}")),
        }
    }
}

impl Serialize for Entity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Entity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    WEstimate,
    AggregateAssign,
    LambdaPrice,
    MuPrice,
    EvChoice,
}

/// What a payload field reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldClass {
    /// Multipliers set by the operator.
    Price,
    /// Station-level totals over all EVs.
    Aggregate,
    /// The utility's load estimate at the station buses.
    StationLoad,
    /// Anything tied to a single EV.
    PerEv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "payload")]
pub enum Payload {
    /// Utility's station loads `w_j` (MW).
    WEstimate { w: Vec<f64> },
    /// Operator's station loads `r (M_j - m_j + u_j)` (MW).
    AggregateAssign { station_load_mw: Vec<f64> },
    LambdaPrice { lambda: Vec<f64> },
    MuPrice { mu: Vec<f64> },
    /// Index of the station the sending EV picked.
    EvChoice { station: usize },
}

impl Payload {
    pub fn tag(&self) -> Tag {
        match self {
            Payload::WEstimate { .. } => Tag::WEstimate,
            Payload::AggregateAssign { .. } => Tag::AggregateAssign,
            Payload::LambdaPrice { .. } => Tag::LambdaPrice,
            Payload::MuPrice { .. } => Tag::MuPrice,
            Payload::EvChoice { .. } => Tag::EvChoice,
        }
    }

    /// Field schema of the payload.
    pub fn fields(&self) -> &'static [(&'static str, FieldClass)] {
        match self {
            Payload::WEstimate { .. } => &[("w", FieldClass::StationLoad)],
            Payload::AggregateAssign { .. } => &[("station_load_mw", FieldClass::Aggregate)],
            Payload::LambdaPrice { .. } => &[("lambda", FieldClass::Price)],
            Payload::MuPrice { .. } => &[("mu", FieldClass::Price)],
            Payload::EvChoice { .. } => &[("station", FieldClass::PerEv)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub from: Entity,
    pub to: Entity,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Message {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn from_json(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Admm,
    Dual,
}

/// Allowed `(from, to, tag)` triples, with entities reduced to their class.
pub fn link_table(algo: AlgorithmKind) -> &'static [(&'static str, &'static str, Tag)] {
    match algo {
        AlgorithmKind::Admm => &[
            ("utility", "operator", Tag::WEstimate),
            ("operator", "utility", Tag::AggregateAssign),
        ],
        AlgorithmKind::Dual => &[
            ("operator", "utility", Tag::LambdaPrice),
            ("utility", "operator", Tag::WEstimate),
            ("operator", "ev", Tag::LambdaPrice),
            ("operator", "ev", Tag::MuPrice),
            ("ev", "operator", Tag::EvChoice),
        ],
    }
}

pub fn link_allowed(algo: AlgorithmKind, from: Entity, to: Entity, tag: Tag) -> bool {
    link_table(algo)
        .iter()
        .any(|&(f, t, g)| f == from.kind() && t == to.kind() && g == tag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub algorithm: AlgorithmKind,
    pub messages: Vec<Message>,
}

impl MessageLog {
    pub fn new(algorithm: AlgorithmKind) -> Self {
        MessageLog {
            algorithm,
            messages: Vec::new(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for m in &self.messages {
            writeln!(out, "{}", m.to_json())?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R, algorithm: AlgorithmKind) -> Result<Self, String> {
        let mut log = MessageLog::new(algorithm);
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let m = Message::from_json(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            log.messages.push(m);
        }
        Ok(log)
    }

    /// Distinct `(from class, to class, tag)` triples in the log.
    pub fn observed_links(&self) -> BTreeSet<(&'static str, &'static str, Tag)> {
        self.messages
            .iter()
            .map(|m| (m.from.kind(), m.to.kind(), m.payload.tag()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrivacyRule {
    /// Per-EV data reached the utility.
    EvDataToUtility,
    /// Under ADMM, an individual assignment crossed operator to utility.
    IndividualAssignment,
    /// Under dual decomposition, grid-side data beyond prices and the
    /// station load estimate left the utility.
    GridData,
    /// EVs talked to each other.
    EvToEv,
    /// Tag not in the link table.
    Link,
    /// Rounds went backwards on a link.
    Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyViolation {
    pub index: usize,
    pub rule: PrivacyRule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub messages: usize,
    pub violations: Vec<PrivacyViolation>,
}

impl PrivacyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: PrivacyRule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub fn audit_privacy(log: &MessageLog) -> PrivacyReport {
    let mut violations = Vec::new();
    let mut last_round = std::collections::HashMap::new();
    for (index, m) in log.messages.iter().enumerate() {
        let mut flag = |rule, detail: String| violations.push(PrivacyViolation { index, rule, detail });
        let fields = m.payload.fields();
        let per_ev = fields.iter().any(|f| f.1 == FieldClass::PerEv);
        let tag = m.payload.tag();
        if m.to == Entity::Utility && (per_ev || m.from.is_ev()) {
            flag(PrivacyRule::EvDataToUtility, format!("{tag:?} from {} to utility", m.from));
        }
        if log.algorithm == AlgorithmKind::Admm
            && m.from == Entity::Operator
            && m.to == Entity::Utility
            && per_ev
        {
            flag(PrivacyRule::IndividualAssignment, format!("{tag:?} carries an individual choice"));
        }
        if log.algorithm == AlgorithmKind::Dual && m.from == Entity::Utility {
            let leaked: Vec<&str> = fields
                .iter()
                .filter(|(_, c)| match m.to {
                    Entity::Operator => !matches!(c, FieldClass::Price | FieldClass::StationLoad),
                    _ => *c != FieldClass::Price,
                })
                .map(|f| f.0)
                .collect();
            if m.to.is_ev() || !leaked.is_empty() {
                flag(PrivacyRule::GridData, format!("utility sent {tag:?} to {}", m.to));
            }
        }
        if m.from.is_ev() && m.to.is_ev() {
            flag(PrivacyRule::EvToEv, format!("{} to {}", m.from, m.to));
        }
        if !link_allowed(log.algorithm, m.from, m.to, tag) {
            flag(PrivacyRule::Link, format!("{tag:?} not allowed from {} to {}", m.from, m.to));
        }
        let prev = last_round.insert((m.from, m.to), m.round);
        if prev.is_some_and(|p| p > m.round) {
            flag(PrivacyRule::Order, format!("round {} after {}", m.round, prev.unwrap()));
        }
    }
    PrivacyReport {
        messages: log.messages.len(),
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// One thread, messages delivered in send order.
    #[default]
    Synchronous,
    /// Each link class relays through its own thread; EV-side encoding and
    /// decoding runs on the rayon pool.
    Threaded,
}

#[derive(Debug, Clone, Error)]
pub enum SessionError {
    #[error("{tag:?} may not travel from {from} to {to} in round {round}")]
    TransportViolation {
        round: usize,
        from: Entity,
        to: Entity,
        tag: Tag,
    },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Dual(#[from] DualError),
}

type Lane = (mpsc::Sender<String>, mpsc::Receiver<String>);

/// The wire between entities: link checks, logging and delivery.
pub struct Transport {
    log: MessageLog,
    lanes: Option<Vec<((&'static str, &'static str), Lane)>>,
}

impl Transport {
    pub fn new(algorithm: AlgorithmKind) -> Self {
        Transport {
            log: MessageLog::new(algorithm),
            lanes: None,
        }
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }

    fn check(&self, round: usize, from: Entity, to: Entity, tag: Tag) -> Result<(), SessionError> {
        if link_allowed(self.log.algorithm, from, to, tag) {
            Ok(())
        } else {
            Err(SessionError::TransportViolation { round, from, to, tag })
        }
    }

    /// Pushes an encoded line through the lane of its link class, if any.
    fn carry(&self, from: Entity, to: Entity, line: String) -> String {
        let Some(lanes) = &self.lanes else {
            return line;
        };
        let (_, (tx, rx)) = lanes
            .iter()
            .find(|(k, _)| *k == (from.kind(), to.kind()))
            .expect("lane for every allowed link");
        tx.send(line).expect("relay alive");
        rx.recv().expect("relay alive")
    }

    /// Sends one message and returns the payload as the receiver parses it.
    pub fn send(
        &mut self,
        round: usize,
        from: Entity,
        to: Entity,
        payload: Payload,
    ) -> Result<Payload, SessionError> {
        self.check(round, from, to, payload.tag())?;
        let msg = Message {
            round,
            from,
            to,
            payload,
        };
        let line = self.carry(from, to, msg.to_json());
        self.log.messages.push(msg);
        Message::from_json(&line)
            .map(|m| m.payload)
            .map_err(|e| SessionError::Malformed(e.to_string()))
    }

    /// Broadcast to every EV; each receiver decodes its own copy.
    fn broadcast(
        &mut self,
        round: usize,
        from: Entity,
        payload: Payload,
        receivers: usize,
        threaded: bool,
    ) -> Result<Vec<Payload>, SessionError> {
        self.check(round, from, Entity::AllEvs, payload.tag())?;
        let msg = Message {
            round,
            from,
            to: Entity::AllEvs,
            payload,
        };
        let line = self.carry(from, Entity::AllEvs, msg.to_json());
        self.log.messages.push(msg);
        let decode = |_| Message::from_json(&line).map(|m| m.payload);
        let copies: Result<Vec<_>, _> = if threaded {
            (0..receivers).into_par_iter().map(decode).collect()
        } else {
            (0..receivers).map(decode).collect()
        };
        copies.map_err(|e| SessionError::Malformed(e.to_string()))
    }
}

/// Spawns one relay thread per link class; they exit when the lanes drop.
fn open_lanes<'s>(
    scope: &'s std::thread::Scope<'s, '_>,
    algo: AlgorithmKind,
) -> Vec<((&'static str, &'static str), Lane)> {
    let classes: BTreeSet<(&'static str, &'static str)> =
        link_table(algo).iter().map(|&(f, t, _)| (f, t)).collect();
    classes
        .into_iter()
        .map(|class| {
            let (tx_in, rx_in) = mpsc::channel::<String>();
            let (tx_out, rx_out) = mpsc::channel::<String>();
            scope.spawn(move || {
                for line in rx_in {
                    if tx_out.send(line).is_err() {
                        break;
                    }
                }
            });
            (class, (tx_in, rx_out))
        })
        .collect()
}

struct AdmmWire<'t> {
    transport: &'t mut Transport,
    violation: Option<SessionError>,
}

impl AdmmWire<'_> {
    fn fail(&mut self, e: SessionError) -> String {
        let text = e.to_string();
        self.violation = Some(e);
        text
    }
}

impl AdmmLinks for AdmmWire<'_> {
    fn loads_to_utility(&mut self, round: usize, target: Vec<f64>) -> Result<Vec<f64>, String> {
        let sent = Payload::AggregateAssign {
            station_load_mw: target,
        };
        match self.transport.send(round, Entity::Operator, Entity::Utility, sent) {
            Ok(Payload::AggregateAssign { station_load_mw }) => Ok(station_load_mw),
            Ok(other) => Err(self.fail(SessionError::Malformed(format!("{:?}", other.tag())))),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn w_to_operator(&mut self, round: usize, w: Vec<f64>) -> Result<Vec<f64>, String> {
        match self
            .transport
            .send(round, Entity::Utility, Entity::Operator, Payload::WEstimate { w })
        {
            Ok(Payload::WEstimate { w }) => Ok(w),
            Ok(other) => Err(self.fail(SessionError::Malformed(format!("{:?}", other.tag())))),
            Err(e) => Err(self.fail(e)),
        }
    }
}

struct DualWire<'t> {
    transport: &'t mut Transport,
    ev_ids: Vec<u32>,
    threaded: bool,
    violation: Option<SessionError>,
}

impl DualWire<'_> {
    fn fail(&mut self, e: SessionError) -> String {
        let text = e.to_string();
        self.violation = Some(e);
        text
    }

    fn unexpected(&mut self, p: &Payload) -> String {
        self.fail(SessionError::Malformed(format!("unexpected {:?}", p.tag())))
    }
}

impl DualLinks for DualWire<'_> {
    fn prices_to_utility(&mut self, round: usize, lambda: Vec<f64>) -> Result<Vec<f64>, String> {
        match self.transport.send(
            round,
            Entity::Operator,
            Entity::Utility,
            Payload::LambdaPrice { lambda },
        ) {
            Ok(Payload::LambdaPrice { lambda }) => Ok(lambda),
            Ok(p) => Err(self.unexpected(&p)),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn prices_to_evs(
        &mut self,
        round: usize,
        lambda: &[f64],
        mu: &[f64],
        n_evs: usize,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>, String> {
        let lambdas = self
            .transport
            .broadcast(
                round,
                Entity::Operator,
                Payload::LambdaPrice {
                    lambda: lambda.to_vec(),
                },
                n_evs,
                self.threaded,
            )
            .map_err(|e| self.fail(e))?;
        let mus = self
            .transport
            .broadcast(
                round,
                Entity::Operator,
                Payload::MuPrice { mu: mu.to_vec() },
                n_evs,
                self.threaded,
            )
            .map_err(|e| self.fail(e))?;
        let mut out = Vec::with_capacity(n_evs);
        for (l, m) in lambdas.into_iter().zip(mus) {
            match (l, m) {
                (Payload::LambdaPrice { lambda }, Payload::MuPrice { mu }) => out.push((lambda, mu)),
                (p, _) => return Err(self.unexpected(&p)),
            }
        }
        Ok(out)
    }

    fn w_to_operator(&mut self, round: usize, w: Vec<f64>) -> Result<Vec<f64>, String> {
        match self
            .transport
            .send(round, Entity::Utility, Entity::Operator, Payload::WEstimate { w })
        {
            Ok(Payload::WEstimate { w }) => Ok(w),
            Ok(p) => Err(self.unexpected(&p)),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn choices_to_operator(
        &mut self,
        round: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Vec<Vec<f64>>, String> {
        let n_st = rows.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(rows.len());
        for (a, row) in rows.iter().enumerate() {
            let id = self.ev_ids[a];
            let Some(station) = row.iter().position(|&v| v == 1.0) else {
                return Err(self.fail(SessionError::Malformed("EV row is not binary".into())));
            };
            match self
                .transport
                .send(round, Entity::Ev(id), Entity::Operator, Payload::EvChoice { station })
            {
                Ok(Payload::EvChoice { station }) if station < n_st => {
                    let mut r = vec![0.0; n_st];
                    r[station] = 1.0;
                    out.push(r);
                }
                Ok(p) => return Err(self.unexpected(&p)),
                Err(e) => return Err(self.fail(e)),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Algorithm {
    Admm(AdmmParams),
    Dual(DualParams),
}

impl Algorithm {
    pub fn kind(&self) -> AlgorithmKind {
        match self {
            Algorithm::Admm(_) => AlgorithmKind::Admm,
            Algorithm::Dual(_) => AlgorithmKind::Dual,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SessionResult {
    Admm(AdmmOutcome),
    Dual(DualOutcome),
}

#[derive(Debug)]
pub struct SessionOutput {
    pub result: Result<SessionResult, SessionError>,
    pub log: MessageLog,
}

pub fn run_session(
    grid: &Grid,
    scen: &Scenario,
    algo: &Algorithm,
    solver: &dyn ConicSolver,
) -> SessionOutput {
    run_session_with(grid, scen, algo, solver, Engine::Synchronous)
}

pub fn run_session_with(
    grid: &Grid,
    scen: &Scenario,
    algo: &Algorithm,
    solver: &dyn ConicSolver,
    engine: Engine,
) -> SessionOutput {
    std::thread::scope(|scope| {
        let mut transport = Transport::new(algo.kind());
        if engine == Engine::Threaded {
            transport.lanes = Some(open_lanes(scope, algo.kind()));
        }
        let result = match algo {
            Algorithm::Admm(params) => {
                let mut wire = AdmmWire {
                    transport: &mut transport,
                    violation: None,
                };
                let r = run_admm_with(grid, scen, params, solver, &mut wire);
                match (r, wire.violation) {
                    (Err(AdmmError::Transport(_)), Some(v)) => Err(v),
                    (r, _) => r.map(SessionResult::Admm).map_err(SessionError::from),
                }
            }
            Algorithm::Dual(params) => {
                let mut wire = DualWire {
                    transport: &mut transport,
                    ev_ids: scen.evs.iter().map(|e| e.id).collect(),
                    threaded: engine == Engine::Threaded,
                    violation: None,
                };
                let r = run_dual_with(grid, scen, params, solver, &mut wire);
                match (r, wire.violation) {
                    (Err(DualError::Transport(_)), Some(v)) => Err(v),
                    (r, _) => r.map(SessionResult::Dual).map_err(SessionError::from),
                }
            }
        };
        // dropping the lanes lets the relay threads finish before the scope ends
        transport.lanes = None;
        SessionOutput {
            result,
            log: transport.into_log(),
        }
    })
}
