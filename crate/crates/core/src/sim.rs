//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(time, node id, kind, insertion order)` where
//! frame arrivals sort before wake-ups. Every random draw comes from a
//! stream derived from the scenario seed and the identities involved
//! (link endpoints or node id), so adding a node never perturbs the draws of
//! existing links.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{deliver, Position, PsrCurve, Trajectory};
use crate::intersection::{validate_phase_table, ConflictMatrix, Intersection};
use crate::nodes::{
    Controller, ControllerConfig, FrameOutcome, Node, NodeEventKind, NodeId, NodeInput, Receiver, ReceiverConfig,
    Retransmitter, RetransmitterConfig,
};
use crate::protocol::{tx_time, LinkTimingParams};
use crate::time::{micros, SimTime};
use crate::trace::{LossReason, Trace, TraceEventKind};

const SPEED_OF_LIGHT_M_PER_US: f64 = 299.792_458;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub config: ControllerConfig,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetransmitterSpec {
    pub config: RetransmitterConfig,
    pub trajectory: Trajectory,
    /// Anchor of the retransmitter's observe/broadcast slots.
    pub start: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSpec {
    pub config: ReceiverConfig,
    pub trajectory: Trajectory,
    /// Controller or retransmitter whose frames this device picks up.
    pub listens_to: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOverride {
    pub from: NodeId,
    pub to: NodeId,
    pub curve: PsrCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration: Duration,
    pub seed: u64,
    pub matrix: ConflictMatrix,
    pub controller: ControllerSpec,
    pub retransmitters: Vec<RetransmitterSpec>,
    pub receivers: Vec<ReceiverSpec>,
    pub channel: PsrCurve,
    pub link_overrides: Vec<LinkOverride>,
    pub timing: LinkTimingParams,
}

impl Scenario {
    /// Lists every violated constraint rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        if micros(self.duration) == 0 {
            v.push("duration must be positive".to_string());
        }
        let ctrl = &self.controller.config;
        if let Err(e) = ctrl.validate() {
            v.push(format!("controller {}: {e}", ctrl.source_id));
        }
        match validate_phase_table(&ctrl.phase_table, &self.matrix) {
            Err(e) => v.push(format!("phase table: {e}")),
            Ok(report) => {
                for f in report.findings {
                    v.push(format!(
                        "phase table: state {} puts conflicting {} and {} on green",
                        f.state_id, f.a, f.b
                    ));
                }
            }
        }

        let mut ids = vec![ctrl.source_id];
        ids.extend(self.retransmitters.iter().map(|r| r.config.node_id));
        ids.extend(self.receivers.iter().map(|r| r.config.node_id));
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(*id) {
                v.push(format!("node id {id} used more than once"));
            }
        }

        let mut tags = BTreeSet::new();
        for r in &self.retransmitters {
            let c = &r.config;
            if let Err(e) = c.validate() {
                v.push(format!("retransmitter {}: {e}", c.node_id));
            }
            if c.controller_source_id != ctrl.source_id {
                v.push(format!(
                    "retransmitter {} follows node {}, which is not the controller",
                    c.node_id, c.controller_source_id
                ));
            }
            if c.controller_period != ctrl.state_period {
                v.push(format!(
                    "retransmitter {}: controller period {:?} differs from the controller's state period {:?}",
                    c.node_id, c.controller_period, ctrl.state_period
                ));
            }
            if !tags.insert(c.retransmitter_id) {
                v.push(format!("retransmitter tag {} used more than once", c.retransmitter_id));
            }
        }

        let sources: BTreeSet<NodeId> = std::iter::once(ctrl.source_id)
            .chain(self.retransmitters.iter().map(|r| r.config.node_id))
            .collect();
        for r in &self.receivers {
            let c = &r.config;
            if let Err(e) = c.validate() {
                v.push(format!("receiver {}: {e}", c.node_id));
            }
            if !self.matrix.contains(c.movement_of_interest) {
                v.push(format!(
                    "receiver {}: unknown movement {}",
                    c.node_id, c.movement_of_interest
                ));
            }
            if !sources.contains(&r.listens_to) {
                v.push(format!(
                    "receiver {} listens to node {}, which is neither the controller nor a retransmitter",
                    c.node_id, r.listens_to
                ));
            }
        }

        let all: BTreeSet<NodeId> = ids.iter().copied().collect();
        if let Err(e) = self.channel.validate() {
            v.push(format!("channel: {e}"));
        }
        for o in &self.link_overrides {
            if let Err(e) = o.curve.validate() {
                v.push(format!("link {}→{}: {e}", o.from, o.to));
            }
            if !all.contains(&o.from) || !all.contains(&o.to) {
                v.push(format!("link {}→{} references an unknown node", o.from, o.to));
            }
        }

        let trajectories = std::iter::once(&self.controller.trajectory)
            .chain(self.retransmitters.iter().map(|r| &r.trajectory))
            .chain(self.receivers.iter().map(|r| &r.trajectory));
        for t in trajectories {
            let finite = match t {
                Trajectory::Static(p) => p.is_finite(),
                Trajectory::Linear { start, velocity, .. } => {
                    start.is_finite() && velocity.0.is_finite() && velocity.1.is_finite()
                }
            };
            if !finite {
                v.push("trajectory has non-finite coordinates".to_string());
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    pub fn intersection(&self) -> Intersection {
        Intersection {
            matrix: self.matrix.clone(),
            phases: self.controller.config.phase_table.clone(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation: same inputs, same seed, on every platform.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

const STREAM_LINK: u64 = 1;
const STREAM_ADV: u64 = 2;

enum SimNode {
    Controller(Controller),
    Retransmitter { machine: Retransmitter, start: SimTime },
    Receiver(Receiver),
}

impl SimNode {
    fn machine(&mut self) -> &mut dyn Node {
        match self {
            SimNode::Controller(c) => c,
            SimNode::Retransmitter { machine, .. } => machine,
            SimNode::Receiver(r) => r,
        }
    }

    fn is_listening(&self, now: SimTime) -> bool {
        match self {
            SimNode::Controller(_) => false,
            SimNode::Retransmitter { machine, start } => {
                if now < *start {
                    return false;
                }
                let period = micros(machine.config().controller_period);
                (now.as_micros() - start.as_micros()) % period < period / 2
            }
            SimNode::Receiver(r) => r.config().scan.is_listening(now),
        }
    }
}

#[derive(Debug)]
enum QueuedKind {
    Arrival {
        from: NodeId,
        seq: u64,
        frame: Rc<[u8]>,
        delivered: bool,
    },
    Wake,
}

#[derive(Debug)]
struct Queued {
    time: SimTime,
    node: NodeId,
    order: u64,
    kind: QueuedKind,
}

impl Queued {
    fn key(&self) -> (SimTime, NodeId, u8, u64) {
        let rank = match self.kind {
            QueuedKind::Arrival { .. } => 0,
            QueuedKind::Wake => 1,
        };
        (self.time, self.node, rank, self.order)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

struct Engine<'a> {
    scenario: &'a Scenario,
    end: SimTime,
    nodes: BTreeMap<NodeId, SimNode>,
    trajectories: BTreeMap<NodeId, Trajectory>,
    listeners: BTreeMap<NodeId, Vec<NodeId>>,
    link_rngs: BTreeMap<(NodeId, NodeId), ChaCha8Rng>,
    scheduled: BTreeMap<NodeId, SimTime>,
    queue: BinaryHeap<Reverse<Queued>>,
    order: u64,
    tx_seq: u64,
    trace: Trace,
}

impl<'a> Engine<'a> {
    fn new(s: &'a Scenario) -> Result<Engine<'a>, ScenarioError> {
        let invalid = |e: String| ScenarioError::Invalid(vec![e]);
        let intersection = Arc::new(s.intersection());
        let mut nodes = BTreeMap::new();
        let mut trajectories = BTreeMap::new();
        let mut listeners: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut starts = Vec::new();

        let mut cc = s.controller.config.clone();
        cc.seed = derive_seed(s.seed, &[STREAM_ADV, u64::from(cc.source_id.0)]);
        let cid = cc.source_id;
        let controller = Controller::new(cc, SimTime::ZERO).map_err(|e| invalid(e.to_string()))?;
        nodes.insert(cid, SimNode::Controller(controller));
        trajectories.insert(cid, s.controller.trajectory);
        starts.push((cid, SimTime::ZERO));

        for r in &s.retransmitters {
            let mut rc = r.config.clone();
            rc.seed = derive_seed(s.seed, &[STREAM_ADV, u64::from(rc.node_id.0)]);
            let id = rc.node_id;
            listeners.entry(rc.controller_source_id).or_default().push(id);
            let machine = Retransmitter::new(rc, r.start).map_err(|e| invalid(e.to_string()))?;
            nodes.insert(
                id,
                SimNode::Retransmitter {
                    machine,
                    start: r.start,
                },
            );
            trajectories.insert(id, r.trajectory);
            starts.push((id, r.start));
        }
        for r in &s.receivers {
            let id = r.config.node_id;
            let machine = Receiver::new(r.config.clone(), intersection.clone()).map_err(|e| invalid(e.to_string()))?;
            nodes.insert(id, SimNode::Receiver(machine));
            trajectories.insert(id, r.trajectory);
            listeners.entry(r.listens_to).or_default().push(id);
            starts.push((id, SimTime::ZERO));
        }
        for l in listeners.values_mut() {
            l.sort();
        }

        let mut engine = Engine {
            scenario: s,
            end: SimTime::ZERO + s.duration,
            nodes,
            trajectories,
            listeners,
            link_rngs: BTreeMap::new(),
            scheduled: BTreeMap::new(),
            queue: BinaryHeap::new(),
            order: 0,
            tx_seq: 0,
            trace: Trace::default(),
        };
        for (id, t) in starts {
            engine.schedule_wake(id, t);
        }
        Ok(engine)
    }

    fn push(&mut self, time: SimTime, node: NodeId, kind: QueuedKind) {
        self.order += 1;
        self.queue.push(Reverse(Queued {
            time,
            node,
            order: self.order,
            kind,
        }));
    }

    fn schedule_wake(&mut self, node: NodeId, at: SimTime) {
        if self.scheduled.get(&node) == Some(&at) {
            return;
        }
        self.scheduled.insert(node, at);
        self.push(at, node, QueuedKind::Wake);
    }

    fn curve(&self, from: NodeId, to: NodeId) -> &'a PsrCurve {
        self.scenario
            .link_overrides
            .iter()
            .find(|o| o.from == from && o.to == to)
            .map_or(&self.scenario.channel, |o| &o.curve)
    }

    fn position(&self, node: NodeId, t: SimTime) -> Position {
        self.trajectories
            .get(&node)
            .map_or_else(Position::default, |tr| tr.position_clamped(t))
    }

    fn run(mut self) -> Trace {
        while let Some(Reverse(item)) = self.queue.pop() {
            let now = item.time;
            match item.kind {
                QueuedKind::Wake => {
                    if now >= self.end {
                        continue;
                    }
                    if self.scheduled.get(&item.node) != Some(&now) {
                        continue;
                    }
                    self.scheduled.remove(&item.node);
                    self.step(item.node, NodeInput::Wake, now, None);
                }
                QueuedKind::Arrival {
                    from,
                    seq,
                    frame,
                    delivered,
                } => self.arrive(item.node, from, seq, &frame, delivered, now),
            }
        }
        self.trace
    }

    fn arrive(&mut self, node: NodeId, from: NodeId, seq: u64, frame: &[u8], delivered: bool, now: SimTime) {
        let listening = self.nodes.get(&node).is_some_and(|n| n.is_listening(now));
        if !listening {
            self.lost(now, node, seq, from, LossReason::NotListening);
        } else if !delivered {
            self.lost(now, node, seq, from, LossReason::Channel);
        } else {
            self.step(
                node,
                NodeInput::Frame {
                    source: from,
                    bytes: frame,
                },
                now,
                Some((from, seq)),
            );
        }
    }

    fn lost(&mut self, now: SimTime, node: NodeId, seq: u64, from: NodeId, reason: LossReason) {
        self.trace.push(now, node, TraceEventKind::RxLost { seq, from, reason });
    }

    fn step(&mut self, id: NodeId, input: NodeInput<'_>, now: SimTime, rx: Option<(NodeId, u64)>) {
        let Some(node) = self.nodes.get_mut(&id) else {
            return;
        };
        let out = node.machine().step(input, now);

        let mut displays = Vec::new();
        for ev in out.events {
            if ev.at >= self.end {
                continue;
            }
            match ev.kind {
                NodeEventKind::Transmit(tx) => self.transmit(id, tx.at, tx.state_id, tx.tag, tx.frame),
                NodeEventKind::StateAdvance(s) => self.trace.push(ev.at, id, TraceEventKind::StateAdvance(s)),
                NodeEventKind::SlotChange(s) => self.trace.push(ev.at, id, TraceEventKind::SlotChange(s)),
                // logged after the reception that caused it
                NodeEventKind::DisplayChange(d) => displays.push((ev.at, d)),
            }
        }

        if let (Some((from, seq)), Some(outcome)) = (rx, out.frame_outcome) {
            let kind = match outcome {
                FrameOutcome::Accepted(d) => TraceEventKind::RxOk {
                    seq,
                    from,
                    state: d.state_id,
                    tag: d.tag,
                },
                FrameOutcome::NotListening => TraceEventKind::RxLost {
                    seq,
                    from,
                    reason: LossReason::NotListening,
                },
                FrameOutcome::Ignored => TraceEventKind::RxLost {
                    seq,
                    from,
                    reason: LossReason::Rejected,
                },
                FrameOutcome::Corrupt(_) => TraceEventKind::RxCorrupt { seq, from },
            };
            self.trace.push(now, id, kind);
        }
        for (at, d) in displays {
            self.trace.push(at, id, TraceEventKind::DisplayChange(d));
        }

        if let Some(w) = out.next_wake {
            self.schedule_wake(id, w.max(now));
        }
    }

    fn transmit(&mut self, source: NodeId, at: SimTime, state: u8, tag: Option<u8>, frame: Vec<u8>) {
        let seq = self.tx_seq;
        self.tx_seq += 1;
        self.trace.push(at, source, TraceEventKind::Tx { seq, state, tag });

        let airtime = tx_time(frame.len(), &self.scenario.timing);
        let frame: Rc<[u8]> = frame.into();
        let tx_pos = self.position(source, at);
        let seed = self.scenario.seed;
        for to in self.listeners.get(&source).cloned().unwrap_or_default() {
            let rx_pos = self.position(to, at);
            let curve = self.curve(source, to);
            let rng = self.link_rngs.entry((source, to)).or_insert_with(|| {
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_LINK, u64::from(source.0), u64::from(to.0)]))
            });
            let delivered = deliver(curve, tx_pos, rx_pos, rng);
            let delay = airtime + tx_pos.distance(rx_pos) / SPEED_OF_LIGHT_M_PER_US;
            let arrival = at + Duration::from_micros(delay.round() as u64);
            self.push(
                arrival,
                to,
                QueuedKind::Arrival {
                    from: source,
                    seq,
                    frame: frame.clone(),
                    delivered,
                },
            );
        }
    }
}

/// Runs a scenario to completion and returns its trace.
///
/// Wake-ups at or after `duration` are discarded; frames already in flight
/// at that point are still delivered so that every transmission is
/// accounted for at each of its listeners.
pub fn run(scenario: &Scenario) -> Result<Trace, ScenarioError> {
    scenario.validate()?;
    Ok(Engine::new(scenario)?.run())
}

/// Parameters accepted by [`sweep`] and [`apply_parameter`].
pub const SWEEP_PARAMETERS: [&str; 6] = [
    "distance",
    "duration_s",
    "advertising_interval_ms",
    "state_period_ms",
    "staleness_timeout_ms",
    "duty_cycle",
];

fn ms(v: f64) -> Duration {
    Duration::from_micros((v * 1e3).round().max(0.0) as u64)
}

/// Sets one named parameter on a scenario.
///
/// `distance` moves every static retransmitter and receiver to the
/// controller's position shifted by `value` metres along x.
pub fn apply_parameter(s: &mut Scenario, parameter: &str, value: f64) -> Result<(), ScenarioError> {
    match parameter {
        "distance" => {
            let origin = s.controller.trajectory.position_clamped(SimTime::ZERO);
            let moved = Trajectory::Static(Position::new(origin.x + value, origin.y));
            let trajs = s
                .retransmitters
                .iter_mut()
                .map(|r| &mut r.trajectory)
                .chain(s.receivers.iter_mut().map(|r| &mut r.trajectory));
            for t in trajs {
                if matches!(t, Trajectory::Static(_)) {
                    *t = moved;
                }
            }
        }
        "duration_s" => s.duration = Duration::from_secs_f64(value.max(0.0)),
        "advertising_interval_ms" => {
            s.controller.config.advertising_interval = ms(value);
            for r in &mut s.retransmitters {
                r.config.advertising_interval = ms(value);
            }
        }
        "state_period_ms" => {
            s.controller.config.state_period = ms(value);
            for r in &mut s.retransmitters {
                r.config.controller_period = ms(value);
            }
        }
        "staleness_timeout_ms" => {
            for r in &mut s.receivers {
                r.config.staleness_timeout = ms(value);
            }
        }
        "duty_cycle" => {
            for r in &mut s.receivers {
                let interval = micros(r.config.scan.interval) as f64;
                r.config.scan.window = Duration::from_micros((interval * value).round().max(0.0) as u64);
            }
        }
        other => return Err(ScenarioError::UnknownParameter(other.to_string())),
    }
    Ok(())
}

/// One independent run per value. Each run's seed is derived from the base
/// seed and the value alone, so results do not depend on value order.
pub fn sweep(base: &Scenario, parameter: &str, values: &[f64]) -> Result<Vec<(f64, Trace)>, ScenarioError> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(ScenarioError::UnknownParameter(parameter.to_string()));
    }
    values
        .iter()
        .map(|&value| {
            let mut s = base.clone();
            apply_parameter(&mut s, parameter, value)?;
            s.seed = derive_seed(base.seed, &[value.to_bits()]);
            run(&s).map(|t| (value, t))
        })
        .collect()
}
