//! Controller, retransmitter and user-device receiver as steppable machines.
//!
//! No machine reads a clock: the driver passes `now` into every step and the
//! machine reports what it did up to that instant plus when it next needs
//! to run. Stepping at an arbitrary later time catches up on every scheduled
//! action in between, each stamped with its own scheduled time.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::intersection::{display_state_for, DisplayState, Intersection, MovementId, PhaseState};
use crate::protocol::{decode_frame, encode_frame, tag_frame, DecodedFrame, FrameError, FrameParams};
use crate::time::{micros, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("advertising interval must be shorter than the state period")]
    IntervalNotBelowPeriod,
    #[error("phase table is empty")]
    EmptyPhaseTable,
    #[error("{found} per-state periods given for {expected} states")]
    PeriodCount { expected: usize, found: usize },
    #[error("scan window must be positive and no longer than the scan interval")]
    ScanWindow,
    #[error("movement {0} is not part of the intersection")]
    UnknownMovement(MovementId),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub at: SimTime,
    pub source: NodeId,
    pub frame: Vec<u8>,
    pub state_id: u8,
    pub tag: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Observe,
    Broadcast,
}

impl Slot {
    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Observe => "observe",
            Slot::Broadcast => "broadcast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEventKind {
    Transmit(Transmission),
    StateAdvance(u8),
    SlotChange(Slot),
    DisplayChange(DisplayState),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEvent {
    pub at: SimTime,
    pub kind: NodeEventKind,
}

/// Result of handing a frame to a machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameOutcome {
    Accepted(DecodedFrame),
    /// Radio was not listening when the frame arrived.
    NotListening,
    /// Payload failed to decode; the frame is dropped.
    Corrupt(FrameError),
    /// Decoded fine but not from a source this node relays.
    Ignored,
}

#[derive(Debug, Clone, Copy)]
pub enum NodeInput<'a> {
    Wake,
    Frame { source: NodeId, bytes: &'a [u8] },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub events: Vec<NodeEvent>,
    pub next_wake: Option<SimTime>,
    pub frame_outcome: Option<FrameOutcome>,
}

/// Uniform step interface shared by every machine.
pub trait Node {
    fn id(&self) -> NodeId;
    fn step(&mut self, input: NodeInput<'_>, now: SimTime) -> StepOutput;
}

/// Pseudo-random extra delay added before each advertising event.
#[derive(Debug, Clone)]
struct AdvDelay {
    max_us: u64,
    rng: ChaCha8Rng,
}

impl AdvDelay {
    fn new(max: Duration, seed: u64) -> AdvDelay {
        AdvDelay {
            max_us: micros(max),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn draw(&mut self) -> Duration {
        if self.max_us == 0 {
            Duration::ZERO
        } else {
            Duration::from_micros(self.rng.random_range(0..=self.max_us))
        }
    }
}

fn require_positive(d: Duration, what: &'static str) -> Result<(), NodeConfigError> {
    if micros(d) == 0 {
        Err(NodeConfigError::NotPositive(what))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub source_id: NodeId,
    pub state_period: Duration,
    /// Optional dwell time per table entry, overriding `state_period`.
    pub state_periods: Option<Vec<Duration>>,
    pub advertising_interval: Duration,
    /// Upper bound of the random delay added to each advertising event.
    pub adv_delay_max: Duration,
    pub phase_table: Vec<PhaseState>,
    pub frame_params: FrameParams,
    pub seed: u64,
}

impl ControllerConfig {
    pub fn new(source_id: NodeId, phase_table: Vec<PhaseState>) -> ControllerConfig {
        ControllerConfig {
            source_id,
            state_period: Duration::from_secs(2),
            state_periods: None,
            advertising_interval: Duration::from_millis(50),
            adv_delay_max: Duration::ZERO,
            phase_table,
            frame_params: FrameParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NodeConfigError> {
        require_positive(self.state_period, "state period")?;
        require_positive(self.advertising_interval, "advertising interval")?;
        if self.phase_table.is_empty() {
            return Err(NodeConfigError::EmptyPhaseTable);
        }
        let periods: Vec<Duration> = match &self.state_periods {
            Some(p) if p.len() != self.phase_table.len() => {
                return Err(NodeConfigError::PeriodCount {
                    expected: self.phase_table.len(),
                    found: p.len(),
                })
            }
            Some(p) => p.clone(),
            None => vec![self.state_period],
        };
        for p in periods {
            require_positive(p, "state period")?;
            if self.advertising_interval >= p {
                return Err(NodeConfigError::IntervalNotBelowPeriod);
            }
        }
        Ok(())
    }
}

/// Cycles through the phase table, broadcasting the current state once per
/// advertising interval. Advertising events run on their own timer; the
/// frame content switches when the state period elapses.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    frames: Vec<(u8, Vec<u8>)>,
    index: usize,
    state_start: SimTime,
    state_end: SimTime,
    next_tx: SimTime,
    announced: bool,
    delay: AdvDelay,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, start: SimTime) -> Result<Controller, NodeConfigError> {
        cfg.validate()?;
        let frames = cfg
            .phase_table
            .iter()
            .map(|p| encode_frame(p.state_id, &cfg.frame_params).map(|f| (p.state_id, f)))
            .collect::<Result<Vec<_>, _>>()?;
        let delay = AdvDelay::new(cfg.adv_delay_max, cfg.seed);
        let mut c = Controller {
            cfg,
            frames,
            index: 0,
            state_start: start,
            state_end: start,
            next_tx: start,
            announced: false,
            delay,
        };
        c.state_end = start + c.period(0);
        Ok(c)
    }

    fn period(&self, index: usize) -> Duration {
        self.cfg
            .state_periods
            .as_ref()
            .map_or(self.cfg.state_period, |p| p[index])
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn current_state(&self) -> u8 {
        self.frames[self.index].0
    }

    pub fn state_started_at(&self) -> SimTime {
        self.state_start
    }

    pub fn next_wake(&self) -> SimTime {
        if !self.announced {
            self.state_start
        } else {
            self.state_end.min(self.next_tx)
        }
    }

    /// Emits everything scheduled at or before `now`.
    pub fn controller_step(&mut self, now: SimTime) -> StepOutput {
        let mut events = Vec::new();
        if !self.announced && self.state_start <= now {
            self.announced = true;
            events.push(NodeEvent {
                at: self.state_start,
                kind: NodeEventKind::StateAdvance(self.current_state()),
            });
        }
        while self.announced {
            let next = self.state_end.min(self.next_tx);
            if next > now {
                break;
            }
            if self.state_end <= self.next_tx {
                self.index = (self.index + 1) % self.frames.len();
                self.state_start = self.state_end;
                self.state_end = self.state_start + self.period(self.index);
                events.push(NodeEvent {
                    at: self.state_start,
                    kind: NodeEventKind::StateAdvance(self.current_state()),
                });
            } else {
                let (state_id, frame) = &self.frames[self.index];
                events.push(NodeEvent {
                    at: self.next_tx,
                    kind: NodeEventKind::Transmit(Transmission {
                        at: self.next_tx,
                        source: self.cfg.source_id,
                        frame: frame.clone(),
                        state_id: *state_id,
                        tag: None,
                    }),
                });
                self.next_tx += self.cfg.advertising_interval + self.delay.draw();
            }
        }
        StepOutput {
            events,
            next_wake: Some(self.next_wake()),
            frame_outcome: None,
        }
    }
}

impl Node for Controller {
    fn id(&self) -> NodeId {
        self.cfg.source_id
    }

    fn step(&mut self, input: NodeInput<'_>, now: SimTime) -> StepOutput {
        let mut out = self.controller_step(now);
        if let NodeInput::Frame { .. } = input {
            // the controller only broadcasts
            out.frame_outcome = Some(FrameOutcome::NotListening);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetransmitterConfig {
    pub node_id: NodeId,
    /// Tag byte appended to relayed frames.
    pub retransmitter_id: u8,
    pub controller_source_id: NodeId,
    /// Split into an observe slot and a broadcast slot of equal length.
    pub controller_period: Duration,
    pub advertising_interval: Duration,
    pub adv_delay_max: Duration,
    pub seed: u64,
}

impl RetransmitterConfig {
    pub fn new(node_id: NodeId, retransmitter_id: u8, controller_source_id: NodeId) -> Self {
        RetransmitterConfig {
            node_id,
            retransmitter_id,
            controller_source_id,
            controller_period: Duration::from_secs(2),
            advertising_interval: Duration::from_millis(50),
            adv_delay_max: Duration::ZERO,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NodeConfigError> {
        require_positive(self.controller_period, "controller period")?;
        require_positive(self.advertising_interval, "advertising interval")?;
        if micros(self.controller_period) < 2 {
            return Err(NodeConfigError::NotPositive("controller period / 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RetransmitterStats {
    pub accepted: u64,
    pub ignored: u64,
    pub corrupt: u64,
    pub not_listening: u64,
    pub relayed: u64,
}

/// Alternates between listening for controller frames and relaying the last
/// one it accepted, tagged with its own id. Slots are anchored at the start
/// time passed to [`Retransmitter::new`].
#[derive(Debug, Clone)]
pub struct Retransmitter {
    cfg: RetransmitterConfig,
    cycle_start: SimTime,
    slot: Slot,
    started: bool,
    message_received: bool,
    rx_msg: Option<Vec<u8>>,
    tx_msg: Option<(u8, Vec<u8>)>,
    next_tx: Option<SimTime>,
    stats: RetransmitterStats,
    delay: AdvDelay,
}

impl Retransmitter {
    pub fn new(cfg: RetransmitterConfig, start: SimTime) -> Result<Retransmitter, NodeConfigError> {
        cfg.validate()?;
        let delay = AdvDelay::new(cfg.adv_delay_max, cfg.seed);
        Ok(Retransmitter {
            cfg,
            cycle_start: start,
            slot: Slot::Observe,
            started: false,
            message_received: false,
            rx_msg: None,
            tx_msg: None,
            next_tx: None,
            stats: RetransmitterStats::default(),
            delay,
        })
    }

    pub fn config(&self) -> &RetransmitterConfig {
        &self.cfg
    }

    pub fn stats(&self) -> RetransmitterStats {
        self.stats
    }

    pub fn slot(&self) -> Slot {
        self.slot
    }

    pub fn cycle_start(&self) -> SimTime {
        self.cycle_start
    }

    fn half(&self) -> Duration {
        Duration::from_micros(micros(self.cfg.controller_period) / 2)
    }

    fn slot_end(&self) -> SimTime {
        match self.slot {
            Slot::Observe => self.cycle_start + self.half(),
            Slot::Broadcast => self.cycle_start + self.cfg.controller_period,
        }
    }

    pub fn next_wake(&self) -> SimTime {
        if !self.started {
            return self.cycle_start;
        }
        let end = self.slot_end();
        self.next_tx.map_or(end, |t| t.min(end))
    }

    fn advance(&mut self, now: SimTime, events: &mut Vec<NodeEvent>) {
        if !self.started {
            if self.cycle_start > now {
                return;
            }
            self.started = true;
            events.push(NodeEvent {
                at: self.cycle_start,
                kind: NodeEventKind::SlotChange(Slot::Observe),
            });
        }
        loop {
            let end = self.slot_end();
            while let Some(t) = self.next_tx {
                if t >= end || t > now {
                    break;
                }
                if let Some((state_id, frame)) = &self.tx_msg {
                    events.push(NodeEvent {
                        at: t,
                        kind: NodeEventKind::Transmit(Transmission {
                            at: t,
                            source: self.cfg.node_id,
                            frame: frame.clone(),
                            state_id: *state_id,
                            tag: Some(self.cfg.retransmitter_id),
                        }),
                    });
                    self.stats.relayed += 1;
                }
                self.next_tx = Some(t + self.cfg.advertising_interval + self.delay.draw());
            }
            if end > now {
                break;
            }
            match self.slot {
                Slot::Observe => {
                    self.slot = Slot::Broadcast;
                    self.tx_msg = None;
                    self.next_tx = None;
                    if self.message_received {
                        let stored = self.rx_msg.as_deref().unwrap_or_default();
                        if let (Ok(decoded), Ok(tagged)) =
                            (decode_frame(stored), tag_frame(stored, self.cfg.retransmitter_id))
                        {
                            self.tx_msg = Some((decoded.state_id, tagged));
                            self.next_tx = Some(end);
                        }
                    }
                }
                Slot::Broadcast => {
                    self.slot = Slot::Observe;
                    self.cycle_start += self.cfg.controller_period;
                    self.message_received = false;
                    self.tx_msg = None;
                    self.next_tx = None;
                }
            }
            events.push(NodeEvent {
                at: end,
                kind: NodeEventKind::SlotChange(self.slot),
            });
        }
    }

    fn accept(&mut self, source: NodeId, bytes: &[u8]) -> FrameOutcome {
        if !self.started || self.slot != Slot::Observe {
            self.stats.not_listening += 1;
            return FrameOutcome::NotListening;
        }
        match decode_frame(bytes) {
            Err(e) => {
                self.stats.corrupt += 1;
                FrameOutcome::Corrupt(e)
            }
            Ok(d) if source != self.cfg.controller_source_id || d.tag.is_some() => {
                self.stats.ignored += 1;
                FrameOutcome::Ignored
            }
            Ok(d) => {
                self.stats.accepted += 1;
                self.message_received = true;
                self.rx_msg = Some(bytes.to_vec());
                FrameOutcome::Accepted(d)
            }
        }
    }

    pub fn retransmitter_step(&mut self, input: NodeInput<'_>, now: SimTime) -> StepOutput {
        let mut events = Vec::new();
        self.advance(now, &mut events);
        let frame_outcome = match input {
            NodeInput::Wake => None,
            NodeInput::Frame { source, bytes } => Some(self.accept(source, bytes)),
        };
        StepOutput {
            events,
            next_wake: Some(self.next_wake()),
            frame_outcome,
        }
    }
}

impl Node for Retransmitter {
    fn id(&self) -> NodeId {
        self.cfg.node_id
    }

    fn step(&mut self, input: NodeInput<'_>, now: SimTime) -> StepOutput {
        self.retransmitter_step(input, now)
    }
}

/// Periodic listening gate: the radio listens for `window` out of every
/// `interval`, starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanGate {
    pub window: Duration,
    pub interval: Duration,
    pub offset: Duration,
}

impl ScanGate {
    /// Always listening, like the dedicated module.
    pub fn continuous() -> ScanGate {
        ScanGate {
            window: Duration::from_millis(100),
            interval: Duration::from_millis(100),
            offset: Duration::ZERO,
        }
    }

    /// 30 ms out of every 100 ms, like a phone scanning in the background.
    pub fn smartphone() -> ScanGate {
        ScanGate {
            window: Duration::from_millis(30),
            interval: Duration::from_millis(100),
            offset: Duration::ZERO,
        }
    }

    /// Gate with the given duty cycle over `interval`.
    pub fn with_duty_cycle(duty_cycle: f64, interval: Duration) -> Result<ScanGate, NodeConfigError> {
        if !(duty_cycle > 0.0 && duty_cycle <= 1.0) {
            return Err(NodeConfigError::ScanWindow);
        }
        let window = Duration::from_micros((micros(interval) as f64 * duty_cycle).round() as u64);
        let gate = ScanGate {
            window,
            interval,
            offset: Duration::ZERO,
        };
        gate.validate()?;
        Ok(gate)
    }

    pub fn validate(&self) -> Result<(), NodeConfigError> {
        if micros(self.window) == 0 || self.window > self.interval {
            return Err(NodeConfigError::ScanWindow);
        }
        Ok(())
    }

    pub fn duty_cycle(&self) -> f64 {
        micros(self.window) as f64 / micros(self.interval) as f64
    }

    pub fn is_listening(&self, t: SimTime) -> bool {
        if self.window >= self.interval {
            return true;
        }
        let period = i128::from(micros(self.interval));
        let phase = (i128::from(t.as_micros()) - i128::from(micros(self.offset))).rem_euclid(period);
        phase < i128::from(micros(self.window))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverConfig {
    pub node_id: NodeId,
    pub movement_of_interest: MovementId,
    pub staleness_timeout: Duration,
    pub scan: ScanGate,
}

impl ReceiverConfig {
    /// Continuous listener; staleness timeout of three 50 ms advertising intervals.
    pub fn new(node_id: NodeId, movement_of_interest: MovementId) -> ReceiverConfig {
        ReceiverConfig {
            node_id,
            movement_of_interest,
            staleness_timeout: Duration::from_millis(150),
            scan: ScanGate::continuous(),
        }
    }

    pub fn validate(&self) -> Result<(), NodeConfigError> {
        require_positive(self.staleness_timeout, "staleness timeout")?;
        self.scan.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverStatus {
    pub current_state_id: Option<u8>,
    pub last_update_time: Option<SimTime>,
    pub display: DisplayState,
    pub update_intervals: Vec<Duration>,
    pub drops: u64,
}

/// User device: decodes frames, tracks the phase for one movement and falls
/// back to a caution display when updates stop arriving.
#[derive(Debug, Clone)]
pub struct Receiver {
    cfg: ReceiverConfig,
    intersection: Arc<Intersection>,
    status: ReceiverStatus,
    started: bool,
    pending: Vec<NodeEvent>,
}

impl Receiver {
    pub fn new(cfg: ReceiverConfig, intersection: Arc<Intersection>) -> Result<Receiver, NodeConfigError> {
        cfg.validate()?;
        if !intersection.matrix.contains(cfg.movement_of_interest) {
            return Err(NodeConfigError::UnknownMovement(cfg.movement_of_interest));
        }
        Ok(Receiver {
            cfg,
            intersection,
            status: ReceiverStatus {
                current_state_id: None,
                last_update_time: None,
                display: DisplayState::CautionAnomaly,
                update_intervals: Vec::new(),
                drops: 0,
            },
            started: false,
            pending: Vec::new(),
        })
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.cfg
    }

    pub fn status(&self) -> &ReceiverStatus {
        &self.status
    }

    fn set_display(&mut self, display: DisplayState, now: SimTime) {
        if !self.started {
            self.started = true;
            self.pending.push(NodeEvent {
                at: now,
                kind: NodeEventKind::DisplayChange(self.status.display),
            });
        }
        if display != self.status.display {
            self.status.display = display;
            self.pending.push(NodeEvent {
                at: now,
                kind: NodeEventKind::DisplayChange(display),
            });
        }
    }

    fn is_stale(&self, now: SimTime) -> bool {
        self.status
            .last_update_time
            .is_none_or(|last| now - last > self.cfg.staleness_timeout)
    }

    fn try_accept(&mut self, bytes: &[u8], now: SimTime) -> FrameOutcome {
        if !self.cfg.scan.is_listening(now) {
            return FrameOutcome::NotListening;
        }
        let decoded = match decode_frame(bytes) {
            Ok(d) => d,
            Err(e) => {
                self.status.drops += 1;
                return FrameOutcome::Corrupt(e);
            }
        };
        let display = self.intersection.phase(decoded.state_id).and_then(|phase| {
            display_state_for(self.cfg.movement_of_interest, phase, &self.intersection.matrix, true).ok()
        });
        let Some(display) = display else {
            self.status.drops += 1;
            return FrameOutcome::Ignored;
        };
        if let Some(last) = self.status.last_update_time {
            self.status.update_intervals.push(now - last);
        }
        self.status.last_update_time = Some(now);
        self.status.current_state_id = Some(decoded.state_id);
        self.set_display(display, now);
        FrameOutcome::Accepted(decoded)
    }

    pub fn on_frame(&mut self, bytes: &[u8], now: SimTime) -> &ReceiverStatus {
        self.try_accept(bytes, now);
        &self.status
    }

    pub fn on_tick(&mut self, now: SimTime) -> &ReceiverStatus {
        let display = if self.is_stale(now) {
            DisplayState::CautionAnomaly
        } else {
            self.status.display
        };
        self.set_display(display, now);
        &self.status
    }

    pub fn next_wake(&self) -> Option<SimTime> {
        match self.status.last_update_time {
            Some(last) if self.status.display != DisplayState::CautionAnomaly => {
                Some(last + self.cfg.staleness_timeout + Duration::from_micros(1))
            }
            _ => None,
        }
    }
}

impl Node for Receiver {
    fn id(&self) -> NodeId {
        self.cfg.node_id
    }

    fn step(&mut self, input: NodeInput<'_>, now: SimTime) -> StepOutput {
        self.on_tick(now);
        let frame_outcome = match input {
            NodeInput::Wake => None,
            NodeInput::Frame { bytes, .. } => Some(self.try_accept(bytes, now)),
        };
        StepOutput {
            events: std::mem::take(&mut self.pending),
            next_wake: self.next_wake(),
            frame_outcome,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intersection::standard_phase_table;

    const CTRL: NodeId = NodeId(1);

    fn frame(state: u8) -> Vec<u8> {
        encode_frame(state, &FrameParams::default()).unwrap()
    }

    fn transmissions(out: &StepOutput) -> Vec<&Transmission> {
        out.events
            .iter()
            .filter_map(|e| match &e.kind {
                NodeEventKind::Transmit(t) => Some(t),
                _ => None,
            })
            .collect()
    }

    fn controller() -> Controller {
        Controller::new(ControllerConfig::new(CTRL, standard_phase_table()), SimTime::ZERO).unwrap()
    }

    #[test]
    fn controller_starts_with_state_one() {
        let mut c = controller();
        let out = c.controller_step(SimTime::ZERO);
        let tx = transmissions(&out);
        assert_eq!(tx.len(), 1);
        assert_eq!(tx[0].at, SimTime::ZERO);
        assert_eq!(tx[0].state_id, 1);
        assert_eq!(tx[0].tag, None);
        assert_eq!(out.next_wake, Some(SimTime::from_millis(50)));
    }

    #[test]
    fn controller_advances_after_one_period() {
        let mut c = controller();
        c.controller_step(SimTime::ZERO);
        let out = c.controller_step(SimTime::from_micros(2_000_001));
        let tx = transmissions(&out);
        assert_eq!(tx.last().unwrap().state_id, 2);
        assert_eq!(tx.last().unwrap().at, SimTime::from_millis(2000));
        assert!(tx.iter().filter(|t| t.state_id == 1).count() == 39);
    }

    #[test]
    fn controller_full_cycle_visits_every_state_in_order() {
        let mut c = controller();
        let out = c.controller_step(SimTime::from_micros(26_000_000 - 1));
        let mut seq: Vec<u8> = transmissions(&out).iter().map(|t| t.state_id).collect();
        seq.dedup();
        assert_eq!(seq, (1..=13).collect::<Vec<_>>());
        let count = transmissions(&out).len();
        assert_eq!(count, 13 * 40);
    }

    #[test]
    fn controller_per_state_periods() {
        let mut cfg = ControllerConfig::new(CTRL, standard_phase_table());
        let mut periods = vec![Duration::from_secs(1); 13];
        periods[0] = Duration::from_millis(200);
        cfg.state_periods = Some(periods);
        let mut c = Controller::new(cfg, SimTime::ZERO).unwrap();
        let out = c.controller_step(SimTime::from_millis(200));
        let tx = transmissions(&out);
        assert_eq!(tx.iter().filter(|t| t.state_id == 1).count(), 4);
        assert_eq!(tx.last().unwrap().state_id, 2);
    }

    #[test]
    fn controller_config_validation() {
        let mut cfg = ControllerConfig::new(CTRL, standard_phase_table());
        cfg.advertising_interval = Duration::from_secs(3);
        assert_eq!(cfg.validate(), Err(NodeConfigError::IntervalNotBelowPeriod));
        let mut cfg = ControllerConfig::new(CTRL, vec![]);
        assert_eq!(cfg.validate(), Err(NodeConfigError::EmptyPhaseTable));
        cfg.phase_table = standard_phase_table();
        cfg.state_periods = Some(vec![Duration::from_secs(1)]);
        assert!(matches!(cfg.validate(), Err(NodeConfigError::PeriodCount { .. })));
    }

    #[test]
    fn controller_step_is_pure_in_time() {
        let mut a = controller();
        let mut b = controller();
        let t = SimTime::from_millis(5_123);
        assert_eq!(a.controller_step(t), b.controller_step(t));
        let mut cfg = ControllerConfig::new(CTRL, standard_phase_table());
        cfg.adv_delay_max = Duration::from_millis(10);
        cfg.seed = 9;
        let mut a = Controller::new(cfg.clone(), SimTime::ZERO).unwrap();
        let mut b = Controller::new(cfg, SimTime::ZERO).unwrap();
        assert_eq!(a.controller_step(t), b.controller_step(t));
    }

    fn retransmitter() -> Retransmitter {
        Retransmitter::new(RetransmitterConfig::new(NodeId(2), 0x2A, CTRL), SimTime::ZERO).unwrap()
    }

    #[test]
    fn retransmitter_relays_frame_from_controller() {
        let mut r = retransmitter();
        r.retransmitter_step(NodeInput::Wake, SimTime::ZERO);
        let f = frame(4);
        let out = r.retransmitter_step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &f,
            },
            SimTime::from_millis(300),
        );
        assert!(matches!(out.frame_outcome, Some(FrameOutcome::Accepted(_))));
        let out = r.retransmitter_step(NodeInput::Wake, SimTime::from_millis(1_999));
        let tx = transmissions(&out);
        assert_eq!(tx.len(), 20);
        assert_eq!(tx[0].at, SimTime::from_millis(1_000));
        for t in tx {
            assert_eq!(t.state_id, 4);
            assert_eq!(t.tag, Some(0x2A));
            assert_eq!(
                decode_frame(&t.frame).unwrap(),
                DecodedFrame {
                    state_id: 4,
                    tag: Some(0x2A)
                }
            );
        }
    }

    #[test]
    fn retransmitter_ignores_other_sources() {
        let mut r = retransmitter();
        let f = frame(4);
        let out = r.retransmitter_step(
            NodeInput::Frame {
                source: NodeId(7),
                bytes: &f,
            },
            SimTime::from_millis(10),
        );
        assert_eq!(out.frame_outcome, Some(FrameOutcome::Ignored));
        let out = r.retransmitter_step(NodeInput::Wake, SimTime::from_millis(1_999));
        assert!(transmissions(&out).is_empty());
    }

    #[test]
    fn retransmitter_silent_without_reception_and_forgets_each_period() {
        let mut r = retransmitter();
        let f = frame(9);
        r.retransmitter_step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &f,
            },
            SimTime::from_millis(10),
        );
        let out = r.retransmitter_step(NodeInput::Wake, SimTime::from_millis(2_000));
        assert_eq!(transmissions(&out).len(), 20);
        // second period: nothing heard
        let out = r.retransmitter_step(NodeInput::Wake, SimTime::from_millis(3_999));
        assert!(transmissions(&out).is_empty());
    }

    #[test]
    fn retransmitter_deaf_while_broadcasting_and_counts_corruption() {
        let mut r = retransmitter();
        let f = frame(2);
        let out = r.retransmitter_step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &f,
            },
            SimTime::from_millis(1_000),
        );
        assert_eq!(out.frame_outcome, Some(FrameOutcome::NotListening));
        let mut bad = frame(2);
        bad[8] ^= 0x80;
        let out = r.retransmitter_step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &bad,
            },
            SimTime::from_millis(2_100),
        );
        assert!(matches!(out.frame_outcome, Some(FrameOutcome::Corrupt(_))));
        let tagged = tag_frame(&f, 1).unwrap();
        let out = r.retransmitter_step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &tagged,
            },
            SimTime::from_millis(2_200),
        );
        assert_eq!(out.frame_outcome, Some(FrameOutcome::Ignored));
        let s = r.stats();
        assert_eq!((s.not_listening, s.corrupt, s.ignored, s.accepted), (1, 1, 1, 0));
    }

    #[test]
    fn retransmitter_emits_slot_changes() {
        let mut r = retransmitter();
        let out = r.retransmitter_step(NodeInput::Wake, SimTime::from_millis(2_000));
        let slots: Vec<(SimTime, Slot)> = out
            .events
            .iter()
            .filter_map(|e| match e.kind {
                NodeEventKind::SlotChange(s) => Some((e.at, s)),
                _ => None,
            })
            .collect();
        assert_eq!(
            slots,
            vec![
                (SimTime::ZERO, Slot::Observe),
                (SimTime::from_millis(1_000), Slot::Broadcast),
                (SimTime::from_millis(2_000), Slot::Observe),
            ]
        );
    }

    fn receiver(movement: MovementId, scan: ScanGate) -> Receiver {
        let mut cfg = ReceiverConfig::new(NodeId(10), movement);
        cfg.staleness_timeout = Duration::from_secs(1);
        cfg.scan = scan;
        Receiver::new(cfg, Arc::new(Intersection::standard())).unwrap()
    }

    #[test]
    fn receiver_displays_phase() {
        let mut r = receiver(MovementId::Vehicle(2), ScanGate::continuous());
        assert_eq!(r.on_tick(SimTime::ZERO).display, DisplayState::CautionAnomaly);
        let s = r.on_frame(&frame(5), SimTime::from_millis(10));
        assert_eq!(s.display, DisplayState::Green);
        assert_eq!(s.current_state_id, Some(5));
    }

    #[test]
    fn receiver_drops_corrupt_frames() {
        let mut r = receiver(MovementId::Vehicle(2), ScanGate::continuous());
        r.on_frame(&frame(5), SimTime::from_millis(10));
        let before = r.status().clone();
        let mut bad = frame(6);
        bad[7] ^= 0x04;
        let s = r.on_frame(&bad, SimTime::from_millis(20));
        assert_eq!(s.drops, 1);
        assert_eq!(s.current_state_id, before.current_state_id);
        assert_eq!(s.update_intervals, before.update_intervals);
    }

    #[test]
    fn receiver_records_update_intervals() {
        let mut r = receiver(MovementId::Vehicle(2), ScanGate::continuous());
        r.on_frame(&frame(5), SimTime::from_millis(100));
        let s = r.on_frame(&frame(5), SimTime::from_millis(150));
        assert_eq!(s.update_intervals, vec![Duration::from_millis(50)]);
    }

    #[test]
    fn receiver_goes_stale() {
        let mut r = receiver(MovementId::Vehicle(2), ScanGate::continuous());
        r.on_frame(&frame(5), SimTime::from_millis(0));
        assert_eq!(r.on_tick(SimTime::from_millis(10)).display, DisplayState::Green);
        assert_eq!(
            r.on_tick(SimTime::from_millis(10_000)).display,
            DisplayState::CautionAnomaly
        );
    }

    #[test]
    fn receiver_respects_scan_gate() {
        let mut r = receiver(MovementId::Vehicle(2), ScanGate::smartphone());
        r.on_frame(&frame(5), SimTime::from_millis(40));
        assert_eq!(r.status().current_state_id, None);
        r.on_frame(&frame(5), SimTime::from_millis(129));
        assert_eq!(r.status().current_state_id, Some(5));
    }

    #[test]
    fn receiver_step_schedules_staleness_wake() {
        let mut r = receiver(MovementId::Vehicle(16), ScanGate::continuous());
        let f = frame(5);
        let out = r.step(
            NodeInput::Frame {
                source: CTRL,
                bytes: &f,
            },
            SimTime::from_millis(5),
        );
        assert_eq!(out.next_wake, Some(SimTime::from_micros(1_005_001)));
        let displays: Vec<DisplayState> = out
            .events
            .iter()
            .filter_map(|e| match e.kind {
                NodeEventKind::DisplayChange(d) => Some(d),
                _ => None,
            })
            .collect();
        assert_eq!(
            displays,
            vec![DisplayState::CautionAnomaly, DisplayState::GreenYieldCrosswalk]
        );
        let out = r.step(NodeInput::Wake, SimTime::from_micros(1_005_001));
        assert_eq!(out.next_wake, None);
        assert_eq!(r.status().display, DisplayState::CautionAnomaly);
    }

    #[test]
    fn scan_gate_duty_cycle() {
        let g = ScanGate::with_duty_cycle(0.3, Duration::from_millis(100)).unwrap();
        assert_eq!(g, ScanGate::smartphone());
        assert!((g.duty_cycle() - 0.3).abs() < 1e-12);
        assert!(ScanGate::with_duty_cycle(0.0, Duration::from_millis(100)).is_err());
        assert!(ScanGate::with_duty_cycle(1.5, Duration::from_millis(100)).is_err());
        let listening = (0..100_000u64)
            .filter(|&t| g.is_listening(SimTime::from_micros(t)))
            .count();
        assert_eq!(listening, 30_000);
    }

    #[test]
    fn receiver_rejects_unknown_movement() {
        let cfg = ReceiverConfig::new(NodeId(10), MovementId::Vehicle(11));
        assert!(matches!(
            Receiver::new(cfg, Arc::new(Intersection::standard())),
            Err(NodeConfigError::UnknownMovement(_))
        ));
    }
}
