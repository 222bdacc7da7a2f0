//! Virtual traffic light: intersection model, broadcast frame protocol,
//! controller/retransmitter/receiver machines, a distance-based link model
//! and a deterministic discrete-event simulator with trace metrics.

pub mod channel;
pub mod intersection;
pub mod metrics;
pub mod nodes;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod trace;

pub use channel::{deliver, position_at, psr_at, ChannelError, Position, PsrCurve, Trajectory};
pub use intersection::{
    build_standard_intersection, display_state_for, standard_phase_table, validate_phase_table, ConflictMatrix,
    DisplayState, Intersection, IntersectionError, MovementId, PhaseState, Relation, SignalColor,
};
pub use metrics::{compare_receivers, compute_metrics, Comparison, MetricsError, MetricsReport, NodeMetrics};
pub use nodes::{
    Controller, ControllerConfig, Node, NodeId, Receiver, ReceiverConfig, Retransmitter, RetransmitterConfig, ScanGate,
};
pub use protocol::{crc16, decode_frame, effective_throughput, encode_frame, tx_time, FrameError, LinkTimingParams};
pub use scenario::{load_scenario, LoadError, ScenarioFile, SweepSpec};
pub use sim::{run, sweep, Scenario, ScenarioError};
pub use time::SimTime;
pub use trace::{Trace, TraceError, TraceEvent, TraceEventKind};
