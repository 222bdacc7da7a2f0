#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use vtl_core::channel::{Position, PsrCurve, Trajectory};
use vtl_core::intersection::{build_standard_intersection, standard_phase_table, MovementId};
use vtl_core::nodes::{ControllerConfig, NodeId, ReceiverConfig, RetransmitterConfig, ScanGate};
use vtl_core::protocol::LinkTimingParams;
use vtl_core::sim::{ControllerSpec, ReceiverSpec, RetransmitterSpec, Scenario};
use vtl_core::SimTime;

pub const CTRL: NodeId = NodeId(1);
pub const RELAY: NodeId = NodeId(2);
pub const RX: NodeId = NodeId(10);

/// Bit-at-a-time CRC-16 with polynomial 0x1021, initial value 0xFFFF.
pub fn crc_oracle(data: &[u8]) -> u16 {
    let mut reg: u32 = 0xFFFF;
    for &byte in data {
        for bit in (0..8).rev() {
            let input = u32::from((byte >> bit) & 1);
            let top = (reg >> 15) & 1;
            reg = (reg << 1) & 0xFFFF;
            if top ^ input == 1 {
                reg ^= 0x1021;
            }
        }
    }
    reg as u16
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn controller_spec() -> ControllerSpec {
    ControllerSpec {
        config: ControllerConfig::new(CTRL, standard_phase_table()),
        trajectory: Trajectory::Static(Position::new(0.0, 0.0)),
    }
}

pub fn receiver_spec(id: NodeId, listens_to: NodeId, at: Position, scan: ScanGate) -> ReceiverSpec {
    let mut config = ReceiverConfig::new(id, MovementId::Vehicle(2));
    config.scan = scan;
    ReceiverSpec {
        config,
        trajectory: Trajectory::Static(at),
        listens_to,
    }
}

/// Controller at the origin, one receiver `distance` metres away listening to it.
pub fn static_link(distance: f64, duration: Duration, curve: PsrCurve, scan: ScanGate, seed: u64) -> Scenario {
    Scenario {
        duration,
        seed,
        matrix: build_standard_intersection().1,
        controller: controller_spec(),
        retransmitters: vec![],
        receivers: vec![receiver_spec(RX, CTRL, Position::new(distance, 0.0), scan)],
        channel: curve,
        link_overrides: vec![],
        timing: LinkTimingParams::default(),
    }
}

/// Controller, a relay 37 m away and a receiver next to the relay.
pub fn relayed(duration: Duration, curve: PsrCurve, seed: u64) -> Scenario {
    let mut s = static_link(37.0, duration, curve, ScanGate::continuous(), seed);
    s.retransmitters.push(RetransmitterSpec {
        config: RetransmitterConfig::new(RELAY, 42, CTRL),
        trajectory: Trajectory::Static(Position::new(37.0, 0.0)),
        start: SimTime::ZERO,
    });
    s.receivers[0].listens_to = RELAY;
    s.receivers[0].trajectory = Trajectory::Static(Position::new(40.0, 0.0));
    s
}
