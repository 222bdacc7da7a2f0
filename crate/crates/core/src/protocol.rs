//! Broadcast frame layout, payload CRC and link timing.
//!
//! Wire layout of a controller frame (13 bytes):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 1    | preamble                                     |
//! | 1      | 4    | access address                               |
//! | 5      | 2    | header                                       |
//! | 7      | 1    | state code (1..=13)                          |
//! | 8      | 2    | CRC-16/CCITT-FALSE of the state code, big-endian |
//! | 10     | 3    | link CRC placeholder (`00 00 00`)            |
//!
//! A retransmitter appends one tag byte, giving 14 bytes. The tag is not
//! covered by the payload CRC.

use thiserror::Error;

pub const FRAME_LEN: usize = 13;
pub const TAGGED_FRAME_LEN: usize = FRAME_LEN + 1;
pub const PAYLOAD_OFFSET: usize = 7;
pub const PAYLOAD_LEN: usize = 3;
pub const MAX_STATE: u8 = 13;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("state {0} outside 1..=13")]
    StateOutOfRange(u8),
    #[error("frame length {0}, expected 13 or 14 bytes")]
    Length(usize),
    #[error("payload CRC mismatch: frame carries {found:#06x}, computed {expected:#06x}")]
    Integrity { expected: u16, found: u16 },
    #[error("frame already carries a retransmitter tag")]
    AlreadyTagged,
}

const fn crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC16_TABLE: [u16; 256] = crc16_table();

/// CRC-16/CCITT-FALSE: polynomial 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[usize::from((crc >> 8) as u8 ^ b)]
    })
}

/// Constant link-layer fields. The simulator addresses nodes out of band,
/// so these only have to be stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameParams {
    pub preamble: u8,
    pub access_address: [u8; 4],
    pub header: [u8; 2],
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            preamble: 0xAA,
            // 0x8E89BED6, least significant byte first
            access_address: [0xD6, 0xBE, 0x89, 0x8E],
            // non-connectable advertising PDU, 3 payload bytes
            header: [0x02, 0x03],
        }
    }
}

pub fn encode_frame(state_id: u8, params: &FrameParams) -> Result<Vec<u8>, FrameError> {
    if !(1..=MAX_STATE).contains(&state_id) {
        return Err(FrameError::StateOutOfRange(state_id));
    }
    let crc = crc16(&[state_id]);
    let mut frame = Vec::with_capacity(TAGGED_FRAME_LEN);
    frame.push(params.preamble);
    frame.extend_from_slice(&params.access_address);
    frame.extend_from_slice(&params.header);
    frame.push(state_id);
    frame.extend_from_slice(&crc.to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0]);
    debug_assert_eq!(frame.len(), FRAME_LEN);
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedFrame {
    pub state_id: u8,
    pub tag: Option<u8>,
}

pub fn decode_frame(bytes: &[u8]) -> Result<DecodedFrame, FrameError> {
    let tag = match bytes.len() {
        FRAME_LEN => None,
        TAGGED_FRAME_LEN => Some(bytes[FRAME_LEN]),
        n => return Err(FrameError::Length(n)),
    };
    let state_id = bytes[PAYLOAD_OFFSET];
    let found = u16::from_be_bytes([bytes[PAYLOAD_OFFSET + 1], bytes[PAYLOAD_OFFSET + 2]]);
    let expected = crc16(&[state_id]);
    if found != expected {
        return Err(FrameError::Integrity { expected, found });
    }
    if !(1..=MAX_STATE).contains(&state_id) {
        return Err(FrameError::StateOutOfRange(state_id));
    }
    Ok(DecodedFrame { state_id, tag })
}

/// Appends a retransmitter tag to an untagged frame.
pub fn tag_frame(bytes: &[u8], retransmitter_id: u8) -> Result<Vec<u8>, FrameError> {
    match bytes.len() {
        FRAME_LEN => {}
        TAGGED_FRAME_LEN => return Err(FrameError::AlreadyTagged),
        n => return Err(FrameError::Length(n)),
    }
    let mut out = Vec::with_capacity(TAGGED_FRAME_LEN);
    out.extend_from_slice(bytes);
    out.push(retransmitter_id);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTimingParams {
    pub bitrate_bps: f64,
    /// Airtime of the empty acknowledgement packet, µs.
    pub ack_time_us: f64,
    pub inter_frame_space_us: f64,
}

impl Default for LinkTimingParams {
    fn default() -> Self {
        LinkTimingParams {
            bitrate_bps: 1_000_000.0,
            ack_time_us: 80.0,
            inter_frame_space_us: 150.0,
        }
    }
}

impl LinkTimingParams {
    pub fn new(bitrate_bps: f64, ack_time_us: f64, inter_frame_space_us: f64) -> Option<Self> {
        let ok = [bitrate_bps, ack_time_us, inter_frame_space_us]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        ok.then_some(LinkTimingParams {
            bitrate_bps,
            ack_time_us,
            inter_frame_space_us,
        })
    }
}

/// Airtime of a frame in microseconds.
pub fn tx_time(frame_bytes: usize, params: &LinkTimingParams) -> f64 {
    frame_bytes as f64 * 8.0 * 1e6 / params.bitrate_bps
}

/// Payload bits delivered per microsecond of one frame/ack exchange.
pub fn effective_throughput(payload_bits: u32, frame_time_us: f64, params: &LinkTimingParams) -> f64 {
    let cycle = params.ack_time_us + params.inter_frame_space_us + frame_time_us + params.inter_frame_space_us;
    f64::from(payload_bits) / cycle
}
