//! Simulation trace and its CSV form.
//!
//! The CSV has the header `time_us,kind,node,payload`. `payload` is a list
//! of `key=value` pairs joined with `;`:
//!
//! | kind             | payload                                   |
//! |------------------|-------------------------------------------|
//! | `tx`             | `seq=N;state=S[;tag=T]`                   |
//! | `rx-ok`          | `seq=N;from=ID;state=S[;tag=T]`           |
//! | `rx-lost`        | `seq=N;from=ID;reason=channel\|not-listening\|rejected` |
//! | `rx-corrupt`     | `seq=N;from=ID`                           |
//! | `display-change` | `display=D`                               |
//! | `state-advance`  | `state=S`                                 |
//! | `slot-change`    | `slot=observe\|broadcast`                 |
//!
//! `seq` numbers transmissions in the order they were sent, so every
//! reception can be matched to exactly one `tx` row.

use std::collections::BTreeMap;
use std::io;
use std::str::FromStr;

use thiserror::Error;

use crate::intersection::DisplayState;
use crate::nodes::{NodeId, Slot};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossReason {
    Channel,
    NotListening,
    /// Decoded, but the node had no use for it (wrong source, unknown state).
    Rejected,
}

impl LossReason {
    pub fn as_str(self) -> &'static str {
        match self {
            LossReason::Channel => "channel",
            LossReason::NotListening => "not-listening",
            LossReason::Rejected => "rejected",
        }
    }
}

impl FromStr for LossReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "channel" => Ok(LossReason::Channel),
            "not-listening" => Ok(LossReason::NotListening),
            "rejected" => Ok(LossReason::Rejected),
            other => Err(format!("unknown loss reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEventKind {
    Tx {
        seq: u64,
        state: u8,
        tag: Option<u8>,
    },
    RxOk {
        seq: u64,
        from: NodeId,
        state: u8,
        tag: Option<u8>,
    },
    RxLost {
        seq: u64,
        from: NodeId,
        reason: LossReason,
    },
    RxCorrupt {
        seq: u64,
        from: NodeId,
    },
    DisplayChange(DisplayState),
    StateAdvance(u8),
    SlotChange(Slot),
}

impl TraceEventKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceEventKind::Tx { .. } => "tx",
            TraceEventKind::RxOk { .. } => "rx-ok",
            TraceEventKind::RxLost { .. } => "rx-lost",
            TraceEventKind::RxCorrupt { .. } => "rx-corrupt",
            TraceEventKind::DisplayChange(_) => "display-change",
            TraceEventKind::StateAdvance(_) => "state-advance",
            TraceEventKind::SlotChange(_) => "slot-change",
        }
    }

    pub fn payload(&self) -> String {
        let tag = |t: &Option<u8>| t.map(|t| format!(";tag={t}")).unwrap_or_default();
        match self {
            TraceEventKind::Tx { seq, state, tag: t } => format!("seq={seq};state={state}{}", tag(t)),
            TraceEventKind::RxOk {
                seq,
                from,
                state,
                tag: t,
            } => format!("seq={seq};from={from};state={state}{}", tag(t)),
            TraceEventKind::RxLost { seq, from, reason } => {
                format!("seq={seq};from={from};reason={}", reason.as_str())
            }
            TraceEventKind::RxCorrupt { seq, from } => format!("seq={seq};from={from}"),
            TraceEventKind::DisplayChange(d) => format!("display={d}"),
            TraceEventKind::StateAdvance(s) => format!("state={s}"),
            TraceEventKind::SlotChange(s) => format!("slot={}", s.as_str()),
        }
    }

    fn parse(kind: &str, payload: &str) -> Result<TraceEventKind, String> {
        let mut fields = BTreeMap::new();
        for pair in payload.split(';').filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| format!("payload field `{pair}` is not key=value"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("payload lacks `{k}`"));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid `{k}` value `{v}`"))
        }
        let seq = || get("seq").and_then(|v| num::<u64>("seq", v));
        let from = || get("from").and_then(|v| num::<u32>("from", v)).map(NodeId);
        let state = || get("state").and_then(|v| num::<u8>("state", v));
        let tag = || fields.get("tag").map(|v| num::<u8>("tag", v)).transpose();
        Ok(match kind {
            "tx" => TraceEventKind::Tx {
                seq: seq()?,
                state: state()?,
                tag: tag()?,
            },
            "rx-ok" => TraceEventKind::RxOk {
                seq: seq()?,
                from: from()?,
                state: state()?,
                tag: tag()?,
            },
            "rx-lost" => TraceEventKind::RxLost {
                seq: seq()?,
                from: from()?,
                reason: get("reason")?.parse()?,
            },
            "rx-corrupt" => TraceEventKind::RxCorrupt {
                seq: seq()?,
                from: from()?,
            },
            "display-change" => TraceEventKind::DisplayChange(get("display")?.parse()?),
            "state-advance" => TraceEventKind::StateAdvance(state()?),
            "slot-change" => TraceEventKind::SlotChange(match get("slot")? {
                "observe" => Slot::Observe,
                "broadcast" => Slot::Broadcast,
                other => return Err(format!("unknown slot `{other}`")),
            }),
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: TraceEventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

pub const CSV_HEADER: [&str; 4] = ["time_us", "kind", "node", "payload"];

impl Trace {
    pub fn push(&mut self, time: SimTime, node: NodeId, kind: TraceEventKind) {
        self.events.push(TraceEvent { time, node, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), TraceError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for e in &self.events {
            out.write_record([
                e.time.as_micros().to_string(),
                e.kind.name().to_string(),
                e.node.to_string(),
                e.kind.payload(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("trace CSV is ASCII")
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Trace, TraceError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = reader.headers()?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(TraceError::Parse {
                line: 1,
                message: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }
        let mut trace = Trace::default();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let err = |message: String| TraceError::Parse { line, message };
            if record.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", record.len())));
            }
            let time: u64 = record[0]
                .parse()
                .map_err(|_| err(format!("invalid time `{}`", &record[0])))?;
            let node: u32 = record[2]
                .parse()
                .map_err(|_| err(format!("invalid node `{}`", &record[2])))?;
            let kind = TraceEventKind::parse(&record[1], &record[3]).map_err(err)?;
            trace.push(SimTime::from_micros(time), NodeId(node), kind);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::default();
        let n1 = NodeId(1);
        let n2 = NodeId(2);
        t.push(SimTime::ZERO, n1, TraceEventKind::StateAdvance(1));
        t.push(
            SimTime::ZERO,
            n1,
            TraceEventKind::Tx {
                seq: 0,
                state: 1,
                tag: None,
            },
        );
        t.push(
            SimTime::from_micros(104),
            n2,
            TraceEventKind::RxOk {
                seq: 0,
                from: n1,
                state: 1,
                tag: Some(42),
            },
        );
        t.push(
            SimTime::from_micros(104),
            n2,
            TraceEventKind::RxLost {
                seq: 1,
                from: n1,
                reason: LossReason::NotListening,
            },
        );
        t.push(
            SimTime::from_micros(105),
            n2,
            TraceEventKind::RxCorrupt { seq: 2, from: n1 },
        );
        t.push(
            SimTime::from_micros(105),
            n2,
            TraceEventKind::DisplayChange(DisplayState::GreenYieldCrosswalk),
        );
        t.push(
            SimTime::from_micros(106),
            n2,
            TraceEventKind::SlotChange(Slot::Broadcast),
        );
        t
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let text = t.to_csv_string();
        assert!(text.starts_with("time_us,kind,node,payload\n0,state-advance,1,state=1\n"));
        assert!(text.contains("104,rx-ok,2,seq=0;from=1;state=1;tag=42\n"));
        assert_eq!(Trace::read_csv(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "time_us,kind,node,payload\n0,tx,1,seq=0;state=1\n5,bogus,1,\n";
        match Trace::read_csv(text.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "time_us,kind,node,payload\nabc,tx,1,seq=0;state=1\n";
        assert!(matches!(
            Trace::read_csv(text.as_bytes()),
            Err(TraceError::Parse { line: 2, .. })
        ));
        let text = "when,kind,node,payload\n";
        assert!(matches!(
            Trace::read_csv(text.as_bytes()),
            Err(TraceError::Parse { line: 1, .. })
        ));
        let text = "time_us,kind,node,payload\n1,rx-ok,1,seq=0;state=1\n";
        assert!(matches!(
            Trace::read_csv(text.as_bytes()),
            Err(TraceError::Parse { line: 2, .. })
        ));
    }
}
