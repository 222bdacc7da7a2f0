//! TOML scenario files.
//!
//! ```toml
//! [run]
//! duration_s = 20.0
//! seed = 7
//!
//! [channel]                 # default link model
//! model = "logistic"        # logistic | table | constant
//! p_max = 1.0
//! d_mid_m = 68.0
//! steepness_per_m = 0.3
//! # model = "table": knots = [[0.0, 1.0], [60.0, 0.9]] or table_file = "psr.txt"
//! # model = "constant": psr = 0.95
//!
//! [[channel.link]]          # optional per-link override, same keys plus from/to
//! from = 1
//! to = 2
//! model = "constant"
//! psr = 1.0
//!
//! [timing]                  # optional, link-budget parameters
//! bitrate_bps = 1000000.0
//! ack_time_us = 80.0
//! inter_frame_space_us = 150.0
//!
//! [controller]
//! id = 1
//! state_period_ms = 2000
//! advertising_interval_ms = 50
//! adv_delay_max_ms = 0
//! # state_periods_ms = [...]    one entry per phase-table row
//! # phase_table = "table.txt"   defaults to the built-in 13-state table
//! position = [0.0, 0.0]
//!
//! [[retransmitter]]
//! id = 2
//! tag = 42
//! position = [37.0, 0.0]
//! # start_offset_ms, advertising_interval_ms, adv_delay_max_ms,
//! # controller_period_ms (defaults to the controller's state period)
//!
//! [[receiver]]
//! id = 10
//! listens_to = 2            # defaults to the first retransmitter, else the controller
//! movement = "2"            # vehicle movement 2; "P4" for a crossing
//! duty_cycle = 1.0
//! scan_interval_ms = 100
//! scan_offset_ms = 0
//! staleness_timeout_ms = 150
//! trajectory = { start = [137.0, 0.0], velocity = [-2.0, 0.0], start_time_s = 0.0 }
//!
//! [sweep]                   # optional, used by the `sweep` command
//! parameter = "distance"
//! values = [0, 20, 40]
//! ```
//!
//! Relative file paths are resolved against the scenario file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::{Position, PsrCurve, Trajectory};
use crate::intersection::{build_standard_intersection, parse_phase_table, standard_phase_table, MovementId};
use crate::nodes::{ControllerConfig, NodeId, ReceiverConfig, RetransmitterConfig, ScanGate};
use crate::protocol::LinkTimingParams;
use crate::sim::{ControllerSpec, LinkOverride, ReceiverSpec, RetransmitterSpec, Scenario, ScenarioError};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
}

impl LoadError {
    fn parse(path: &Path, message: impl Into<String>) -> LoadError {
        LoadError::Parse {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDto {
    run: RunDto,
    #[serde(default)]
    channel: Option<ChannelDto>,
    #[serde(default)]
    timing: Option<TimingDto>,
    controller: ControllerDto,
    #[serde(default)]
    retransmitter: Vec<RetransmitterDto>,
    #[serde(default)]
    receiver: Vec<ReceiverDto>,
    #[serde(default)]
    sweep: Option<SweepDto>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDto {
    duration_s: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize, Default)]
struct CurveDto {
    #[serde(default)]
    model: Option<String>,
    p_max: Option<f64>,
    d_mid_m: Option<f64>,
    steepness_per_m: Option<f64>,
    knots: Option<Vec<(f64, f64)>>,
    table_file: Option<String>,
    psr: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ChannelDto {
    #[serde(flatten)]
    curve: CurveDto,
    #[serde(default)]
    link: Vec<LinkDto>,
}

#[derive(Debug, Deserialize)]
struct LinkDto {
    from: u32,
    to: u32,
    #[serde(flatten)]
    curve: CurveDto,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingDto {
    bitrate_bps: Option<f64>,
    ack_time_us: Option<f64>,
    inter_frame_space_us: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryDto {
    start: [f64; 2],
    #[serde(default)]
    velocity: [f64; 2],
    #[serde(default)]
    start_time_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerDto {
    id: u32,
    state_period_ms: Option<f64>,
    state_periods_ms: Option<Vec<f64>>,
    advertising_interval_ms: Option<f64>,
    adv_delay_max_ms: Option<f64>,
    phase_table: Option<String>,
    position: Option<[f64; 2]>,
    trajectory: Option<TrajectoryDto>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetransmitterDto {
    id: u32,
    tag: u8,
    controller: Option<u32>,
    controller_period_ms: Option<f64>,
    advertising_interval_ms: Option<f64>,
    adv_delay_max_ms: Option<f64>,
    start_offset_ms: Option<f64>,
    position: Option<[f64; 2]>,
    trajectory: Option<TrajectoryDto>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReceiverDto {
    id: u32,
    listens_to: Option<u32>,
    movement: Option<toml::Value>,
    staleness_timeout_ms: Option<f64>,
    duty_cycle: Option<f64>,
    scan_interval_ms: Option<f64>,
    scan_offset_ms: Option<f64>,
    position: Option<[f64; 2]>,
    trajectory: Option<TrajectoryDto>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDto {
    parameter: String,
    values: Vec<f64>,
}

fn ms(v: f64) -> Duration {
    Duration::from_micros((v * 1e3).round().max(0.0) as u64)
}

fn secs(v: f64) -> Duration {
    Duration::from_micros((v * 1e6).round().max(0.0) as u64)
}

struct Ctx<'a> {
    dir: &'a Path,
    errors: Vec<String>,
}

impl Ctx<'_> {
    fn read(&self, rel: &str) -> Result<String, LoadError> {
        let p = self.dir.join(rel);
        fs::read_to_string(&p).map_err(|source| LoadError::Io { path: p, source })
    }

    fn duration_ms(&mut self, what: &str, v: Option<f64>, default: Duration) -> Duration {
        match v {
            None => default,
            Some(v) if v.is_finite() && v >= 0.0 => ms(v),
            Some(v) => {
                self.errors.push(format!("{what} = {v} is not a non-negative number"));
                default
            }
        }
    }

    fn trajectory(&mut self, who: &str, pos: Option<[f64; 2]>, traj: Option<TrajectoryDto>) -> Trajectory {
        match (pos, traj) {
            (Some(_), Some(_)) => {
                self.errors
                    .push(format!("{who}: give either position or trajectory, not both"));
                Trajectory::Static(Position::default())
            }
            (Some([x, y]), None) => Trajectory::Static(Position::new(x, y)),
            (None, Some(t)) => {
                if !(t.start_time_s.is_finite() && t.start_time_s >= 0.0) {
                    self.errors.push(format!("{who}: start_time_s must be non-negative"));
                }
                Trajectory::Linear {
                    start: Position::new(t.start[0], t.start[1]),
                    velocity: (t.velocity[0], t.velocity[1]),
                    start_time: SimTime::ZERO + secs(t.start_time_s.max(0.0)),
                }
            }
            (None, None) => Trajectory::Static(Position::default()),
        }
    }

    fn curve(&mut self, who: &str, c: &CurveDto) -> Result<PsrCurve, LoadError> {
        let model = c.model.as_deref().unwrap_or("logistic");
        let curve = match model {
            "logistic" => {
                let PsrCurve::Logistic {
                    p_max,
                    d_mid,
                    steepness,
                } = PsrCurve::default()
                else {
                    unreachable!()
                };
                PsrCurve::Logistic {
                    p_max: c.p_max.unwrap_or(p_max),
                    d_mid: c.d_mid_m.unwrap_or(d_mid),
                    steepness: c.steepness_per_m.unwrap_or(steepness),
                }
            }
            "table" => match (&c.knots, &c.table_file) {
                (Some(k), None) => PsrCurve::Table(k.clone()),
                (None, Some(f)) => {
                    let text = self.read(f)?;
                    PsrCurve::parse_table(&text).map_err(|e| LoadError::parse(&self.dir.join(f), e.to_string()))?
                }
                _ => {
                    self.errors
                        .push(format!("{who}: table model needs exactly one of knots or table_file"));
                    return Ok(PsrCurve::default());
                }
            },
            "constant" => match c.psr {
                Some(p) => PsrCurve::constant(p),
                None => {
                    self.errors.push(format!("{who}: constant model needs psr"));
                    return Ok(PsrCurve::default());
                }
            },
            other => {
                self.errors.push(format!("{who}: unknown channel model `{other}`"));
                return Ok(PsrCurve::default());
            }
        };
        Ok(curve)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, path, dir)
}

/// Parses scenario text; `path` is only used in messages and `dir` anchors
/// relative file references.
pub fn parse_scenario(text: &str, path: &Path, dir: &Path) -> Result<ScenarioFile, LoadError> {
    let dto: FileDto = toml::from_str(text).map_err(|e| LoadError::parse(path, e.to_string()))?;
    let mut cx = Ctx {
        dir,
        errors: Vec::new(),
    };

    if !(dto.run.duration_s.is_finite() && dto.run.duration_s > 0.0) {
        cx.errors
            .push(format!("run.duration_s = {} must be positive", dto.run.duration_s));
    }
    let duration = secs(dto.run.duration_s.max(0.0));

    let (channel, overrides) = match &dto.channel {
        None => (PsrCurve::default(), Vec::new()),
        Some(ch) => {
            let base = cx.curve("channel", &ch.curve)?;
            let mut links = Vec::new();
            for l in &ch.link {
                let curve = cx.curve(&format!("channel link {}→{}", l.from, l.to), &l.curve)?;
                links.push(LinkOverride {
                    from: NodeId(l.from),
                    to: NodeId(l.to),
                    curve,
                });
            }
            (base, links)
        }
    };

    let timing = match &dto.timing {
        None => LinkTimingParams::default(),
        Some(t) => {
            let d = LinkTimingParams::default();
            LinkTimingParams::new(
                t.bitrate_bps.unwrap_or(d.bitrate_bps),
                t.ack_time_us.unwrap_or(d.ack_time_us),
                t.inter_frame_space_us.unwrap_or(d.inter_frame_space_us),
            )
            .unwrap_or_else(|| {
                cx.errors
                    .push("timing: bitrate must be positive and times non-negative".to_string());
                d
            })
        }
    };

    let c = dto.controller;
    let table = match &c.phase_table {
        None => standard_phase_table(),
        Some(f) => {
            let text = cx.read(f)?;
            parse_phase_table(&text).map_err(|e| LoadError::parse(&dir.join(f), e.to_string()))?
        }
    };
    let mut cc = ControllerConfig::new(NodeId(c.id), table);
    cc.state_period = cx.duration_ms("controller.state_period_ms", c.state_period_ms, cc.state_period);
    cc.advertising_interval = cx.duration_ms(
        "controller.advertising_interval_ms",
        c.advertising_interval_ms,
        cc.advertising_interval,
    );
    cc.adv_delay_max = cx.duration_ms("controller.adv_delay_max_ms", c.adv_delay_max_ms, cc.adv_delay_max);
    cc.state_periods = c.state_periods_ms.map(|v| {
        v.into_iter()
            .map(|p| cx.duration_ms("controller.state_periods_ms", Some(p), Duration::ZERO))
            .collect()
    });
    let controller = ControllerSpec {
        trajectory: cx.trajectory("controller", c.position, c.trajectory),
        config: cc,
    };

    let mut retransmitters = Vec::new();
    for r in dto.retransmitter {
        let who = format!("retransmitter {}", r.id);
        let mut rc = RetransmitterConfig::new(NodeId(r.id), r.tag, NodeId(r.controller.unwrap_or(c.id)));
        rc.controller_period = cx.duration_ms(&who, r.controller_period_ms, controller.config.state_period);
        rc.advertising_interval =
            cx.duration_ms(&who, r.advertising_interval_ms, controller.config.advertising_interval);
        rc.adv_delay_max = cx.duration_ms(&who, r.adv_delay_max_ms, Duration::ZERO);
        let start = SimTime::ZERO + cx.duration_ms(&who, r.start_offset_ms, Duration::ZERO);
        retransmitters.push(RetransmitterSpec {
            trajectory: cx.trajectory(&who, r.position, r.trajectory),
            config: rc,
            start,
        });
    }

    let default_source = retransmitters.first().map_or(NodeId(c.id), |r| r.config.node_id);
    let (_, matrix) = build_standard_intersection();
    let mut receivers = Vec::new();
    for r in dto.receiver {
        let who = format!("receiver {}", r.id);
        let movement = match &r.movement {
            None => MovementId::Vehicle(2),
            Some(toml::Value::Integer(n)) => u8::try_from(*n).map(MovementId::Vehicle).unwrap_or_else(|_| {
                cx.errors.push(format!("{who}: invalid movement {n}"));
                MovementId::Vehicle(2)
            }),
            Some(toml::Value::String(s)) => s.parse().unwrap_or_else(|e: String| {
                cx.errors.push(format!("{who}: {e}"));
                MovementId::Vehicle(2)
            }),
            Some(other) => {
                cx.errors.push(format!("{who}: invalid movement {other}"));
                MovementId::Vehicle(2)
            }
        };
        let mut rc = ReceiverConfig::new(NodeId(r.id), movement);
        rc.staleness_timeout = cx.duration_ms(&who, r.staleness_timeout_ms, rc.staleness_timeout);
        let interval = cx.duration_ms(&who, r.scan_interval_ms, rc.scan.interval);
        let duty = r.duty_cycle.unwrap_or(1.0);
        match ScanGate::with_duty_cycle(duty, interval) {
            Ok(mut gate) => {
                gate.offset = cx.duration_ms(&who, r.scan_offset_ms, Duration::ZERO);
                rc.scan = gate;
            }
            Err(_) => cx.errors.push(format!("{who}: duty_cycle {duty} must lie in (0, 1]")),
        }
        receivers.push(ReceiverSpec {
            trajectory: cx.trajectory(&who, r.position, r.trajectory),
            listens_to: r.listens_to.map_or(default_source, NodeId),
            config: rc,
        });
    }

    let scenario = Scenario {
        duration,
        seed: dto.run.seed,
        matrix,
        controller,
        retransmitters,
        receivers,
        channel,
        link_overrides: overrides,
        timing,
    };
    if let Err(ScenarioError::Invalid(more)) = scenario.validate() {
        cx.errors.extend(more);
    }
    if !cx.errors.is_empty() {
        return Err(ScenarioError::Invalid(cx.errors).into());
    }
    Ok(ScenarioFile {
        scenario,
        sweep: dto.sweep.map(|s| SweepSpec {
            parameter: s.parameter,
            values: s.values,
        }),
    })
}
