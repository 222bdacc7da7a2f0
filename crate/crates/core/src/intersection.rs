//! Four-way intersection model: movement numbering, the conflict/yield
//! relation between movements and the 13-state phase table.
//!
//! Geometry used by the authored conflict matrix (right-hand traffic):
//!
//! * Vehicle approaches are grouped as N→S (5, 2, 12), S→N (1, 6, 16),
//!   E→W (7, 4, 14) and W→E (3, 8, 18), listed as left, through, right.
//! * Crosswalk P2 spans the east leg, P6 the west leg, P4 the south leg and
//!   P8 the north leg. P2/P6 run parallel to the major street (2 and 6),
//!   P4/P8 parallel to the minor street (4 and 8).
//!
//! Every vehicle path is a chord between two points on a circle around the
//! junction (inbound and outbound lane of each leg). Two paths conflict when
//! their chords cross or merge into the same outbound lane. Left turns yield
//! to the opposing through and right movements; turning vehicles yield to the
//! crosswalk on the leg they exit through. Anything entering over a crosswalk,
//! or going straight through one, is a hard conflict with it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntersectionError {
    #[error("phase table is empty")]
    EmptyTable,
    #[error("state {state}: unknown movement {movement}")]
    UnknownMovement { state: u8, movement: MovementId },
    #[error("state {state}: no color for movement {movement}")]
    MissingMovement { state: u8, movement: MovementId },
    #[error("movement {0} is not part of this intersection")]
    NotInIntersection(MovementId),
    #[error("state id {0} outside 1..=13")]
    StateOutOfRange(u32),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Movement number: `5` for vehicle movement five, `P2` for pedestrian crossing two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MovementId {
    Vehicle(u8),
    Pedestrian(u8),
}

impl fmt::Display for MovementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MovementId::Vehicle(n) => write!(f, "{n}"),
            MovementId::Pedestrian(n) => write!(f, "P{n}"),
        }
    }
}

impl FromStr for MovementId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (ped, digits) = match s.strip_prefix(['P', 'p']) {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let n: u8 = digits.parse().map_err(|_| format!("invalid movement id `{s}`"))?;
        Ok(if ped {
            MovementId::Pedestrian(n)
        } else {
            MovementId::Vehicle(n)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Leg {
    North,
    East,
    South,
    West,
}

impl Leg {
    fn index(self) -> u8 {
        match self {
            Leg::North => 0,
            Leg::East => 1,
            Leg::South => 2,
            Leg::West => 3,
        }
    }

    fn from_index(i: u8) -> Leg {
        match i % 4 {
            0 => Leg::North,
            1 => Leg::East,
            2 => Leg::South,
            _ => Leg::West,
        }
    }

    pub fn opposite(self) -> Leg {
        Leg::from_index(self.index() + 2)
    }

    /// Next leg clockwise (N, E, S, W).
    fn clockwise(self) -> Leg {
        Leg::from_index(self.index() + 1)
    }

    fn counter_clockwise(self) -> Leg {
        Leg::from_index(self.index() + 3)
    }

    // Positions on the circle: inbound lane then outbound lane, clockwise.
    fn inbound_point(self) -> u8 {
        2 * self.index()
    }

    fn outbound_point(self) -> u8 {
        2 * self.index() + 1
    }
}

/// Direction of travel of a vehicle approach, named by where it comes from
/// and where it heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Approach {
    NorthToSouth,
    SouthToNorth,
    EastToWest,
    WestToEast,
}

impl Approach {
    pub fn entry(self) -> Leg {
        match self {
            Approach::NorthToSouth => Leg::North,
            Approach::SouthToNorth => Leg::South,
            Approach::EastToWest => Leg::East,
            Approach::WestToEast => Leg::West,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::NorthToSouth => "N→S",
            Approach::SouthToNorth => "S→N",
            Approach::EastToWest => "E→O",
            Approach::WestToEast => "O→E",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MovementKind {
    VehicleThrough,
    VehicleLeft,
    VehicleRightPermitted,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MovementPath {
    Vehicle { approach: Approach, exit: Leg },
    Crosswalk(Leg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Movement {
    pub id: MovementId,
    pub kind: MovementKind,
    pub path: MovementPath,
}

impl Movement {
    /// Vehicle movement whose kind follows the numbering rules: odd numbers
    /// are left turns, even numbers up to 8 are throughs and numbers above 10
    /// are permitted right turns.
    pub fn vehicle(number: u8, approach: Approach) -> Movement {
        let kind = if number > 10 {
            MovementKind::VehicleRightPermitted
        } else if number % 2 == 1 {
            MovementKind::VehicleLeft
        } else {
            MovementKind::VehicleThrough
        };
        let entry = approach.entry();
        let exit = match kind {
            MovementKind::VehicleThrough => entry.opposite(),
            MovementKind::VehicleLeft => entry.clockwise(),
            _ => entry.counter_clockwise(),
        };
        Movement {
            id: MovementId::Vehicle(number),
            kind,
            path: MovementPath::Vehicle { approach, exit },
        }
    }

    pub fn pedestrian(number: u8, leg: Leg) -> Movement {
        Movement {
            id: MovementId::Pedestrian(number),
            kind: MovementKind::Pedestrian,
            path: MovementPath::Crosswalk(leg),
        }
    }

    pub fn approach(&self) -> Option<Approach> {
        match self.path {
            MovementPath::Vehicle { approach, .. } => Some(approach),
            MovementPath::Crosswalk(_) => None,
        }
    }

    pub fn is_pedestrian(&self) -> bool {
        self.kind == MovementKind::Pedestrian
    }
}

/// Relation of movement `a` to movement `b`, read as "a ... b".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Compatible,
    Conflict,
    /// `a` may be green alongside `b` but must give way to it.
    Yields,
    /// `b` must give way to `a`.
    HasPriority,
}

impl Relation {
    fn reversed(self) -> Relation {
        match self {
            Relation::Yields => Relation::HasPriority,
            Relation::HasPriority => Relation::Yields,
            other => other,
        }
    }
}

fn chords_cross(a: (u8, u8), b: (u8, u8)) -> bool {
    let (lo, hi) = (a.0.min(a.1), a.0.max(a.1));
    let inside = |x: u8| lo < x && x < hi;
    inside(b.0) != inside(b.1)
}

fn classify(a: &Movement, b: &Movement) -> Relation {
    use MovementPath::*;

    if a.id == b.id {
        return Relation::Compatible;
    }
    match (a.path, b.path) {
        (Crosswalk(_), Crosswalk(_)) => Relation::Compatible,
        (Crosswalk(_), Vehicle { .. }) => classify(b, a).reversed(),
        (Vehicle { approach, exit }, Crosswalk(leg)) => {
            if approach.entry() == leg {
                Relation::Conflict
            } else if exit == leg {
                if a.kind == MovementKind::VehicleThrough {
                    Relation::Conflict
                } else {
                    Relation::Yields
                }
            } else {
                Relation::Compatible
            }
        }
        (
            Vehicle {
                approach: ap_a,
                exit: ex_a,
            },
            Vehicle {
                approach: ap_b,
                exit: ex_b,
            },
        ) => {
            let (in_a, in_b) = (ap_a.entry(), ap_b.entry());
            if in_a == in_b {
                return Relation::Compatible;
            }
            let merge = ex_a == ex_b;
            let cross = !merge
                && chords_cross(
                    (in_a.inbound_point(), ex_a.outbound_point()),
                    (in_b.inbound_point(), ex_b.outbound_point()),
                );
            if !merge && !cross {
                return Relation::Compatible;
            }
            let opposing = in_a.opposite() == in_b;
            let permitted_left = |left: &Movement, other: &Movement| {
                opposing && left.kind == MovementKind::VehicleLeft && other.kind != MovementKind::VehicleLeft
            };
            if permitted_left(a, b) {
                Relation::Yields
            } else if permitted_left(b, a) {
                Relation::HasPriority
            } else {
                Relation::Conflict
            }
        }
    }
}

/// Pairwise relation over a fixed set of movements.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictMatrix {
    movements: Vec<Movement>,
    relations: BTreeMap<(MovementId, MovementId), Relation>,
}

impl ConflictMatrix {
    /// Derives every pairwise relation from the movement geometry.
    pub fn from_movements(movements: Vec<Movement>) -> ConflictMatrix {
        let mut relations = BTreeMap::new();
        for a in &movements {
            for b in &movements {
                relations.insert((a.id, b.id), classify(a, b));
            }
        }
        ConflictMatrix { movements, relations }
    }

    pub fn movements(&self) -> &[Movement] {
        &self.movements
    }

    pub fn movement(&self, id: MovementId) -> Option<&Movement> {
        self.movements.iter().find(|m| m.id == id)
    }

    pub fn contains(&self, id: MovementId) -> bool {
        self.movement(id).is_some()
    }

    pub fn relation(&self, a: MovementId, b: MovementId) -> Option<Relation> {
        self.relations.get(&(a, b)).copied()
    }

    pub fn is_conflict(&self, a: MovementId, b: MovementId) -> bool {
        self.relation(a, b) == Some(Relation::Conflict)
    }

    /// Pedestrian movements that `id` has to give way to.
    pub fn yields_to_pedestrians(&self, id: MovementId) -> impl Iterator<Item = MovementId> + '_ {
        self.movements
            .iter()
            .filter(move |m| m.is_pedestrian() && self.relation(id, m.id) == Some(Relation::Yields))
            .map(|m| m.id)
    }
}

/// Column order of the standard phase table.
pub const STANDARD_COLUMNS: [MovementId; 16] = [
    MovementId::Pedestrian(2),
    MovementId::Pedestrian(4),
    MovementId::Pedestrian(6),
    MovementId::Pedestrian(8),
    MovementId::Vehicle(5),
    MovementId::Vehicle(2),
    MovementId::Vehicle(12),
    MovementId::Vehicle(1),
    MovementId::Vehicle(6),
    MovementId::Vehicle(16),
    MovementId::Vehicle(7),
    MovementId::Vehicle(4),
    MovementId::Vehicle(14),
    MovementId::Vehicle(3),
    MovementId::Vehicle(8),
    MovementId::Vehicle(18),
];

/// The twelve vehicle and four pedestrian movements of the standard
/// intersection, together with their conflict matrix.
pub fn build_standard_intersection() -> (Vec<Movement>, ConflictMatrix) {
    use Approach::*;
    let mut movements = Vec::with_capacity(16);
    for (numbers, approach) in [
        ([5, 2, 12], NorthToSouth),
        ([1, 6, 16], SouthToNorth),
        ([7, 4, 14], EastToWest),
        ([3, 8, 18], WestToEast),
    ] {
        movements.extend(numbers.iter().map(|&n| Movement::vehicle(n, approach)));
    }
    movements.push(Movement::pedestrian(2, Leg::East));
    movements.push(Movement::pedestrian(4, Leg::South));
    movements.push(Movement::pedestrian(6, Leg::West));
    movements.push(Movement::pedestrian(8, Leg::North));

    let matrix = ConflictMatrix::from_movements(movements.clone());
    (movements, matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalColor {
    Red,
    Green,
    Yellow,
}

impl SignalColor {
    pub fn code(self) -> char {
        match self {
            SignalColor::Red => 'R',
            SignalColor::Green => 'G',
            SignalColor::Yellow => 'Y',
        }
    }

    pub fn from_code(c: &str) -> Option<SignalColor> {
        match c {
            "R" | "r" => Some(SignalColor::Red),
            "G" | "g" => Some(SignalColor::Green),
            "Y" | "y" => Some(SignalColor::Yellow),
            _ => None,
        }
    }

    /// Yellow still allows a movement inside the junction, so it counts.
    pub fn is_active(self) -> bool {
        self != SignalColor::Red
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseState {
    pub state_id: u8,
    pub colors: BTreeMap<MovementId, SignalColor>,
}

impl PhaseState {
    pub fn color(&self, id: MovementId) -> Option<SignalColor> {
        self.colors.get(&id).copied()
    }

    pub fn active(&self) -> impl Iterator<Item = MovementId> + '_ {
        self.colors.iter().filter(|(_, c)| c.is_active()).map(|(id, _)| *id)
    }
}

/// The 13 temporal states of the standard intersection in cyclic order.
pub fn standard_phase_table() -> Vec<PhaseState> {
    use MovementId::{Pedestrian as P, Vehicle as V};
    // (green, yellow); everything else red
    let rows: [(&[MovementId], &[MovementId]); 13] = [
        (&[V(5), V(1)], &[]),
        (&[V(1)], &[V(5)]),
        (&[P(6), V(1), V(6), V(16)], &[]),
        (&[P(6), V(6), V(16)], &[V(1)]),
        (&[P(2), P(6), V(5), V(2), V(12), V(6), V(16)], &[]),
        (&[P(2), P(6)], &[V(2), V(12), V(6), V(16)]),
        (&[V(7), V(3)], &[]),
        (&[V(3)], &[V(7)]),
        (&[V(3), V(8), V(18)], &[]),
        (&[V(8), V(18)], &[V(3)]),
        (&[V(4), V(14), V(8), V(18)], &[]),
        (&[P(4), P(8), V(4), V(14), V(8), V(18)], &[]),
        (&[P(4), P(8)], &[V(4), V(14), V(8), V(18)]),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (green, yellow))| {
            let colors = STANDARD_COLUMNS
                .iter()
                .map(|&m| {
                    let c = if green.contains(&m) {
                        SignalColor::Green
                    } else if yellow.contains(&m) {
                        SignalColor::Yellow
                    } else {
                        SignalColor::Red
                    };
                    (m, c)
                })
                .collect();
            PhaseState {
                state_id: i as u8 + 1,
                colors,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConflictFinding {
    pub state_id: u8,
    pub a: MovementId,
    pub b: MovementId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<ConflictFinding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Lists every state in which two hard-conflicting movements are both
/// non-red. Each unordered pair is reported once per state.
pub fn validate_phase_table(
    table: &[PhaseState],
    matrix: &ConflictMatrix,
) -> Result<ValidationReport, IntersectionError> {
    if table.is_empty() {
        return Err(IntersectionError::EmptyTable);
    }
    for state in table {
        if let Some(unknown) = state.colors.keys().find(|m| !matrix.contains(**m)) {
            return Err(IntersectionError::UnknownMovement {
                state: state.state_id,
                movement: *unknown,
            });
        }
        if let Some(missing) = matrix.movements().iter().find(|m| !state.colors.contains_key(&m.id)) {
            return Err(IntersectionError::MissingMovement {
                state: state.state_id,
                movement: missing.id,
            });
        }
    }

    let mut report = ValidationReport::default();
    for state in table {
        let active: Vec<MovementId> = state.active().collect();
        for (i, &a) in active.iter().enumerate() {
            for &b in &active[i + 1..] {
                if matrix.is_conflict(a, b) {
                    report.findings.push(ConflictFinding {
                        state_id: state.state_id,
                        a,
                        b,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// What a user device shows for one movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DisplayState {
    Red,
    Green,
    Yellow,
    GreenYieldCrosswalk,
    CautionAnomaly,
}

impl DisplayState {
    pub fn as_str(self) -> &'static str {
        match self {
            DisplayState::Red => "red",
            DisplayState::Green => "green",
            DisplayState::Yellow => "yellow",
            DisplayState::GreenYieldCrosswalk => "green-yield-crosswalk",
            DisplayState::CautionAnomaly => "caution-anomaly",
        }
    }
}

impl fmt::Display for DisplayState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisplayState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "red" => DisplayState::Red,
            "green" => DisplayState::Green,
            "yellow" => DisplayState::Yellow,
            "green-yield-crosswalk" => DisplayState::GreenYieldCrosswalk,
            "caution-anomaly" => DisplayState::CautionAnomaly,
            other => return Err(format!("unknown display state `{other}`")),
        })
    }
}

pub fn display_state_for(
    movement: MovementId,
    phase: &PhaseState,
    matrix: &ConflictMatrix,
    link_ok: bool,
) -> Result<DisplayState, IntersectionError> {
    if !matrix.contains(movement) {
        return Err(IntersectionError::NotInIntersection(movement));
    }
    let color = phase.color(movement).ok_or(IntersectionError::MissingMovement {
        state: phase.state_id,
        movement,
    })?;
    if !link_ok {
        return Ok(DisplayState::CautionAnomaly);
    }
    Ok(match color {
        SignalColor::Red => DisplayState::Red,
        SignalColor::Yellow => DisplayState::Yellow,
        SignalColor::Green => {
            let crossing_green = matrix
                .yields_to_pedestrians(movement)
                .any(|p| phase.color(p).is_some_and(SignalColor::is_active));
            if crossing_green {
                DisplayState::GreenYieldCrosswalk
            } else {
                DisplayState::Green
            }
        }
    })
}

/// Intersection geometry plus the phase schedule it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub matrix: ConflictMatrix,
    pub phases: Vec<PhaseState>,
}

impl Intersection {
    pub fn standard() -> Intersection {
        let (_, matrix) = build_standard_intersection();
        Intersection {
            matrix,
            phases: standard_phase_table(),
        }
    }

    pub fn phase(&self, state_id: u8) -> Option<&PhaseState> {
        self.phases.iter().find(|p| p.state_id == state_id)
    }
}

/// Parses the plain-text phase matrix format.
///
/// ```text
/// # comments and blank lines are ignored
/// state P2 P4 P6 P8  5  2 12 ...
///     1  R  R  R  R  G  R  R ...
/// ```
///
/// The header row names the movement columns; each following row gives a
/// state id (1..=13) and one color code (`R`, `G`, `Y`) per column.
pub fn parse_phase_table(text: &str) -> Result<Vec<PhaseState>, IntersectionError> {
    let mut columns: Option<Vec<MovementId>> = None;
    let mut states = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let first = fields.next().unwrap_or_default();
        let err = |message: String| IntersectionError::Parse { line: line_no, message };
        match &columns {
            None => {
                if !first.eq_ignore_ascii_case("state") {
                    return Err(err("expected header row starting with `state`".into()));
                }
                let cols = fields
                    .map(|f| f.parse::<MovementId>().map_err(&err))
                    .collect::<Result<Vec<_>, _>>()?;
                if cols.is_empty() {
                    return Err(err("header names no movements".into()));
                }
                columns = Some(cols);
            }
            Some(cols) => {
                let state_id: u32 = first.parse().map_err(|_| err(format!("invalid state id `{first}`")))?;
                if !(1..=13).contains(&state_id) {
                    return Err(IntersectionError::StateOutOfRange(state_id));
                }
                let codes: Vec<&str> = fields.collect();
                if codes.len() != cols.len() {
                    return Err(err(format!(
                        "expected {} color codes, found {}",
                        cols.len(),
                        codes.len()
                    )));
                }
                let colors = cols
                    .iter()
                    .zip(codes)
                    .map(|(m, code)| {
                        SignalColor::from_code(code)
                            .map(|c| (*m, c))
                            .ok_or_else(|| err(format!("unknown color code `{code}`")))
                    })
                    .collect::<Result<BTreeMap<_, _>, _>>()?;
                states.push(PhaseState {
                    state_id: state_id as u8,
                    colors,
                });
            }
        }
    }
    if states.is_empty() {
        return Err(IntersectionError::EmptyTable);
    }
    Ok(states)
}

/// Writes a table in the format read by [`parse_phase_table`].
pub fn format_phase_table(table: &[PhaseState], columns: &[MovementId]) -> String {
    let mut out = String::from("state");
    for c in columns {
        out.push_str(&format!(" {:>3}", c.to_string()));
    }
    out.push('\n');
    for state in table {
        out.push_str(&format!("{:>5}", state.state_id));
        for c in columns {
            let code = state.color(*c).map_or('?', SignalColor::code);
            out.push_str(&format!(" {code:>3}"));
        }
        out.push('\n');
    }
    out
}
