//! Distance-dependent packet delivery and node movement.

use rand::Rng;
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("negative distance {0} m")]
    NegativeDistance(f64),
    #[error("time {t} precedes trajectory start {start}")]
    BeforeStart { t: SimTime, start: SimTime },
    #[error("invalid PSR curve: {0}")]
    InvalidCurve(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Packet success rate as a function of link distance.
#[derive(Debug, Clone, PartialEq)]
pub enum PsrCurve {
    /// `p_max * (1 + e^(-k*d_mid)) / (1 + e^(k*(d - d_mid)))`, which equals
    /// `p_max` at zero distance and falls off around `d_mid`.
    Logistic { p_max: f64, d_mid: f64, steepness: f64 },
    /// Linear interpolation between `(distance, psr)` knots, clamped at the ends.
    Table(Vec<(f64, f64)>),
}

impl Default for PsrCurve {
    /// Calibrated so the link is clean well past 37 m, stays above 0.9 at
    /// 60 m and is dead beyond 100 m.
    fn default() -> Self {
        PsrCurve::Logistic {
            p_max: 1.0,
            d_mid: 68.0,
            steepness: 0.3,
        }
    }
}

impl PsrCurve {
    /// Same success probability at every distance.
    pub fn constant(p: f64) -> PsrCurve {
        PsrCurve::Table(vec![(0.0, p)])
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidCurve(m.to_string()));
        match self {
            PsrCurve::Logistic {
                p_max,
                d_mid,
                steepness,
            } => {
                if !(*p_max > 0.0 && *p_max <= 1.0) {
                    return bad("p_max must lie in (0, 1]");
                }
                if !d_mid.is_finite() || !steepness.is_finite() || *steepness < 0.0 {
                    return bad("d_mid must be finite and steepness non-negative");
                }
            }
            PsrCurve::Table(knots) => {
                if knots.is_empty() {
                    return bad("table needs at least one knot");
                }
                for (d, p) in knots {
                    if !d.is_finite() || *d < 0.0 || !(0.0..=1.0).contains(p) {
                        return bad("knots need distance >= 0 and psr in [0, 1]");
                    }
                }
                for w in knots.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return bad("knot distances must be strictly increasing");
                    }
                    if w[1].1 > w[0].1 {
                        return bad("psr must not increase with distance");
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads whitespace-delimited `distance_m psr` rows; `#` starts a comment.
    pub fn parse_table(text: &str) -> Result<PsrCurve, ChannelError> {
        let mut knots = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ChannelError::Parse { line: idx + 1, message };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(err(format!("expected 2 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number `{s}`")));
            knots.push((num(cols[0])?, num(cols[1])?));
        }
        let curve = PsrCurve::Table(knots);
        curve.validate()?;
        Ok(curve)
    }
}

pub fn psr_at(curve: &PsrCurve, distance: f64) -> Result<f64, ChannelError> {
    if distance.is_nan() || distance < 0.0 {
        return Err(ChannelError::NegativeDistance(distance));
    }
    let p = match curve {
        PsrCurve::Logistic {
            p_max,
            d_mid,
            steepness,
        } => {
            let norm = 1.0 + (-steepness * d_mid).exp();
            p_max * norm / (1.0 + (steepness * (distance - d_mid)).exp())
        }
        PsrCurve::Table(knots) => interpolate(knots, distance),
    };
    Ok(p.clamp(0.0, 1.0))
}

fn interpolate(knots: &[(f64, f64)], d: f64) -> f64 {
    let Some(&(first_d, first_p)) = knots.first() else {
        return 0.0;
    };
    if d <= first_d {
        return first_p;
    }
    for w in knots.windows(2) {
        let ((d0, p0), (d1, p1)) = (w[0], w[1]);
        if d <= d1 {
            return p0 + (p1 - p0) * (d - d0) / (d1 - d0);
        }
    }
    knots.last().map_or(0.0, |k| k.1)
}

/// One Bernoulli draw against the PSR at the distance between the two
/// positions. Consumes exactly one value from `rng`.
pub fn deliver<R: Rng + ?Sized>(curve: &PsrCurve, tx: Position, rx: Position, rng: &mut R) -> bool {
    let p = psr_at(curve, tx.distance(rx)).unwrap_or(0.0);
    rng.random::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Static(Position),
    Linear {
        start: Position,
        /// m/s
        velocity: (f64, f64),
        start_time: SimTime,
    },
}

impl Trajectory {
    pub fn start_time(&self) -> SimTime {
        match self {
            Trajectory::Static(_) => SimTime::ZERO,
            Trajectory::Linear { start_time, .. } => *start_time,
        }
    }

    /// Position at `t`, holding the start point for times before the start.
    pub fn position_clamped(&self, t: SimTime) -> Position {
        position_at(self, t.max(self.start_time())).unwrap_or_default()
    }
}

pub fn position_at(traj: &Trajectory, t: SimTime) -> Result<Position, ChannelError> {
    match *traj {
        Trajectory::Static(p) => Ok(p),
        Trajectory::Linear {
            start,
            velocity,
            start_time,
        } => {
            if t < start_time {
                return Err(ChannelError::BeforeStart { t, start: start_time });
            }
            let dt = (t - start_time).as_secs_f64();
            Ok(Position::new(start.x + velocity.0 * dt, start.y + velocity.1 * dt))
        }
    }
}
