//! Poincaré sections by oriented crossing detection and Hénon refinement.
//!
//! A crossing is flagged when `q − value` changes sign across one integrator
//! step with the requested orientation. The state before the crossing is then
//! carried onto the plane by a single Runge–Kutta step in which the section
//! coordinate `q` replaces time as the independent variable:
//!
//! ```text
//! dt/dq = m / p_q,   da/dq = p_a / p_q,   dp_q/dq = −m V_q / p_q,   dp_a/dq = −m V_a / p_q
//! ```

use std::fmt;

use crate::dynamics::{advance, ActionParams, IntegratorConfig, PhaseState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    X,
    Y,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            other => Err(Error::InvalidConfig(format!("unknown section axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

/// Required sign of the conjugate momentum at a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Direction::Positive),
            -1 => Ok(Direction::Negative),
            other => Err(Error::InvalidConfig(format!(
                "section direction must be +1 or -1, got {other}"
            ))),
        }
    }
}

/// The plane `coordinate = value`, crossed with momentum sign `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionSpec {
    pub coordinate: Axis,
    pub value: f64,
    pub direction: Direction,
}

impl Default for SectionSpec {
    fn default() -> Self {
        SectionSpec {
            coordinate: Axis::X,
            value: 0.0,
            direction: Direction::Positive,
        }
    }
}

impl SectionSpec {
    /// `[q, a, p_q, p_a]`: section coordinate, in-section coordinate, momenta.
    fn split(&self, s: &PhaseState) -> [f64; 4] {
        match self.coordinate {
            Axis::X => [s.x, s.y, s.px, s.py],
            Axis::Y => [s.y, s.x, s.py, s.px],
        }
    }

    fn offset(&self, s: &PhaseState) -> f64 {
        self.split(s)[0] - self.value
    }

    fn crosses(&self, before: f64, after: f64) -> bool {
        match self.direction {
            Direction::Positive => before < 0.0 && after >= 0.0,
            Direction::Negative => before > 0.0 && after <= 0.0,
        }
    }
}

/// One refined section point `(a, p_a)` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingPoint {
    pub a: f64,
    pub pa: f64,
    pub t: f64,
    /// Full phase-space state on the section.
    pub state: PhaseState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionResult {
    pub points: Vec<CrossingPoint>,
    /// The time budget ran out before the requested number of crossings.
    pub truncated: bool,
}

pub const DEFAULT_MAX_TIME: f64 = 1e6;

/// Derivative of `(t, a, p_q, p_a)` with respect to the section coordinate.
fn henon_rhs(params: &ActionParams, spec: &SectionSpec, q: f64, u: &[f64; 4]) -> [f64; 4] {
    let (_, a, pq, pa) = (u[0], u[1], u[2], u[3]);
    let (x, y) = match spec.coordinate {
        Axis::X => (q, a),
        Axis::Y => (a, q),
    };
    let (gx, gy) = params.grad_potential(x, y);
    let (gq, ga) = match spec.coordinate {
        Axis::X => (gx, gy),
        Axis::Y => (gy, gx),
    };
    let m = params.mass;
    [m / pq, pa / pq, -m * gq / pq, -m * ga / pq]
}

/// Carry `s` (at time `t`) onto the section with one RK4 step in `q`.
fn henon_step(params: &ActionParams, spec: &SectionSpec, s: &PhaseState, t: f64) -> CrossingPoint {
    let [q0, a, pq, pa] = spec.split(s);
    let dq = spec.value - q0;
    let u0 = [t, a, pq, pa];
    let add = |u: &[f64; 4], k: &[f64; 4], f: f64| {
        [u[0] + f * k[0], u[1] + f * k[1], u[2] + f * k[2], u[3] + f * k[3]]
    };
    let k1 = henon_rhs(params, spec, q0, &u0);
    let k2 = henon_rhs(params, spec, q0 + 0.5 * dq, &add(&u0, &k1, 0.5 * dq));
    let k3 = henon_rhs(params, spec, q0 + 0.5 * dq, &add(&u0, &k2, 0.5 * dq));
    let k4 = henon_rhs(params, spec, q0 + dq, &add(&u0, &k3, dq));
    let mut u = u0;
    for i in 0..4 {
        u[i] += dq / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let [t, a, pq, pa] = u;
    let state = match spec.coordinate {
        Axis::X => PhaseState::new(spec.value, a, pq, pa),
        Axis::Y => PhaseState::new(a, spec.value, pa, pq),
    };
    CrossingPoint { a, pa, t, state }
}

/// Refine a crossing bracketed by `prev` (time `t`) and the state one step
/// later. Near-grazing crossings are first approached with finer time steps
/// so the Hénon step never divides by a vanishing momentum.
fn refine(
    params: &ActionParams,
    spec: &SectionSpec,
    prev: &PhaseState,
    t: f64,
    h: f64,
    cfg: &IntegratorConfig,
) -> Option<CrossingPoint> {
    let [q, _, pq, _] = spec.split(prev);
    let speed = pq.abs() / params.mass;
    let mut start = *prev;
    let mut t0 = t;
    if speed * h < 4.0 * (q - spec.value).abs() || pq * spec.direction.sign() <= 0.0 {
        const SUB: u32 = 64;
        let sub = h / SUB as f64;
        let mut s = *prev;
        for i in 1..=SUB {
            let mut next = s;
            advance(params, &mut next, sub, cfg.scheme);
            if spec.crosses(spec.offset(&s), spec.offset(&next)) {
                start = s;
                t0 = t + (i - 1) as f64 * sub;
                break;
            }
            s = next;
        }
    }
    let point = henon_step(params, spec, &start, t0);
    let pq = spec.split(&point.state)[2];
    (pq * spec.direction.sign() > 0.0 && point.state.is_finite()).then_some(point)
}

/// The first `n` oriented crossings of the orbit through `s0`.
///
/// A start state lying exactly on the section with correctly signed momentum
/// is returned as crossing zero at `t = 0`.
pub fn poincare_map(
    params: &ActionParams,
    s0: &PhaseState,
    spec: &SectionSpec,
    n: usize,
    cfg: &IntegratorConfig,
    max_time: f64,
) -> Result<SectionResult> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one crossing".into()));
    }
    let h = cfg.step;
    let mut points = Vec::with_capacity(n);
    let [q0, _, pq0, _] = spec.split(s0);
    if q0 == spec.value && pq0 * spec.direction.sign() > 0.0 {
        points.push(CrossingPoint {
            a: spec.split(s0)[1],
            pa: spec.split(s0)[3],
            t: 0.0,
            state: *s0,
        });
    }
    let max_steps = (max_time / h).ceil() as u64;
    let mut s = *s0;
    let mut f = spec.offset(&s);
    let mut k = 0u64;
    while points.len() < n {
        if k >= max_steps {
            return Ok(SectionResult {
                points,
                truncated: true,
            });
        }
        let mut next = s;
        advance(params, &mut next, h, cfg.scheme);
        if !next.is_finite() {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * h,
                state: next,
            });
        }
        let f_next = spec.offset(&next);
        if spec.crosses(f, f_next) {
            if let Some(p) = refine(params, spec, &s, k as f64 * h, h, cfg) {
                points.push(p);
            }
        }
        s = next;
        f = f_next;
        k += 1;
    }
    Ok(SectionResult {
        points,
        truncated: false,
    })
}
