//! Coupled anharmonic oscillator: potential, Hamiltonian and symplectic
//! time stepping.
//!
//! The action family is
//!
//! ```text
//! S = ∫ dt ½ m (ẋ² + ẏ²) − V(x, y)
//! V = v0 + v2 (x² + y²) + v22 x² y² + v4 (x⁴ + y⁴)
//! ```
//!
//! The classical system has `v0 = v4 = 0`; the quantum action carries all
//! five parameters. Time evolution uses position-Verlet leapfrog as the base
//! map and a Yoshida triple composition for fourth order. Both maps are
//! symplectic and time-reversible.

use std::fmt;

use crate::error::{Error, Result};

/// The five parameters of an action in the coupled-oscillator family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParams {
    pub mass: f64,
    pub v0: f64,
    pub v2: f64,
    pub v22: f64,
    pub v4: f64,
}

impl ActionParams {
    /// Classical action with the given coupling: `m = 1, v0 = 0, v2 = 0.5, v4 = 0`.
    pub const fn classical(v22: f64) -> Self {
        ActionParams {
            mass: 1.0,
            v0: 0.0,
            v2: 0.5,
            v22,
            v4: 0.0,
        }
    }

    /// Fitted quantum action of the `v22 = 0.25` system at transition time 4.5.
    pub const fn quantum() -> Self {
        ActionParams {
            mass: 0.976,
            v0: 1.3992,
            v2: 0.5684,
            v22: 0.2469,
            v4: -0.00067,
        }
    }

    /// Isotropic harmonic oscillator with unit frequency.
    pub const fn harmonic() -> Self {
        Self::classical(0.0)
    }

    pub fn new(mass: f64, v0: f64, v2: f64, v22: f64, v4: f64) -> Result<Self> {
        let p = ActionParams {
            mass,
            v0,
            v2,
            v22,
            v4,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.v0, self.v2, self.v22, self.v4];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite action parameter".into()));
        }
        if self.mass <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        if self.v2 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "v2 must be positive (confining), got {}",
                self.v2
            )));
        }
        Ok(())
    }

    /// Parameters as `[m, v0, v2, v22, v4]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.mass, self.v0, self.v2, self.v22, self.v4]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        ActionParams {
            mass: a[0],
            v0: a[1],
            v2: a[2],
            v22: a[3],
            v4: a[4],
        }
    }

    /// Harmonic frequency of the quadratic part, `√(2 v2 / m)`.
    pub fn omega(&self) -> f64 {
        (2.0 * self.v2 / self.mass).sqrt()
    }

    #[inline]
    pub fn potential(&self, x: f64, y: f64) -> f64 {
        self.v0 + self.shell_potential(x, y)
    }

    /// `V − v0`, the part of the potential that shapes the dynamics.
    #[inline]
    pub fn shell_potential(&self, x: f64, y: f64) -> f64 {
        let x2 = x * x;
        let y2 = y * y;
        self.v2 * (x2 + y2) + self.v22 * x2 * y2 + self.v4 * (x2 * x2 + y2 * y2)
    }

    /// `(∂V/∂x, ∂V/∂y)`.
    #[inline]
    pub fn grad_potential(&self, x: f64, y: f64) -> (f64, f64) {
        let x2 = x * x;
        let y2 = y * y;
        (
            x * (2.0 * self.v2 + 2.0 * self.v22 * y2 + 4.0 * self.v4 * x2),
            y * (2.0 * self.v2 + 2.0 * self.v22 * x2 + 4.0 * self.v4 * y2),
        )
    }

    /// Hessian of `V` as `(V_xx, V_xy, V_yy)`.
    #[inline]
    pub fn hessian(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let x2 = x * x;
        let y2 = y * y;
        (
            2.0 * self.v2 + 2.0 * self.v22 * y2 + 12.0 * self.v4 * x2,
            4.0 * self.v22 * x * y,
            2.0 * self.v2 + 2.0 * self.v22 * x2 + 12.0 * self.v4 * y2,
        )
    }

    pub fn kinetic_energy(&self, s: &PhaseState) -> f64 {
        (s.px * s.px + s.py * s.py) / (2.0 * self.mass)
    }

    /// `H = (px² + py²) / 2m + V`, including the `v0` offset.
    pub fn total_energy(&self, s: &PhaseState) -> f64 {
        self.kinetic_energy(s) + self.potential(s.x, s.y)
    }

    /// Dynamical energy `H − v0`; energy shells are labelled by this value.
    pub fn shell_energy(&self, s: &PhaseState) -> f64 {
        self.kinetic_energy(s) + self.shell_potential(s.x, s.y)
    }
}

impl fmt::Display for ActionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m={} v0={} v2={} v22={} v4={}",
            self.mass, self.v0, self.v2, self.v22, self.v4
        )
    }
}

/// A point `(x, y, px, py)` of the 4-D phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseState {
    pub x: f64,
    pub y: f64,
    pub px: f64,
    pub py: f64,
}

impl PhaseState {
    pub const fn new(x: f64, y: f64, px: f64, py: f64) -> Self {
        PhaseState { x, y, px, py }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.px.is_finite() && self.py.is_finite()
    }

    /// Same position, momenta negated. Integrating a reversed state forward
    /// retraces the original orbit.
    pub fn reversed(&self) -> Self {
        PhaseState::new(self.x, self.y, -self.px, -self.py)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.px, self.py]
    }

    pub fn distance(&self, other: &PhaseState) -> f64 {
        let d = [
            self.x - other.x,
            self.y - other.y,
            self.px - other.px,
            self.py - other.py,
        ];
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Second-order position Verlet.
    Leapfrog,
    /// Fourth-order Yoshida composition of three leapfrog steps.
    #[default]
    Yoshida4,
}

impl Scheme {
    /// Fractions of the step taken by each leapfrog sub-step.
    pub fn weights(self) -> &'static [f64] {
        match self {
            Scheme::Leapfrog => &[1.0],
            Scheme::Yoshida4 => &YOSHIDA4,
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Scheme::Leapfrog => 2,
            Scheme::Yoshida4 => 4,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leapfrog" | "2" => Ok(Scheme::Leapfrog),
            "yoshida4" | "4" => Ok(Scheme::Yoshida4),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Leapfrog => "leapfrog",
            Scheme::Yoshida4 => "yoshida4",
        })
    }
}

// w1 = 1 / (2 − 2^(1/3)), w0 = −2^(1/3) w1.
const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_5;
const YOSHIDA4: [f64; 3] = [YOSHIDA_W1, YOSHIDA_W0, YOSHIDA_W1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub step: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: 1e-3,
            scheme: Scheme::Yoshida4,
        }
    }
}

impl IntegratorConfig {
    pub fn new(step: f64, scheme: Scheme) -> Result<Self> {
        let cfg = IntegratorConfig { step, scheme };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "integrator step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }

    /// Number of steps and the adjusted step size that land exactly on `t_end`.
    pub fn steps_for(&self, t_end: f64) -> (u64, f64) {
        let n = (t_end / self.step - 1e-9).ceil().max(1.0) as u64;
        (n, t_end / n as f64)
    }
}

/// One position-Verlet sub-step of size `h` (drift ½, kick, drift ½).
#[inline(always)]
fn leapfrog(params: &ActionParams, s: &mut PhaseState, h: f64, inv_m: f64) {
    let half = 0.5 * h * inv_m;
    s.x += half * s.px;
    s.y += half * s.py;
    let (gx, gy) = params.grad_potential(s.x, s.y);
    s.px -= h * gx;
    s.py -= h * gy;
    s.x += half * s.px;
    s.y += half * s.py;
}

/// Advance `s` in place by one step of size `h` without validation.
#[inline]
pub(crate) fn advance(params: &ActionParams, s: &mut PhaseState, h: f64, scheme: Scheme) {
    let inv_m = 1.0 / params.mass;
    for &w in scheme.weights() {
        leapfrog(params, s, w * h, inv_m);
    }
}

/// Advance one step of size `cfg.step`.
pub fn step(params: &ActionParams, s: &PhaseState, cfg: &IntegratorConfig) -> Result<PhaseState> {
    cfg.validate()?;
    let mut next = *s;
    advance(params, &mut next, cfg.step, cfg.scheme);
    if !next.is_finite() {
        return Err(Error::BlowUp {
            time: cfg.step,
            state: next,
        });
    }
    Ok(next)
}

/// Integrate from `s0` over `[0, t_end]`. The step is shrunk slightly so the
/// final step lands exactly on `t_end`.
pub fn integrate(
    params: &ActionParams,
    s0: &PhaseState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<PhaseState> {
    integrate_with(params, s0, t_end, cfg, |_, _| {})
}

/// Like [`integrate`], calling `observe(t, state)` after every step.
pub fn integrate_with<F>(
    params: &ActionParams,
    s0: &PhaseState,
    t_end: f64,
    cfg: &IntegratorConfig,
    mut observe: F,
) -> Result<PhaseState>
where
    F: FnMut(f64, &PhaseState),
{
    cfg.validate()?;
    if t_end < 0.0 || !t_end.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "integration time must be non-negative, got {t_end}"
        )));
    }
    if t_end == 0.0 {
        return Ok(*s0);
    }
    let (n, h) = cfg.steps_for(t_end);
    let mut s = *s0;
    for k in 1..=n {
        advance(params, &mut s, h, cfg.scheme);
        // Checking every step costs more than the force evaluation.
        if k % 1024 == 0 || k == n {
            if !s.is_finite() {
                return Err(Error::BlowUp {
                    time: k as f64 * h,
                    state: s,
                });
            }
        }
        observe(k as f64 * h, &s);
    }
    Ok(s)
}
