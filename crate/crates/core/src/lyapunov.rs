//! Largest finite-time Lyapunov exponent by tangent-flow integration with
//! periodic (Benettin) renormalization.
//!
//! The tangent vector is advanced with the exact linearization of the same
//! symplectic map that advances the orbit, so the pair `(state, tangent)` is
//! always evaluated at consistent linearization points.

use crate::dynamics::{ActionParams, IntegratorConfig, PhaseState};
use crate::error::{Error, Result};

/// A tangent vector `(δx, δy, δpx, δpy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentState {
    pub dx: f64,
    pub dy: f64,
    pub dpx: f64,
    pub dpy: f64,
}

impl TangentState {
    pub const fn new(dx: f64, dy: f64, dpx: f64, dpy: f64) -> Self {
        TangentState { dx, dy, dpx, dpy }
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dpx * self.dpx + self.dpy * self.dpy).sqrt()
    }

    fn scale(&mut self, f: f64) {
        self.dx *= f;
        self.dy *= f;
        self.dpx *= f;
        self.dpy *= f;
    }

    /// Unit vector along `self`, or an error for a zero / non-finite vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateTangent { norm: n });
        }
        let mut t = *self;
        t.scale(1.0 / n);
        Ok(t)
    }
}

impl Default for TangentState {
    fn default() -> Self {
        TangentState::new(1.0, 0.0, 0.0, 0.0)
    }
}

/// One finite-time Lyapunov measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtleRecord {
    pub initial: PhaseState,
    /// Shell energy `H − v0` of the initial state.
    pub energy: f64,
    pub horizon: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtleOptions {
    pub horizon: f64,
    /// Renormalize the tangent vector every this many steps.
    pub renorm_every: u64,
    pub direction: TangentState,
}

impl Default for FtleOptions {
    fn default() -> Self {
        FtleOptions {
            horizon: 20_000.0,
            renorm_every: 100,
            direction: TangentState::default(),
        }
    }
}

impl FtleOptions {
    pub fn with_horizon(horizon: f64) -> Self {
        FtleOptions {
            horizon,
            ..Default::default()
        }
    }
}

/// Linearization of the Hamiltonian flow field at `s`, acting on
/// `(δx, δy, δpx, δpy)`.
pub fn jacobian(params: &ActionParams, s: &PhaseState) -> [[f64; 4]; 4] {
    let inv_m = 1.0 / params.mass;
    let (vxx, vxy, vyy) = params.hessian(s.x, s.y);
    [
        [0.0, 0.0, inv_m, 0.0],
        [0.0, 0.0, 0.0, inv_m],
        [-vxx, -vxy, 0.0, 0.0],
        [-vxy, -vyy, 0.0, 0.0],
    ]
}

#[inline(always)]
fn leapfrog_tangent(
    params: &ActionParams,
    s: &mut PhaseState,
    t: &mut TangentState,
    h: f64,
    inv_m: f64,
) {
    let half = 0.5 * h * inv_m;
    s.x += half * s.px;
    s.y += half * s.py;
    t.dx += half * t.dpx;
    t.dy += half * t.dpy;
    let (gx, gy) = params.grad_potential(s.x, s.y);
    let (vxx, vxy, vyy) = params.hessian(s.x, s.y);
    s.px -= h * gx;
    s.py -= h * gy;
    t.dpx -= h * (vxx * t.dx + vxy * t.dy);
    t.dpy -= h * (vxy * t.dx + vyy * t.dy);
    s.x += half * s.px;
    s.y += half * s.py;
    t.dx += half * t.dpx;
    t.dy += half * t.dpy;
}

/// Advance orbit and tangent jointly by one step of size `h`.
#[inline]
pub fn advance_with_tangent(
    params: &ActionParams,
    s: &mut PhaseState,
    t: &mut TangentState,
    h: f64,
    cfg: &IntegratorConfig,
) {
    let inv_m = 1.0 / params.mass;
    for &w in cfg.scheme.weights() {
        leapfrog_tangent(params, s, t, w * h, inv_m);
    }
}

/// Largest finite-time Lyapunov exponent of the orbit through `s0`.
pub fn ftle(
    params: &ActionParams,
    s0: &PhaseState,
    cfg: &IntegratorConfig,
    opts: &FtleOptions,
) -> Result<FtleRecord> {
    cfg.validate()?;
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "Lyapunov horizon must be positive, got {}",
            opts.horizon
        )));
    }
    if opts.renorm_every == 0 {
        return Err(Error::InvalidConfig("renorm_every must be at least 1".into()));
    }
    let mut tangent = opts.direction.normalized()?;
    let (n, h) = cfg.steps_for(opts.horizon);
    let mut s = *s0;
    let mut log_growth = 0.0;
    let mut k = 0u64;
    while k < n {
        let chunk = opts.renorm_every.min(n - k);
        for _ in 0..chunk {
            advance_with_tangent(params, &mut s, &mut tangent, h, cfg);
        }
        k += chunk;
        let norm = tangent.norm();
        if !s.is_finite() {
            return Err(Error::BlowUp {
                time: k as f64 * h,
                state: s,
            });
        }
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateTangent { norm });
        }
        log_growth += norm.ln();
        tangent.scale(1.0 / norm);
    }
    Ok(FtleRecord {
        initial: *s0,
        energy: params.shell_energy(s0),
        horizon: opts.horizon,
        lambda: log_growth / opts.horizon,
    })
}
