//! Quantum-action fitting.
//!
//! A trial action with parameters `(m̃, ṽ0, ṽ2, ṽ22, ṽ4)` predicts the
//! imaginary-time amplitude
//!
//! ```text
//! G(x_fi, T; x_in, 0) ≈ Z̃ exp(−Σ̃),   Σ̃ = ∫₀ᵀ dt [½ m̃ ẋ² + Ṽ(x)]
//! ```
//!
//! with `Σ̃` evaluated along the Euclidean classical path (`m̃ ẍ = +∇Ṽ`)
//! joining the boundary points. The prefactor is the Van Vleck–Pauli–Morette
//! determinant `Z̃ = (2π)^{-1} √det[−∂²Σ̃/∂x_in ∂x_fi]`. Since
//! `∂Σ̃/∂x_in = −m̃ ẋ(0)`, the mixed Hessian equals `−m̃ B⁻¹` where
//! `B = ∂x(T)/∂ẋ(0)` is the position/velocity block of the monodromy matrix,
//! which the shooting solver already propagates. Hence
//! `det[−∂²Σ̃/∂x_in ∂x_fi] = m̃² / det B`.
//!
//! The fit minimizes `Σ (ln G_table − ln G_model)²` with a bounded
//! Levenberg–Marquardt iteration. By default it uses
//! [`PrefactorMode::GroundState`], which keeps `Z̃` independent of the
//! boundary points so that `ṽ0` tracks the ground-state energy. The Van Vleck
//! form above reproduces the harmonic kernel exactly but moves the zero-point
//! energy out of `ṽ0`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;

use crate::dynamics::ActionParams;
use crate::error::{Error, Result};
use crate::propagator::{AmplitudeEntry, AmplitudeTable};

/// Number of parameters in an action.
pub const N_PARAMS: usize = 5;
pub const PARAM_NAMES: [&str; N_PARAMS] = ["m", "v0", "v2", "v22", "v4"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    /// RK4 steps across `[0, T]`; must be even for Simpson quadrature.
    pub steps: usize,
    pub max_shooting_iter: usize,
    /// Endpoint mismatch accepted as converged.
    pub tol: f64,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            steps: 2000,
            max_shooting_iter: 200,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvpMethod {
    Shooting,
    /// Relaxation on the discretized action, polished by shooting.
    Relaxation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Euclidean classical path between two boundary points.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanTrajectory {
    pub samples: Vec<PathSample>,
    pub x_in: [f64; 2],
    pub x_fi: [f64; 2],
    pub t_total: f64,
    pub action_value: f64,
    /// `∂x(T)/∂ẋ(0)`, rows indexed by final coordinate.
    pub focal: [[f64; 2]; 2],
    pub method: BvpMethod,
}

impl EuclideanTrajectory {
    /// Euclidean energy `½ m ẋ² − Ṽ` at each sample.
    pub fn euclidean_energy(&self, trial: &ActionParams) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| 0.5 * trial.mass * (s.vx * s.vx + s.vy * s.vy) - trial.potential(s.x, s.y))
            .collect()
    }

    pub fn final_momentum(&self, trial: &ActionParams) -> [f64; 2] {
        let s = self.samples.last().expect("non-empty path");
        [trial.mass * s.vx, trial.mass * s.vy]
    }
}

type State = [f64; 4];

#[inline(always)]
fn rhs(p: &ActionParams, inv_m: f64, s: &State) -> State {
    let (gx, gy) = p.grad_potential(s[0], s[1]);
    [s[2], s[3], gx * inv_m, gy * inv_m]
}

#[inline(always)]
fn rhs_tangent(p: &ActionParams, inv_m: f64, s: &State, d: &State) -> State {
    let (hxx, hxy, hyy) = p.hessian(s[0], s[1]);
    [
        d[2],
        d[3],
        (hxx * d[0] + hxy * d[1]) * inv_m,
        (hxy * d[0] + hyy * d[1]) * inv_m,
    ]
}

#[inline(always)]
fn axpy(a: &State, k: &State, f: f64) -> State {
    [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2], a[3] + f * k[3]]
}

/// Integrate the Euclidean equations of motion and the two tangent columns
/// seeded by unit initial-velocity perturbations. `visit(k, state)` sees
/// every node `k = 0..=steps`.
fn shoot<F: FnMut(usize, &State)>(
    p: &ActionParams,
    x_in: [f64; 2],
    v0: [f64; 2],
    t: f64,
    steps: usize,
    mut visit: F,
) -> (State, [State; 2]) {
    let inv_m = 1.0 / p.mass;
    let h = t / steps as f64;
    let mut s: State = [x_in[0], x_in[1], v0[0], v0[1]];
    let mut d: [State; 2] = [[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    visit(0, &s);
    for k in 1..=steps {
        let k1 = rhs(p, inv_m, &s);
        let s2 = axpy(&s, &k1, 0.5 * h);
        let k2 = rhs(p, inv_m, &s2);
        let s3 = axpy(&s, &k2, 0.5 * h);
        let k3 = rhs(p, inv_m, &s3);
        let s4 = axpy(&s, &k3, h);
        let k4 = rhs(p, inv_m, &s4);
        for dj in d.iter_mut() {
            let l1 = rhs_tangent(p, inv_m, &s, dj);
            let l2 = rhs_tangent(p, inv_m, &s2, &axpy(dj, &l1, 0.5 * h));
            let l3 = rhs_tangent(p, inv_m, &s3, &axpy(dj, &l2, 0.5 * h));
            let l4 = rhs_tangent(p, inv_m, &s4, &axpy(dj, &l3, h));
            for i in 0..4 {
                dj[i] += h / 6.0 * (l1[i] + 2.0 * l2[i] + 2.0 * l3[i] + l4[i]);
            }
        }
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        visit(k, &s);
    }
    (s, d)
}

fn focal_block(d: &[State; 2]) -> Matrix2<f64> {
    Matrix2::new(d[0][0], d[1][0], d[0][1], d[1][1])
}

/// Initial velocity of the harmonic path with the trial's quadratic part.
fn harmonic_guess(trial: &ActionParams, x_in: [f64; 2], x_fi: [f64; 2], t: f64) -> [f64; 2] {
    let w = trial.omega();
    let (s, c) = ((w * t).sinh(), (w * t).cosh());
    [
        w * (x_fi[0] - x_in[0] * c) / s,
        w * (x_fi[1] - x_in[1] * c) / s,
    ]
}

struct Shot {
    v0: [f64; 2],
    residual: f64,
}

/// Damped Newton iteration on the initial velocity.
fn shooting(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
    guess: [f64; 2],
    opts: &BvpOptions,
) -> std::result::Result<Shot, Shot> {
    let target = Vector2::new(x_fi[0], x_fi[1]);
    let miss = |v0: [f64; 2]| {
        let (s, d) = shoot(trial, x_in, v0, t, opts.steps, |_, _| {});
        (Vector2::new(s[0], s[1]) - target, focal_block(&d))
    };
    let scale = 1.0 + target.norm();
    let mut v0 = guess;
    let (mut f, mut b) = miss(v0);
    let mut best = Shot {
        v0,
        residual: f.norm(),
    };
    for iter in 0..=opts.max_shooting_iter {
        let r = f.norm();
        if !r.is_finite() {
            break;
        }
        if r < opts.tol * scale {
            return Ok(Shot { v0, residual: r });
        }
        if iter == opts.max_shooting_iter {
            break;
        }
        let Some(step) = b.lu().solve(&(-f)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = [v0[0] + lambda * step[0], v0[1] + lambda * step[1]];
            let (fc, bc) = miss(cand);
            if fc.norm().is_finite() && fc.norm() < r {
                v0 = cand;
                f = fc;
                b = bc;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if f.norm() < best.residual {
            best = Shot {
                v0,
                residual: f.norm(),
            };
        }
    }
    Err(best)
}

/// Newton relaxation of the discretized action
/// `Σ_k m|x_{k+1} − x_k|²/2h + h Σ_k V(x_k)` with fixed endpoints.
/// Returns the initial velocity implied by the relaxed path.
fn relaxation(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
    nodes: usize,
) -> Option<[f64; 2]> {
    let n = nodes;
    let h = t / n as f64;
    let m = trial.mass;
    let w = trial.omega();
    // Harmonic interpolant as the starting path.
    let mut path: Vec<Vector2<f64>> = (0..=n)
        .map(|k| {
            let tk = k as f64 * h;
            let a = (w * (t - tk)).sinh() / (w * t).sinh();
            let b = (w * tk).sinh() / (w * t).sinh();
            Vector2::new(a * x_in[0] + b * x_fi[0], a * x_in[1] + b * x_fi[1])
        })
        .collect();
    let gradient = |path: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
        (1..n)
            .map(|k| {
                let (gx, gy) = trial.grad_potential(path[k][0], path[k][1]);
                (2.0 * path[k] - path[k - 1] - path[k + 1]) * (m / h) + Vector2::new(gx, gy) * h
            })
            .collect()
    };
    let norm = |g: &[Vector2<f64>]| g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let mut g = gradient(&path);
    for _ in 0..100 {
        let gn = norm(&g);
        if gn < 1e-13 {
            break;
        }
        // Block-tridiagonal solve: diagonal D_k, off-diagonals −(m/h) I.
        let off = -m / h;
        let mut c_prime: Vec<Matrix2<f64>> = Vec::with_capacity(n - 1);
        let mut d_prime: Vec<Vector2<f64>> = Vec::with_capacity(n - 1);
        for k in 1..n {
            let (hxx, hxy, hyy) = trial.hessian(path[k][0], path[k][1]);
            let diag = Matrix2::new(hxx, hxy, hxy, hyy) * h + Matrix2::identity() * (2.0 * m / h);
            let rhs = -g[k - 1];
            let (denom, r) = if k == 1 {
                (diag, rhs)
            } else {
                (diag - c_prime[k - 2] * off, rhs - d_prime[k - 2] * off)
            };
            let inv = denom.try_inverse()?;
            c_prime.push(inv * off);
            d_prime.push(inv * r);
        }
        let mut delta = vec![Vector2::zeros(); n - 1];
        delta[n - 2] = d_prime[n - 2];
        for k in (0..n - 2).rev() {
            delta[k] = d_prime[k] - c_prime[k] * delta[k + 1];
        }
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut cand = path.clone();
            for k in 1..n {
                cand[k] += delta[k - 1] * lambda;
            }
            let gc = gradient(&cand);
            if norm(&gc) < gn {
                path = cand;
                g = gc;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let (gx, gy) = trial.grad_potential(x_in[0], x_in[1]);
    let v = (path[1] - path[0]) / h - Vector2::new(gx, gy) * (0.5 * h / m);
    v.iter().all(|c| c.is_finite()).then_some([v[0], v[1]])
}

/// Composite Simpson weight of node `k` among `steps + 1` nodes.
#[inline]
fn simpson_weight(k: usize, steps: usize) -> f64 {
    if k == 0 || k == steps {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

fn lagrangian(trial: &ActionParams, s: &State) -> f64 {
    0.5 * trial.mass * (s[2] * s[2] + s[3] * s[3]) + trial.potential(s[0], s[1])
}

fn check_bvp_inputs(trial: &ActionParams, t: f64, opts: &BvpOptions) -> Result<()> {
    trial.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "transition time must be positive, got {t}"
        )));
    }
    if opts.steps < 2 || opts.steps % 2 != 0 {
        return Err(Error::InvalidConfig(
            "BVP step count must be even and at least 2".into(),
        ));
    }
    Ok(())
}

/// Solve for the initial velocity, trying shooting first and relaxation second.
fn solve_velocity(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
    opts: &BvpOptions,
) -> Result<([f64; 2], BvpMethod)> {
    let guess = harmonic_guess(trial, x_in, x_fi, t);
    let first = match shooting(trial, x_in, x_fi, t, guess, opts) {
        Ok(shot) => return Ok((shot.v0, BvpMethod::Shooting)),
        Err(best) => best,
    };
    let relaxed = relaxation(trial, x_in, x_fi, t, opts.steps);
    let polished = relaxed.map(|g| shooting(trial, x_in, x_fi, t, g, opts));
    match polished {
        Some(Ok(shot)) => Ok((shot.v0, BvpMethod::Relaxation)),
        Some(Err(best)) => Err(Error::NoConvergence {
            what: "Euclidean boundary-value problem",
            detail: format!(
                "best endpoint residual {:e}",
                best.residual.min(first.residual)
            ),
        }),
        None => Err(Error::NoConvergence {
            what: "Euclidean boundary-value problem",
            detail: format!("relaxation failed; shooting residual {:e}", first.residual),
        }),
    }
}

/// Euclidean classical path of `trial` from `x_in` at 0 to `x_fi` at `T`.
pub fn solve_bvp(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
    opts: &BvpOptions,
) -> Result<EuclideanTrajectory> {
    check_bvp_inputs(trial, t, opts)?;
    let (v0, method) = solve_velocity(trial, x_in, x_fi, t, opts)?;
    let h = t / opts.steps as f64;
    let mut samples = Vec::with_capacity(opts.steps + 1);
    let (_, d) = shoot(trial, x_in, v0, t, opts.steps, |k, s| {
        samples.push(PathSample {
            t: k as f64 * h,
            x: s[0],
            y: s[1],
            vx: s[2],
            vy: s[3],
        })
    });
    let b = focal_block(&d);
    let mut traj = EuclideanTrajectory {
        samples,
        x_in,
        x_fi,
        t_total: t,
        action_value: 0.0,
        focal: [[b[(0, 0)], b[(0, 1)]], [b[(1, 0)], b[(1, 1)]]],
        method,
    };
    traj.action_value = action_along(trial, &traj);
    Ok(traj)
}

/// `Σ̃ = ∫ dt [½ m̃ ẋ² + Ṽ]` by composite Simpson over the path samples.
pub fn action_along(trial: &ActionParams, traj: &EuclideanTrajectory) -> f64 {
    let steps = traj.samples.len() - 1;
    let h = traj.t_total / steps as f64;
    traj.samples
        .iter()
        .enumerate()
        .map(|(k, s)| simpson_weight(k, steps) * lagrangian(trial, &[s.x, s.y, s.vx, s.vy]))
        .sum::<f64>()
        * h
        / 3.0
}

/// How the amplitude prefactor `Z̃` is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefactorMode {
    /// Van Vleck–Pauli–Morette determinant of the trial action.
    #[default]
    VanVleck,
    /// `ln Z̃` is one constant per table. At fixed `T` it is indistinguishable
    /// from `ṽ0 T`, so it is absorbed into `ṽ0`.
    NuisanceConstant,
    /// Boundary-independent `Z̃ = m̃ω̃/π` with `ω̃² = 2ṽ2/m̃`, the large-`T`
    /// limit of the harmonic kernel once `e^{−ω̃T}` is carried by `ṽ0`.
    /// With this choice `ṽ0` plays the role of the ground-state energy.
    GroundState,
}

impl std::fmt::Display for PrefactorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrefactorMode::VanVleck => "van-vleck",
            PrefactorMode::NuisanceConstant => "nuisance-constant",
            PrefactorMode::GroundState => "ground-state",
        })
    }
}

/// Pieces of the model amplitude for one boundary pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelAmplitude {
    pub action: f64,
    /// `det[−∂²Σ̃/∂x_in ∂x_fi]`.
    pub determinant: f64,
    pub ln_amplitude: f64,
}

impl ModelAmplitude {
    pub fn amplitude(&self) -> f64 {
        self.ln_amplitude.exp()
    }
}

/// `ln[Z̃ exp(−Σ̃)]` without materializing the path samples.
pub fn model_amplitude_with(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
    opts: &BvpOptions,
    mode: PrefactorMode,
) -> Result<ModelAmplitude> {
    check_bvp_inputs(trial, t, opts)?;
    let (v0, _) = solve_velocity(trial, x_in, x_fi, t, opts)?;
    let steps = opts.steps;
    let mut simpson = 0.0;
    let (_, d) = shoot(trial, x_in, v0, t, steps, |k, s| {
        simpson += simpson_weight(k, steps) * lagrangian(trial, s);
    });
    let action = simpson * (t / steps as f64) / 3.0;
    let det_b = focal_block(&d).determinant();
    let determinant = trial.mass * trial.mass / det_b;
    let ln_prefactor = match mode {
        PrefactorMode::VanVleck => {
            if !(determinant > 0.0 && determinant.is_finite()) {
                return Err(Error::Caustic { det: determinant });
            }
            0.5 * determinant.ln() - (std::f64::consts::TAU).ln()
        }
        PrefactorMode::NuisanceConstant => 0.0,
        PrefactorMode::GroundState => (trial.mass * trial.omega() / std::f64::consts::PI).ln(),
    };
    Ok(ModelAmplitude {
        action,
        determinant,
        ln_amplitude: ln_prefactor - action,
    })
}

/// `Z̃ exp(−Σ̃)` with the Van Vleck prefactor and default BVP settings.
pub fn model_amplitude(
    trial: &ActionParams,
    x_in: [f64; 2],
    x_fi: [f64; 2],
    t: f64,
) -> Result<f64> {
    model_amplitude_with(
        trial,
        x_in,
        x_fi,
        t,
        &BvpOptions::default(),
        PrefactorMode::VanVleck,
    )
    .map(|m| m.amplitude())
}

/// Box constraints on the fitted parameters, `[m, v0, v2, v22, v4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            lower: [0.5, 0.0, 0.1, -0.5, -0.1],
            upper: [2.0, 5.0, 2.0, 1.0, 0.1],
        }
    }
}

impl ParamBounds {
    fn clamp(&self, theta: &mut [f64; N_PARAMS]) {
        for i in 0..N_PARAMS {
            theta[i] = theta[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub mode: PrefactorMode,
    pub bounds: ParamBounds,
    pub bvp: BvpOptions,
    /// Relative parameter step below which the iteration stops.
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            mode: PrefactorMode::GroundState,
            bounds: ParamBounds::default(),
            bvp: BvpOptions::default(),
            step_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ActionParams,
    /// One-sigma uncertainties, `[m, v0, v2, v22, v4]`.
    pub errors: [f64; N_PARAMS],
    /// Root-mean-square log-amplitude misfit.
    pub residual: f64,
    pub iterations: usize,
    pub used_entries: usize,
    /// Entries whose boundary-value problem failed at the starting point.
    pub dropped_entries: usize,
    pub mode: PrefactorMode,
    /// Objective `½ Σ r²` after each accepted iteration, starting point first.
    pub objective_history: Vec<f64>,
}

struct Problem<'a> {
    entries: Vec<&'a AmplitudeEntry>,
    opts: &'a FitOptions,
}

impl Problem<'_> {
    fn residuals(&self, theta: &[f64; N_PARAMS]) -> Result<DVector<f64>> {
        let trial = ActionParams::from_array(*theta);
        let r: Vec<f64> = self
            .entries
            .par_iter()
            .map(|e| {
                model_amplitude_with(&trial, e.x_in, e.x_fi, e.t, &self.opts.bvp, self.opts.mode)
                    .map(|m| e.g.ln() - m.ln_amplitude)
            })
            .collect::<Result<_>>()?;
        Ok(DVector::from_vec(r))
    }

    /// Central-difference Jacobian of the residuals.
    fn jacobian(&self, theta: &[f64; N_PARAMS]) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.entries.len(), N_PARAMS);
        for j in 0..N_PARAMS {
            let step = 1e-5 * theta[j].abs().max(0.05);
            let mut hi = *theta;
            let mut lo = *theta;
            hi[j] += step;
            lo[j] -= step;
            let col = (self.residuals(&hi)? - self.residuals(&lo)?) / (2.0 * step);
            jac.set_column(j, &col);
        }
        Ok(jac)
    }
}

/// Fit the trial action to a table of amplitudes.
pub fn fit(table: &AmplitudeTable, initial: &ActionParams, opts: &FitOptions) -> Result<FitResult> {
    fit_entries(&table.entries, initial, opts)
}

pub fn fit_entries(
    entries: &[AmplitudeEntry],
    initial: &ActionParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    initial.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("fit"));
    }
    if entries.iter().any(|e| !(e.g > 0.0)) {
        return Err(Error::InvalidConfig("amplitudes must be positive".into()));
    }
    if entries.len() < N_PARAMS {
        return Err(Error::Underdetermined {
            data: entries.len(),
            params: N_PARAMS,
        });
    }
    let mut theta = initial.to_array();
    opts.bounds.clamp(&mut theta);
    let trial = ActionParams::from_array(theta);

    let usable: Vec<bool> = entries
        .par_iter()
        .map(|e| model_amplitude_with(&trial, e.x_in, e.x_fi, e.t, &opts.bvp, opts.mode).is_ok())
        .collect();
    let kept: Vec<&AmplitudeEntry> = entries
        .iter()
        .zip(&usable)
        .filter_map(|(e, ok)| ok.then_some(e))
        .collect();
    let dropped = entries.len() - kept.len();
    if kept.len() < N_PARAMS {
        return Err(Error::Underdetermined {
            data: kept.len(),
            params: N_PARAMS,
        });
    }
    let problem = Problem {
        entries: kept,
        opts,
    };

    let mut r = problem.residuals(&theta)?;
    let mut cost = 0.5 * r.norm_squared();
    let mut history = vec![cost];
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = problem.jacobian(&theta)?;
    while iterations < opts.max_iter {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut stepped = false;
        let mut small_step = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for i in 0..N_PARAMS {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                mu *= 4.0;
                continue;
            };
            let mut cand = theta;
            for i in 0..N_PARAMS {
                cand[i] += delta[i];
            }
            opts.bounds.clamp(&mut cand);
            let moved = (0..N_PARAMS)
                .map(|i| (cand[i] - theta[i]).abs() / theta[i].abs().max(1e-3))
                .fold(0.0, f64::max);
            if moved < opts.step_tol {
                small_step = true;
                break;
            }
            match problem.residuals(&cand) {
                Ok(rc) if 0.5 * rc.norm_squared() < cost => {
                    theta = cand;
                    r = rc;
                    cost = 0.5 * r.norm_squared();
                    history.push(cost);
                    mu = (mu / 3.0).max(1e-15);
                    stepped = true;
                    if moved < 1e3 * opts.step_tol {
                        small_step = true;
                    }
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if small_step || !stepped {
            converged = true;
            break;
        }
        jac = problem.jacobian(&theta)?;
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "quantum-action fit",
            detail: format!(
                "{} iterations; best parameters {:?}, objective {cost:e}",
                opts.max_iter, theta
            ),
        });
    }

    let n = problem.entries.len();
    let jtj = jac.transpose() * &jac;
    let dof = n.saturating_sub(N_PARAMS).max(1) as f64;
    let sigma2 = 2.0 * cost / dof;
    let errors = match jtj.try_inverse() {
        Some(cov) => std::array::from_fn(|i| (sigma2 * cov[(i, i)]).max(0.0).sqrt()),
        None => [f64::NAN; N_PARAMS],
    };
    Ok(FitResult {
        params: ActionParams::from_array(theta),
        errors,
        residual: (2.0 * cost / n as f64).sqrt(),
        iterations,
        used_entries: n,
        dropped_entries: dropped,
        mode: opts.mode,
        objective_history: history,
    })
}

/// Key-value report with one row per parameter: classical value, fitted
/// value and error estimate.
pub fn fit_report(classical: &ActionParams, result: &FitResult) -> String {
    let mut out = String::new();
    out.push_str("# parameter classical fitted error\n");
    let c = classical.to_array();
    let f = result.params.to_array();
    for i in 0..N_PARAMS {
        out.push_str(&format!(
            "{} = {:.16e} {:.16e} {:.16e}\n",
            PARAM_NAMES[i], c[i], f[i], result.errors[i]
        ));
    }
    out.push_str(&format!("residual = {:.16e}\n", result.residual));
    out.push_str(&format!("iterations = {}\n", result.iterations));
    out.push_str(&format!("used_entries = {}\n", result.used_entries));
    out.push_str(&format!("dropped_entries = {}\n", result.dropped_entries));
    out.push_str(&format!("prefactor = {}\n", result.mode));
    out
}
