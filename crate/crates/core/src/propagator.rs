//! Imaginary-time transition amplitudes `G(x_fi, T; x_in, 0) = ⟨x_fi| e^{−TH} |x_in⟩`
//! on a periodic 2-D grid.
//!
//! Each time slice applies the symmetric (Strang) splitting
//! `e^{−τV/2} e^{−τK} e^{−τV/2}` with the kinetic factor diagonal in the
//! discrete Fourier basis. The kinetic operator is separable, so it is applied
//! as 1-D transforms along rows and then along columns. The product of slices
//! is a real symmetric matrix, which makes the kernel exactly symmetric under
//! source/sink exchange up to rounding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dynamics::ActionParams;
use crate::error::{Error, Result};

/// Periodic square grid `[−L, L)²` with `n` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub half_width: f64,
    pub n: usize,
}

impl Default for Grid2D {
    fn default() -> Self {
        Grid2D {
            half_width: 8.0,
            n: 128,
        }
    }
}

impl Grid2D {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        let g = Grid2D { half_width, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 32 || !self.n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "grid points per axis must be a power of two >= 32, got {}",
                self.n
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid half-width must be positive, got {}",
                self.half_width
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Index of the node at `x`, if `x` lies on a node.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let f = (x + self.half_width) / self.spacing();
        let i = f.round();
        ((f - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.n).then_some(i as usize)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let hi = self.coord(self.n - 1);
        (-self.half_width..=hi).contains(&x) && (-self.half_width..=hi).contains(&y)
    }

    /// Angular wave numbers in FFT order.
    fn wave_numbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let dk = std::f64::consts::TAU / (n as f64 * self.spacing());
        (0..n)
            .map(|j| if j <= n / 2 { j } else { j - n } as f64 * dk)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    pub grid: Grid2D,
    /// Imaginary-time slice.
    pub tau: f64,
    /// Largest allowed ratio of boundary magnitude to peak magnitude.
    pub boundary_tol: f64,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        PropagatorConfig {
            grid: Grid2D::default(),
            tau: 0.01,
            boundary_tol: 1e-12,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "time slice must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Values on the grid, row-major with `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.n + ix]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude on the outermost ring of nodes relative to the peak.
    pub fn boundary_ratio(&self) -> f64 {
        let n = self.grid.n;
        let mut edge = 0.0f64;
        for i in 0..n {
            for (ix, iy) in [(i, 0), (i, n - 1), (0, i), (n - 1, i)] {
                edge = edge.max(self.at(ix, iy).abs());
            }
        }
        edge / self.max()
    }

    /// Bilinear interpolation at `(x, y)`.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        if !g.contains(x, y) {
            return Err(Error::OutsideGrid { x, y });
        }
        let h = g.spacing();
        let locate = |c: f64| {
            let f = (c + g.half_width) / h;
            let i = (f.floor() as usize).min(g.n - 2);
            (i, f - i as f64)
        };
        let (ix, fx) = locate(x);
        let (iy, fy) = locate(y);
        Ok((1.0 - fx) * (1.0 - fy) * self.at(ix, iy)
            + fx * (1.0 - fy) * self.at(ix + 1, iy)
            + (1.0 - fx) * fy * self.at(ix, iy + 1)
            + fx * fy * self.at(ix + 1, iy + 1))
    }
}

/// Precomputed split-operator factors for one parameter set and slice.
struct SplitOperator {
    n: usize,
    half_potential: Vec<f64>,
    full_potential: Vec<f64>,
    kinetic: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SplitOperator {
    fn new(params: &ActionParams, grid: &Grid2D, tau: f64) -> Self {
        let n = grid.n;
        let mut half_potential = Vec::with_capacity(n * n);
        let mut full_potential = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let v = params.potential(grid.coord(ix), grid.coord(iy));
                half_potential.push((-0.5 * tau * v).exp());
                full_potential.push((-tau * v).exp());
            }
        }
        // 1-D kinetic factor; the inverse FFT's 1/n is folded in here.
        let kinetic = grid
            .wave_numbers()
            .iter()
            .map(|k| (-tau * k * k / (2.0 * params.mass)).exp() / n as f64)
            .collect();
        let mut planner = FftPlanner::new();
        SplitOperator {
            n,
            half_potential,
            full_potential,
            kinetic,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Apply `e^{−τK}` along rows, transpose, along rows again, transpose back.
    fn kinetic_step(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        for _ in 0..2 {
            self.forward.process(buf);
            for row in buf.chunks_exact_mut(self.n) {
                for (z, k) in row.iter_mut().zip(&self.kinetic) {
                    *z *= *k;
                }
            }
            self.inverse.process(buf);
            let n = self.n;
            for (i, row) in buf.chunks_exact(n).enumerate() {
                for (j, z) in row.iter().enumerate() {
                    scratch[j * n + i] = *z;
                }
            }
            buf.copy_from_slice(scratch);
        }
    }

    fn scale(buf: &mut [Complex64], factors: &[f64]) {
        for (z, f) in buf.iter_mut().zip(factors) {
            // The field stays real; drop FFT round-off in the imaginary part.
            *z = Complex64::new(z.re * f, 0.0);
        }
    }

    /// Evolve `buf` through `slices` Strang slices.
    fn evolve(&self, buf: &mut [Complex64], slices: usize) {
        let mut scratch = vec![Complex64::default(); buf.len()];
        Self::scale(buf, &self.half_potential);
        for s in 0..slices {
            self.kinetic_step(buf, &mut scratch);
            let last = s + 1 == slices;
            Self::scale(
                buf,
                if last {
                    &self.half_potential
                } else {
                    &self.full_potential
                },
            );
        }
    }
}

fn slices_for(t: f64, tau: f64) -> usize {
    (t / tau - 1e-9).ceil().max(1.0) as usize
}

/// `G(·, T; source, 0)` on the grid.
///
/// The source is a discrete delta of weight `1/h²` at the node nearest to
/// `source`. The slice count is `⌈T/τ⌉`, with the slice shrunk so the total
/// is exactly `T`.
pub fn propagate(
    params: &ActionParams,
    cfg: &PropagatorConfig,
    t: f64,
    source: [f64; 2],
) -> Result<Field> {
    params.validate()?;
    cfg.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "imaginary time must be positive, got {t}"
        )));
    }
    let grid = cfg.grid;
    let (sx, sy) = (source[0], source[1]);
    if !grid.contains(sx, sy) {
        return Err(Error::OutsideGrid { x: sx, y: sy });
    }
    let h = grid.spacing();
    let ix = ((sx + grid.half_width) / h).round() as usize;
    let iy = ((sy + grid.half_width) / h).round() as usize;
    let n = grid.n;
    let slices = slices_for(t, cfg.tau);
    let op = SplitOperator::new(params, &grid, t / slices as f64);
    let mut buf = vec![Complex64::default(); n * n];
    buf[iy.min(n - 1) * n + ix.min(n - 1)] = Complex64::new(1.0 / (h * h), 0.0);
    op.evolve(&mut buf, slices);
    let field = Field {
        grid,
        values: buf.iter().map(|z| z.re).collect(),
    };
    let ratio = field.boundary_ratio();
    if !(ratio <= cfg.boundary_tol) {
        return Err(Error::GridTooSmall {
            ratio,
            limit: cfg.boundary_tol,
        });
    }
    Ok(field)
}

/// Ground-state energy from the asymptotic decay rate of a positive field.
///
/// A smooth off-centre Gaussian is evolved in unit stretches of imaginary
/// time; the decay rate of its norm over each stretch estimates `E_gr`, and
/// iteration stops once consecutive estimates agree to `1e-6`.
pub fn ground_state_energy(params: &ActionParams, cfg: &PropagatorConfig) -> Result<f64> {
    params.validate()?;
    cfg.validate()?;
    const MAX_SLICES: usize = 100_000;
    let grid = cfg.grid;
    let n = grid.n;
    let chunk = slices_for(1.0, cfg.tau);
    let dt = chunk as f64 * cfg.tau;
    let op = SplitOperator::new(params, &grid, cfg.tau);
    let mut buf: Vec<Complex64> = (0..n * n)
        .map(|i| {
            let (x, y) = (grid.coord(i % n), grid.coord(i / n));
            let r2 = (x - 0.31).powi(2) + (y + 0.17).powi(2);
            Complex64::new((-0.5 * r2).exp(), 0.0)
        })
        .collect();
    let norm = |b: &[Complex64]| b.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    let mut prev = f64::NAN;
    let mut used = 0;
    while used + chunk <= MAX_SLICES {
        let before = norm(&buf);
        buf.iter_mut().for_each(|z| *z /= before);
        op.evolve(&mut buf, chunk);
        used += chunk;
        let estimate = -norm(&buf).ln() / dt;
        if (estimate - prev).abs() < 1e-6 {
            return Ok(estimate);
        }
        prev = estimate;
    }
    Err(Error::NoConvergence {
        what: "ground-state energy",
        detail: format!("last estimate {prev} after {used} slices"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPair {
    pub x_in: [f64; 2],
    pub x_fi: [f64; 2],
}

impl BoundaryPair {
    pub fn new(x_in: [f64; 2], x_fi: [f64; 2]) -> Self {
        BoundaryPair { x_in, x_fi }
    }
}

/// Boundary pairs for the quantum-action fit.
///
/// Sources sit on a 3×3 lattice in `[−1, 1]²` and sinks on a 5×5 lattice in
/// `[−1.5, 1.5]²`. Pairs related by the reflections `x → −x`, `y → −y` and the
/// exchange `x ↔ y` have equal amplitudes, so only one pair per orbit of that
/// group is kept.
pub fn default_pairs() -> Vec<BoundaryPair> {
    let lattice = |n: usize, half: f64| -> Vec<f64> {
        (0..n)
            .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
            .collect()
    };
    let src = lattice(3, 1.0);
    let snk = lattice(5, 1.5);
    let images = |p: BoundaryPair| -> Vec<[i64; 4]> {
        let key = |v: f64| (v * 4.0).round() as i64;
        let mut out = Vec::with_capacity(8);
        for swap in [false, true] {
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    let map = |q: [f64; 2]| {
                        let (a, b) = if swap { (q[1], q[0]) } else { (q[0], q[1]) };
                        [sx * a, sy * b]
                    };
                    let (i, f) = (map(p.x_in), map(p.x_fi));
                    out.push([key(i[0]), key(i[1]), key(f[0]), key(f[1])]);
                }
            }
        }
        out
    };
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for &iy in &src {
        for &ix in &src {
            for &fy in &snk {
                for &fx in &snk {
                    let p = BoundaryPair::new([ix, iy], [fx, fy]);
                    let imgs = images(p);
                    if imgs.iter().any(|k| seen.contains(k)) {
                        continue;
                    }
                    seen.insert(imgs[0]);
                    pairs.push(p);
                }
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeEntry {
    pub x_in: [f64; 2],
    pub x_fi: [f64; 2],
    pub t: f64,
    pub g: f64,
}

/// Imaginary-time amplitudes over a set of boundary pairs, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTable {
    pub params: ActionParams,
    pub config: PropagatorConfig,
    pub entries: Vec<AmplitudeEntry>,
    /// Pairs whose propagation failed, with the reason.
    pub flagged: Vec<(BoundaryPair, String)>,
}

/// One propagation per distinct source; sinks are read off by bilinear
/// interpolation.
pub fn amplitude_table(
    params: &ActionParams,
    cfg: &PropagatorConfig,
    t: f64,
    pairs: &[BoundaryPair],
) -> Result<AmplitudeTable> {
    params.validate()?;
    cfg.validate()?;
    let key = |p: [f64; 2]| (p[0].to_bits(), p[1].to_bits());
    let mut sources: Vec<[f64; 2]> = Vec::new();
    let mut index = HashMap::new();
    for p in pairs {
        index.entry(key(p.x_in)).or_insert_with(|| {
            sources.push(p.x_in);
            sources.len() - 1
        });
    }
    let fields: Vec<Result<Field>> = sources
        .par_iter()
        .map(|&s| propagate(params, cfg, t, s))
        .collect();
    let mut table = AmplitudeTable {
        params: *params,
        config: *cfg,
        entries: Vec::with_capacity(pairs.len()),
        flagged: Vec::new(),
    };
    for p in pairs {
        let field = &fields[index[&key(p.x_in)]];
        let g = field
            .as_ref()
            .map_err(|e| e.clone())
            .and_then(|f| f.interpolate(p.x_fi[0], p.x_fi[1]));
        match g {
            Ok(g) if g > 0.0 => table.entries.push(AmplitudeEntry {
                x_in: p.x_in,
                x_fi: p.x_fi,
                t,
                g,
            }),
            Ok(g) => table.flagged.push((*p, format!("non-positive amplitude {g:e}"))),
            Err(e) => table.flagged.push((*p, e.to_string())),
        }
    }
    Ok(table)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl AmplitudeTable {
    /// Columnar text: `#` header lines with provenance, then one row
    /// `x_in_x x_in_y x_fi_x x_fi_y T G` per entry.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let c = &self.config;
        let mut out = String::new();
        out.push_str("# qchaos amplitude table\n");
        let _ = writeln!(
            out,
            "# params mass={} v0={} v2={} v22={} v4={}",
            fmt_f64(p.mass),
            fmt_f64(p.v0),
            fmt_f64(p.v2),
            fmt_f64(p.v22),
            fmt_f64(p.v4)
        );
        let _ = writeln!(
            out,
            "# grid half_width={} n={}",
            fmt_f64(c.grid.half_width),
            c.grid.n
        );
        let _ = writeln!(out, "# tau={}", fmt_f64(c.tau));
        let _ = writeln!(out, "# boundary_tol={}", fmt_f64(c.boundary_tol));
        if let Some(e) = self.entries.first() {
            let _ = writeln!(out, "# T={}", fmt_f64(e.t));
        }
        let _ = writeln!(out, "# flagged={}", self.flagged.len());
        out.push_str("# x_in_x x_in_y x_fi_x x_fi_y T G\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                fmt_f64(e.x_in[0]),
                fmt_f64(e.x_in[1]),
                fmt_f64(e.x_fi[0]),
                fmt_f64(e.x_fi[1]),
                fmt_f64(e.t),
                fmt_f64(e.g)
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse(format!("line {line}: {msg}"));
        let mut kv: HashMap<String, String> = HashMap::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        kv.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| bad(ln, &e.to_string())))
                .collect::<Result<_>>()?;
            if cols.len() != 6 {
                return Err(bad(ln, "expected 6 columns"));
            }
            entries.push(AmplitudeEntry {
                x_in: [cols[0], cols[1]],
                x_fi: [cols[2], cols[3]],
                t: cols[4],
                g: cols[5],
            });
        }
        let get = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("missing header key {k}")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("header key {k}: {e}")))
        };
        let params = ActionParams::from_array([
            get("mass")?,
            get("v0")?,
            get("v2")?,
            get("v22")?,
            get("v4")?,
        ]);
        let config = PropagatorConfig {
            grid: Grid2D {
                half_width: get("half_width")?,
                n: get("n")? as usize,
            },
            tau: get("tau")?,
            boundary_tol: get("boundary_tol")?,
        };
        Ok(AmplitudeTable {
            params,
            config,
            entries,
            flagged: Vec::new(),
        })
    }
}
