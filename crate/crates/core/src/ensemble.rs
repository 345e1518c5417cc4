//! Energy-shell sampling and the statistics built on Lyapunov ensembles:
//! histograms, the chaotic ratio `R(E)`, Gaussian moments of the chaotic
//! subset and the linear fit of `⟨λ⟩` against energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{ActionParams, IntegratorConfig, PhaseState};
use crate::error::{Error, Result};
use crate::lyapunov::{ftle, FtleOptions, FtleRecord};

/// Default classification cut-off at horizon 5000.
pub const DEFAULT_LAMBDA_C: f64 = 5e-3;

const MAX_PROPOSALS: u64 = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Draws phase-space points on the shell `H − v0 = E`.
///
/// Positions are uniform over the accessible region `V − v0 ≤ E` inside a
/// square box; the momentum has the magnitude fixed by the energy and a
/// uniformly distributed direction.
#[derive(Debug, Clone)]
pub struct ShellSampler {
    params: ActionParams,
    energy: f64,
    half_width: f64,
    rng: ChaCha8Rng,
    proposals: u64,
    accepted: u64,
}

impl ShellSampler {
    pub fn new(params: ActionParams, energy: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shell energy must be positive, got {energy}"
            )));
        }
        let half_width = axis_turning_point(&params, energy)?;
        Ok(ShellSampler {
            params,
            energy,
            half_width,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposals: 0,
            accepted: 0,
        })
    }

    /// Override the sampling box half-width.
    pub fn with_box(mut self, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sampling box must be positive, got {half_width}"
            )));
        }
        self.half_width = half_width;
        Ok(self)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposals == 0 {
            return 1.0;
        }
        self.accepted as f64 / self.proposals as f64
    }

    pub fn sample(&mut self) -> Result<PhaseState> {
        let l = self.half_width;
        loop {
            self.proposals += 1;
            let x = self.rng.random_range(-l..=l);
            let y = self.rng.random_range(-l..=l);
            let u = self.params.shell_potential(x, y);
            if u <= self.energy {
                self.accepted += 1;
                let p = (2.0 * self.params.mass * (self.energy - u)).sqrt();
                let theta = self.rng.random_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                return Ok(PhaseState::new(x, y, p * c, p * s));
            }
            if self.proposals >= MAX_PROPOSALS && self.acceptance() < MIN_ACCEPTANCE {
                return Err(Error::SamplerBox {
                    proposals: self.proposals,
                    acceptance: self.acceptance(),
                });
            }
        }
    }
}

/// Smallest `L > 0` with `V(L, 0) − v0 > E`; bounds the well for `v22 ≥ 0`.
fn axis_turning_point(params: &ActionParams, energy: f64) -> Result<f64> {
    let u = |l: f64| params.v2 * l * l + params.v4 * l.powi(4);
    let mut hi = (energy / params.v2).sqrt();
    let mut guard = 0;
    while u(hi) <= energy {
        hi *= 1.5;
        guard += 1;
        if guard > 60 || u(hi) < u(hi / 1.5) {
            return Err(Error::InvalidConfig(format!(
                "energy {energy} exceeds the potential barrier along the axis"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if u(mid) > energy {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Outcome of a Lyapunov ensemble run.
#[derive(Debug, Clone, Default)]
pub struct EnsembleRun {
    pub records: Vec<FtleRecord>,
    /// Index and error of trajectories that failed.
    pub failures: Vec<(usize, Error)>,
}

/// `n` finite-time Lyapunov exponents from shell samples at energy `E`.
///
/// Initial states are drawn sequentially from one seeded sampler, then the
/// trajectories run in parallel on the current rayon pool. Output order is
/// the sampling order, independent of scheduling.
pub fn ftle_ensemble(
    params: &ActionParams,
    energy: f64,
    n: usize,
    seed: u64,
    cfg: &IntegratorConfig,
    opts: &FtleOptions,
) -> Result<EnsembleRun> {
    if n == 0 {
        return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
    }
    let mut sampler = ShellSampler::new(*params, energy, seed)?;
    let starts = (0..n).map(|_| sampler.sample()).collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<FtleRecord>> = starts
        .par_iter()
        .map(|s0| ftle(params, s0, cfg, opts))
        .collect();
    let mut run = EnsembleRun::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => run.records.push(rec),
            Err(e) => run.failures.push((i, e)),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovHistogram {
    pub edges: Vec<f64>,
    /// `counts[i]` tallies `edges[i] ≤ λ < edges[i + 1]`.
    pub counts: Vec<usize>,
    /// `cumulative[j]` is the fraction of all records with `λ < edges[j]`.
    pub cumulative: Vec<f64>,
    pub underflow: usize,
    pub overflow: usize,
    pub total: usize,
}

impl LyapunovHistogram {
    /// `count` equal bins of `width` starting at `start`.
    pub fn uniform_edges(start: f64, width: f64, count: usize) -> Vec<f64> {
        (0..=count).map(|i| start + width * i as f64).collect()
    }

    /// Fine bins around zero, for separating regular from chaotic orbits.
    pub fn near_zero_edges() -> Vec<f64> {
        Self::uniform_edges(0.0, 2e-4, 100)
    }

    /// Coarse bins over the positive exponents.
    pub fn positive_edges() -> Vec<f64> {
        Self::uniform_edges(0.0, 5e-3, 50)
    }
}

pub fn histogram(records: &[FtleRecord], edges: &[f64]) -> Result<LyapunovHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadEdges);
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    let (mut underflow, mut overflow) = (0, 0);
    for r in records {
        let l = r.lambda;
        if l < edges[0] {
            underflow += 1;
        } else if l >= edges[bins] {
            overflow += 1;
        } else {
            // First edge strictly greater than λ closes its bin.
            let i = edges.partition_point(|&e| e <= l) - 1;
            counts[i] += 1;
        }
    }
    let total = records.len();
    let denom = total.max(1) as f64;
    let mut cumulative = Vec::with_capacity(edges.len());
    let mut running = underflow;
    cumulative.push(running as f64 / denom);
    for c in &counts {
        running += c;
        cumulative.push(running as f64 / denom);
    }
    if total == 0 {
        cumulative.iter_mut().for_each(|c| *c = 0.0);
    }
    Ok(LyapunovHistogram {
        edges: edges.to_vec(),
        counts,
        cumulative,
        underflow,
        overflow,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaoticRatio {
    pub energy: f64,
    pub ratio: f64,
    pub n: usize,
    pub lambda_c: f64,
}

impl ChaoticRatio {
    /// Binomial standard error of the ratio.
    pub fn std_error(&self) -> f64 {
        (self.ratio * (1.0 - self.ratio) / self.n as f64).sqrt()
    }
}

/// Fraction of records with `λ > λ_c`.
pub fn chaotic_ratio(records: &[FtleRecord], lambda_c: f64) -> Result<ChaoticRatio> {
    if records.is_empty() {
        return Err(Error::Empty("chaotic_ratio"));
    }
    let chaotic = records.iter().filter(|r| r.lambda > lambda_c).count();
    let energy = records.iter().map(|r| r.energy).sum::<f64>() / records.len() as f64;
    Ok(ChaoticRatio {
        energy,
        ratio: chaotic as f64 / records.len() as f64,
        n: records.len(),
        lambda_c,
    })
}

/// Sample mean and unbiased variance of the chaotic subset `λ > λ_c`.
pub fn gaussian_summary(records: &[FtleRecord], lambda_c: f64) -> Result<(f64, f64)> {
    let chaotic: Vec<f64> = records
        .iter()
        .map(|r| r.lambda)
        .filter(|&l| l > lambda_c)
        .collect();
    if chaotic.len() < 2 {
        return Err(Error::TooFewChaotic {
            needed: 2,
            found: chaotic.len(),
        });
    }
    let n = chaotic.len() as f64;
    let mean = chaotic.iter().sum::<f64>() / n;
    let var = chaotic.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub lambda0: f64,
    pub eps: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Ordinary least squares `⟨λ⟩ = λ0 + ε E` over `(E, ⟨λ⟩)` points.
pub fn fit_mean_vs_energy(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::Singular("need at least two points".into()));
    }
    let n = points.len() as f64;
    let e_bar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let l_bar = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - e_bar).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - e_bar) * (p.1 - l_bar)).sum();
    if sxx <= f64::EPSILON * e_bar.abs().max(1.0) * n {
        return Err(Error::Singular("all energies are equal".into()));
    }
    let eps = sxy / sxx;
    let lambda0 = l_bar - eps * e_bar;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - lambda0 - eps * p.0).powi(2))
        .sum();
    Ok(LinearFit {
        lambda0,
        eps,
        residual: (rss / n).sqrt(),
    })
}
