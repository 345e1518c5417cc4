//! Experiment configuration files.
//!
//! The format is one `key = value` per line. `#` starts a comment. Every key
//! is optional and unknown keys are rejected.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use qchaos_core::dynamics::{ActionParams, IntegratorConfig, Scheme};
use qchaos_core::poincare::{Axis, Direction, SectionSpec};
use qchaos_core::propagator::{Grid2D, PropagatorConfig};
use qchaos_core::qaction::PrefactorMode;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemChoice {
    Classical,
    Quantum,
    Harmonic,
    Explicit(ActionParams),
    /// Classical and quantum side by side.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemChoice,
    pub v22: f64,
    pub energies: Vec<f64>,
    pub n_samples: usize,
    pub horizon: f64,
    pub renorm_every: u64,
    pub lambda_c: f64,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub section: SectionSpec,
    /// Orbits per energy for section plots.
    pub orbits: usize,
    pub crossings: usize,
    pub max_time: f64,
    pub propagator: PropagatorConfig,
    pub transition_time: f64,
    pub prefactor: PrefactorMode,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemChoice::Classical,
            v22: 0.25,
            energies: vec![2.0, 4.0, 6.0, 8.0],
            n_samples: 500,
            horizon: 5000.0,
            renorm_every: 100,
            lambda_c: qchaos_core::ensemble::DEFAULT_LAMBDA_C,
            seed: 0,
            integrator: IntegratorConfig::default(),
            section: SectionSpec::default(),
            orbits: 10,
            crossings: 200,
            max_time: qchaos_core::poincare::DEFAULT_MAX_TIME,
            propagator: PropagatorConfig::default(),
            transition_time: 4.5,
            prefactor: PrefactorMode::GroundState,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Named parameter sets selected by `system`.
    pub fn systems(&self) -> Vec<(&'static str, ActionParams)> {
        match self.system {
            SystemChoice::Classical => vec![("classical", ActionParams::classical(self.v22))],
            SystemChoice::Quantum => vec![("quantum", ActionParams::quantum())],
            SystemChoice::Harmonic => vec![("harmonic", ActionParams::harmonic())],
            SystemChoice::Explicit(p) => vec![("explicit", p)],
            SystemChoice::Both => vec![
                ("classical", ActionParams::classical(self.v22)),
                ("quantum", ActionParams::quantum()),
            ],
        }
    }

    /// Canonical form that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let system = match self.system {
            SystemChoice::Classical => "classical",
            SystemChoice::Quantum => "quantum",
            SystemChoice::Harmonic => "harmonic",
            SystemChoice::Explicit(_) => "explicit",
            SystemChoice::Both => "both",
        };
        let _ = writeln!(out, "system = {system}");
        if let SystemChoice::Explicit(p) = self.system {
            let a = p.to_array();
            let _ = writeln!(out, "params = {}, {}, {}, {}, {}", a[0], a[1], a[2], a[3], a[4]);
        }
        let energies: Vec<String> = self.energies.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "v22 = {}", self.v22);
        let _ = writeln!(out, "energies = {}", energies.join(", "));
        let _ = writeln!(out, "n_samples = {}", self.n_samples);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "renorm_every = {}", self.renorm_every);
        let _ = writeln!(out, "lambda_c = {}", self.lambda_c);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "scheme = {}", self.integrator.scheme);
        let _ = writeln!(out, "step = {}", self.integrator.step);
        let _ = writeln!(out, "section_axis = {}", self.section.coordinate);
        let _ = writeln!(out, "section_value = {}", self.section.value);
        let dir = match self.section.direction {
            Direction::Positive => "+",
            Direction::Negative => "-",
        };
        let _ = writeln!(out, "section_direction = {dir}");
        let _ = writeln!(out, "orbits = {}", self.orbits);
        let _ = writeln!(out, "crossings = {}", self.crossings);
        let _ = writeln!(out, "max_time = {}", self.max_time);
        let _ = writeln!(out, "grid_half_width = {}", self.propagator.grid.half_width);
        let _ = writeln!(out, "grid_n = {}", self.propagator.grid.n);
        let _ = writeln!(out, "tau = {}", self.propagator.tau);
        let _ = writeln!(out, "boundary_tol = {}", self.propagator.boundary_tol);
        let _ = writeln!(out, "transition_time = {}", self.transition_time);
        let _ = writeln!(out, "prefactor = {}", self.prefactor);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        out
    }
}

fn err(line: usize, key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn number(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(line, key, format!("expected a finite number, got {v:?}")))
}

fn positive(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    let x = number(line, key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(err(line, key, format!("must be positive, got {x}")))
    }
}

fn count(line: usize, key: &str, v: &str) -> Result<usize, CliError> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(err(line, key, format!("expected a positive integer, got {v:?}"))),
    }
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|s| number(line, key, s.trim())).collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut system: Option<(usize, String)> = None;
    let mut params: Option<(usize, ActionParams)> = None;
    let mut grid = (cfg.propagator.grid.half_width, cfg.propagator.grid.n, 0);

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(line, content, "expected `key = value`"));
        };
        let (key, v) = (key.trim(), value.trim());
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(err(line, key, format!("duplicate key, first set on line {first}")));
        }
        match key {
            "system" => match v {
                "classical" | "quantum" | "harmonic" | "explicit" | "both" => system = Some((line, v.to_string())),
                _ => return Err(err(line, key, format!("unknown system {v:?}"))),
            },
            "params" => {
                let a = list(line, key, v)?;
                let a: [f64; 5] = a
                    .try_into()
                    .map_err(|_| err(line, key, "expected five values m, v0, v2, v22, v4"))?;
                let p = ActionParams::from_array(a);
                p.validate().map_err(|e| err(line, key, e.to_string()))?;
                params = Some((line, p));
            }
            "v22" => cfg.v22 = number(line, key, v)?,
            "energies" => {
                let e = list(line, key, v)?;
                if let Some(bad) = e.iter().find(|&&x| x <= 0.0) {
                    return Err(err(line, key, format!("energies must be positive, got {bad}")));
                }
                cfg.energies = e;
            }
            "n_samples" => cfg.n_samples = count(line, key, v)?,
            "horizon" => cfg.horizon = positive(line, key, v)?,
            "renorm_every" => cfg.renorm_every = count(line, key, v)? as u64,
            "lambda_c" => {
                let x = number(line, key, v)?;
                if x < 0.0 {
                    return Err(err(line, key, format!("must be non-negative, got {x}")));
                }
                cfg.lambda_c = x;
            }
            "seed" => {
                cfg.seed = v
                    .parse()
                    .map_err(|_| err(line, key, format!("expected an unsigned 64-bit integer, got {v:?}")))?
            }
            "scheme" => {
                cfg.integrator.scheme = v.parse::<Scheme>().map_err(|e| err(line, key, e.to_string()))?
            }
            "step" => cfg.integrator.step = positive(line, key, v)?,
            "section_axis" => {
                cfg.section.coordinate = v.parse::<Axis>().map_err(|e| err(line, key, e.to_string()))?
            }
            "section_value" => cfg.section.value = number(line, key, v)?,
            "section_direction" => {
                cfg.section.direction = match v {
                    "+" | "positive" => Direction::Positive,
                    "-" | "negative" => Direction::Negative,
                    _ => return Err(err(line, key, format!("expected + or -, got {v:?}"))),
                }
            }
            "orbits" => cfg.orbits = count(line, key, v)?,
            "crossings" => cfg.crossings = count(line, key, v)?,
            "max_time" => cfg.max_time = positive(line, key, v)?,
            "grid_half_width" => {
                grid.0 = positive(line, key, v)?;
                grid.2 = line;
            }
            "grid_n" => {
                grid.1 = count(line, key, v)?;
                grid.2 = line;
            }
            "tau" => cfg.propagator.tau = positive(line, key, v)?,
            "boundary_tol" => cfg.propagator.boundary_tol = positive(line, key, v)?,
            "transition_time" => cfg.transition_time = positive(line, key, v)?,
            "prefactor" => {
                cfg.prefactor = match v {
                    "ground-state" => PrefactorMode::GroundState,
                    "van-vleck" => PrefactorMode::VanVleck,
                    "nuisance-constant" => PrefactorMode::NuisanceConstant,
                    _ => return Err(err(line, key, format!("unknown prefactor mode {v:?}"))),
                }
            }
            "output_dir" => {
                if v.is_empty() {
                    return Err(err(line, key, "empty path"));
                }
                cfg.output_dir = PathBuf::from(v);
            }
            _ => return Err(err(line, key, "unknown key")),
        }
    }

    cfg.propagator.grid =
        Grid2D::new(grid.0, grid.1).map_err(|e| err(grid.2, "grid_n", e.to_string()))?;
    match (system, params) {
        (Some((_, s)), Some((_, p))) if s == "explicit" => cfg.system = SystemChoice::Explicit(p),
        (Some((line, s)), None) if s == "explicit" => {
            return Err(err(line, "system", "explicit system needs a `params` line"))
        }
        (_, Some((line, _))) => return Err(err(line, "params", "only valid with `system = explicit`")),
        (Some((_, s)), None) => {
            cfg.system = match s.as_str() {
                "quantum" => SystemChoice::Quantum,
                "harmonic" => SystemChoice::Harmonic,
                "both" => SystemChoice::Both,
                _ => SystemChoice::Classical,
            }
        }
        (None, None) => {}
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.systems(), vec![("classical", ActionParams::classical(0.25))]);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn quantum_preset() {
        let cfg = parse_config("# table values\nsystem = quantum\n").unwrap();
        let (_, p) = cfg.systems()[0];
        assert_eq!(p, ActionParams::quantum());
        assert_eq!(p.v0, 1.3992);
    }

    #[test]
    fn invariant_violations_name_the_key() {
        let e = parse_config("seed = 3\nhorizon = -5\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("horizon"), "{e}");
        let e = parse_config("colour = red").unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("unknown key"), "{e}");
        let e = parse_config("grid_n = 100").unwrap_err().to_string();
        assert!(e.contains("grid_n"), "{e}");
        assert!(parse_config("seed = 1\nseed = 2").is_err());
        assert!(parse_config("params = 1, 0, 0.5, 0, 0").is_err());
        assert!(parse_config("system = explicit").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "system = explicit\nparams = 1.1, 0.2, 0.6, 0.1, 0.001\nenergies = 1.5, 3\n\
                    scheme = leapfrog\nsection_axis = y\nsection_direction = -\nprefactor = van-vleck\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        let d = ExperimentConfig::default();
        assert_eq!(parse_config(&d.to_text()).unwrap(), d);
    }
}
