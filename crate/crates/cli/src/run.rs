//! Pipelines behind each subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use qchaos_core::dynamics::ActionParams;
use qchaos_core::ensemble::{
    chaotic_ratio, fit_mean_vs_energy, ftle_ensemble, gaussian_summary, histogram, EnsembleRun,
    LyapunovHistogram, ShellSampler,
};
use qchaos_core::lyapunov::FtleOptions;
use qchaos_core::poincare::poincare_map;
use qchaos_core::propagator::{amplitude_table, default_pairs, ground_state_energy, AmplitudeTable};
use qchaos_core::qaction::{fit, fit_report, FitOptions, N_PARAMS, PARAM_NAMES};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Poincare,
    LyapDist,
    Ratio,
    FitQaction,
    Propagate,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Poincare => "poincare",
            Subcommand::LyapDist => "lyap-dist",
            Subcommand::Ratio => "ratio",
            Subcommand::FitQaction => "fit-qaction",
            Subcommand::Propagate => "propagate",
        }
    }
}

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Seed for the shell at `energy`, shared by every system in a run.
pub fn energy_seed(seed: u64, energy: f64) -> u64 {
    let mut z = seed ^ energy.to_bits();
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Files produced by a run, in creation order.
#[derive(Debug, Default)]
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn write(&mut self, name: String, contents: String) -> Result<(), CliError> {
        let path = self.dir.join(&name);
        fs::write(&path, &contents).map_err(|source| CliError::Io { path, source })?;
        let digest = Sha256::digest(contents.as_bytes());
        self.files.push((name, hex(&digest)));
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn ensemble(cfg: &ExperimentConfig, params: &ActionParams, energy: f64) -> Result<EnsembleRun, CliError> {
    let opts = FtleOptions {
        renorm_every: cfg.renorm_every,
        ..FtleOptions::with_horizon(cfg.horizon)
    };
    let run = ftle_ensemble(
        params,
        energy,
        cfg.n_samples,
        energy_seed(cfg.seed, energy),
        &cfg.integrator,
        &opts,
    )?;
    if run.records.is_empty() {
        return Err(CliError::Run(format!("every trajectory failed at E = {energy}")));
    }
    Ok(run)
}

fn poincare(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    for (name, params) in cfg.systems() {
        for &e in &cfg.energies {
            let mut sampler = ShellSampler::new(params, e, energy_seed(cfg.seed, e))?;
            let starts = (0..cfg.orbits)
                .map(|_| sampler.sample())
                .collect::<qchaos_core::Result<Vec<_>>>()?;
            let sections = starts
                .par_iter()
                .map(|s0| poincare_map(&params, s0, &cfg.section, cfg.crossings, &cfg.integrator, cfg.max_time))
                .collect::<qchaos_core::Result<Vec<_>>>()?;
            let rows = sections.iter().enumerate().flat_map(|(i, sec)| {
                sec.points.iter().enumerate().map(move |(k, c)| {
                    vec![i.to_string(), k.to_string(), fmt_f64(c.t), fmt_f64(c.a), fmt_f64(c.pa)]
                })
            });
            out.write(format!("poincare-{name}-E{e}.csv"), csv("orbit,crossing,t,a,pa", rows))?;
        }
    }
    Ok(())
}

fn histogram_rows(label: &str, h: &LyapunovHistogram) -> Vec<Vec<String>> {
    h.counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                label.to_string(),
                fmt_f64(h.edges[i]),
                fmt_f64(h.edges[i + 1]),
                c.to_string(),
                fmt_f64(h.cumulative[i + 1]),
            ]
        })
        .collect()
}

fn lyap_dist(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    for (name, params) in cfg.systems() {
        let mut summary = Vec::new();
        let mut means = Vec::new();
        for &e in &cfg.energies {
            let run = ensemble(cfg, &params, e)?;
            let rows = run.records.iter().enumerate().map(|(i, r)| {
                let s = r.initial;
                vec![
                    i.to_string(),
                    fmt_f64(s.x),
                    fmt_f64(s.y),
                    fmt_f64(s.px),
                    fmt_f64(s.py),
                    fmt_f64(r.energy),
                    fmt_f64(r.lambda),
                ]
            });
            out.write(format!("lyap-dist-{name}-E{e}.csv"), csv("index,x,y,px,py,energy,lambda", rows))?;

            let near = histogram(&run.records, &LyapunovHistogram::near_zero_edges())?;
            let pos = histogram(&run.records, &LyapunovHistogram::positive_edges())?;
            let mut rows = histogram_rows("near_zero", &near);
            rows.extend(histogram_rows("positive", &pos));
            out.write(
                format!("lyap-dist-{name}-E{e}-hist.csv"),
                csv("range,lower,upper,count,fraction_below_upper", rows),
            )?;

            let ratio = chaotic_ratio(&run.records, cfg.lambda_c)?;
            let (mean, var) = match gaussian_summary(&run.records, cfg.lambda_c) {
                Ok((m, v)) => {
                    means.push((e, m));
                    (m, v)
                }
                Err(_) => (f64::NAN, f64::NAN),
            };
            summary.push(vec![
                fmt_f64(e),
                run.records.len().to_string(),
                run.failures.len().to_string(),
                fmt_f64(ratio.ratio),
                fmt_f64(mean),
                fmt_f64(var),
            ]);
        }
        out.write(
            format!("lyap-dist-{name}-summary.csv"),
            csv("E,n,failures,R,chaotic_mean,chaotic_variance", summary),
        )?;
        if means.len() >= 2 {
            let f = fit_mean_vs_energy(&means)?;
            out.write(
                format!("lyap-dist-{name}-fit.csv"),
                csv(
                    "lambda0,eps,residual",
                    [vec![fmt_f64(f.lambda0), fmt_f64(f.eps), fmt_f64(f.residual)]],
                ),
            )?;
        }
    }
    Ok(())
}

fn ratio(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let mut by_system = Vec::new();
    for (name, params) in cfg.systems() {
        let mut rows = Vec::new();
        let mut ratios = Vec::new();
        for &e in &cfg.energies {
            let run = ensemble(cfg, &params, e)?;
            let r = chaotic_ratio(&run.records, cfg.lambda_c)?;
            ratios.push(r.ratio);
            rows.push(vec![
                fmt_f64(e),
                r.n.to_string(),
                fmt_f64(r.lambda_c),
                fmt_f64(r.ratio),
                fmt_f64(r.std_error()),
            ]);
        }
        out.write(format!("ratio-{name}.csv"), csv("E,n,lambda_c,R,std_error", rows))?;
        by_system.push((name, ratios));
    }
    if let [(a, ra), (b, rb)] = by_system.as_slice() {
        let rows = cfg
            .energies
            .iter()
            .zip(ra.iter().zip(rb))
            .map(|(e, (x, y))| vec![fmt_f64(*e), fmt_f64(*x), fmt_f64(*y)]);
        out.write(format!("ratio-{a}-vs-{b}.csv"), csv(&format!("E,R_{a},R_{b}"), rows))?;
    }
    Ok(())
}

fn table_for(cfg: &ExperimentConfig, params: &ActionParams) -> Result<AmplitudeTable, CliError> {
    let table = amplitude_table(params, &cfg.propagator, cfg.transition_time, &default_pairs())?;
    match table.flagged.first() {
        Some((_, reason)) if table.entries.is_empty() => {
            Err(CliError::Run(format!("no usable amplitudes: {reason}")))
        }
        _ => Ok(table),
    }
}

fn propagate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    for (name, params) in cfg.systems() {
        let e_gr = ground_state_energy(&params, &cfg.propagator)?;
        let table = table_for(cfg, &params)?;
        let rows = table.entries.iter().map(|e| {
            vec![
                fmt_f64(e.x_in[0]),
                fmt_f64(e.x_in[1]),
                fmt_f64(e.x_fi[0]),
                fmt_f64(e.x_fi[1]),
                fmt_f64(e.t),
                fmt_f64(e.g),
            ]
        });
        out.write(
            format!("propagate-{name}.csv"),
            csv("x_in_x,x_in_y,x_fi_x,x_fi_y,T,G", rows),
        )?;
        out.write(format!("propagate-{name}.table"), table.to_text())?;
        out.write(
            format!("propagate-{name}-ground.csv"),
            csv("E_gr", [vec![fmt_f64(e_gr)]]),
        )?;
    }
    Ok(())
}

fn fit_qaction(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    for (name, params) in cfg.systems() {
        let e_gr = ground_state_energy(&params, &cfg.propagator)?;
        let table = table_for(cfg, &params)?;
        let initial = ActionParams { v0: e_gr, ..params };
        let opts = FitOptions {
            mode: cfg.prefactor,
            ..Default::default()
        };
        let result = fit(&table, &initial, &opts)?;
        let (c, f) = (params.to_array(), result.params.to_array());
        let rows = (0..N_PARAMS).map(|i| {
            vec![
                PARAM_NAMES[i].to_string(),
                fmt_f64(c[i]),
                fmt_f64(f[i]),
                fmt_f64(result.errors[i]),
            ]
        });
        out.write(
            format!("fit-qaction-{name}.csv"),
            csv("parameter,classical,fitted,error", rows),
        )?;
        let mut report = fit_report(&params, &result);
        let _ = writeln!(report, "ground_state_energy = {}", fmt_f64(e_gr));
        let _ = writeln!(report, "flagged_pairs = {}", table.flagged.len());
        out.write(format!("fit-qaction-{name}.txt"), report)?;
    }
    Ok(())
}

/// Run one subcommand and write its outputs plus a manifest into
/// `cfg.output_dir`. `config_text` is the raw configuration, hashed into the
/// manifest.
pub fn run(cfg: &ExperimentConfig, sub: Subcommand, config_text: &str) -> Result<Vec<String>, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let mut out = Outputs::new(dir);
    match sub {
        Subcommand::Poincare => poincare(cfg, &mut out)?,
        Subcommand::LyapDist => lyap_dist(cfg, &mut out)?,
        Subcommand::Ratio => ratio(cfg, &mut out)?,
        Subcommand::FitQaction => fit_qaction(cfg, &mut out)?,
        Subcommand::Propagate => propagate(cfg, &mut out)?,
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# qchaos run manifest");
    let _ = writeln!(manifest, "# code_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "# subcommand = {}", sub.name());
    let _ = writeln!(manifest, "# config_sha256 = {}", hex(&Sha256::digest(config_text.as_bytes())));
    for (name, digest) in &out.files {
        let _ = writeln!(manifest, "# output {name} sha256 {digest}");
    }
    let _ = writeln!(manifest, "# resolved configuration follows; rerun with --config <this file> --out <dir>");
    // The output directory never affects file contents, so leaving it out
    // keeps manifests identical across locations.
    for line in cfg.to_text().lines().filter(|l| !l.starts_with("output_dir")) {
        manifest.push_str(line);
        manifest.push('\n');
    }
    let mut names: Vec<String> = out.files.iter().map(|(n, _)| n.clone()).collect();
    let manifest_name = format!("{}-manifest.txt", sub.name());
    out.write(manifest_name.clone(), manifest)?;
    names.push(manifest_name);
    Ok(names)
}
