//! Command-line front end for the qchaos experiments.
//!
//! Each subcommand reads a configuration file, runs one pipeline and writes
//! CSV files plus a manifest. Output bytes depend only on the configuration,
//! the seed and the code version.

use std::path::{Path, PathBuf};

pub mod config;
pub mod run;

pub use config::{parse_config, ExperimentConfig, SystemChoice};
pub use run::{run, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {key}: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] qchaos_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Worker count from the flag, else `QCHAOS_THREADS`, else 0 for the
/// machine default.
pub fn thread_count(flag: Option<usize>, env: Option<&str>) -> Result<usize, CliError> {
    match (flag, env) {
        (Some(n), _) => Ok(n),
        (None, Some(v)) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("QCHAOS_THREADS must be an integer, got {v:?}"))),
        _ => Ok(0),
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::Io { path: args.config.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok((cfg, text))
}

fn execute_inner(sub: Subcommand, args: &RunArgs, dir: &mut Option<PathBuf>) -> Result<Vec<String>, CliError> {
    let threads = thread_count(args.threads, std::env::var("QCHAOS_THREADS").ok().as_deref())?;
    let (cfg, text) = load(args)?;
    *dir = Some(cfg.output_dir.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| run(&cfg, sub, &text))
}

/// Run a subcommand. On failure a diagnostic file `<subcommand>-error.txt` is
/// written to the output directory (or the working directory when the
/// configuration could not be read) and the error is returned.
pub fn execute(sub: Subcommand, args: &RunArgs) -> Result<Vec<String>, CliError> {
    let mut dir = args.out.clone();
    let result = execute_inner(sub, args, &mut dir);
    if let Err(e) = &result {
        let dir = dir.unwrap_or_else(|| PathBuf::from("."));
        write_diagnostic(&dir, sub, args, e);
    }
    result
}

fn write_diagnostic(dir: &Path, sub: Subcommand, args: &RunArgs, e: &CliError) {
    let text = format!(
        "subcommand = {}\nconfig = {}\nerror = {e}\ndetail = {e:?}\n",
        sub.name(),
        args.config.display()
    );
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(dir.join(format!("{}-error.txt", sub.name())), text);
}
