//! `trifuse` command line: dataset synthesis, training, enhancement,
//! evaluation and ablation runs.
//!
//! [`run`] maps outcomes to exit codes: 0 on success, 2 for usage and
//! configuration errors, 1 for internal failures (including panics).

use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use trifuse::config::RunConfig;
use trifuse::{Error, Result};

mod ablate;
mod data;
mod enhance;
mod eval;
mod synth;
mod train;

pub use data::{load_pairs, pair_by_stem};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TRIFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "trifuse", version, about = "Low-light image enhancement by wavelet-domain conditional diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedurally generated well-exposed scenes.
    GenScenes(synth::GenScenesArgs),
    /// Darken a directory of images at one or all intensity levels and write a manifest.
    Synth(synth::SynthArgs),
    /// Train a model on the train split of a manifest.
    Train(train::TrainArgs),
    /// Enhance one image or every image in a directory.
    Enhance(enhance::EnhanceArgs),
    /// Score predictions against references and/or with no-reference metrics.
    Eval(eval::EvalArgs),
    /// Fit a NIQE pristine model on a directory of well-exposed images.
    FitNiqe(eval::FitNiqeArgs),
    /// Train and evaluate a matrix of variants along one axis.
    Ablate(ablate::AblateArgs),
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file; unspecified keys keep their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key after the file is read (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then `--set` overrides. Not yet validated.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenes(a) => synth::gen_scenes(&a),
        Command::Synth(a) => synth::synth(&a),
        Command::Train(a) => train::train(&a),
        Command::Enhance(a) => enhance::enhance(&a),
        Command::Eval(a) => eval::eval(&a),
        Command::FitNiqe(a) => eval::fit_niqe(&a),
        Command::Ablate(a) => ablate::ablate(&a),
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let outcome = pool.install(|| catch_unwind(AssertUnwindSafe(|| dispatch(cli))));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            eprintln!("internal error: {msg}");
            1
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn file_name(p: &Path) -> Result<String> {
    p.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Argument(format!("non UTF-8 file name {}", p.display())))
}

pub(crate) fn file_stem(p: &Path) -> Result<String> {
    p.file_stem()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Argument(format!("non UTF-8 file name {}", p.display())))
}
