//! The `deepam` command-line front end.
//!
//! Every subcommand accepts `--config FILE` (TOML with the same keys as the
//! long flags, using underscores); explicit flags win over the file. The
//! fully resolved settings are written next to the outputs as
//! `config.resolved` (or `<output>.config.resolved` for single-file
//! outputs) and can be fed back through `--config` to repeat a run.
//! Outputs are written under a `.partial` name and renamed when complete.

mod check;
mod restore;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::image::{encode_image, Image, ImageFormat};
use crate::{Error, Result};

pub use check::{bench_trial, gradcheck_suite, truncated_backward_error, BenchArgs, BenchTrial, GradcheckArgs, GradcheckSuite, Scale};
pub use restore::{BaselineArgs, RestoreArgs};
pub use synth::SynthArgs;
pub use train::TrainArgs;

#[derive(Debug, Parser)]
#[command(name = "deepam", version, about = "Image restoration by learned alternating minimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build degraded/clean pairs and a training patch set.
    Synth(SynthArgs),
    /// Train a cascade on a patch set.
    Train(TrainArgs),
    /// Denoise an image with a trained model.
    Denoise(RestoreArgs),
    /// Upsample a depth map with a trained joint model and color guidance.
    Srdepth(RestoreArgs),
    /// Handcrafted alternating minimization (TV, L0, hyper-Laplacian).
    Baseline(BaselineArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time IC(0)-PCG against a direct solve.
    BenchSolver(BenchArgs),
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string().trim_start_matches("error: ").to_string())),
    };
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Denoise(a) => restore::run_model(a, crate::cascade::Task::Denoise),
        Command::Srdepth(a) => restore::run_model(a, crate::cascade::Task::SrDepth),
        Command::Baseline(a) => restore::run_baseline(a),
        Command::Gradcheck(a) => check::run_gradcheck(a),
        Command::BenchSolver(a) => check::run_bench(a),
    }
}

/// Caps the worker pool at `DEEPAM_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DEEPAM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DEEPAM_THREADS must be a positive integer, got {raw:?}")))?;
    // a pool may already exist when running several commands in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Overlays the explicitly given flags onto the config file (if any).
fn merge<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&Path>) -> Result<A> {
    let flag_table = toml::Value::try_from(flags).map_err(|e| Error::Config(e.to_string()))?;
    let Some(path) = config else {
        return flags_from(flag_table);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let toml::Value::Table(flags) = flag_table {
        for (k, v) in flags {
            table.insert(k, v);
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn flags_from<A: DeserializeOwned>(v: toml::Value) -> Result<A> {
    v.try_into().map_err(|e| Error::Config(e.to_string()))
}

fn require<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing required setting --{}", name.replace('_', "-"))))
}

fn to_toml<A: Serialize>(resolved: &A) -> Result<String> {
    toml::to_string(resolved).map_err(|e| Error::Config(e.to_string()))
}

/// Writes `bytes` to `path` via `path.partial`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    std::fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
    std::fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

fn write_image(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_image(img, ImageFormat::from_path(path)?)?)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.resolved");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
    struct Demo {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none")]
        b: Option<String>,
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "a = 1\nb = \"file\"\n").unwrap();
        let merged = merge(&Demo { a: None, b: Some("flag".into()) }, Some(&cfg)).unwrap();
        assert_eq!(merged, Demo { a: Some(1), b: Some("flag".into()) });
    }

    #[test]
    fn unknown_config_keys_are_errors_when_denied() {
        #[derive(Debug, Serialize, serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Strict {
            #[serde(skip_serializing_if = "Option::is_none")]
            a: Option<u32>,
        }
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "zzz = 1\n").unwrap();
        assert!(matches!(merge(&Strict { a: None }, Some(&cfg)), Err(Error::Config(_))));
    }

    #[test]
    fn atomic_write_leaves_no_partial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"hi");
        assert!(!dir.path().join("sub/out.txt.partial").exists());
    }
}
