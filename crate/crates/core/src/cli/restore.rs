use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{merge, require, sidecar, to_toml, write_atomic, write_image};
use crate::cascade::{infer, CascadeModel, Task};
use crate::classic::{am_solve, AmConfig, Backend, ContinuationSchedule, Regularizer};
use crate::image::{load_image, Image, MetricReport};
use crate::nn::Checkpoint;
use crate::solver::SolverConfig;
use crate::{Error, Result};

/// Bad-matching-pixel threshold used in depth reports.
const BMP_DELTA: f64 = 3.0;

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreArgs {
    /// Trained checkpoint (`.damw`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Degraded input. For depth upsampling this is the low-resolution depth
    /// already interpolated to the guidance size.
    #[arg(long = "in")]
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Registered color guidance (depth upsampling only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guide: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Ground truth for the metric report.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Metric CSV (needs --truth).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn write_report(pred: &Image, truth: &Path, bmp: Option<f64>, report: &Path) -> Result<MetricReport> {
    let truth = load_image(truth)?;
    let r = MetricReport::compute(pred, &truth, bmp)?;
    write_atomic(report, format!("{}\n{}\n", MetricReport::CSV_HEADER, r.csv_row()).as_bytes())?;
    Ok(r)
}

fn print_report(r: &MetricReport) {
    match r.bmp {
        Some(b) => println!("psnr {:.3} dB  ssim {:.4}  bmp {:.3}%", r.psnr, r.ssim, b),
        None => println!("psnr {:.3} dB  ssim {:.4}", r.psnr, r.ssim),
    }
}

pub fn run_model(args: RestoreArgs, task: Task) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let model_path = require(&a.model, "model")?;
    let input = require(&a.input, "in")?;
    let out = require(&a.out, "out")?;
    if a.report.is_some() && a.truth.is_none() {
        return Err(Error::Config("--report needs --truth".into()));
    }
    let solver = SolverConfig {
        tol: *a.tol.get_or_insert(SolverConfig::FORWARD.tol),
        max_iter: *a.max_iter.get_or_insert(SolverConfig::FORWARD.max_iter),
    };
    let model = CascadeModel::from_checkpoint(&Checkpoint::load(&model_path)?)?;
    if model.arch.task != task {
        return Err(Error::Config(format!(
            "{} was trained for {}, not {}",
            model_path.display(),
            model.arch.task.name(),
            task.name()
        )));
    }
    let f = load_image(&input)?;
    if f.channels() != model.arch.channels {
        return Err(Error::Shape(format!("model expects {} channel(s), input has {}", model.arch.channels, f.channels())));
    }
    let guide = match (&a.guide, task.is_joint()) {
        (Some(p), true) => Some(load_image(p)?),
        (None, true) => return Err(Error::Config("depth upsampling needs --guide".into())),
        (Some(_), false) => return Err(Error::Config("--guide only applies to srdepth".into())),
        (None, false) => None,
    };
    let restored = infer(&model, &f, guide.as_ref(), &solver)?;
    write_image(&restored, &out)?;
    if let (Some(truth), Some(report)) = (&a.truth, &a.report) {
        print_report(&write_report(&restored, truth, task.is_joint().then_some(BMP_DELTA), report)?);
    } else if let Some(truth) = &a.truth {
        print_report(&MetricReport::compute(&restored, &load_image(truth)?, task.is_joint().then_some(BMP_DELTA))?);
    }
    write_atomic(&sidecar(&out), to_toml(&a)?.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineArgs {
    /// l1 (alias tv), l0 or lp.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg: Option<String>,
    /// Exponent for --reg lp.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `beta0,alpha,beta_max`; defaults to `2λ,2,256λ`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[arg(long = "in")]
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Per-round trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn parse_schedule(s: &str, lambda: f64) -> Result<ContinuationSchedule> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("schedule must be beta0,alpha,beta_max; got {s:?}")))?;
    let [beta0, alpha, beta_max] = parts[..] else {
        return Err(Error::Config(format!("schedule must have three values, got {s:?}")));
    };
    let sched = ContinuationSchedule { beta0, alpha, beta_max, lambda };
    sched.validate()?;
    Ok(sched)
}

pub fn run_baseline(args: BaselineArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let input = require(&a.input, "in")?;
    let out = require(&a.out, "out")?;
    if a.report.is_some() && a.truth.is_none() {
        return Err(Error::Config("--report needs --truth".into()));
    }
    let lambda = *a.lambda.get_or_insert(5.0);
    let reg = match a.reg.get_or_insert_with(|| "l1".into()).to_ascii_lowercase().as_str() {
        "l1" | "tv" => Regularizer::L1,
        "l0" => Regularizer::L0,
        "lp" => Regularizer::lp(*a.p.get_or_insert(0.5)).map_err(|e| Error::Config(e.to_string()))?,
        other => return Err(Error::Config(format!("unknown regularizer {other:?} (expected l1, l0 or lp)"))),
    };
    let default_sched = ContinuationSchedule::with_lambda(lambda);
    let sched_text = a
        .schedule
        .get_or_insert_with(|| format!("{},{},{}", default_sched.beta0, default_sched.alpha, default_sched.beta_max))
        .clone();
    let sched = parse_schedule(&sched_text, lambda)?;
    let backend = *a.backend.get_or_insert(Backend::Fft);
    let trace_path = a
        .trace
        .get_or_insert_with(|| {
            let mut s = out.as_os_str().to_owned();
            s.push(".trace.csv");
            PathBuf::from(s)
        })
        .clone();
    let f = load_image(&input)?;
    let (u, trace) = am_solve(&f, &AmConfig::new(reg, sched, backend))?;
    write_image(&u, &out)?;
    write_atomic(&trace_path, trace.to_csv().as_bytes())?;
    if let Some(truth) = &a.truth {
        let r = match &a.report {
            Some(report) => write_report(&u, truth, None, report)?,
            None => MetricReport::compute(&u, &load_image(truth)?, None)?,
        };
        print_report(&r);
    }
    write_atomic(&sidecar(&out), to_toml(&a)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_parsing() {
        let s = parse_schedule("10,2,1280", 5.0).unwrap();
        assert_eq!(s.betas().len(), 8);
        assert!(parse_schedule("10,2", 5.0).is_err());
        assert!(parse_schedule("10,0.5,1280", 5.0).is_err());
        assert!(parse_schedule("a,b,c", 5.0).is_err());
    }
}
