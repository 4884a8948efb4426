use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{merge, sidecar, to_toml, write_atomic};
use crate::cascade::{cascade_backward, cascade_forward, ArchConfig, CascadeModel, CascadeObjective, ReconstructObjective, Task};
use crate::image::GradientField;
use crate::nn::gradcheck::{random_input, Corrupted, LayerStack};
use crate::nn::{gradcheck, GradcheckReport, Mode, Tensor4};
use crate::solver::{assemble, BandedCholesky, GammaMap, Ic0, SolverConfig, pcg_solve};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// K = 2, depth 3, width 4 on 8x8.
    Tiny,
    /// K = 2, depth 4, width 8 on 12x12, plus a 2x8x9x9 layer stack.
    Small,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Relative L2 distance between parameter gradients from capped backward
/// solves and from effectively exact ones.
pub fn truncated_backward_error(
    model: &CascadeModel,
    f: &Tensor4,
    g: Option<&Tensor4>,
    backward: &SolverConfig,
    projection_seed: u64,
) -> Result<f64> {
    let (u, cache) = cascade_forward(model, f, g, Mode::Train, &SolverConfig::EXACT)?;
    let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
    let (n, c, h, w) = u.shape();
    let r = Tensor4::new(n, c, h, w, (0..u.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let grads = |cfg: &SolverConfig| -> Result<Vec<f64>> {
        let mut m = model.clone();
        m.zero_grad();
        cascade_backward(&mut m, &cache, &r, cfg)?;
        Ok(m.params_mut().iter().flat_map(|p| p.grad.clone()).collect())
    };
    let exact = grads(&SolverConfig::EXACT)?;
    let capped = grads(backward)?;
    let diff: f64 = exact.iter().zip(&capped).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

/// Per-component reports of the gradient verification suite.
pub struct GradcheckSuite {
    pub components: Vec<(String, GradcheckReport)>,
    /// The deliberately corrupted objective; must fail.
    pub negative_control: GradcheckReport,
    pub truncated_backward: f64,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|(_, r)| r.passed()) && !self.negative_control.passed()
    }
}

pub fn gradcheck_suite(scale: Scale, seed: u64, tol: f64) -> Result<GradcheckSuite> {
    let (layer_shape, arch_of, side) = match scale {
        Scale::Tiny => ((2, 2, 5, 5), ArchConfig::tiny as fn(Task) -> ArchConfig, 8),
        Scale::Small => ((2, 8, 9, 9), ArchConfig::tiny as fn(Task) -> ArchConfig, 12),
    };
    let arch = |task| {
        let a = arch_of(task);
        match scale {
            Scale::Tiny => a,
            Scale::Small => ArchConfig { depth: 4, width: 8, guide_width: 4, gamma_width: 4, ..a },
        }
    };
    let mut components = Vec::new();
    let (n, c, h, w) = layer_shape;
    let mut layers = LayerStack::conv_norm_relu_conv(c, 3, 2, seed);
    components.push(("layers".to_string(), gradcheck(&mut layers, &random_input(n, c, h, w, seed + 1), tol)?));

    let field = |s| random_input(1, 1, side, side, s).data().to_vec();
    let v = GradientField::new(side, side, 1, field(seed + 2), field(seed + 3))?;
    let gamma: Vec<f64> = field(seed + 4).iter().map(|x| 1.0 + 0.9 * x).collect();
    let mut recon = ReconstructObjective::new(&v, &gamma, SolverConfig::EXACT, seed + 5);
    components.push(("solver backward".to_string(), gradcheck(&mut recon, &random_input(1, 1, side, side, seed + 6), tol)?));

    // images around mid-gray keep every γ pre-activation away from its kink
    let image = |s, ch| {
        let t = random_input(1, ch, side, side, s);
        Tensor4::new(1, ch, side, side, t.data().iter().map(|x| 0.5 + 0.4 * x).collect())
    };
    let f = image(seed + 7, 1)?;
    let model = CascadeModel::new(arch(Task::Denoise), seed + 8)?;
    let mut obj = CascadeObjective { model, guidance: None, solver: SolverConfig::EXACT, mode: Mode::Train, projection_seed: seed + 9 };
    components.push(("cascade".to_string(), gradcheck(&mut obj, &f, tol)?));
    let truncated_backward = truncated_backward_error(&obj.model, &f, None, &SolverConfig::BACKWARD, seed + 9)?;

    let guide = image(seed + 10, 3)?;
    let model = CascadeModel::new(ArchConfig { residual_v: false, ..arch(Task::SrDepth) }, seed + 11)?;
    let mut joint = CascadeObjective { model, guidance: Some(guide.clone()), solver: SolverConfig::EXACT, mode: Mode::Train, projection_seed: seed + 12 };
    components.push(("joint cascade".to_string(), gradcheck(&mut joint, &f, tol)?));

    let arch_r = ArchConfig { residual_v: true, ..arch(Task::SrDepth) };
    let model = CascadeModel::new(arch_r, seed + 13)?;
    let mut residual = CascadeObjective { model, guidance: Some(guide), solver: SolverConfig::EXACT, mode: Mode::Train, projection_seed: seed + 14 };
    components.push(("residual cascade".to_string(), gradcheck(&mut residual, &f, tol)?));

    let mut bad = Corrupted(LayerStack::conv_norm_relu_conv(c, 3, 2, seed));
    let negative_control = gradcheck(&mut bad, &random_input(n, c, h, w, seed + 1), tol)?;
    Ok(GradcheckSuite { components, negative_control, truncated_backward })
}

pub fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let scale = *a.scale.get_or_insert(Scale::Tiny);
    let seed = *a.seed.get_or_insert(0);
    let tol = *a.tol.get_or_insert(1e-5);
    let suite = gradcheck_suite(scale, seed, tol)?;
    let mut text = String::from("component,max_rel_error,status\n");
    for (name, r) in &suite.components {
        let _ = writeln!(text, "{name},{:.3e},{}", r.max_rel_error(), if r.passed() { "pass" } else { "FAIL" });
    }
    let nc = &suite.negative_control;
    let _ = writeln!(text, "negative control,{:.3e},{}", nc.max_rel_error(), if nc.passed() { "FAIL (not detected)" } else { "pass (detected)" });
    let _ = writeln!(text, "truncated backward (10 PCG iterations),{:.3e},info", suite.truncated_backward);
    print!("{text}");
    for (name, r) in suite.components.iter().filter(|(_, r)| !r.passed()) {
        eprintln!("{name}:\n{r}");
    }
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
        write_atomic(&sidecar(out), to_toml(&a)?.as_bytes())?;
    }
    if suite.passed() {
        Ok(())
    } else {
        Err(Error::NotConverged { what: "gradient check".into(), iterations: 0, location: None })
    }
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchArgs {
    /// Grid size as HxW.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Summary CSV; residual histories go to `<stem>.history.csv`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Relative residual at which iterations-to-tolerance is counted.
pub const BENCH_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTrial {
    pub trial: usize,
    pub height: usize,
    pub width: usize,
    /// First iteration with relative residual ≤ [`BENCH_TOL`].
    pub iterations_to_tol: Option<usize>,
    /// Relative residual after 10 iterations.
    pub residual_at_10: f64,
    /// Relative difference of the converged PCG solution from the direct solve.
    pub direct_rel_diff: f64,
    pub pcg10_seconds: f64,
    pub pcg_seconds: f64,
    pub direct_seconds: f64,
    pub history: Vec<f64>,
}

impl BenchTrial {
    pub const CSV_HEADER: &'static str =
        "trial,height,width,iterations_to_1e-5,residual_at_10,direct_rel_diff,pcg10_seconds,pcg_seconds,direct_seconds";

    /// Deterministic columns only; timings vary between runs.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6e},{:.6e},{:.6},{:.6},{:.6}",
            self.trial,
            self.height,
            self.width,
            self.iterations_to_tol.map_or("-".into(), |i| i.to_string()),
            self.residual_at_10,
            self.direct_rel_diff,
            self.pcg10_seconds,
            self.pcg_seconds,
            self.direct_seconds
        )
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size must be HxW with positive integers, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (h, w) = (h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?);
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// One solver trial: γ uniform in [0.1, 10], right-hand side uniform in [-1, 1].
pub fn bench_trial(height: usize, width: usize, trial: usize, seed: u64) -> Result<BenchTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::synth::derive_seed(seed, trial as u64));
    let n = height * width;
    let gamma = GammaMap::new(height, width, (0..n).map(|_| rng.random_range(0.1..10.0)).collect())?;
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = assemble(&gamma)?;
    let t = Instant::now();
    let m = Ic0::factorize(&a)?;
    let _ = pcg_solve(&a, &m, &b, f64::MIN_POSITIVE, 10)?;
    let pcg10_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let m = Ic0::factorize(&a)?;
    let (x, rep) = pcg_solve(&a, &m, &b, 1e-12, 1000)?;
    let pcg_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let direct = BandedCholesky::factorize(&a)?.solve(&b);
    let direct_seconds = t.elapsed().as_secs_f64();
    let diff = x.iter().zip(&direct).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let norm = direct.iter().map(|q| q * q).sum::<f64>().sqrt();
    let residual_at_10 = *rep.history.get(10).or(rep.history.last()).expect("history starts at iteration 0");
    Ok(BenchTrial {
        trial,
        height,
        width,
        iterations_to_tol: rep.history.iter().position(|&r| r <= BENCH_TOL),
        residual_at_10,
        direct_rel_diff: diff / norm,
        pcg10_seconds,
        pcg_seconds,
        direct_seconds,
        history: rep.history,
    })
}

pub fn run_bench(args: BenchArgs) -> Result<()> {
    let mut a = merge(&args, args.config.as_deref())?;
    let (h, w) = parse_size(a.size.get_or_insert_with(|| "64x64".into()))?;
    let trials = *a.trials.get_or_insert(5);
    let seed = *a.seed.get_or_insert(0);
    let results = (0..trials).map(|t| bench_trial(h, w, t, seed)).collect::<Result<Vec<_>>>()?;
    let mut summary = format!("{}\n", BenchTrial::CSV_HEADER);
    let mut history = String::from("trial,iteration,relative_residual\n");
    for r in &results {
        let _ = writeln!(summary, "{}", r.csv_row());
        for (i, v) in r.history.iter().enumerate() {
            let _ = writeln!(history, "{},{i},{v:.6e}", r.trial);
        }
    }
    match &a.out {
        Some(out) => {
            write_atomic(out, summary.as_bytes())?;
            write_atomic(&out.with_extension("history.csv"), history.as_bytes())?;
            write_atomic(&sidecar(out), to_toml(&a)?.as_bytes())?;
        }
        None => print!("{summary}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn bench_header_is_stable() {
        assert_eq!(
            BenchTrial::CSV_HEADER,
            "trial,height,width,iterations_to_1e-5,residual_at_10,direct_rel_diff,pcg10_seconds,pcg_seconds,direct_seconds"
        );
    }

    #[test]
    fn small_bench_trial_agrees_with_direct() {
        let t = bench_trial(16, 12, 0, 3).unwrap();
        assert!(t.direct_rel_diff < 1e-9);
        assert!(t.residual_at_10 <= 1e-5, "{}", t.residual_at_10);
    }
}
