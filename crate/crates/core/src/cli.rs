//! Command-line front end. Every output starts with `#` header lines that
//! record the subcommand, model fingerprint, seed and parameters.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::girsanov::homogenize;
use crate::model::{resolve_model, FiniteMeasure, MultitypeModel};
use crate::numerics::{ExtinctionFields, SolverConfig};
use crate::particle::{extract_last_lineage, simulate_with, ParticleConfig};
use crate::paths::MeasurePath;
use crate::spectral::generalized_eigen;
use crate::spine::{bismut_rates, chain_rates, qprocess_rates, spine_rate_matrix, SpineSampler};
use crate::streams::stream;
use crate::verify::{default_plan, model_plan, report_to_toml, run_plan, summary_table, Status, Suite, VerifyConfig};
use crate::williams::{
    assemble_pnu_decomposition, sample_backward, sample_conditioned_superprocess, sample_qprocess, sample_skeleton, ImmigrationConfig,
    SkeletonLimits,
};

#[derive(Parser, Debug)]
#[command(name = "willow", version, about = "Multitype superprocesses: extinction, spines and Williams decomposition")]
struct Cli {
    /// Worker threads (falls back to WILLOW_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generalized eigenvalue, eigenvectors and stationary law of the spine.
    Eigen(Common),
    /// Extinction tail v and its time derivative on a grid.
    SolveV(SolveV),
    /// Homogenized mechanism data (beta_tilde, beta0, q, varphi).
    Homogenize(Common),
    /// Spine paths.
    Spine(SpineArgs),
    /// Process conditioned to die at h.
    Williams(WilliamsArgs),
    /// Q-process (conditioned on survival forever).
    Qprocess(QArgs),
    /// P_nu sampled through its Williams decomposition.
    DecomposePnu(PnuArgs),
    /// Process seen backward from its extinction time.
    Backward(BackwardArgs),
    /// Branching-particle system.
    Particles(ParticleArgs),
    /// Identity and convergence battery.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Model file or builtin name (ref1, ref2type, critical2type).
    #[arg(long, default_value = "ref2type")]
    model: String,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveV {
    #[command(flatten)]
    common: Common,
    #[arg(long = "T", default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-6)]
    t0: f64,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    /// Number of output intervals on [t0, T].
    #[arg(long, default_value_t = 100)]
    grid: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpineLaw {
    /// Conditioned to die at h.
    H,
    /// Q-process spine.
    Qprocess,
    /// Bismut spine on [0, T].
    Bismut,
    /// Plain type chain.
    Chain,
}

#[derive(Args, Debug)]
struct SpineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "h")]
    law: SpineLaw,
    /// Start type (1-based).
    #[arg(long, default_value_t = 1)]
    x: usize,
    /// Conditioning time for `--law h`.
    #[arg(long, default_value_t = 3.0)]
    h: f64,
    /// Horizon for the other laws.
    #[arg(long = "T", default_value_t = 3.0)]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct WilliamsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3.0)]
    h: f64,
    #[arg(long, default_value_t = 1)]
    x: usize,
    /// Skeleton cutoff (default 0.05 h).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    grid_steps: usize,
    /// Also write the skeleton of each replicate to this file.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    x: usize,
    #[arg(long = "T", default_value_t = 2.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Families dying within delta of their birth are dropped.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    grid_steps: usize,
}

#[derive(Args, Debug)]
struct PnuArgs {
    #[command(flatten)]
    common: Common,
    /// Initial masses per type, comma separated (default: unit mass on type 1).
    #[arg(long)]
    nu: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// End of the output grid.
    #[arg(long = "T", default_value_t = 5.0)]
    t_end: f64,
    /// Horizon of the extinction-tail grid.
    #[arg(long, default_value_t = 200.0)]
    field_horizon: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    grid_steps: usize,
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
}

#[derive(Args, Debug)]
struct BackwardArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    x: usize,
    #[arg(long, default_value_t = 20.0)]
    h: f64,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    grid_steps: usize,
}

#[derive(Args, Debug)]
struct ParticleArgs {
    #[command(flatten)]
    common: Common,
    /// Initial masses per type, comma separated (default: unit mass on type 1).
    #[arg(long)]
    nu: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long = "T", default_value_t = 2.0)]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    grid_steps: usize,
    /// Write the last-surviving lineage of each extinct replicate here.
    #[arg(long)]
    lineage: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "fast")]
    suite: String,
    /// Run every check on this model instead of the reference battery.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file (structured text).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 success, 1 failed checks, 2 usage, 3 model or precondition, 4 numeric,
/// 5 budget.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn threads(arg: Option<usize>) -> Result<usize> {
    if let Some(n) = arg {
        return Ok(n);
    }
    match std::env::var("WILLOW_THREADS") {
        Ok(s) => s.trim().parse().map_err(|_| Error::Usage(format!("WILLOW_THREADS must be an integer, got '{s}'"))),
        Err(_) => Ok(0),
    }
}

fn pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn header(cmd: &str, m: &MultitypeModel, params: &[(&str, String)]) -> String {
    let mut h = format!("# willow {cmd}\n# model = {}\n# fingerprint = {}\n", m.name.as_deref().unwrap_or("custom"), m.fingerprint());
    for (k, v) in params {
        let _ = writeln!(h, "# {k} = {v}");
    }
    h
}

fn type_index(m: &MultitypeModel, x: usize) -> Result<usize> {
    if x == 0 || x > m.k() {
        return Err(Error::Usage(format!("type {x} out of range 1..={}", m.k())));
    }
    Ok(x - 1)
}

fn parse_measure(m: &MultitypeModel, s: Option<&str>) -> Result<FiniteMeasure> {
    let Some(s) = s else {
        return Ok(FiniteMeasure::dirac(m.k(), 0, 1.0));
    };
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad mass '{p}' in --nu"))))
        .collect::<Result<_>>()?;
    if vals.len() != m.k() {
        return Err(Error::Usage(format!("--nu has {} entries, model has {} types", vals.len(), m.k())));
    }
    FiniteMeasure::new(vals)
}

fn mass_header(k: usize) -> String {
    let mut s = "rep,t".to_string();
    for i in 1..=k {
        let _ = write!(s, ",mass_{i}");
    }
    s.push('\n');
    s
}

fn mass_rows(out: &mut String, rep: u64, path: &MeasurePath) {
    for (n, t) in path.times.iter().enumerate() {
        let _ = write!(out, "{rep},{t}");
        for x in &path.masses[n] {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
}

fn uniform(a: f64, b: f64, steps: usize) -> Vec<f64> {
    (0..=steps.max(1)).map(|i| a + (b - a) * i as f64 / steps.max(1) as f64).collect()
}

fn run(cli: Cli) -> Result<i32> {
    let nthreads = threads(cli.threads)?;
    let pool = pool(nthreads)?;
    match cli.command {
        Command::Eigen(c) => {
            let m = resolve_model(&c.model)?;
            let spec = generalized_eigen(&m)?;
            emit(&c.out, &spec.to_toml(&m))?;
        }
        Command::SolveV(a) => {
            let m = resolve_model(&a.common.model)?;
            let cfg = SolverConfig { rtol: a.rtol, atol: a.atol, t0: a.t0, ..SolverConfig::default() };
            let f = ExtinctionFields::compute(&m, a.t_end, &cfg)?;
            let mut s = header("solve-v", &m, &[("T", a.t_end.to_string()), ("t0", a.t0.to_string()), ("rtol", a.rtol.to_string()), ("atol", a.atol.to_string())]);
            s.push('t');
            for i in 1..=m.k() {
                let _ = write!(s, ",v_{i}");
            }
            for i in 1..=m.k() {
                let _ = write!(s, ",dv_{i}");
            }
            s.push('\n');
            for t in uniform(a.t0, a.t_end, a.grid) {
                let t = t.min(f.horizon());
                let _ = write!(s, "{t}");
                for x in f.v.eval(t)? {
                    let _ = write!(s, ",{x}");
                }
                for x in f.dv.eval(t)? {
                    let _ = write!(s, ",{x}");
                }
                s.push('\n');
            }
            emit(&a.common.out, &s)?;
        }
        Command::Homogenize(c) => {
            let m = resolve_model(&c.model)?;
            let hd = homogenize(&m);
            let mut s = header("homogenize", &m, &[]);
            s.push_str(&hd.to_csv());
            emit(&c.out, &s)?;
        }
        Command::Spine(a) => {
            let m = resolve_model(&a.common.model)?;
            let x = type_index(&m, a.x)?;
            let fields;
            let rates = match a.law {
                SpineLaw::H => {
                    fields = ExtinctionFields::compute(&m, a.h + 1.0, &SolverConfig::default())?;
                    spine_rate_matrix(&m, &fields.dv, a.h)?
                }
                SpineLaw::Qprocess => qprocess_rates(&m, &generalized_eigen(&m)?, a.t_end),
                SpineLaw::Bismut => bismut_rates(&m, a.t_end)?,
                SpineLaw::Chain => chain_rates(&m, a.t_end),
            };
            let sampler = SpineSampler::new(rates);
            let paths: Vec<_> = pool.install(|| {
                (0..a.reps).into_par_iter().map(|r| sampler.sample(x, &mut stream(a.seed, "spine", r, 0))).collect::<Result<Vec<_>>>()
            })?;
            let mut s = header(
                "spine",
                &m,
                &[("law", format!("{:?}", a.law).to_lowercase()), ("x", a.x.to_string()), ("h", a.h.to_string()), ("T", a.t_end.to_string()), ("seed", a.seed.to_string())],
            );
            s.push_str("rep,t,type\n");
            for (r, p) in paths.iter().enumerate() {
                let _ = writeln!(s, "{r},{},{}", p.start, p.origin + 1);
                for (t, y) in &p.jumps {
                    let _ = writeln!(s, "{r},{t},{}", y + 1);
                }
                let _ = writeln!(s, "{r},{},{}", p.end, p.end_type() + 1);
            }
            emit(&a.common.out, &s)?;
        }
        Command::Williams(a) => {
            let m = resolve_model(&a.common.model)?;
            let x = type_index(&m, a.x)?;
            let delta = a.delta.unwrap_or(0.05 * a.h);
            let f = ExtinctionFields::compute(&m, a.h + 1.0, &SolverConfig::default())?;
            let cfg = ImmigrationConfig::new(a.epsilon, uniform(0.0, a.h, a.grid_steps));
            let out: Vec<(MeasurePath, Option<String>)> = pool.install(|| {
                (0..a.reps)
                    .into_par_iter()
                    .map(|r| {
                        let p = sample_conditioned_superprocess(&m, &f, x, a.h, &cfg, &mut stream(a.seed, "williams", r, 0))?;
                        let sk = match a.skeleton {
                            Some(_) => Some(sample_skeleton(&m, &f, x, a.h, delta, SkeletonLimits::default(), &mut stream(a.seed, "williams-skeleton", r, 0))?.to_text()),
                            None => None,
                        };
                        Ok((p, sk))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let params = [
                ("h", a.h.to_string()),
                ("x", a.x.to_string()),
                ("delta", delta.to_string()),
                ("epsilon", a.epsilon.to_string()),
                ("reps", a.reps.to_string()),
                ("seed", a.seed.to_string()),
            ];
            let mut s = header("williams", &m, &params);
            s.push_str(&mass_header(m.k()));
            for (r, (p, _)) in out.iter().enumerate() {
                mass_rows(&mut s, r as u64, p);
            }
            emit(&a.common.out, &s)?;
            if let Some(path) = &a.skeleton {
                let mut t = header("williams skeleton", &m, &params);
                for (r, (_, sk)) in out.iter().enumerate() {
                    let _ = writeln!(t, "[rep {r}]");
                    t.push_str(sk.as_deref().unwrap_or(""));
                }
                std::fs::write(path, t).map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Command::Qprocess(a) => {
            let m = resolve_model(&a.common.model)?;
            let x = type_index(&m, a.x)?;
            let spec = generalized_eigen(&m)?;
            let cfg = ImmigrationConfig::new(a.epsilon, uniform(0.0, a.t_end, a.grid_steps));
            let paths: Vec<_> = pool.install(|| {
                (0..a.reps)
                    .into_par_iter()
                    .map(|r| sample_qprocess(&m, &spec, x, a.t_end, a.delta, &cfg, &mut stream(a.seed, "qprocess", r, 0)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut s = header(
                "qprocess",
                &m,
                &[("x", a.x.to_string()), ("T", a.t_end.to_string()), ("epsilon", a.epsilon.to_string()), ("delta", a.delta.to_string()), ("seed", a.seed.to_string())],
            );
            s.push_str(&mass_header(m.k()));
            for (r, p) in paths.iter().enumerate() {
                mass_rows(&mut s, r as u64, p);
            }
            emit(&a.common.out, &s)?;
        }
        Command::DecomposePnu(a) => {
            let m = resolve_model(&a.common.model)?;
            let nu = parse_measure(&m, a.nu.as_deref())?;
            let f = ExtinctionFields::compute(&m, a.field_horizon, &SolverConfig::default())?;
            let cfg = ImmigrationConfig::new(a.epsilon, uniform(0.0, a.t_end, a.grid_steps));
            let samples: Vec<_> = pool.install(|| {
                (0..a.reps)
                    .into_par_iter()
                    .map(|r| assemble_pnu_decomposition(&m, &f, &nu, &cfg, a.budget, &mut stream(a.seed, "decompose-pnu", r, 0)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut s = header(
                "decompose-pnu",
                &m,
                &[("nu", format!("{:?}", nu.masses())), ("epsilon", a.epsilon.to_string()), ("T", a.t_end.to_string()), ("seed", a.seed.to_string())],
            );
            s.push_str("# per replicate: rep,h0,x0,attempts\n");
            for (r, p) in samples.iter().enumerate() {
                let _ = writeln!(s, "# {r},{},{},{}", p.h0, p.x0 + 1, p.attempts);
            }
            s.push_str(&mass_header(m.k()));
            for (r, p) in samples.iter().enumerate() {
                mass_rows(&mut s, r as u64, &p.path);
            }
            emit(&a.common.out, &s)?;
        }
        Command::Backward(a) => {
            let m = resolve_model(&a.common.model)?;
            let x = type_index(&m, a.x)?;
            let f = ExtinctionFields::compute(&m, a.h + 1.0, &SolverConfig::default())?;
            let paths: Vec<_> = pool.install(|| {
                (0..a.reps)
                    .into_par_iter()
                    .map(|r| sample_backward(&m, &f, x, a.h, a.window, a.epsilon, a.grid_steps, &mut stream(a.seed, "backward", r, 0)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut s = header(
                "backward",
                &m,
                &[("x", a.x.to_string()), ("h", a.h.to_string()), ("window", a.window.to_string()), ("epsilon", a.epsilon.to_string()), ("seed", a.seed.to_string())],
            );
            s.push_str(&mass_header(m.k()));
            for (r, p) in paths.iter().enumerate() {
                mass_rows(&mut s, r as u64, p);
            }
            emit(&a.common.out, &s)?;
        }
        Command::Particles(a) => {
            let m = resolve_model(&a.common.model)?;
            let nu = parse_measure(&m, a.nu.as_deref())?;
            let mut cfg = ParticleConfig::new(a.epsilon, a.t_end, a.grid_steps);
            cfg.genealogy = a.lineage.is_some();
            let trajs: Vec<_> = pool.install(|| {
                (0..a.reps)
                    .into_par_iter()
                    .map(|r| simulate_with(&m, &nu, &cfg, &mut stream(a.seed, "particles", r, 0)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let params = [
                ("nu", format!("{:?}", nu.masses())),
                ("epsilon", a.epsilon.to_string()),
                ("T", a.t_end.to_string()),
                ("reps", a.reps.to_string()),
                ("seed", a.seed.to_string()),
            ];
            let mut s = header("particles", &m, &params);
            s.push_str(&mass_header(m.k()));
            for (r, t) in trajs.iter().enumerate() {
                mass_rows(&mut s, r as u64, &t.path);
            }
            emit(&a.common.out, &s)?;
            if let Some(path) = &a.lineage {
                let mut l = header("particles lineage", &m, &params);
                l.push_str("rep,t,type\n");
                for (r, t) in trajs.iter().enumerate() {
                    if let Ok(p) = extract_last_lineage(t) {
                        let _ = writeln!(l, "{r},{},{}", p.start, p.origin + 1);
                        for (tj, y) in &p.jumps {
                            let _ = writeln!(l, "{r},{tj},{}", y + 1);
                        }
                        let _ = writeln!(l, "{r},{},{}", p.end, p.end_type() + 1);
                    }
                }
                std::fs::write(path, l).map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
        Command::Verify(a) => {
            let suite: Suite = a.suite.parse()?;
            let cfg = VerifyConfig { suite, seed: a.seed };
            let plan = match &a.model {
                Some(arg) => model_plan(&resolve_model(arg)?),
                None => default_plan(),
            };
            let reports = run_plan(&plan, &cfg, nthreads)?;
            print!("{}", summary_table(&reports));
            if let Some(p) = &a.out {
                std::fs::write(p, report_to_toml(&reports, &cfg)).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
            if reports.iter().any(|r| r.status == Status::Fail) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}
