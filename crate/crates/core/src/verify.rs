//! Identity and convergence battery with machine-readable reports.
//!
//! Every check draws its randomness from `stream(seed, check name, rep, 0)`,
//! so a report is reproduced bit for bit from its model, suite and seed.
//! Runtimes are kept out of the serialized report for that reason.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::{girsanov_weight, homogenize, sigma_field, spine_weight};
use crate::model::{FiniteMeasure, MultitypeModel};
use crate::numerics::{bismut_cross_check, feynman_kac, solve_v, v0_closed, ExtinctionFields, SolverConfig};
use crate::particle::{extract_last_lineage, particle_laplace, simulate_with, ParticleConfig};
use crate::spectral::{generalized_eigen, SpectralData};
use crate::spine::{chain_rates, spine_marginal, spine_rate_matrix, SpineSampler};
use crate::stats::{chi_square_gof, ks_one_sample, ks_two_sample, mean_se};
use crate::streams::stream;
use crate::williams::{extinction_cdf, qprocess_mean, sample_backward, sample_qprocess, ImmigrationConfig};

/// Names of the checks, in report order.
pub const CHECKS: [&str; 15] = [
    "many-to-one",
    "extinction-cdf",
    "girsanov-mean",
    "spine-martingale",
    "sigma-bounds",
    "v-sandwich",
    "v-exponential",
    "v-critical",
    "bismut-identity",
    "spine-rate-limit",
    "eigen-density-limit",
    "williams-lineage",
    "qprocess-moment",
    "backward-stabilize",
    "tail-increment",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fast,
    Full,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            _ => Err(Error::Usage(format!("unknown suite '{s}' (expected fast or full)"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Fast => "fast",
            Suite::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        })
    }
}

/// Outcome of one check on one model.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub model: String,
    pub fingerprint: String,
    pub status: Status,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, String>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub suite: Suite,
    pub seed: u64,
}

struct Outcome {
    statistic: f64,
    threshold: f64,
    pass: bool,
    detail: String,
    params: Vec<(&'static str, String)>,
}

enum Run {
    Done(Outcome),
    Skip(String),
}

fn full(cfg: &VerifyConfig) -> bool {
    cfg.suite == Suite::Full
}

/// Runs one named check.
pub fn run_check(name: &str, m: &MultitypeModel, cfg: &VerifyConfig) -> Result<CheckReport> {
    if !CHECKS.contains(&name) {
        return Err(Error::Usage(format!("unknown check '{name}' (known: {})", CHECKS.join(", "))));
    }
    let start = Instant::now();
    let res = match name {
        "many-to-one" => many_to_one(m, cfg),
        "extinction-cdf" => extinction_check(m, cfg),
        "girsanov-mean" => girsanov_mean(m, cfg),
        "spine-martingale" => spine_martingale(m, cfg),
        "sigma-bounds" => sigma_bounds(m),
        "v-sandwich" => v_sandwich(m),
        "v-exponential" => v_exponential(m),
        "v-critical" => v_critical(m),
        "bismut-identity" => bismut_identity(m),
        "spine-rate-limit" => spine_rate_limit(m),
        "eigen-density-limit" => eigen_density_limit(m),
        "williams-lineage" => williams_lineage(m, cfg),
        "qprocess-moment" => qprocess_moment(m, cfg),
        "backward-stabilize" => backward_stabilize(m, cfg),
        "tail-increment" => tail_increment(m),
        _ => unreachable!(),
    };
    let mut report = CheckReport {
        name: name.to_string(),
        model: m.name.clone().unwrap_or_else(|| "custom".into()),
        fingerprint: m.fingerprint(),
        status: Status::Fail,
        statistic: f64::NAN,
        threshold: f64::NAN,
        detail: String::new(),
        seed: cfg.seed,
        parameters: BTreeMap::new(),
        runtime: Duration::ZERO,
    };
    match res {
        Ok(Run::Done(o)) => {
            report.status = if o.pass { Status::Pass } else { Status::Fail };
            report.statistic = o.statistic;
            report.threshold = o.threshold;
            report.detail = o.detail;
            report.parameters = o.params.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        }
        Ok(Run::Skip(why)) => {
            report.status = Status::Skipped;
            report.detail = why;
        }
        Err(e) => report.detail = format!("error: {e}"),
    }
    report.parameters.insert("suite".into(), cfg.suite.to_string());
    report.runtime = start.elapsed();
    Ok(report)
}

/// Checks and models of the default battery.
pub fn default_plan() -> Vec<(&'static str, MultitypeModel)> {
    let m1 = MultitypeModel::reference_homogeneous();
    let m2 = MultitypeModel::reference_two_type();
    let m3 = MultitypeModel::reference_critical();
    vec![
        ("many-to-one", m1.clone()),
        ("many-to-one", m2.clone()),
        ("extinction-cdf", m3.clone()),
        ("girsanov-mean", m2.clone()),
        ("spine-martingale", m2.clone()),
        ("sigma-bounds", m1.clone()),
        ("sigma-bounds", m2.clone()),
        ("v-sandwich", m2.clone()),
        ("v-exponential", m2.clone()),
        ("v-critical", m3),
        ("bismut-identity", m1.clone()),
        ("bismut-identity", m2.clone()),
        ("spine-rate-limit", m2.clone()),
        ("eigen-density-limit", m2.clone()),
        ("williams-lineage", m2.clone()),
        ("qprocess-moment", m2.clone()),
        ("backward-stabilize", m2.clone()),
        ("tail-increment", m2.clone()),
        ("tail-increment", m1),
    ]
}

/// Every check on one model.
pub fn model_plan(m: &MultitypeModel) -> Vec<(&'static str, MultitypeModel)> {
    CHECKS.iter().map(|&c| (c, m.clone())).collect()
}

/// Runs a plan on `threads` workers (0 = all cores). Reports come back in
/// plan order whatever the scheduling.
pub fn run_plan(plan: &[(&'static str, MultitypeModel)], cfg: &VerifyConfig, threads: usize) -> Result<Vec<CheckReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| plan.par_iter().map(|(name, m)| run_check(name, m, cfg)).collect())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    suite: Suite,
    seed: u64,
    check: &'a [CheckReport],
}

/// Structured text (TOML) form of a battery; byte-identical across reruns.
pub fn report_to_toml(reports: &[CheckReport], cfg: &VerifyConfig) -> String {
    let file = ReportFile { suite: cfg.suite, seed: cfg.seed, check: reports };
    let body = toml::to_string(&file).expect("report serialization");
    format!("# willow verification report\n{body}")
}

/// One line per check, runtimes included.
pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut out = format!("{:<22} {:<16} {:>8} {:>13} {:>13} {:>9}\n", "check", "model", "status", "statistic", "threshold", "seconds");
    for r in reports {
        out.push_str(&format!(
            "{:<22} {:<16} {:>8} {:>13.5e} {:>13.5e} {:>9.2}\n",
            r.name,
            r.model,
            r.status.to_string(),
            r.statistic,
            r.threshold,
            r.runtime.as_secs_f64()
        ));
    }
    out
}

fn lambda0(m: &MultitypeModel) -> Result<SpectralData> {
    generalized_eigen(m)
}

fn fields(m: &MultitypeModel, t: f64) -> Result<ExtinctionFields> {
    ExtinctionFields::compute(m, t, &SolverConfig::default())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// `N_x[X_t(1)]` from single mass-`epsilon` ancestors (rescaled by
/// `1/epsilon`) against the Feynman-Kac first moment.
fn many_to_one(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let (reps, eps) = if full(cfg) { (10_000u64, 1.0 / 200.0) } else { (2_000, 1.0 / 50.0) };
    let times = [0.5, 1.0, 2.0];
    let x = 0;
    let k = m.k();
    let pc = ParticleConfig { epsilon: eps, horizon: 2.0, grid: vec![0.0, 0.5, 1.0, 2.0], genealogy: false, max_population: 5_000_000 };
    let nu = FiniteMeasure::dirac(k, x, eps);
    let mut samples = vec![Vec::with_capacity(reps as usize); times.len()];
    for r in 0..reps {
        let traj = simulate_with(m, &nu, &pc, &mut stream(cfg.seed, "many-to-one", r, 0))?;
        for (j, &t) in times.iter().enumerate() {
            samples[j].push(traj.path.total_mass_at(t)? / eps);
        }
    }
    let beta = m.beta.clone();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let exact = feynman_kac(m, |_, out| out.copy_from_slice(beta.as_slice()), &vec![1.0; k], t)?[x];
        let (mean, se) = mean_se(&samples[j]);
        let z = (mean - exact).abs() / se;
        worst = worst.max(z);
        detail.push(format!("t={t}: mc={mean:.5} se={se:.5} exact={exact:.6}"));
    }
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: 3.0,
        pass: worst < 3.0,
        detail: detail.join("; "),
        params: vec![("reps", reps.to_string()), ("epsilon", eps.to_string()), ("times", fmt_list(&times)), ("x", "1".into())],
    }))
}

/// Largest gap between the exact particle-system extinction CDF and
/// `exp(-nu(v_h))` on `(0, cap]`, for `nu = mass * delta_x`.
pub fn extinction_bias_envelope(m: &MultitypeModel, v: &crate::numerics::ScalarField, x: usize, mass: f64, eps: f64, cap: f64) -> Result<f64> {
    let k = m.k();
    let n = (mass / eps - 1e-9).ceil();
    let nu = FiniteMeasure::dirac(k, x, mass);
    let mut sup: f64 = 0.0;
    for j in 1..=120 {
        let h = cap * j as f64 / 120.0;
        let w = particle_laplace(m, eps, None, &vec![0.0; k], h)?;
        sup = sup.max((w[x].powf(n) - extinction_cdf(v, &nu, h)).abs());
    }
    Ok(sup)
}

fn extinction_check(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 < -1e-9 {
        return Ok(Run::Skip(format!("lambda0 = {:.4} < 0: extinction is not certain", spec.lambda0)));
    }
    let (reps, eps) = if full(cfg) { (100_000u64, 1.0 / 40.0) } else { (5_000, 0.1) };
    let cap = 3.0;
    let x = 0;
    let f = fields(m, cap + 1.0)?;
    let nu = FiniteMeasure::dirac(m.k(), x, 1.0);
    let pc = ParticleConfig { epsilon: eps, horizon: cap, grid: vec![0.0], genealogy: false, max_population: 5_000_000 };
    let mut hs = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        hs.push(simulate_with(m, &nu, &pc, &mut stream(cfg.seed, "extinction-cdf", r, 0))?.path.extinction_time);
    }
    let (d, p) = ks_one_sample(&hs, |h| extinction_cdf(&f.v, &nu, h), cap);
    let env = extinction_bias_envelope(m, &f.v, x, 1.0, eps, cap)?;
    let env_half = extinction_bias_envelope(m, &f.v, x, 1.0, eps / 2.0, cap)?;
    let shrinks = env_half < env;
    let threshold = if full(cfg) { 0.02 } else { env + 1.63 / (reps as f64).sqrt() };
    Ok(Run::Done(Outcome {
        statistic: d,
        threshold,
        pass: d < threshold && shrinks,
        detail: format!("ks p={p:.4}; exact epsilon-bias envelope {env:.5} at epsilon, {env_half:.5} at epsilon/2"),
        params: vec![
            ("reps", reps.to_string()),
            ("epsilon", eps.to_string()),
            ("censor_at", cap.to_string()),
            ("nu", format!("delta_{} (mass 1)", x + 1)),
        ],
    }))
}

fn girsanov_mean(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let (reps, eps) = if full(cfg) { (10_000u64, 0.01) } else { (2_000, 0.05) };
    let t = 1.0;
    let x = 0;
    let hd = homogenize(m);
    let mt = hd.tilde_model()?;
    let nu = FiniteMeasure::dirac(m.k(), x, 1.0);
    let pc = ParticleConfig { epsilon: eps, horizon: t, grid: vec![0.0, t], genealogy: false, max_population: 5_000_000 };
    let mut ws = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        let traj = simulate_with(&mt, &nu, &pc, &mut stream(cfg.seed, "girsanov-mean", r, 0))?;
        ws.push(girsanov_weight(&traj.path, &hd, t)?);
    }
    let (mean, se) = mean_se(&ws);
    let n = (1.0 / eps - 1e-9).ceil();
    let w = particle_laplace(&mt, eps, Some(&hd.q), &hd.varphi, t)?;
    let exact_particle = (n * eps * hd.q[x]).exp() * w[x].powf(n);
    let z = (mean - 1.0).abs() / se;
    Ok(Run::Done(Outcome {
        statistic: z,
        threshold: 3.0,
        pass: z < 3.0,
        detail: format!("mean={mean:.5} se={se:.5}; exact particle-system mean {exact_particle:.6}"),
        params: vec![("reps", reps.to_string()), ("epsilon", eps.to_string()), ("t", t.to_string()), ("nu", format!("delta_{} (mass 1)", x + 1))],
    }))
}

fn spine_martingale(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let reps = if full(cfg) { 100_000u64 } else { 10_000 };
    let (h, t, x) = (3.0, 1.0, 0);
    let f = fields(m, h + 0.5)?;
    let sampler = SpineSampler::new(chain_rates(m, t));
    let mut ws = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        let p = sampler.sample(x, &mut stream(cfg.seed, "spine-martingale", r, 0))?;
        ws.push(spine_weight(&p, m, &f.v, &f.dv, h, t)?);
    }
    let (mean, se) = mean_se(&ws);
    let z = if se > 0.0 { (mean - 1.0).abs() / se } else { (mean - 1.0).abs() / 1e-12 };
    Ok(Run::Done(Outcome {
        statistic: z,
        threshold: 3.0,
        pass: z < 3.0,
        detail: format!("mean={mean:.6} se={se:.6}"),
        params: vec![("reps", reps.to_string()), ("h", h.to_string()), ("t", t.to_string()), ("x", "1".into())],
    }))
}

/// `v` of the homogenized model on `[0.01, 20]`.
fn tilde_v(m: &MultitypeModel) -> Result<(crate::girsanov::HomogenizationData, crate::numerics::ScalarField)> {
    let hd = homogenize(m);
    let mt = hd.tilde_model()?;
    let v = solve_v(&mt, 20.0, SolverConfig::default().t0)?;
    Ok((hd, v))
}

fn sigma_bounds(m: &MultitypeModel) -> Result<Run> {
    let (hd, vt) = tilde_v(m)?;
    let sigma = sigma_field(&hd, &vt)?;
    let mut worst: f64 = 0.0;
    let mut smax: f64 = 0.0;
    for (n, &t) in sigma.nodes().iter().enumerate() {
        if t < 0.01 {
            continue;
        }
        let scale = 1.0 + v0_closed(hd.beta0, t)?;
        for x in 0..m.k() {
            let s = sigma.node_value(n, x);
            smax = smax.max(s.abs());
            worst = worst.max((-s).max(s - 2.0 * hd.q[x]).max(0.0) / scale);
        }
    }
    let tol = 1e-8;
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: tol,
        pass: worst <= tol,
        detail: format!("largest relative violation of 0 <= Sigma <= 2q; max |Sigma| = {smax:.3e}"),
        params: vec![("t_range", "[0.01,20]".into())],
    }))
}

fn v_sandwich(m: &MultitypeModel) -> Result<Run> {
    let (hd, vt) = tilde_v(m)?;
    let mut worst: f64 = 0.0;
    for (n, &t) in vt.nodes().iter().enumerate() {
        if t < 0.01 {
            continue;
        }
        let v0 = v0_closed(hd.beta0, t)?;
        for x in 0..m.k() {
            let w = vt.node_value(n, x);
            worst = worst.max((v0 - w).max(w - v0 - hd.q[x]).max(0.0) / (1.0 + v0));
        }
    }
    let tol = 1e-8;
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: tol,
        pass: worst <= tol,
        detail: "largest relative violation of v0 <= v_tilde <= q + v0".into(),
        params: vec![("t_range", "[0.01,20]".into())],
    }))
}

/// `e^{lambda0 t} v_t(x) / phi0(x)` at the nodes with `t >= 1`.
fn normalized_decay(m: &MultitypeModel, spec: &SpectralData, t_end: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let v = solve_v(m, t_end, SolverConfig::default().t0)?;
    Ok(v.nodes()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= 1.0)
        .map(|(n, &t)| (t, (0..m.k()).map(|x| (spec.lambda0 * t).exp() * v.node_value(n, x) / spec.phi0[x]).collect()))
        .collect())
}

fn v_exponential(m: &MultitypeModel) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 <= 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 > 0 (got {:.3e})", spec.lambda0)));
    }
    let t_end = 30.0 / spec.lambda0;
    let g = normalized_decay(m, &spec, t_end)?;
    let all = g.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    let ratio = hi / lo;
    // Flattening: relative variation over [T/2, T] below that over [T/4, T/2].
    let var_on = |a: f64, b: f64| {
        let vals: Vec<f64> = g.iter().filter(|(t, _)| *t >= a && *t <= b).flat_map(|(_, v)| v.iter().copied()).collect();
        let (l, h) = vals.iter().fold((f64::INFINITY, 0.0f64), |(p, q), &x| (p.min(x), q.max(x)));
        (h - l) / h
    };
    let late = var_on(t_end / 2.0, t_end);
    let mid = var_on(t_end / 4.0, t_end / 2.0);
    let flattening = late <= mid || late < 1e-8;
    Ok(Run::Done(Outcome {
        statistic: ratio,
        threshold: 10.0,
        pass: ratio <= 10.0 && flattening,
        detail: format!("C3 = {lo:.6}, C4 = {hi:.6}; relative variation {mid:.3e} on [T/4,T/2], {late:.3e} on [T/2,T]"),
        params: vec![("t_range", format!("[1,{t_end:.4}]"))],
    }))
}

fn v_critical(m: &MultitypeModel) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0.abs() > 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 = 0 (got {:.3e})", spec.lambda0)));
    }
    let v = solve_v(m, 50.0, SolverConfig::default().t0)?;
    let ap: Vec<f64> = (0..m.k()).map(|x| m.alpha[x] * spec.phi0[x]).collect();
    let sup_ap = ap.iter().fold(0.0f64, |a, &b| a.max(b));
    let sup_inv = ap.iter().fold(0.0f64, |a, &b| a.max(1.0 / b));
    let mut worst: f64 = 0.0;
    for (n, &t) in v.nodes().iter().enumerate() {
        if t < 0.01 {
            continue;
        }
        for x in 0..m.k() {
            let mid = t * v.node_value(n, x) / spec.phi0[x];
            let lo = ap[x] / (sup_ap * sup_ap);
            let hi = ap[x] * sup_inv * sup_inv;
            worst = worst.max(((lo - mid) / lo).max((mid - hi) / hi).max(0.0));
        }
    }
    let tol = 1e-8;
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: tol,
        pass: worst <= tol,
        detail: "largest relative violation of the critical bounds on t v^{phi0}_t".into(),
        params: vec![("t_range", "[0.01,50]".into())],
    }))
}

fn bismut_identity(m: &MultitypeModel) -> Result<Run> {
    let ones = vec![1.0; m.k()];
    let (l, r) = bismut_cross_check(m, &ones, &ones, 1.5)?;
    let d = l.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Run::Done(Outcome {
        statistic: d,
        threshold: 1e-6,
        pass: d <= 1e-6,
        detail: format!("lhs = [{}], rhs = [{}]", fmt_list(&l), fmt_list(&r)),
        params: vec![("t", "1.5".into()), ("f", "1".into()), ("g", "1".into())],
    }))
}

/// `sup |rate^(h)(0) - rate^{phi0}|` over off-diagonal entries.
pub fn spine_rate_gap(m: &MultitypeModel, spec: &SpectralData, dv: &crate::numerics::ScalarField, h: f64) -> Result<f64> {
    let r = spine_rate_matrix(m, dv, h)?;
    let a = r.matrix(0.0)?;
    let b = spec.spine_generator(m);
    let mut d: f64 = 0.0;
    for i in 0..m.k() {
        for j in 0..m.k() {
            if i != j {
                d = d.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
    }
    Ok(d)
}

fn spine_rate_limit(m: &MultitypeModel) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 <= 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 > 0 (got {:.3e})", spec.lambda0)));
    }
    let h_max = 30.0 / spec.lambda0;
    let f = fields(m, h_max + 1.0)?;
    let hs: Vec<f64> = (0..6).rev().map(|j| h_max / 2f64.powi(j)).collect();
    let gaps: Vec<f64> = hs.iter().map(|&h| spine_rate_gap(m, &spec, &f.dv, h)).collect::<Result<_>>()?;
    let floor = 1e-12;
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + floor);
    let last = *gaps.last().unwrap();
    Ok(Run::Done(Outcome {
        statistic: last,
        threshold: 1e-6,
        pass: last < 1e-6 && monotone,
        detail: format!("gaps on the doubling grid: [{}]; monotone within {floor:e}: {monotone}", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>().join(", ")),
        params: vec![("h_grid", fmt_list(&hs))],
    }))
}

fn eigen_density_limit(m: &MultitypeModel) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 <= 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 > 0 (got {:.3e})", spec.lambda0)));
    }
    let h = 20.0 / spec.lambda0;
    let f = fields(m, h + 1.0)?;
    let dv = f.dv.eval(h)?;
    let sdv: f64 = dv.iter().sum();
    let sphi: f64 = spec.phi0.iter().sum();
    let d = (0..m.k()).map(|x| (dv[x] / sdv - spec.phi0[x] / sphi).abs()).fold(0.0, f64::max);
    Ok(Run::Done(Outcome {
        statistic: d,
        threshold: 1e-4,
        pass: d < 1e-4,
        detail: "sup_x |dv_h(x)/nu(dv_h) - phi0(x)/nu(phi0)| with nu the counting measure".into(),
        params: vec![("h", format!("{h}"))],
    }))
}

/// Type marginals of `P^(h)_x` at `times`, averaged over `h` in `[a, b]`
/// with the extinction density of `P_{delta_x}` (Simpson, 16 panels).
pub fn binned_lineage_marginal(m: &MultitypeModel, f: &ExtinctionFields, x: usize, a: f64, b: f64, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = m.k();
    let panels = 16;
    let mut out = vec![vec![0.0; k]; times.len()];
    let mut wsum = 0.0;
    for j in 0..=panels {
        let h = a + (b - a) * j as f64 / panels as f64;
        let c = if j == 0 || j == panels { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        let density = (-f.v.value_at(h, x)).exp() * (-f.dv.value_at(h, x));
        let w = c * density;
        let marg = spine_marginal(&spine_rate_matrix(m, &f.dv, h)?, x, times)?;
        for (ti, row) in marg.iter().enumerate() {
            for y in 0..k {
                out[ti][y] += w * row[y];
            }
        }
        wsum += w;
    }
    for row in &mut out {
        row.iter_mut().for_each(|p| *p /= wsum);
    }
    Ok(out)
}

fn williams_lineage(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 < -1e-9 {
        return Ok(Run::Skip(format!("lambda0 = {:.4} < 0: extinction is not certain", spec.lambda0)));
    }
    if m.k() < 2 {
        return Ok(Run::Skip("single type: lineage marginals are trivial".into()));
    }
    let (reps, eps) = if full(cfg) { (100_000u64, 0.05) } else { (20_000, 0.1) };
    let (a, b) = (2.8, 3.2);
    let times = [1.0, 2.0];
    let x = 0;
    let k = m.k();
    let f = fields(m, b + 1.0)?;
    let nu = FiniteMeasure::dirac(k, x, 1.0);
    let pc = ParticleConfig { epsilon: eps, horizon: b, grid: vec![0.0], genealogy: false, max_population: 5_000_000 };
    let gc = pc.clone().with_genealogy();
    let mut counts = vec![vec![0u64; k]; times.len()];
    let mut in_bin = 0u64;
    for r in 0..reps {
        let h = simulate_with(m, &nu, &pc, &mut stream(cfg.seed, "williams-lineage", r, 0))?.path.extinction_time;
        if !(h >= a && h <= b) {
            continue;
        }
        in_bin += 1;
        let traj = simulate_with(m, &nu, &gc, &mut stream(cfg.seed, "williams-lineage", r, 0))?;
        if traj.path.extinction_time != h {
            return Err(Error::Numeric("genealogy replay diverged from the counts-only run".into()));
        }
        let lineage = extract_last_lineage(&traj)?;
        for (ti, &t) in times.iter().enumerate() {
            counts[ti][lineage.type_at(t)] += 1;
        }
    }
    let probs = binned_lineage_marginal(m, &f, x, a, b, &times)?;
    let level = 0.05 / times.len() as f64;
    let mut pmin: f64 = 1.0;
    let mut detail = vec![format!("{in_bin} runs in bin")];
    for (ti, &t) in times.iter().enumerate() {
        let (stat, df, p) = chi_square_gof(&counts[ti], &probs[ti]);
        pmin = pmin.min(p);
        detail.push(format!("t={t}: counts=[{}] expected=[{}] chi2={stat:.3} df={df} p={p:.4}",
            counts[ti].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            probs[ti].iter().map(|q| format!("{:.1}", q * in_bin as f64)).collect::<Vec<_>>().join(",")));
    }
    Ok(Run::Done(Outcome {
        statistic: pmin,
        threshold: level,
        pass: in_bin >= 50 && pmin >= level,
        detail: detail.join("; "),
        params: vec![
            ("reps", reps.to_string()),
            ("epsilon", eps.to_string()),
            ("bin", format!("[{a},{b}]")),
            ("times", fmt_list(&times)),
            ("nu", format!("delta_{} (mass 1)", x + 1)),
        ],
    }))
}

fn qprocess_moment(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 < -1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 >= 0 (got {:.4})", spec.lambda0)));
    }
    let (reps, eps) = if full(cfg) { (10_000u64, 0.05) } else { (2_000, 0.1) };
    let times = [1.0, 2.0];
    let x = 0;
    let k = m.k();
    let icfg = ImmigrationConfig::new(eps, vec![0.0, 1.0, 2.0]);
    let mut samples = vec![Vec::with_capacity(reps as usize); times.len()];
    for r in 0..reps {
        let p = sample_qprocess(m, &spec, x, 2.0, 0.0, &icfg, &mut stream(cfg.seed, "qprocess-moment", r, 0))?;
        for (j, &t) in times.iter().enumerate() {
            samples[j].push(p.total_mass_at(t)?);
        }
    }
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let exact = qprocess_mean(m, &spec, x, &vec![1.0; k], t, 400)?;
        let (mean, se) = mean_se(&samples[j]);
        let z = (mean - exact).abs() / se;
        worst = worst.max(z);
        detail.push(format!("t={t}: mc={mean:.5} se={se:.5} exact={exact:.6}"));
    }
    detail.push("particle first moments are exact, so the epsilon-bias envelope is 0".into());
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: 3.0,
        pass: worst < 3.0,
        detail: detail.join("; "),
        params: vec![("reps", reps.to_string()), ("epsilon", eps.to_string()), ("times", fmt_list(&times)), ("x", "1".into())],
    }))
}

fn backward_stabilize(m: &MultitypeModel, cfg: &VerifyConfig) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 <= 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 > 0 (got {:.3e})", spec.lambda0)));
    }
    let (reps, eps) = if full(cfg) { (2_000u64, 0.1) } else { (400, 0.1) };
    let h = 20.0 / spec.lambda0;
    let x = 0;
    let f = fields(m, 2.0 * h + 1.0)?;
    let lags = [-0.5, -1.0];
    let mut a = vec![Vec::new(); 2];
    let mut b = vec![Vec::new(); 2];
    for r in 0..reps {
        let p = sample_backward(m, &f, x, h, 1.0, eps, 2, &mut stream(cfg.seed, "backward-stabilize", r, 0))?;
        let q = sample_backward(m, &f, x, 2.0 * h, 1.0, eps, 2, &mut stream(cfg.seed, "backward-stabilize", r, 1))?;
        for (j, &t) in lags.iter().enumerate() {
            a[j].push(p.total_mass_at(t)?);
            b[j].push(q.total_mass_at(t)?);
        }
    }
    let level = 0.05 / lags.len() as f64;
    let mut pmin: f64 = 1.0;
    let mut detail = Vec::new();
    for (j, &t) in lags.iter().enumerate() {
        let (d, p) = ks_two_sample(&a[j], &b[j]);
        pmin = pmin.min(p);
        detail.push(format!("t={t}: D={d:.4} p={p:.4} means {:.4}/{:.4}", mean_se(&a[j]).0, mean_se(&b[j]).0));
    }
    Ok(Run::Done(Outcome {
        statistic: pmin,
        threshold: level,
        pass: pmin >= level,
        detail: detail.join("; "),
        params: vec![
            ("reps", reps.to_string()),
            ("epsilon", eps.to_string()),
            ("h", format!("{h}")),
            ("lags", fmt_list(&lags)),
            ("x", "1".into()),
        ],
    }))
}

fn tail_increment(m: &MultitypeModel) -> Result<Run> {
    let spec = lambda0(m)?;
    if spec.lambda0 <= 1e-9 {
        return Ok(Run::Skip(format!("requires lambda0 > 0 (got {:.3e})", spec.lambda0)));
    }
    let t = 1.0;
    let t_end = 30.0 / spec.lambda0;
    let v = solve_v(m, t_end + t, SolverConfig::default().t0)?;
    let g = normalized_decay(m, &spec, t_end + t)?;
    let c4 = g.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0f64, f64::max);
    let pmax = spec.phi0.iter().fold(0.0f64, |a, &b| a.max(b));
    // g(h) = |phi0| C4 exp(-lambda0 h), integrable on [1, inf).
    let mut worst: f64 = 0.0;
    for &h in v.nodes() {
        if h < 1.0 || h > t_end {
            continue;
        }
        let bound = pmax * c4 * (-spec.lambda0 * h).exp();
        for x in 0..m.k() {
            worst = worst.max((v.value_at(h, x) - v.value_at(h + t, x)) / bound);
        }
    }
    let integral = pmax * c4 * (-spec.lambda0).exp() / spec.lambda0;
    Ok(Run::Done(Outcome {
        statistic: worst,
        threshold: 1.0 + 1e-9,
        pass: worst <= 1.0 + 1e-9 && integral.is_finite(),
        detail: format!("max (v_h - v_(h+1)) / g(h) with g(h) = {pmax:.4} * {c4:.6} * exp(-lambda0 h); int_1^inf g = {integral:.6}"),
        params: vec![("t", t.to_string()), ("h_range", format!("[1,{t_end:.4}]"))],
    }))
}
