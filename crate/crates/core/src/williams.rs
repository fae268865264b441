//! Williams decomposition samplers: extinction time, skeletons, the process
//! conditioned to die at a given time, the Q-process, the full
//! decomposition of `P_nu` and the view backward from extinction.
//!
//! Measure-valued pieces are realized with mass-`epsilon` particles. Along a
//! spine of type path `Y`, the Poisson cloud `2 alpha(Y_s) ds N_{Y_s}[dX]`
//! is approximated by immigrating single particles at rate
//! `2 alpha(Y_s) / epsilon`; conditioning on `H_max < h - s` is done by
//! discarding the families still alive at `h`. The spine itself is the
//! last surviving particle and carries mass `epsilon` until `h`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{FiniteMeasure, MultitypeModel};
use crate::numerics::{feynman_kac, ExtinctionFields, ScalarField};
use crate::particle::{simulate_with, FamilyAccumulator, ParticleConfig, Rates};
use crate::paths::{MeasurePath, PathMeta, TypedPath};
use crate::spectral::{generalized_eigen, SpectralData};
use crate::spine::{sample_spine_h, sample_spine_qprocess};
use crate::streams::Rng;

fn exp1(rng: &mut Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

/// `P_nu(H_max <= h) = exp(-nu(v_h))`.
pub fn extinction_cdf(v: &ScalarField, nu: &FiniteMeasure, h: f64) -> f64 {
    (-nu_v(v, nu, h)).exp()
}

fn nu_v(v: &ScalarField, nu: &FiniteMeasure, h: f64) -> f64 {
    nu.masses().iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| m * v.value_at(h, i)).sum()
}

/// Solves `g(r) = target` for a nonincreasing `g` on `[lo, hi]`.
fn bisect_decreasing(g: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws `H_max` under `P_nu` by inverting `exp(-nu(v_h))` on the grid of
/// `v`. Draws falling beyond the grid are redrawn at most `budget` times.
pub fn sample_extinction_time(v: &ScalarField, nu: &FiniteMeasure, budget: usize, rng: &mut Rng) -> Result<f64> {
    if nu.is_zero() {
        return Err(Error::Precondition("sample_extinction_time: initial measure is null".into()));
    }
    let (t0, tmax) = (v.t_min(), v.t_max());
    let top = nu_v(v, nu, t0);
    let bottom = nu_v(v, nu, tmax);
    for _ in 0..budget.max(1) {
        let e = exp1(rng);
        if e >= top || e <= bottom {
            continue;
        }
        return Ok(bisect_decreasing(|h| nu_v(v, nu, h), e, t0, tmax));
    }
    Err(Error::Budget(format!(
        "grid horizon {tmax} too short: P(H_max > {tmax}) = {:.3e}; {budget} draws fell outside the grid",
        1.0 - (-bottom).exp()
    )))
}

/// Spine of a conditioned excursion and its dressing of subtrees higher
/// than `delta`, recursively.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub horizon: f64,
    pub delta: f64,
    pub spine: TypedPath,
    pub nodes: Vec<SkeletonNode>,
}

/// A subtree grafted on a spine at `birth_time`, dying at height `height`
/// after its birth.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonNode {
    pub birth_time: f64,
    pub birth_type: usize,
    pub height: f64,
    pub child: Skeleton,
}

impl Skeleton {
    /// Total number of nodes at every depth.
    pub fn node_count(&self) -> usize {
        self.nodes.iter().map(|n| 1 + n.child.node_count()).sum()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| 1 + n.child.depth()).max().unwrap_or(0)
    }

    /// Checks `delta < r_j < h - s_j` and the child horizons, recursively.
    pub fn validate(&self) -> Result<()> {
        for n in &self.nodes {
            if !(n.height > self.delta && n.height < self.horizon - n.birth_time) {
                return Err(Error::Numeric(format!(
                    "skeleton node at s = {} has height {} outside ({}, {})",
                    n.birth_time,
                    n.height,
                    self.delta,
                    self.horizon - n.birth_time
                )));
            }
            if n.child.horizon != n.height {
                return Err(Error::Numeric("child horizon differs from node height".into()));
            }
            n.child.validate()?;
        }
        Ok(())
    }

    /// Nested text export: one line per node with `s`, `type`, `r`;
    /// children indented below their parent. Types are 1-based.
    pub fn to_text(&self) -> String {
        let mut out = format!("horizon = {}\ndelta = {}\nspine_origin = {}\n", self.horizon, self.delta, self.spine.origin + 1);
        self.write_nodes(&mut out, 0);
        out
    }

    fn write_nodes(&self, out: &mut String, depth: usize) {
        for n in &self.nodes {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&format!("- s = {:.9}, type = {}, r = {:.9}\n", n.birth_time, n.birth_type + 1, n.height));
            n.child.write_nodes(out, depth + 1);
        }
    }
}

/// Recursion guards of [`sample_skeleton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonLimits {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for SkeletonLimits {
    fn default() -> Self {
        SkeletonLimits { max_depth: 64, max_nodes: 200_000 }
    }
}

/// Intensity `2 alpha(y) (v_delta(y) - v_{h-s}(y))` of subtree births.
fn birth_intensity(m: &MultitypeModel, v: &ScalarField, y: usize, delta: f64, remaining: f64) -> f64 {
    if remaining <= delta {
        return 0.0;
    }
    (2.0 * m.alpha[y] * (v.value_at(delta, y) - v.value_at(remaining, y))).max(0.0)
}

/// Draws a height from the density proportional to `-d/dr v_r(y)` on
/// `(delta, top)`.
fn sample_height(v: &ScalarField, y: usize, delta: f64, top: f64, rng: &mut Rng) -> f64 {
    let (a, b) = (v.value_at(delta, y), v.value_at(top, y));
    let target = a - rng.gen::<f64>() * (a - b);
    bisect_decreasing(|r| v.value_at(r, y), target, delta, top).clamp(delta.next_up(), top.next_down())
}

fn conditioned_spine(m: &MultitypeModel, fields: &ExtinctionFields, x: usize, h: f64, rng: &mut Rng) -> Result<TypedPath> {
    if m.k() == 1 {
        return Ok(TypedPath::constant(x, 0.0, h - fields.t0()));
    }
    sample_spine_h(m, &fields.dv, x, h, rng)
}

/// Williams skeleton under `N^(h)_x`: a `P^(h)_x` spine, Poisson subtree
/// births of intensity `2 alpha(Y_s)(v_delta - v_{h-s})(Y_s)` on
/// `s < h - delta`, heights from `-dv` on `(delta, h - s)`, children
/// recursing with their own height as horizon.
pub fn sample_skeleton(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    x: usize,
    h: f64,
    delta: f64,
    limits: SkeletonLimits,
    rng: &mut Rng,
) -> Result<Skeleton> {
    let t0 = fields.t0();
    if !(delta > t0) {
        return Err(Error::Precondition(format!("sample_skeleton: delta = {delta} must exceed t0 = {t0}")));
    }
    if h > fields.horizon() {
        return Err(Error::OutOfWindow { time: h, lo: t0, hi: fields.horizon() });
    }
    let mut count = 0usize;
    skeleton_rec(m, fields, x, h, delta, limits, 0, &mut count, rng)
}

#[allow(clippy::too_many_arguments)]
fn skeleton_rec(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    x: usize,
    h: f64,
    delta: f64,
    limits: SkeletonLimits,
    depth: usize,
    count: &mut usize,
    rng: &mut Rng,
) -> Result<Skeleton> {
    let spine = conditioned_spine(m, fields, x, h, rng)?;
    let v = &fields.v;
    let mut nodes = Vec::new();
    let cutoff = h - delta;
    for (a, b, y) in spine.segments() {
        let b = b.min(cutoff);
        if a >= b {
            break;
        }
        // The intensity decreases with s, so its value at a dominates.
        let bound = birth_intensity(m, v, y, delta, h - a);
        if bound <= 0.0 {
            continue;
        }
        let mut s = a;
        loop {
            s += exp1(rng) / bound;
            if s >= b {
                break;
            }
            if rng.gen::<f64>() * bound >= birth_intensity(m, v, y, delta, h - s) {
                continue;
            }
            *count += 1;
            if *count > limits.max_nodes || depth + 1 > limits.max_depth {
                let expected: f64 = spine
                    .segments_within(0.0, cutoff)
                    .iter()
                    .map(|&(p, q, z)| {
                        let mid = 0.5 * (p + q);
                        birth_intensity(m, v, z, delta, h - mid) * (q - p)
                    })
                    .sum();
                return Err(Error::Budget(format!(
                    "skeleton recursion guard exceeded (depth {}, nodes {}); expected first-generation nodes at h = {h}: {expected:.1}; increase delta",
                    depth + 1,
                    *count
                )));
            }
            let r = sample_height(v, y, delta, h - s, rng);
            let child = if depth + 1 >= limits.max_depth {
                Skeleton { horizon: r, delta, spine: TypedPath::constant(y, 0.0, r - fields.t0()), nodes: Vec::new() }
            } else {
                skeleton_rec(m, fields, y, r, delta, limits, depth + 1, count, rng)?
            };
            nodes.push(SkeletonNode { birth_time: s, birth_type: y, height: r, child });
        }
    }
    Ok(Skeleton { horizon: h, delta, spine, nodes })
}

/// Only the first generation of subtrees (children left bare).
pub fn sample_skeleton_first_generation(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    x: usize,
    h: f64,
    delta: f64,
    rng: &mut Rng,
) -> Result<Skeleton> {
    sample_skeleton(m, fields, x, h, delta, SkeletonLimits { max_depth: 1, max_nodes: usize::MAX }, rng)
}

/// Knobs shared by the measure-valued samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationConfig {
    pub epsilon: f64,
    /// Snapshot times, increasing.
    pub grid: Vec<f64>,
    pub max_population: u64,
}

impl ImmigrationConfig {
    pub fn new(epsilon: f64, grid: Vec<f64>) -> Self {
        ImmigrationConfig { epsilon, grid, max_population: 5_000_000 }
    }

    /// Uniform grid of `steps` intervals on `[a, b]`.
    pub fn uniform(epsilon: f64, a: f64, b: f64, steps: usize) -> Self {
        Self::new(epsilon, (0..=steps).map(|i| a + (b - a) * i as f64 / steps as f64).collect())
    }

    fn check(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("snapshot grid must be nonempty and strictly increasing".into()));
        }
        Ok(())
    }
}

/// Immigrates single particles at rate `2 alpha / epsilon` along `spine`.
/// Families must die before `limit` unless `keep_alive`; families dying
/// before `min_life` after their birth are dropped.
#[allow(clippy::too_many_arguments)]
fn immigrate(
    m: &MultitypeModel,
    rates: &Rates,
    cfg: &ImmigrationConfig,
    spine: &TypedPath,
    limit: f64,
    keep_alive: bool,
    min_life: f64,
    acc: &mut FamilyAccumulator,
    rng: &mut Rng,
) -> Result<()> {
    let eps = cfg.epsilon;
    for (a, b, y) in spine.segments() {
        let rate = 2.0 * m.alpha[y] / eps;
        let mut s = a;
        loop {
            s += exp1(rng) / rate;
            if s >= b {
                break;
            }
            acc.simulate(rates, eps, y, s, limit, keep_alive, min_life, cfg.max_population, rng)?;
        }
    }
    Ok(())
}

/// Approximate sample of `N^(h)_x` (excursion conditioned to die at `h`)
/// on the snapshot grid. The recorded extinction time is `h`.
pub fn sample_conditioned_superprocess(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    x: usize,
    h: f64,
    cfg: &ImmigrationConfig,
    rng: &mut Rng,
) -> Result<MeasurePath> {
    cfg.check()?;
    let rates = Rates::new(m, cfg.epsilon)?;
    if x >= m.k() {
        return Err(Error::Precondition(format!("type {} out of range", x + 1)));
    }
    let spine = conditioned_spine(m, fields, x, h, rng)?;
    let mut acc = FamilyAccumulator::new(m.k(), cfg.grid.clone());
    for (a, b, y) in spine.segments() {
        let b = if b >= spine.end { h } else { b };
        acc.add_constant(y, cfg.epsilon, a, b);
    }
    immigrate(m, &rates, cfg, &spine, h, false, 0.0, &mut acc, rng)?;
    Ok(acc.into_path(h, PathMeta { epsilon: cfg.epsilon, delta: 0.0, seed: 0 }))
}

/// Approximate sample of the Q-process `P^(inf)_x` on `[0, T]`: a
/// `P^{phi0}_x` spine with unconditioned immigration. Families dying
/// within `delta` of their birth are dropped (`delta = 0` keeps all).
pub fn sample_qprocess(
    m: &MultitypeModel,
    spec: &SpectralData,
    x: usize,
    t_end: f64,
    delta: f64,
    cfg: &ImmigrationConfig,
    rng: &mut Rng,
) -> Result<MeasurePath> {
    cfg.check()?;
    if spec.lambda0 < -1e-12 {
        return Err(Error::Precondition(format!("sample_qprocess: lambda0 = {} is negative", spec.lambda0)));
    }
    if *cfg.grid.last().unwrap() > t_end + 1e-12 {
        return Err(Error::Precondition(format!("sample_qprocess: grid extends beyond T = {t_end}")));
    }
    let rates = Rates::new(m, cfg.epsilon)?;
    let spine = sample_spine_qprocess(m, spec, x, t_end, rng)?;
    let mut acc = FamilyAccumulator::new(m.k(), cfg.grid.clone());
    immigrate(m, &rates, cfg, &spine, t_end, true, delta, &mut acc, rng)?;
    Ok(acc.into_path(f64::INFINITY, PathMeta { epsilon: cfg.epsilon, delta, seed: 0 }))
}

/// Pieces of one [`assemble_pnu_decomposition`] draw.
#[derive(Debug, Clone)]
pub struct PnuSample {
    pub path: MeasurePath,
    pub h0: f64,
    pub x0: usize,
    /// Proposals used for the part dying before `h0`.
    pub attempts: usize,
}

/// `P_nu` as `X' + X^(h0)`: `h0` from the extinction law, `x0` with
/// density `nu(x) dv_{h0}(x)` normalized, `X^(h0)` conditioned to die at
/// `h0` from `x0`, and `X'` the particle system from `nu` accepted on
/// `H_max < h0` (at most `budget` proposals).
pub fn assemble_pnu_decomposition(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    nu: &FiniteMeasure,
    cfg: &ImmigrationConfig,
    budget: usize,
    rng: &mut Rng,
) -> Result<PnuSample> {
    cfg.check()?;
    let h0 = sample_extinction_time(&fields.v, nu, budget, rng)?;
    let weights: Vec<f64> = (0..m.k()).map(|i| nu.masses()[i] * fields.dv.value_at(h0, i).abs()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut x0 = m.k() - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && u < *w {
            x0 = i;
            break;
        }
        u -= w;
    }
    let mut path = sample_conditioned_superprocess(m, fields, x0, h0, cfg, rng)?;

    let inside: Vec<f64> = cfg.grid.iter().copied().filter(|&g| g < h0).collect();
    let mut grid = inside.clone();
    grid.push(h0);
    let pcfg = ParticleConfig { epsilon: cfg.epsilon, horizon: h0, grid, genealogy: false, max_population: cfg.max_population as usize };
    for attempt in 1..=budget.max(1) {
        let traj = simulate_with(m, nu, &pcfg, rng)?;
        if traj.path.extinction_time < h0 {
            let mut other = MeasurePath::zero(cfg.grid.clone(), m.k());
            let frozen = traj.path.occupation.last().unwrap().clone();
            for n in 0..cfg.grid.len() {
                if n < inside.len() {
                    other.masses[n] = traj.path.masses[n].clone();
                    other.occupation[n] = traj.path.occupation[n].clone();
                } else {
                    other.occupation[n] = frozen.clone();
                }
            }
            other.extinction_time = traj.path.extinction_time;
            path.superpose(&other)?;
            path.extinction_time = h0;
            return Ok(PnuSample { path, h0, x0, attempts: attempt });
        }
    }
    Err(Error::Budget(format!(
        "assemble_pnu_decomposition: no particle run died before h0 = {h0:.4} in {budget} proposals (acceptance {:.3e})",
        extinction_cdf(&fields.v, nu, h0)
    )))
}

/// `theta_h(X)` on `[-window, 0]` under `N^(h)_x`, on a grid of step
/// `window / steps`. Occupation integrals start at `-window`.
#[allow(clippy::too_many_arguments)]
pub fn sample_backward(
    m: &MultitypeModel,
    fields: &ExtinctionFields,
    x: usize,
    h: f64,
    window: f64,
    epsilon: f64,
    steps: usize,
    rng: &mut Rng,
) -> Result<MeasurePath> {
    if !(window > 0.0 && window < h) {
        return Err(Error::Precondition(format!("sample_backward: window {window} must lie in (0, h = {h})")));
    }
    let spec = generalized_eigen(m)?;
    if spec.lambda0 <= 0.0 {
        return Err(Error::Precondition(format!("sample_backward: requires lambda0 > 0 (got {})", spec.lambda0)));
    }
    let cfg = ImmigrationConfig::uniform(epsilon, h - window, h, steps);
    let path = sample_conditioned_superprocess(m, fields, x, h, &cfg, rng)?;
    let base = path.occupation[0].clone();
    Ok(MeasurePath {
        times: path.times.iter().map(|t| t - h).collect(),
        occupation: path.occupation.iter().map(|o| o.iter().zip(&base).map(|(a, b)| a - b).collect()).collect(),
        masses: path.masses,
        extinction_time: 0.0,
        meta: path.meta,
    })
}

/// `N^(h)_x[X_t(f)]`: the derivative in `h'` of
/// `N_x[X_t(f); H_max <= h'] = E_x[exp(-int_0^t (beta + 2 alpha v_{h'-s})(Y_s) ds) f(Y_t)]`
/// at `h' = h`, divided by the density `-dv_h(x)`.
pub fn conditioned_mean(m: &MultitypeModel, fields: &ExtinctionFields, f: &[f64], h: f64, t: f64) -> Result<Vec<f64>> {
    let eta = 1e-4 * h;
    if !(t < h - eta) || h + eta > fields.horizon() {
        return Err(Error::Precondition(format!("conditioned_mean: need t < h and h within the field horizon (t = {t}, h = {h})")));
    }
    let at = |hp: f64| -> Result<Vec<f64>> {
        let k = m.k();
        feynman_kac(
            m,
            |s, out| {
                for i in 0..k {
                    out[i] = m.beta[i] + 2.0 * m.alpha[i] * fields.v.value_at(hp - s, i);
                }
            },
            f,
            t,
        )
    };
    let (up, down) = (at(h + eta)?, at(h - eta)?);
    let dv = fields.dv.eval(h)?;
    Ok((0..m.k()).map(|i| (up[i] - down[i]) / (2.0 * eta) / (-dv[i])).collect())
}

/// `E[X^(inf)_t(f)]` for the Q-process started from the spine at `x`:
/// `int_0^t E^{phi0}_x[2 alpha(Y_s) m_{t-s}(Y_s, f)] ds`, composite Simpson
/// in `s` with `2 n` panels.
pub fn qprocess_mean(m: &MultitypeModel, spec: &SpectralData, x: usize, f: &[f64], t: f64, n: usize) -> Result<f64> {
    let k = m.k();
    let beta = m.beta.clone();
    let fk = crate::numerics::feynman_kac_field(m, |_, out| out.copy_from_slice(beta.as_slice()), f, t)?;
    let rates = crate::spine::qprocess_rates(m, spec, t);
    let panels = 2 * n.max(1);
    let grid: Vec<f64> = (0..=panels).map(|j| t * j as f64 / panels as f64).collect();
    let marg = crate::spine::spine_marginal(&rates, x, &grid)?;
    let mut sum = 0.0;
    for (j, &s) in grid.iter().enumerate() {
        let w = if j == 0 || j == panels { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        let g: f64 = (0..k).map(|y| marg[j][y] * 2.0 * m.alpha[y] * fk.value_at(t - s, y)).sum();
        sum += w * g;
    }
    Ok(sum * t / (3.0 * panels as f64))
}
