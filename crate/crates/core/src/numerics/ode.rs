//! Adaptive Dormand–Prince 5(4) integrator with node/derivative output.

use crate::error::{Error, Result};

/// Step-size and tolerance controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on the step length.
    pub max_step: f64,
    /// Additional cap `rel_step * |t|` (0 disables); keeps Hermite
    /// interpolation accurate near a singular endpoint.
    pub rel_step: f64,
    /// Initial step; 0 picks one automatically.
    pub first_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-10, max_step: 0.01, rel_step: 0.0, first_step: 0.0, max_steps: 5_000_000 }
    }
}

/// Accepted nodes with state and right-hand side at each node.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t_start` to `t_end > t_start`.
///
/// Every accepted step becomes an output node, so the result can be
/// interpolated with cubic Hermite splines.
pub fn integrate<F>(mut f: F, t_start: f64, y0: &[f64], t_end: f64, opts: &OdeOptions) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t_end > t_start) {
        return Err(Error::Precondition(format!("integration interval [{t_start}, {t_end}] is empty")));
    }
    let n = y0.len();
    let mut t = t_start;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1);
    let mut sol = OdeSolution { t: vec![t], y: vec![y.clone()], dy: vec![k1.clone()] };

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    let cap = |t: f64| {
        let mut c = opts.max_step;
        if opts.rel_step > 0.0 {
            c = c.min(opts.rel_step * t.abs());
        }
        c
    };
    let mut h = if opts.first_step > 0.0 {
        opts.first_step
    } else {
        let scale: f64 = y.iter().zip(&k1).map(|(yi, di)| {
            let sc = opts.atol + opts.rtol * yi.abs();
            (di / sc).abs()
        }).fold(0.0, f64::max);
        if scale > 0.0 { 0.01 / scale } else { cap(t) }
    };
    h = h.min(cap(t)).min(t_end - t);

    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Budget(format!("ODE step budget {} exhausted at t = {t:.6e}", opts.max_steps)));
        }
        let last = t + h >= t_end - 1e-14 * t_end.abs();
        if last {
            h = t_end - t;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &tmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        let tnew = if last { t_end } else { t + h };
        f(tnew, &ynew, &mut k7);

        let mut err: f64 = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max((e / sc).abs());
            finite &= ynew[i].is_finite();
        }
        if !finite {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            t = tnew;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            sol.t.push(t);
            sol.y.push(y.clone());
            sol.dy.push(k1.clone());
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(cap(t));
            if t < t_end {
                h = h.min(t_end - t);
            }
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            if h < 1e-15 * t.abs().max(1e-300) || h < 1e-300 {
                return Err(Error::StepUnderflow {
                    time: t,
                    step: h,
                    hint: "the system is too stiff here; try a larger singular cutoff t0".into(),
                });
            }
        }
    }
    Ok(sol)
}
