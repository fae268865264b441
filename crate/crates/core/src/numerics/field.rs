//! Type-indexed functions of time stored on a grid and interpolated by
//! cubic Hermite splines.

use crate::error::{Error, Result};
use crate::numerics::ode::OdeSolution;

/// `K` functions of time sampled on strictly increasing nodes, with exact
/// derivatives at the nodes.
///
/// Interpolation is piecewise cubic Hermite, so node values are reproduced
/// exactly. Time integrals of the interpolant are exact (cumulative sums of
/// the cubic pieces).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    k: usize,
    t: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    cum: Vec<f64>,
    nonincreasing: bool,
}

impl ScalarField {
    /// `values[n]` and `derivs[n]` are the `K`-vectors at node `n`.
    pub fn from_nodes(t: Vec<f64>, values: Vec<Vec<f64>>, derivs: Vec<Vec<f64>>) -> Result<Self> {
        let n = t.len();
        if n < 2 || values.len() != n || derivs.len() != n {
            return Err(Error::Precondition("a field needs at least two nodes with values and derivatives".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("field nodes must be strictly increasing".into()));
        }
        let k = values[0].len();
        if values.iter().chain(&derivs).any(|v| v.len() != k) {
            return Err(Error::Precondition("field node vectors have inconsistent lengths".into()));
        }
        let y: Vec<f64> = values.into_iter().flatten().collect();
        let d: Vec<f64> = derivs.into_iter().flatten().collect();
        let mut cum = vec![0.0; n * k];
        for m in 1..n {
            let h = t[m] - t[m - 1];
            for i in 0..k {
                let (y0, y1) = (y[(m - 1) * k + i], y[m * k + i]);
                let (d0, d1) = (d[(m - 1) * k + i], d[m * k + i]);
                cum[m * k + i] = cum[(m - 1) * k + i] + h * (y0 + y1) / 2.0 + h * h * (d0 - d1) / 12.0;
            }
        }
        Ok(ScalarField { k, t, y, d, cum, nonincreasing: false })
    }

    pub fn from_solution(sol: OdeSolution) -> Result<Self> {
        Self::from_nodes(sol.t, sol.y, sol.dy)
    }

    /// Marks the field as nonincreasing in time, after checking node values.
    pub fn declare_nonincreasing(mut self) -> Result<Self> {
        for m in 1..self.len() {
            for i in 0..self.k {
                if self.node_value(m, i) > self.node_value(m - 1, i) {
                    return Err(Error::Numeric(format!(
                        "field declared nonincreasing rises at t = {} for type {}",
                        self.t[m],
                        i + 1
                    )));
                }
            }
        }
        self.nonincreasing = true;
        Ok(self)
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.nonincreasing
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.t
    }

    pub fn t_min(&self) -> f64 {
        self.t[0]
    }

    pub fn t_max(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn node_value(&self, n: usize, i: usize) -> f64 {
        self.y[n * self.k + i]
    }

    pub fn node_deriv(&self, n: usize, i: usize) -> f64 {
        self.d[n * self.k + i]
    }

    pub fn node_values(&self, n: usize) -> &[f64] {
        &self.y[n * self.k..(n + 1) * self.k]
    }

    pub fn node_derivs(&self, n: usize) -> &[f64] {
        &self.d[n * self.k..(n + 1) * self.k]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min() && t <= self.t_max()
    }

    fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfWindow { time: t, lo: self.t_min(), hi: self.t_max() })
        }
    }

    /// Index `m` of the cell `[t_m, t_{m+1}]` containing `t` (clamped).
    pub fn cell(&self, t: f64) -> usize {
        let p = self.t.partition_point(|&x| x <= t);
        p.saturating_sub(1).min(self.t.len() - 2)
    }

    /// Interpolated value of component `i`; `t` is clamped to the grid.
    pub fn value_at(&self, t: f64, i: usize) -> f64 {
        let m = self.cell(t);
        self.value_in_cell(m, t, i)
    }

    fn value_in_cell(&self, m: usize, t: f64, i: usize) -> f64 {
        let (t0, t1) = (self.t[m], self.t[m + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.node_value(m, i), self.node_value(m + 1, i));
        let (d0, d1) = (self.node_deriv(m, i), self.node_deriv(m + 1, i));
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + h * (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + h * (s3 - s2) * d1
    }

    /// Time derivative of the interpolant of component `i` (clamped).
    pub fn deriv_at(&self, t: f64, i: usize) -> f64 {
        let m = self.cell(t);
        let (t0, t1) = (self.t[m], self.t[m + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.node_value(m, i), self.node_value(m + 1, i));
        let (d0, d1) = (self.node_deriv(m, i), self.node_deriv(m + 1, i));
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * y0 + (-6.0 * s2 + 6.0 * s) * y1) / h
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (3.0 * s2 - 2.0 * s) * d1
    }

    /// All components at `t`, or an error outside the grid.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.check(t)?;
        let m = self.cell(t);
        Ok((0..self.k).map(|i| self.value_in_cell(m, t, i)).collect())
    }

    pub fn eval_deriv(&self, t: f64) -> Result<Vec<f64>> {
        self.check(t)?;
        Ok((0..self.k).map(|i| self.deriv_at(t, i)).collect())
    }

    /// `int_{t_min}^{t} value(s, i) ds`, with `t` clamped to the grid.
    pub fn primitive(&self, t: f64, i: usize) -> f64 {
        let m = self.cell(t);
        let (t0, t1) = (self.t[m], self.t[m + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.node_value(m, i), self.node_value(m + 1, i));
        let (d0, d1) = (self.node_deriv(m, i), self.node_deriv(m + 1, i));
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let part = h
            * (y0 * (s4 / 2.0 - s3 + s)
                + h * d0 * (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0)
                + y1 * (-s4 / 2.0 + s3)
                + h * d1 * (s4 / 4.0 - s3 / 3.0));
        self.cum[m * self.k + i] + part
    }

    /// `int_a^b value(s, i) ds` of the interpolant.
    pub fn integral(&self, a: f64, b: f64, i: usize) -> f64 {
        self.primitive(b, i) - self.primitive(a, i)
    }

    /// Componentwise product with a constant vector (e.g. `alpha * v`).
    pub fn scaled(&self, c: &[f64]) -> ScalarField {
        assert_eq!(c.len(), self.k);
        let mut out = self.clone();
        for n in 0..self.len() {
            for i in 0..self.k {
                out.y[n * self.k + i] *= c[i];
                out.d[n * self.k + i] *= c[i];
                out.cum[n * self.k + i] *= c[i];
            }
        }
        out.nonincreasing = self.nonincreasing && c.iter().all(|&x| x >= 0.0);
        out
    }
}
