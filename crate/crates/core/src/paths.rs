//! Path containers: pure-jump type paths and time-indexed finite measures.

use crate::error::{Error, Result};

/// A càdlàg pure-jump path of types on `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedPath {
    pub origin: usize,
    pub start: f64,
    pub end: f64,
    /// `(time, new type)`, strictly increasing times inside `(start, end)`.
    pub jumps: Vec<(f64, usize)>,
}

impl TypedPath {
    pub fn constant(origin: usize, start: f64, end: f64) -> Self {
        TypedPath { origin, start, end, jumps: Vec::new() }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.end >= self.start) {
            return Err(Error::Precondition("path interval is reversed".into()));
        }
        let mut prev_t = self.start;
        let mut prev_x = self.origin;
        for &(t, x) in &self.jumps {
            if !(t > prev_t && t < self.end) {
                return Err(Error::Precondition(format!("jump time {t} out of order or outside the path interval")));
            }
            if x == prev_x {
                return Err(Error::Precondition(format!("jump at {t} does not change the type")));
            }
            prev_t = t;
            prev_x = x;
        }
        Ok(())
    }

    /// Type at time `t` (right-continuous).
    pub fn type_at(&self, t: f64) -> usize {
        let n = self.jumps.partition_point(|&(s, _)| s <= t);
        if n == 0 {
            self.origin
        } else {
            self.jumps[n - 1].1
        }
    }

    pub fn end_type(&self) -> usize {
        self.jumps.last().map_or(self.origin, |j| j.1)
    }

    /// Maximal constant pieces `(a, b, type)` covering `[start, end]`.
    pub fn segments(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut a = self.start;
        let mut x = self.origin;
        for &(t, y) in &self.jumps {
            out.push((a, t, x));
            a = t;
            x = y;
        }
        out.push((a, self.end, x));
        out
    }

    /// Constant pieces restricted to `[a, b]`.
    pub fn segments_within(&self, a: f64, b: f64) -> Vec<(f64, f64, usize)> {
        self.segments()
            .into_iter()
            .filter_map(|(s, e, x)| {
                let (s, e) = (s.max(a), e.min(b));
                (e > s).then_some((s, e, x))
            })
            .collect()
    }

    /// Time spent in each of `k` types during `[a, b]`.
    pub fn occupation(&self, k: usize, a: f64, b: f64) -> Vec<f64> {
        let mut occ = vec![0.0; k];
        for (s, e, x) in self.segments_within(a, b) {
            occ[x] += e - s;
        }
        occ
    }

    /// Same path with every time shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> TypedPath {
        TypedPath {
            origin: self.origin,
            start: self.start + dt,
            end: self.end + dt,
            jumps: self.jumps.iter().map(|&(t, x)| (t + dt, x)).collect(),
        }
    }

    /// Restriction to `[start, t]`.
    pub fn truncated(&self, t: f64) -> TypedPath {
        let t = t.clamp(self.start, self.end);
        TypedPath {
            origin: self.origin,
            start: self.start,
            end: t,
            jumps: self.jumps.iter().copied().filter(|&(s, _)| s < t).collect(),
        }
    }
}

/// Finite measures on the types recorded on a time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    pub times: Vec<f64>,
    /// `masses[n][i]` is the mass of type `i` at `times[n]`.
    pub masses: Vec<Vec<f64>>,
    /// `occupation[n][i] = int_0^{times[n]} X_s({i}) ds`.
    pub occupation: Vec<Vec<f64>>,
    /// First time the measure is null; infinite if alive at the horizon.
    pub extinction_time: f64,
    pub meta: PathMeta,
}

/// Resolution and provenance of a [`MeasurePath`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathMeta {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl MeasurePath {
    pub fn k(&self) -> usize {
        self.masses.first().map_or(0, |m| m.len())
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Index of the grid node equal to `t`.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        let n = self.times.partition_point(|&s| s < t - tol);
        if n < self.times.len() && (self.times[n] - t).abs() <= tol {
            Ok(n)
        } else if t > self.horizon() + tol {
            Err(Error::Precondition(format!("path ends at {} before t = {t}", self.horizon())))
        } else {
            Err(Error::Precondition(format!("t = {t} is not a node of the path grid")))
        }
    }

    /// `X_t(f)` at a grid time.
    pub fn integrate_at(&self, t: f64, f: &[f64]) -> Result<f64> {
        let n = self.node_index(t)?;
        Ok(self.masses[n].iter().zip(f).map(|(m, g)| m * g).sum())
    }

    /// `int_0^t X_s(f) ds` at a grid time.
    pub fn occupation_at(&self, t: f64, f: &[f64]) -> Result<f64> {
        let n = self.node_index(t)?;
        Ok(self.occupation[n].iter().zip(f).map(|(m, g)| m * g).sum())
    }

    pub fn total_mass_at(&self, t: f64) -> Result<f64> {
        let n = self.node_index(t)?;
        Ok(self.masses[n].iter().sum())
    }

    /// Adds `other` node by node; both must share the same grid.
    pub fn superpose(&mut self, other: &MeasurePath) -> Result<()> {
        if self.times.len() != other.times.len() {
            return Err(Error::Precondition("superposed paths must share the same grid".into()));
        }
        for n in 0..self.times.len() {
            for i in 0..self.k() {
                self.masses[n][i] += other.masses[n][i];
                self.occupation[n][i] += other.occupation[n][i];
            }
        }
        self.extinction_time = if self.extinction_time.is_infinite() || other.extinction_time.is_infinite() {
            f64::INFINITY
        } else {
            self.extinction_time.max(other.extinction_time)
        };
        Ok(())
    }

    /// The null path on a grid.
    pub fn zero(times: Vec<f64>, k: usize) -> Self {
        let n = times.len();
        MeasurePath {
            times,
            masses: vec![vec![0.0; k]; n],
            occupation: vec![vec![0.0; k]; n],
            extinction_time: 0.0,
            meta: PathMeta::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TypedPath {
        TypedPath { origin: 0, start: 0.0, end: 3.0, jumps: vec![(1.0, 1), (2.5, 0)] }
    }

    #[test]
    fn type_lookup_and_occupation() {
        let p = sample();
        p.validate().unwrap();
        assert_eq!(p.type_at(0.5), 0);
        assert_eq!(p.type_at(1.0), 1);
        assert_eq!(p.type_at(2.9), 0);
        assert_eq!(p.end_type(), 0);
        assert_eq!(p.occupation(2, 0.0, 3.0), vec![1.5, 1.5]);
        assert_eq!(p.occupation(2, 0.5, 1.5), vec![0.5, 0.5]);
    }

    #[test]
    fn invalid_paths_rejected() {
        let mut p = sample();
        p.jumps[1].1 = 1;
        assert!(p.validate().is_err());
        let q = TypedPath { origin: 0, start: 0.0, end: 1.0, jumps: vec![(1.5, 1)] };
        assert!(q.validate().is_err());
    }

    #[test]
    fn shift_round_trip() {
        let p = sample();
        assert_eq!(p.shifted(-3.0).shifted(3.0), p);
    }

    #[test]
    fn node_lookup() {
        let mp = MeasurePath::zero(vec![0.0, 0.5, 1.0], 2);
        assert_eq!(mp.node_index(0.5).unwrap(), 1);
        assert!(mp.node_index(0.7).is_err());
        assert!(mp.node_index(2.0).is_err());
    }
}
