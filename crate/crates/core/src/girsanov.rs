//! h-transform to unit quadratic coefficient, homogenisation constants and
//! the Girsanov / spine martingale weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::MultitypeModel;
use crate::numerics::{dv0_closed, v0_closed, ScalarField};
use crate::paths::{MeasurePath, TypedPath};

/// Constants that compare the h-transformed process with the homogeneous
/// mechanism `beta0 l + l^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizationData {
    pub l_tilde: DMatrix<f64>,
    pub beta_tilde: Vec<f64>,
    pub beta0: f64,
    /// `(beta0 - beta_tilde) / 2`.
    pub q: Vec<f64>,
    /// `psi_tilde(x, q(x)) - L_tilde q (x)`.
    pub varphi: Vec<f64>,
}

/// Generator and drift of `X^{1/alpha}`, an `(L_tilde, beta_tilde, 1)`
/// superprocess: `L_tilde_ij = alpha_i q_ij / alpha_j` and
/// `beta_tilde = beta - alpha Q(1/alpha)`.
pub fn h_transform(m: &MultitypeModel) -> (DMatrix<f64>, Vec<f64>) {
    let k = m.k();
    let mut lt = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            if i != j {
                lt[(i, j)] = m.alpha[i] * m.q[(i, j)] / m.alpha[j];
                row += lt[(i, j)];
            }
        }
        lt[(i, i)] = -row;
    }
    let inv_alpha: Vec<f64> = m.alpha.iter().map(|a| 1.0 / a).collect();
    let q_inv = m.apply_q(&inv_alpha);
    let beta_tilde = (0..k).map(|i| m.beta[i] - m.alpha[i] * q_inv[i]).collect();
    (lt, beta_tilde)
}

fn apply(l: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
    let k = u.len();
    (0..k).map(|i| (0..k).map(|j| l[(i, j)] * u[j]).sum()).collect()
}

/// Computes `beta0`, `q` and `varphi`.
pub fn homogenize(m: &MultitypeModel) -> HomogenizationData {
    let k = m.k();
    let (l_tilde, beta_tilde) = h_transform(m);
    let lb = apply(&l_tilde, &beta_tilde);
    let beta0 = (0..k)
        .map(|x| {
            let disc = (beta_tilde[x] * beta_tilde[x] - 2.0 * lb[x]).max(0.0);
            beta_tilde[x].max(disc.sqrt())
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let q: Vec<f64> = beta_tilde.iter().map(|b| ((beta0 - b) / 2.0).max(0.0)).collect();
    let varphi = (0..k)
        .map(|x| (beta0 * beta0 - beta_tilde[x] * beta_tilde[x] + 2.0 * lb[x]) / 4.0)
        .collect();
    HomogenizationData { l_tilde, beta_tilde, beta0, q, varphi }
}

impl HomogenizationData {
    /// The `(L_tilde, beta_tilde, 1)` model.
    pub fn tilde_model(&self) -> Result<MultitypeModel> {
        let k = self.beta_tilde.len();
        MultitypeModel::new(
            self.l_tilde.clone(),
            DVector::from_column_slice(&self.beta_tilde),
            DVector::from_element(k, 1.0),
        )
    }

    /// `varphi` evaluated the long way: `psi_tilde(x, q(x)) - L_tilde q (x)`
    /// with `psi_tilde(x, l) = beta_tilde(x) l + l^2`.
    pub fn varphi_from_mechanism(&self) -> Vec<f64> {
        let lq = apply(&self.l_tilde, &self.q);
        (0..self.q.len())
            .map(|x| self.beta_tilde[x] * self.q[x] + self.q[x] * self.q[x] - lq[x])
            .collect()
    }

    /// CSV with one row per type: `type,beta_tilde,beta0,q,varphi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("type,beta_tilde,beta0,q,varphi\n");
        for x in 0..self.q.len() {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                x + 1,
                self.beta_tilde[x],
                self.beta0,
                self.q[x],
                self.varphi[x]
            ));
        }
        s
    }
}

/// `Sigma_t(x) = 2 (v0_t + q(x) - v_tilde_t(x))` on the nodes of `v_tilde`.
pub fn sigma_field(hd: &HomogenizationData, v_tilde: &ScalarField) -> Result<ScalarField> {
    let k = hd.q.len();
    if v_tilde.k() != k {
        return Err(Error::Precondition("v_tilde has the wrong number of types".into()));
    }
    let mut values = Vec::with_capacity(v_tilde.len());
    let mut derivs = Vec::with_capacity(v_tilde.len());
    for (n, &t) in v_tilde.nodes().iter().enumerate() {
        let v0 = v0_closed(hd.beta0, t)?;
        let dv0 = dv0_closed(hd.beta0, t)?;
        values.push((0..k).map(|x| 2.0 * (v0 + hd.q[x] - v_tilde.node_value(n, x))).collect());
        derivs.push((0..k).map(|x| 2.0 * (dv0 - v_tilde.node_deriv(n, x))).collect());
    }
    ScalarField::from_nodes(v_tilde.nodes().to_vec(), values, derivs)
}

/// `M_t = exp(X_0(q) - X_t(q) - int_0^t X_s(varphi) ds)` for a path of the
/// h-transformed process; `t` must be a node of the path grid.
pub fn girsanov_weight(path: &MeasurePath, hd: &HomogenizationData, t: f64) -> Result<f64> {
    let x0 = path.integrate_at(0.0, &hd.q)?;
    let xt = path.integrate_at(t, &hd.q)?;
    let occ = path.occupation_at(t, &hd.varphi)?;
    Ok((x0 - xt - occ).exp())
}

/// `M^(h)_t = (dv_{h-t}(Y_t) / dv_h(Y_0)) exp(-int_0^t (beta + 2 alpha v_{h-s})(Y_s) ds)`.
///
/// Time integrals are exact along the piecewise-constant path (the field
/// integral of the Hermite interpolant).
pub fn spine_weight(path: &TypedPath, m: &MultitypeModel, v: &ScalarField, dv: &ScalarField, h: f64, t: f64) -> Result<f64> {
    if !(t < h) {
        return Err(Error::Precondition(format!("spine weight needs t < h, got t = {t}, h = {h}")));
    }
    if h > v.t_max() || h - t < v.t_min() {
        return Err(Error::OutOfWindow { time: h - t, lo: v.t_min(), hi: v.t_max() });
    }
    if t > path.end + 1e-12 {
        return Err(Error::Precondition(format!("path ends at {} before t = {t}", path.end)));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let mut exponent = 0.0;
    for (a, b, x) in path.segments_within(0.0, t) {
        exponent += m.beta[x] * (b - a) + 2.0 * m.alpha[x] * v.integral(h - b, h - a, x);
    }
    let x0 = path.origin;
    let xt = path.type_at(t);
    Ok(dv.value_at(h - t, xt) / dv.value_at(h, x0) * (-exponent).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ExtinctionFields, SolverConfig};
    use proptest::prelude::*;

    #[test]
    fn constant_alpha_leaves_model_unchanged() {
        let m = MultitypeModel::from_rows(&[&[-1.0, 1.0], &[2.0, -2.0]], &[0.2, 0.8], &[1.5, 1.5]).unwrap();
        let (lt, bt) = h_transform(&m);
        assert!((lt - &m.q).amax() < 1e-15);
        assert_eq!(bt, vec![0.2, 0.8]);
    }

    #[test]
    fn reference_two_type_transform() {
        let m = MultitypeModel::reference_two_type();
        let (lt, bt) = h_transform(&m);
        // Q(1/alpha) = (-0.5, 0.5) by hand.
        assert!((bt[0] - 0.7).abs() < 1e-15 && (bt[1] + 0.2).abs() < 1e-15);
        let expect = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 2.0, -2.0]);
        assert!((lt - expect).amax() < 1e-15);
    }

    #[test]
    fn reference_two_type_homogenisation() {
        let hd = homogenize(&MultitypeModel::reference_two_type());
        let lb = apply(&hd.l_tilde, &hd.beta_tilde);
        let disc: Vec<f64> = (0..2).map(|x| hd.beta_tilde[x].powi(2) - 2.0 * lb[x]).collect();
        assert!((disc[0] - 1.39).abs() < 1e-14 && (disc[1] + 3.56).abs() < 1e-14);
        assert!((hd.beta0 - 1.39f64.sqrt()).abs() < 1e-15);
        assert!((hd.beta0 - 1.17898).abs() < 1e-5);
        assert!((hd.q[0] - 0.23949).abs() < 1e-5 && (hd.q[1] - 0.68949).abs() < 1e-5);
        assert!(hd.varphi[0].abs() < 1e-14);
        assert!((hd.varphi[1] - 1.2375).abs() < 1e-12);
        let alt = hd.varphi_from_mechanism();
        assert!((alt[1] - hd.varphi[1]).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_degenerates() {
        let m = MultitypeModel::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], &[0.4, 0.4], &[2.0, 2.0]).unwrap();
        let hd = homogenize(&m);
        assert!((hd.beta0 - 0.4).abs() < 1e-15);
        assert!(hd.q.iter().chain(&hd.varphi).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn sigma_bounds_and_limit_on_reference() {
        let m = MultitypeModel::reference_two_type();
        let hd = homogenize(&m);
        let tm = hd.tilde_model().unwrap();
        let f = ExtinctionFields::compute(&tm, 40.0, &SolverConfig::default()).unwrap();
        let sigma = sigma_field(&hd, &f.v).unwrap();
        for n in 0..sigma.len() {
            let scale = 1e-8 * f.v.node_value(n, 0).max(f.v.node_value(n, 1)).max(1.0);
            for x in 0..2 {
                let s = sigma.node_value(n, x);
                assert!(s >= -scale && s <= 2.0 * hd.q[x] + scale, "t = {} x = {x} s = {s}", sigma.nodes()[n]);
            }
        }
        for x in 0..2 {
            assert!((sigma.value_at(40.0, x) - 2.0 * hd.q[x]).abs() < 1e-6);
        }
        // v of the transformed model equals alpha * v of the original.
        let orig = ExtinctionFields::compute(&m, 40.0, &SolverConfig::default()).unwrap();
        for &t in &[0.01, 0.5, 3.0, 20.0] {
            for x in 0..2 {
                let a = m.alpha[x] * orig.v.value_at(t, x);
                let b = f.v.value_at(t, x);
                assert!(((a - b) / b).abs() < 1e-8, "t = {t}");
            }
        }
    }

    #[test]
    fn girsanov_weight_on_extinct_path() {
        let hd = homogenize(&MultitypeModel::reference_two_type());
        let mut p = MeasurePath::zero(vec![0.0, 1.0, 2.0], 2);
        p.masses[0] = vec![1.0, 0.5];
        p.occupation[1] = vec![0.3, 0.2];
        p.occupation[2] = vec![0.3, 0.2];
        let w = girsanov_weight(&p, &hd, 2.0).unwrap();
        let expect = (hd.q[0] + 0.5 * hd.q[1] - 0.3 * hd.varphi[0] - 0.2 * hd.varphi[1]).exp();
        assert!((w - expect).abs() < 1e-15);
        assert!(w <= (hd.q[0] + 0.5 * hd.q[1]).exp());
        assert!(girsanov_weight(&p, &hd, 3.0).is_err());
    }

    #[test]
    fn spine_weight_is_one_for_homogeneous_mechanism() {
        let m = MultitypeModel::from_rows(&[&[-1.0, 1.0], &[3.0, -3.0]], &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        let f = ExtinctionFields::compute(&m, 5.0, &SolverConfig::default()).unwrap();
        let path = TypedPath { origin: 0, start: 0.0, end: 2.0, jumps: vec![(0.3, 1), (1.1, 0), (1.7, 1)] };
        assert_eq!(spine_weight(&path, &m, &f.v, &f.dv, 3.0, 0.0).unwrap(), 1.0);
        let w = spine_weight(&path, &m, &f.v, &f.dv, 3.0, 2.0).unwrap();
        assert!((w - 1.0).abs() < 1e-8, "{w}");
        assert!(spine_weight(&path, &m, &f.v, &f.dv, 2.0, 2.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn varphi_nonnegative_and_rows_conservative(
            k in 1usize..=5,
            u in proptest::collection::vec(0.0f64..1.0, 40),
        ) {
            let mut it = u.iter().copied().cycle();
            let mut q = vec![vec![0.0; k]; k];
            for (i, row) in q.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    if i != j { *x = 0.05 + 3.0 * it.next().unwrap(); }
                }
                row[i] = -row.iter().sum::<f64>();
            }
            let beta: Vec<f64> = (0..k).map(|_| 4.0 * it.next().unwrap() - 2.0).collect();
            let alpha: Vec<f64> = (0..k).map(|_| 0.1 + 3.0 * it.next().unwrap()).collect();
            let rows: Vec<&[f64]> = q.iter().map(|r| r.as_slice()).collect();
            let m = MultitypeModel::from_rows(&rows, &beta, &alpha).unwrap();
            let hd = homogenize(&m);
            let scale = hd.beta0.abs().max(1.0).powi(2) + hd.l_tilde.amax() * hd.beta_tilde.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for x in 0..k {
                prop_assert!(hd.varphi[x] >= -1e-12 * scale, "varphi {:?}", hd.varphi);
                prop_assert!(hd.q[x] >= 0.0);
                prop_assert!(hd.l_tilde.row(x).sum().abs() < 1e-10 * hd.l_tilde.amax().max(1.0));
            }
            let alt = hd.varphi_from_mechanism();
            for x in 0..k {
                prop_assert!((alt[x] - hd.varphi[x]).abs() < 1e-9 * scale);
            }
        }
    }
}
