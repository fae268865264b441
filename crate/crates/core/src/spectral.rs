//! Perron–Frobenius data of `Diag(beta) - Q`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MultitypeModel;

/// Scale convention written into every serialised eigentriple.
pub const SCALE_CONVENTION: &str =
    "phi0 > 0 and phi0_tilde > 0 with equal Euclidean norms, rescaled so that sum_i phi0(i) phi0_tilde(i) = 1";

/// Generalised eigenvalue, eigenvectors and the stationary law of the
/// `phi0`-transformed chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub lambda0: f64,
    pub phi0: Vec<f64>,
    pub phi0_tilde: Vec<f64>,
    /// `pi(i) = phi0(i) phi0_tilde(i)`.
    pub pi: Vec<f64>,
    /// Distance from `lambda0` to the next real part; infinite when `K = 1`.
    pub gap: f64,
}

fn operator(m: &MultitypeModel) -> DMatrix<f64> {
    DMatrix::from_diagonal(&m.beta) - &m.q
}

/// Real parts of all eigenvalues of `Diag(beta) - Q`, sorted ascending.
pub fn spectrum_real_parts(m: &MultitypeModel) -> Vec<f64> {
    let mut re: Vec<f64> = operator(m).complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(|a, b| a.partial_cmp(b).unwrap());
    re
}

/// Inverse iteration for the eigenvector of `a` nearest to `shift`.
fn inverse_iteration(a: &DMatrix<f64>, shift: f64) -> Result<DVector<f64>> {
    let k = a.nrows();
    let shifted = a - DMatrix::identity(k, k) * shift;
    let lu = shifted.lu();
    let mut x = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    for _ in 0..100 {
        let mut y = lu.solve(&x).ok_or_else(|| Error::Numeric("singular shifted operator in inverse iteration".into()))?;
        let norm = y.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numeric("inverse iteration diverged".into()));
        }
        y /= norm;
        if y.sum() < 0.0 {
            y = -y;
        }
        let delta = (&y - &x).amax();
        x = y;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(x)
}

/// Computes `lambda0` and the positive eigenvectors.
///
/// A dense eigen-solve seeds the shift; inverse iteration then refines the
/// right and left eigenvectors, whose strict positivity certifies the
/// Perron root.
pub fn generalized_eigen(m: &MultitypeModel) -> Result<SpectralData> {
    let k = m.k();
    let a = operator(m);
    let re = spectrum_real_parts(m);
    let seed = re[0];
    if k == 1 {
        return Ok(SpectralData { lambda0: a[(0, 0)], phi0: vec![1.0], phi0_tilde: vec![1.0], pi: vec![1.0], gap: f64::INFINITY });
    }
    let gap = re[1] - re[0];
    let scale = a.amax().max(1.0);
    if gap < 1e-8 * scale {
        return Err(Error::Numeric(format!("Perron root is numerically degenerate (gap {gap:e})")));
    }
    // Shift just below the Perron root; the next eigenvalue is at least
    // `gap` further away so convergence is fast.
    let shift = seed - 1e-3 * gap.min(1.0);
    let right = inverse_iteration(&a, shift)?;
    let left = inverse_iteration(&a.transpose(), shift)?;
    if right.iter().chain(left.iter()).any(|&x| !(x > 0.0)) {
        return Err(Error::Numeric("Perron eigenvector is not strictly positive".into()));
    }
    let lambda0 = (right.dot(&(&a * &right))) / right.dot(&right);

    // Equal Euclidean norms, then product normalisation.
    let mut phi0: Vec<f64> = right.iter().copied().collect();
    let mut phi0_tilde: Vec<f64> = left.iter().copied().collect();
    let prod: f64 = phi0.iter().zip(&phi0_tilde).map(|(a, b)| a * b).sum();
    let c = prod.sqrt();
    phi0.iter_mut().for_each(|x| *x /= c);
    phi0_tilde.iter_mut().for_each(|x| *x /= c);
    let pi: Vec<f64> = phi0.iter().zip(&phi0_tilde).map(|(a, b)| a * b).collect();
    Ok(SpectralData { lambda0, phi0, phi0_tilde, pi, gap })
}

impl SpectralData {
    /// Sup-norm residuals of the right and left eigen-equations.
    pub fn residuals(&self, m: &MultitypeModel) -> (f64, f64) {
        let a = operator(m);
        let phi = DVector::from_column_slice(&self.phi0);
        let psi = DVector::from_column_slice(&self.phi0_tilde);
        let r = (&a * &phi - &phi * self.lambda0).amax();
        let l = (a.transpose() * &psi - &psi * self.lambda0).amax();
        (r, l)
    }

    /// Generator of the `phi0`-transformed chain: `phi0(j)/phi0(i) q_ij`.
    pub fn spine_generator(&self, m: &MultitypeModel) -> DMatrix<f64> {
        let k = m.k();
        let mut g = DMatrix::zeros(k, k);
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                if i != j {
                    g[(i, j)] = self.phi0[j] / self.phi0[i] * m.q[(i, j)];
                    row += g[(i, j)];
                }
            }
            g[(i, i)] = -row;
        }
        g
    }

    /// Structured-text form (TOML) including the scale convention.
    pub fn to_toml(&self, m: &MultitypeModel) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            model: String,
            fingerprint: String,
            lambda0: f64,
            gap: f64,
            phi0: &'a [f64],
            phi0_tilde: &'a [f64],
            pi: &'a [f64],
            scale_convention: &'a str,
        }
        let out = Out {
            model: m.name.clone().unwrap_or_else(|| "unnamed".into()),
            fingerprint: m.fingerprint(),
            lambda0: self.lambda0,
            gap: self.gap,
            phi0: &self.phi0,
            phi0_tilde: &self.phi0_tilde,
            pi: &self.pi,
            scale_convention: SCALE_CONVENTION,
        };
        toml::to_string(&out).expect("spectral data serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_case() {
        let m = MultitypeModel::from_rows(&[&[0.0]], &[0.5], &[1.0]).unwrap();
        let s = generalized_eigen(&m).unwrap();
        assert_eq!(s.lambda0, 0.5);
        assert_eq!(s.phi0, vec![1.0]);
        assert_eq!(s.pi, vec![1.0]);
    }

    #[test]
    fn symmetric_constant_beta() {
        let m = MultitypeModel::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], &[0.3, 0.3], &[1.0, 2.0]).unwrap();
        let s = generalized_eigen(&m).unwrap();
        assert!((s.lambda0 - 0.3).abs() < 1e-12);
        assert!((s.phi0[0] - s.phi0[1]).abs() < 1e-12);
        assert!((s.pi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reference_two_type_root() {
        // Characteristic polynomial l^2 - 3 l + 1.16 solved in closed form.
        let root = (3.0 - 4.36f64.sqrt()) / 2.0;
        let s = generalized_eigen(&MultitypeModel::reference_two_type()).unwrap();
        assert!((s.lambda0 - root).abs() < 1e-10, "{} vs {root}", s.lambda0);
        assert!((root - 0.45597).abs() < 1e-5);
        let (r, l) = s.residuals(&MultitypeModel::reference_two_type());
        assert!(r <= 1e-10 && l <= 1e-10);
        let sum: f64 = s.pi.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spine_generator_is_conservative() {
        let m = MultitypeModel::reference_two_type();
        let g = generalized_eigen(&m).unwrap().spine_generator(&m);
        for i in 0..2 {
            assert!(g.row(i).sum().abs() < 1e-14);
        }
    }

    fn random_model(k: usize, u: &[f64]) -> MultitypeModel {
        let mut it = u.iter().copied().cycle();
        let mut q = vec![vec![0.0; k]; k];
        for (i, row) in q.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                if i != j {
                    // Some zero rates, but a cycle keeps the chain irreducible.
                    let r = it.next().unwrap();
                    *x = if j == (i + 1) % k { 0.2 + r } else if r < 0.3 { 0.0 } else { 2.0 * r };
                }
            }
            row[i] = -row.iter().sum::<f64>();
        }
        let beta: Vec<f64> = (0..k).map(|_| 3.0 * it.next().unwrap() - 1.0).collect();
        let alpha: Vec<f64> = (0..k).map(|_| 0.5 + it.next().unwrap()).collect();
        let rows: Vec<&[f64]> = q.iter().map(|r| r.as_slice()).collect();
        MultitypeModel::from_rows(&rows, &beta, &alpha).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn perron_root_is_min_real_part(k in 1usize..=6, u in proptest::collection::vec(0.0f64..1.0, 48)) {
            let m = random_model(k, &u);
            let s = generalized_eigen(&m).unwrap();
            let (r, l) = s.residuals(&m);
            prop_assert!(r <= 1e-10 && l <= 1e-10, "residuals {r:e} {l:e}");
            let re = spectrum_real_parts(&m);
            prop_assert!((s.lambda0 - re[0]).abs() < 1e-9);
            let total: f64 = s.pi.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.pi.iter().all(|&p| p > 0.0));
        }
    }
}
