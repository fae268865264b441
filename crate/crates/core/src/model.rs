//! Finite-type superprocess models `(Q, beta, alpha)`, finite measures and
//! time grids.
//!
//! A model file is a TOML document:
//!
//! ```toml
//! name = "ref2type"            # optional
//! K = 2
//! Q = [[-1.0, 1.0], [1.0, -1.0]]
//! beta = [0.2, 0.8]
//! alpha = [1, 2]               # integers are accepted and read as f64
//! ```
//!
//! Unknown keys are rejected. Types are numbered from 1 in messages and in
//! every CLI output; internally they are 0-based indices.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// The triple `(Q, beta, alpha)` on `K` types.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitypeModel {
    pub name: Option<String>,
    /// Jump-rate generator of the type motion, rows sum to zero.
    pub q: DMatrix<f64>,
    /// Linear branching coefficient, 1/time.
    pub beta: DVector<f64>,
    /// Quadratic branching coefficient, strictly positive.
    pub alpha: DVector<f64>,
}

/// Every violated model invariant, in a human-readable form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl MultitypeModel {
    /// Builds a model and rejects it unless [`validate_model`] is clean.
    pub fn new(q: DMatrix<f64>, beta: DVector<f64>, alpha: DVector<f64>) -> Result<Self> {
        let m = MultitypeModel { name: None, q, beta, alpha };
        let report = validate_model(&m);
        if report.is_valid() {
            Ok(m)
        } else {
            Err(Error::InvalidModel(report.violations))
        }
    }

    pub fn from_rows(q: &[&[f64]], beta: &[f64], alpha: &[f64]) -> Result<Self> {
        let k = q.len();
        let flat: Vec<f64> = q.iter().flat_map(|r| r.iter().copied()).collect();
        if flat.len() != k * k {
            return Err(Error::InvalidModel(vec![format!("Q must be {k}x{k}")]));
        }
        Self::new(
            DMatrix::from_row_slice(k, k, &flat),
            DVector::from_column_slice(beta),
            DVector::from_column_slice(alpha),
        )
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    /// Number of types.
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    /// Total exit rate `-q_ii` of type `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    pub fn is_homogeneous(&self) -> bool {
        let b = self.beta[0];
        let a = self.alpha[0];
        self.beta.iter().all(|&x| x == b) && self.alpha.iter().all(|&x| x == a)
    }

    /// `Q u` for a vector on types.
    pub fn apply_q(&self, u: &[f64]) -> Vec<f64> {
        let k = self.k();
        (0..k).map(|i| (0..k).map(|j| self.q[(i, j)] * u[j]).sum()).collect()
    }

    /// Stable hex digest of the model parameters (name excluded).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.k() as u64).to_le_bytes());
        for x in self.q.transpose().iter().chain(self.beta.iter()).chain(self.alpha.iter()) {
            hasher.update(x.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// M1: one type, `beta = alpha = 1`.
    pub fn reference_homogeneous() -> Self {
        Self::from_rows(&[&[0.0]], &[1.0], &[1.0]).unwrap().with_name("ref1")
    }

    /// M2: the two-type reference model.
    pub fn reference_two_type() -> Self {
        Self::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], &[0.2, 0.8], &[1.0, 2.0])
            .unwrap()
            .with_name("ref2type")
    }

    /// M3: M2 with `beta = 0`, a critical model.
    pub fn reference_critical() -> Self {
        Self::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], &[0.0, 0.0], &[1.0, 2.0])
            .unwrap()
            .with_name("critical2type")
    }

    /// Looks up a built-in model by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ref1" | "M1" => Some(Self::reference_homogeneous()),
            "ref2type" | "M2" => Some(Self::reference_two_type()),
            "critical2type" | "M3" => Some(Self::reference_critical()),
            _ => None,
        }
    }
}

/// Checks conservativity, sign, irreducibility and positivity of `alpha`.
pub fn validate_model(m: &MultitypeModel) -> ValidationReport {
    let mut v = Vec::new();
    let k = m.beta.len();
    if k == 0 {
        v.push("K must be positive".to_string());
        return ValidationReport { violations: v };
    }
    if m.q.nrows() != k || m.q.ncols() != k {
        v.push(format!("Q is {}x{}, expected {k}x{k}", m.q.nrows(), m.q.ncols()));
    }
    if m.alpha.len() != k {
        v.push(format!("alpha has {} entries, expected {k}", m.alpha.len()));
    }
    if !v.is_empty() {
        return ValidationReport { violations: v };
    }
    let finite = m.q.iter().chain(m.beta.iter()).chain(m.alpha.iter()).all(|x| x.is_finite());
    if !finite {
        v.push("all entries must be finite".to_string());
        return ValidationReport { violations: v };
    }
    for i in 0..k {
        for j in 0..k {
            if i != j && m.q[(i, j)] < 0.0 {
                v.push(format!("Q[{},{}] = {} is negative", i + 1, j + 1, m.q[(i, j)]));
            }
        }
        let s: f64 = m.q.row(i).iter().sum();
        if s.abs() > ROW_SUM_TOL {
            // Rounded so that 0.1 built from -0.9 + 1.0 prints as 0.1.
            v.push(format!("row {} sums to {}", i + 1, (s * 1e12).round() / 1e12));
        }
    }
    if m.alpha.iter().any(|&a| a <= 0.0) {
        v.push("alpha must be strictly positive".to_string());
    }
    if !is_irreducible(&m.q) {
        v.push("Q is not irreducible".to_string());
    }
    ValidationReport { violations: v }
}

/// Strong connectivity of the graph `i -> j` for `q_ij > 0`, `i != j`.
pub fn is_irreducible(q: &DMatrix<f64>) -> bool {
    let k = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let w = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    k > 0 && reach(true) && reach(false)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "K")]
    k: i64,
    #[serde(rename = "Q")]
    q: Vec<Vec<Lenient>>,
    beta: Vec<Lenient>,
    alpha: Vec<Lenient>,
}

/// A float that also accepts TOML integers.
#[derive(Clone, Copy)]
struct Lenient(f64);

impl Serialize for Lenient {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Lenient {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Lenient;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number")
            }
            fn visit_f64<E: de::Error>(self, x: f64) -> std::result::Result<Lenient, E> {
                Ok(Lenient(x))
            }
            fn visit_i64<E: de::Error>(self, x: i64) -> std::result::Result<Lenient, E> {
                Ok(Lenient(x as f64))
            }
            fn visit_u64<E: de::Error>(self, x: u64) -> std::result::Result<Lenient, E> {
                Ok(Lenient(x as f64))
            }
        }
        d.deserialize_any(V)
    }
}

/// Parses a model document; `origin` only labels error messages.
pub fn parse_model(text: &str, origin: &str) -> Result<MultitypeModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    if file.k <= 0 {
        return Err(Error::Parse { path: origin.into(), message: "field `K` must be a positive integer".into() });
    }
    let k = file.k as usize;
    let check_len = |field: &str, n: usize| -> Result<()> {
        if n != k {
            Err(Error::Parse {
                path: origin.into(),
                message: format!("field `{field}` has {n} entries, K = {k}"),
            })
        } else {
            Ok(())
        }
    };
    check_len("Q", file.q.len())?;
    for (i, row) in file.q.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Parse {
                path: origin.into(),
                message: format!("field `Q` row {} has {} entries, K = {k}", i + 1, row.len()),
            });
        }
    }
    check_len("beta", file.beta.len())?;
    check_len("alpha", file.alpha.len())?;
    let flat: Vec<f64> = file.q.iter().flat_map(|r| r.iter().map(|x| x.0)).collect();
    let beta: Vec<f64> = file.beta.iter().map(|x| x.0).collect();
    let alpha: Vec<f64> = file.alpha.iter().map(|x| x.0).collect();
    let mut m = MultitypeModel::new(
        DMatrix::from_row_slice(k, k, &flat),
        DVector::from_vec(beta),
        DVector::from_vec(alpha),
    )?;
    m.name = file.name;
    Ok(m)
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<MultitypeModel> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
    parse_model(&text, &p.display().to_string())
}

/// Resolves a CLI `--model` argument: built-in name or file path.
pub fn resolve_model(arg: &str) -> Result<MultitypeModel> {
    match MultitypeModel::builtin(arg) {
        Some(m) => Ok(m),
        None => load_model(arg),
    }
}

/// Serialises a model as a TOML document readable by [`parse_model`].
pub fn model_to_toml(m: &MultitypeModel) -> String {
    let k = m.k();
    let file = ModelFile {
        name: m.name.clone(),
        k: k as i64,
        q: (0..k).map(|i| (0..k).map(|j| Lenient(m.q[(i, j)])).collect()).collect(),
        beta: m.beta.iter().map(|&x| Lenient(x)).collect(),
        alpha: m.alpha.iter().map(|&x| Lenient(x)).collect(),
    };
    toml::to_string(&file).expect("model serialises")
}

pub fn save_model(m: &MultitypeModel, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    std::fs::write(p, model_to_toml(m)).map_err(|e| Error::io(p.display().to_string(), e))
}

/// A finite measure on the types: one nonnegative mass per type.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    masses: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Precondition("measure masses must be finite and nonnegative".into()));
        }
        Ok(FiniteMeasure { masses })
    }

    pub fn zero(k: usize) -> Self {
        FiniteMeasure { masses: vec![0.0; k] }
    }

    /// `mass * delta_x`.
    pub fn dirac(k: usize, x: usize, mass: f64) -> Self {
        let mut masses = vec![0.0; k];
        masses[x] = mass;
        FiniteMeasure { masses }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `M(g) = sum_x M({x}) g(x)`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        self.masses.iter().zip(g).map(|(m, g)| m * g).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.masses.iter().all(|&m| m == 0.0)
    }
}

/// Strictly increasing time nodes covering `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("time grid nodes must be strictly increasing".into()));
        }
        Ok(TimeGrid { nodes })
    }

    /// `n + 1` equally spaced nodes on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Self {
        let n = n.max(1);
        let nodes = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        TimeGrid { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_model_is_valid() {
        let m = MultitypeModel {
            name: None,
            q: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            beta: DVector::from_vec(vec![0.0, 0.0]),
            alpha: DVector::from_vec(vec![1.0, 1.0]),
        };
        assert!(validate_model(&m).is_valid());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let m = MultitypeModel {
            name: None,
            q: DMatrix::from_row_slice(2, 2, &[-0.9, 1.0, 1.0, -1.0]),
            beta: DVector::from_vec(vec![0.0, 0.0]),
            alpha: DVector::from_vec(vec![1.0, 1.0]),
        };
        let r = validate_model(&m);
        assert_eq!(r.violations.len(), 1, "{:?}", r.violations);
        assert!(r.violations[0].starts_with("row 1 sums to 0.1"), "{:?}", r.violations);
    }

    #[test]
    fn nonpositive_alpha_is_reported() {
        let m = MultitypeModel {
            name: None,
            q: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            beta: DVector::from_vec(vec![0.0, 0.0]),
            alpha: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert_eq!(validate_model(&m).violations, vec!["alpha must be strictly positive".to_string()]);
    }

    #[test]
    fn reducible_model_is_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        assert!(!is_irreducible(&q));
        let r = MultitypeModel::new(q, DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn single_type_homogeneous_file() {
        let m = parse_model("K = 1\nQ = [[0]]\nbeta = [1]\nalpha = [1]\n", "inline").unwrap();
        assert_eq!(m.k(), 1);
        assert!(m.is_homogeneous());
        assert_eq!(m.beta[0], 1.0);
    }

    #[test]
    fn two_type_file() {
        let text = "name = \"sym\"\nK = 2\nQ = [[-1, 1], [1.0, -1.0]]\nbeta = [0.2, 0.8]\nalpha = [1, 2]\n";
        let m = parse_model(text, "inline").unwrap();
        assert_eq!(m.name.as_deref(), Some("sym"));
        assert_eq!(m.q[(0, 1)], 1.0);
        assert_eq!(m.alpha[1], 2.0);
    }

    #[test]
    fn missing_alpha_names_the_field() {
        let err = parse_model("K = 1\nQ = [[0]]\nbeta = [1]\n", "inline").unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse_model("K = 1\nQ = [[0]]\nbeta = [\"x\"]\nalpha = [1]\n", "inline").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse_model("K = 1\nQ = [[0]]\nbeta = [1]\nalpha = [1]\ngamma = 2\n", "inline").is_err());
    }

    #[test]
    fn measure_rejects_negative_mass() {
        assert!(FiniteMeasure::new(vec![1.0, -0.5]).is_err());
        let nu = FiniteMeasure::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(nu.integrate(&[3.0, 0.5]), 4.0);
    }
}
