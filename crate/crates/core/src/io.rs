//! JSON file schemas and small conversion helpers.
//!
//! Matrices are stored as lists of rows, vectors as flat lists. Cycle and
//! mode indices in files are one-based.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::control_sim::{AttractorProjection, Trace};
use crate::error::{invalid, Error, Result};
use crate::model::{ContinuousMode, Cycle, ModePolytope, NominalSelection, SwitchedAffineSystem, Vertex};
use crate::nominal::{LimitCycle, NominalCertificate};
use crate::numerics::{Matrix, SymMatrix, Vector};
use crate::robust::RobustCertificate;

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Rejects ragged, empty or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(invalid("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid("matrix rows have different lengths"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(Matrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

/// Symmetric matrix from rows; an asymmetric input is averaged with its
/// transpose (with a warning).
pub fn sym_from_rows(rows: &[Vec<f64>]) -> Result<SymMatrix> {
    let m = matrix_from_rows(rows)?;
    if m.nrows() != m.ncols() {
        return Err(invalid("symmetric matrix must be square"));
    }
    if m != m.transpose() {
        log::warn!("asymmetric matrix symmetrised by averaging");
    }
    SymMatrix::symmetrized(&m)
}

pub fn vector_to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn vector_from_slice(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return Err(invalid("vector must be non-empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector has non-finite entries"));
    }
    Ok(Vector::from_column_slice(v))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// System description.
///
/// ```json
/// {"n": 1,
///  "modes": [{"vertices": [{"A": [[0.5]], "B": [1.0]}]}, ...],
///  "nominal_weights": [[1.0], ...],
///  "cycle": [1, 2]}
/// ```
///
/// Instead of `modes`, a `continuous` section may describe each mode as
/// `dx/dt = F x + g` with one scalar uncertain parameter; it is discretised
/// with period `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    pub vertices: Vec<VertexFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

/// `A(δ) = exp(F T) + δ·dA`, `B(δ) = ∫₀ᵀ exp(F s) g ds + δ·dB`, `|δ| ≤ bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousFile {
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub modes: Vec<ContinuousModeFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousModeFile {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyFile {
    #[serde(rename = "dA")]
    pub da: Vec<Vec<f64>>,
    #[serde(rename = "dB")]
    pub db: Vec<f64>,
    pub bound: f64,
}

impl SystemFile {
    pub fn from_system(system: &SwitchedAffineSystem, nominal: &NominalSelection, cycle: Option<&Cycle>) -> Self {
        Self {
            n: system.dim(),
            modes: system
                .modes()
                .iter()
                .map(|m| ModeFile {
                    vertices: m
                        .vertices()
                        .iter()
                        .map(|v| VertexFile { a: matrix_to_rows(&v.a), b: vector_to_vec(&v.b) })
                        .collect(),
                })
                .collect(),
            continuous: None,
            nominal_weights: Some(nominal.weights().to_vec()),
            cycle: cycle.map(Cycle::one_based),
        }
    }

    fn continuous_modes(&self, c: &ContinuousFile) -> Result<Vec<ContinuousMode>> {
        c.modes
            .iter()
            .map(|m| {
                let f = matrix_from_rows(&m.f)?;
                let g = vector_from_slice(&m.g)?;
                let (delta_a, delta_b, bound) = match &m.uncertainty {
                    Some(u) => (matrix_from_rows(&u.da)?, vector_from_slice(&u.db)?, u.bound),
                    None => (Matrix::zeros(self.n, self.n), Vector::zeros(self.n), 0.0),
                };
                if f.nrows() != self.n || delta_a.nrows() != self.n || g.len() != self.n || delta_b.len() != self.n {
                    return Err(invalid(format!("continuous mode dimensions must equal n = {}", self.n)));
                }
                if bound == 0.0 {
                    log::warn!("uncertainty bound 0: the two vertices of the mode coincide");
                }
                Ok(ContinuousMode { f, g, delta_a, delta_b, bound })
            })
            .collect()
    }

    /// Vertex-form polytopes, discretising a continuous description with
    /// `t_override` or its own `T`.
    pub fn build(&self, t_override: Option<f64>) -> Result<(SwitchedAffineSystem, NominalSelection)> {
        let modes = match (&self.continuous, self.modes.is_empty()) {
            (Some(_), false) => return Err(Error::Config("give either 'modes' or 'continuous', not both".into())),
            (None, true) => return Err(Error::Config("system has neither 'modes' nor 'continuous'".into())),
            (Some(c), true) => {
                let t = t_override
                    .or(c.t)
                    .ok_or_else(|| Error::Config("continuous system needs a sampling period T".into()))?;
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("sampling period must be positive, got {t}")));
                }
                self.continuous_modes(c)?.iter().map(|m| m.discretize(t)).collect::<Result<Vec<_>>>()?
            }
            (None, false) => self
                .modes
                .iter()
                .map(|m| {
                    let vertices = m
                        .vertices
                        .iter()
                        .map(|v| Ok(Vertex { a: matrix_from_rows(&v.a)?, b: vector_from_slice(&v.b)? }))
                        .collect::<Result<Vec<_>>>()?;
                    ModePolytope::new(vertices)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let system = SwitchedAffineSystem::new(modes)?;
        if system.dim() != self.n {
            return Err(invalid(format!("declared n = {} but matrices have dimension {}", self.n, system.dim())));
        }
        let nominal = match &self.nominal_weights {
            Some(w) => NominalSelection::from_weights(&system, w.clone())?,
            None => NominalSelection::midpoint(&system),
        };
        Ok((system, nominal))
    }
}

/// `{rho, P, mu}` plus optional provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalCertificateFile {
    pub rho: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl NominalCertificateFile {
    pub fn new(lc: &LimitCycle, cert: &NominalCertificate, config_hash: Option<String>) -> Self {
        Self {
            rho: lc.rho.iter().map(vector_to_vec).collect(),
            p: cert.p.iter().map(|p| matrix_to_rows(p.as_matrix())).collect(),
            mu: cert.mu,
            config_hash,
        }
    }

    pub fn parse(&self) -> Result<(LimitCycle, NominalCertificate)> {
        if self.p.is_empty() || self.p.len() != self.rho.len() {
            return Err(invalid("certificate needs one rho and one P per cycle index"));
        }
        let rho = self.rho.iter().map(|r| vector_from_slice(r)).collect::<Result<Vec<_>>>()?;
        let p = self.p.iter().map(|m| sym_from_rows(m)).collect::<Result<Vec<_>>>()?;
        let n = rho[0].len();
        if rho.iter().any(|r| r.len() != n) || p.iter().any(|m| m.dim() != n) {
            return Err(invalid("certificate entries have inconsistent dimensions"));
        }
        Ok((LimitCycle { rho }, NominalCertificate { p, mu: self.mu }))
    }
}

/// `{R, Q, gamma, margin}` plus optional provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustCertificateFile {
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub gamma: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl RobustCertificateFile {
    pub fn new(cert: &RobustCertificate, config_hash: Option<String>) -> Self {
        Self {
            r: matrix_to_rows(cert.r.as_matrix()),
            q: matrix_to_rows(cert.q.as_matrix()),
            gamma: cert.gamma,
            margin: cert.margin,
            config_hash,
        }
    }

    pub fn parse(&self) -> Result<RobustCertificate> {
        let r = sym_from_rows(&self.r)?;
        let q = sym_from_rows(&self.q)?;
        if r.dim() != q.dim() {
            return Err(invalid("R and Q must have the same dimension"));
        }
        Ok(RobustCertificate { r, q, gamma: self.gamma, margin: self.margin })
    }
}

/// CSV trace: `k, x1..xn, z1..zn, theta, vartheta, u, V, in_attractor,
/// argmin_ok, w1..wL`, preceded by a `# config_hash` comment line. Indices
/// are one-based; weight columns beyond the active mode's vertex count are
/// left empty.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &Trace, max_vertices: usize, config_hash: &str) -> Result<()> {
    let n = trace.final_state.x.len();
    writeln!(out, "# config_hash={config_hash}")?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("z{i}")));
    header.extend(["theta", "vartheta", "u", "V", "in_attractor", "argmin_ok"].map(String::from));
    header.extend((1..=max_vertices).map(|l| format!("w{l}")));
    writeln!(out, "{}", header.join(","))?;
    for r in &trace.rows {
        let mut cells = vec![r.k.to_string()];
        cells.extend(r.state.x.iter().map(f64::to_string));
        cells.extend(r.state.z.iter().map(f64::to_string));
        cells.push((r.state.theta + 1).to_string());
        cells.push((r.state.vartheta + 1).to_string());
        cells.push((r.u + 1).to_string());
        cells.push(r.v.to_string());
        cells.push(u8::from(r.in_attractor).to_string());
        cells.push(u8::from(r.argmin_ok).to_string());
        cells.extend((0..max_vertices).map(|l| r.weights.get(l).map_or(String::new(), f64::to_string)));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// `k, V` for every visited state including the final one.
pub fn write_v_history_csv<W: Write>(out: &mut W, trace: &Trace, config_hash: &str) -> Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "k,V")?;
    for r in &trace.rows {
        writeln!(out, "{},{}", r.k, r.v)?;
    }
    if let Some(last) = trace.rows.last() {
        writeln!(out, "{},{}", last.k + 1, last.v_next)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub seed: u64,
    pub strategy: String,
    /// One-based.
    pub sigma0: usize,
    /// One-based.
    pub theta0: usize,
    pub horizon: usize,
    pub n: usize,
    pub first_entry: Option<usize>,
    pub invariant_after_entry: bool,
    pub config_hash: String,
}

impl TraceMetadata {
    pub fn new(trace: &Trace, config_hash: &str) -> Self {
        Self {
            seed: trace.seed,
            strategy: trace.strategy.to_string(),
            sigma0: trace.sigma0 + 1,
            theta0: trace.rows.first().map_or(0, |r| r.state.theta + 1),
            horizon: trace.len(),
            n: trace.final_state.x.len(),
            first_entry: trace.first_entry(),
            invariant_after_entry: trace.invariant_after_entry(),
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidEntry {
    /// One-based cycle index.
    pub index: usize,
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
    pub boundary: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidPairEntry {
    pub i: usize,
    pub j: usize,
    pub separation: f64,
    pub disjoint: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidFile {
    pub ellipsoids: Vec<EllipsoidEntry>,
    pub pairs: Vec<EllipsoidPairEntry>,
    pub all_disjoint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EllipsoidFile {
    pub fn new(proj: &AttractorProjection, resolution: usize, config_hash: Option<String>) -> Self {
        Self {
            ellipsoids: proj
                .ellipsoids
                .iter()
                .map(|e| EllipsoidEntry {
                    index: e.index + 1,
                    center: vector_to_vec(&e.center),
                    shape: matrix_to_rows(e.shape.as_matrix()),
                    boundary: e.boundary_points(resolution).iter().map(vector_to_vec).collect(),
                })
                .collect(),
            pairs: proj
                .pairs
                .iter()
                .map(|p| EllipsoidPairEntry { i: p.i + 1, j: p.j + 1, separation: p.separation, disjoint: p.disjoint })
                .collect(),
            all_disjoint: proj.all_disjoint(),
            config_hash,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_round_trip() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = matrix_to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(matrix_from_rows(&rows).unwrap(), m);
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(matrix_from_rows(&[]).is_err());
        assert!(matrix_from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn asymmetric_input_is_averaged() {
        let s = sym_from_rows(&[vec![1.0, 3.77], vec![3.778, 2.0]]).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        assert!((s[(0, 1)] - 3.774).abs() < 1e-12);
    }

    #[test]
    fn continuous_system_needs_positive_period() {
        let text = r#"{"n": 1, "continuous": {"modes": [{"F": [[-1.0]], "g": [1.0]}, {"F": [[-2.0]], "g": [0.0]}]}}"#;
        let file: SystemFile = serde_json::from_str(text).unwrap();
        assert!(matches!(file.build(None), Err(Error::Config(_))));
        assert!(matches!(file.build(Some(-1.0)), Err(Error::Config(_))));
        let (system, _) = file.build(Some(0.5)).unwrap();
        assert_eq!(system.num_modes(), 2);
        assert_eq!(system.mode(0).num_vertices(), 2);
        assert!((system.mode(0).vertices()[0].a[(0, 0)] - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn vertex_system_round_trip() {
        let text = r#"{"n": 1, "modes": [{"vertices": [{"A": [[0.5]], "B": [1.0]}]},
                                         {"vertices": [{"A": [[0.5]], "B": [-1.0]}]}], "cycle": [1, 2]}"#;
        let file: SystemFile = serde_json::from_str(text).unwrap();
        let (system, nominal) = file.build(None).unwrap();
        let cycle = Cycle::from_one_based(file.cycle.as_ref().unwrap(), 2).unwrap();
        let back = SystemFile::from_system(&system, &nominal, Some(&cycle));
        let (system2, nominal2) = back.build(None).unwrap();
        assert_eq!(system, system2);
        assert_eq!(nominal, nominal2);
        assert!(serde_json::from_str::<SystemFile>(r#"{"n": 1, "bogus": 1}"#).is_err());
    }
}
