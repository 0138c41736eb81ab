//! Uncertain switched affine systems in vertex (polytopic) form, the periodic
//! mode sequence, and per-step uncertainty realizations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{expm_affine, Matrix, Vector};

/// One vertex `[Aˡ, Bˡ]` of a mode's polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub a: Matrix,
    pub b: Vector,
}

/// Convex hull of vertex pairs describing one uncertain mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModePolytope {
    vertices: Vec<Vertex>,
}

impl ModePolytope {
    pub fn new(vertices: Vec<Vertex>) -> Result<Self> {
        let first = vertices.first().ok_or_else(|| invalid("mode polytope needs at least one vertex"))?;
        let n = first.a.nrows();
        for (l, v) in vertices.iter().enumerate() {
            if v.a.nrows() != n || v.a.ncols() != n || v.b.len() != n {
                return Err(invalid(format!("vertex {l} has inconsistent dimensions")));
            }
            if v.a.iter().chain(v.b.iter()).any(|x| !x.is_finite()) {
                return Err(invalid(format!("vertex {l} has non-finite entries")));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].a.nrows()
    }
}

/// Discrete switched affine system `x⁺ = A_σ x + B_σ` with polytopic modes.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedAffineSystem {
    n: usize,
    modes: Vec<ModePolytope>,
}

impl SwitchedAffineSystem {
    pub fn new(modes: Vec<ModePolytope>) -> Result<Self> {
        if modes.len() < 2 {
            return Err(invalid(format!("a switched system needs at least two modes, got {}", modes.len())));
        }
        let n = modes[0].dim();
        if modes.iter().any(|m| m.dim() != n) {
            return Err(invalid("modes disagree on the state dimension"));
        }
        Ok(Self { n, modes })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModePolytope] {
        &self.modes
    }

    pub fn mode(&self, j: usize) -> &ModePolytope {
        &self.modes[j]
    }

    pub fn max_vertices(&self) -> usize {
        self.modes.iter().map(ModePolytope::num_vertices).max().unwrap_or(0)
    }
}

/// Nominal matrices `[Āⱼ, B̄ⱼ]` picked inside each mode's polytope, together
/// with the convex weights that generate them.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalSelection {
    weights: Vec<Vec<f64>>,
    a: Vec<Matrix>,
    b: Vec<Vector>,
}

impl NominalSelection {
    pub fn from_weights(system: &SwitchedAffineSystem, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != system.num_modes() {
            return Err(invalid(format!(
                "expected nominal weights for {} modes, got {}",
                system.num_modes(),
                weights.len()
            )));
        }
        let mut a = Vec::with_capacity(weights.len());
        let mut b = Vec::with_capacity(weights.len());
        for (mode, w) in system.modes().iter().zip(&weights) {
            let (am, bm) = realize(mode, w)?;
            a.push(am);
            b.push(bm);
        }
        Ok(Self { weights, a, b })
    }

    /// Uniform weights over every mode's vertices (the segment midpoint for
    /// two-vertex modes).
    pub fn midpoint(system: &SwitchedAffineSystem) -> Self {
        let weights = system
            .modes()
            .iter()
            .map(|m| vec![1.0 / m.num_vertices() as f64; m.num_vertices()])
            .collect();
        Self::from_weights(system, weights).expect("uniform weights are a valid convex combination")
    }

    /// Nominal matrices given directly, without reference to a polytope.
    pub fn from_matrices(a: Vec<Matrix>, b: Vec<Vector>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(invalid("nominal A and B lists must be non-empty and of equal length"));
        }
        let n = a[0].nrows();
        for (am, bm) in a.iter().zip(&b) {
            if am.nrows() != n || am.ncols() != n || bm.len() != n {
                return Err(invalid("nominal matrices have inconsistent dimensions"));
            }
        }
        let weights = vec![vec![1.0]; a.len()];
        Ok(Self { weights, a, b })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn a(&self, j: usize) -> &Matrix {
        &self.a[j]
    }

    pub fn b(&self, j: usize) -> &Vector {
        &self.b[j]
    }

    pub fn num_modes(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.a[0].nrows()
    }
}

/// Periodic mode sequence `ν` stored over one minimal period.
///
/// Positions and modes are zero-based here; `mod_index` implements the
/// one-based wrap-around `((i − 1) mod N) + 1` used in the literature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cycle {
    modes: Vec<usize>,
}

impl Cycle {
    /// Builds a cycle from zero-based modes, reducing it to its minimal period
    /// (`[0, 0]` becomes `[0]`).
    pub fn new(modes: Vec<usize>, num_modes: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("cycle must contain at least one mode"));
        }
        if let Some(&bad) = modes.iter().find(|&&m| m >= num_modes) {
            return Err(invalid(format!("cycle mode {} out of range 1..={num_modes}", bad + 1)));
        }
        let len = modes.len();
        let period = (1..=len)
            .find(|&p| len.is_multiple_of(p) && (p..len).all(|i| modes[i] == modes[i - p]))
            .unwrap_or(len);
        Ok(Self { modes: modes[..period].to_vec() })
    }

    /// Builds a cycle from one-based modes as written in configuration files.
    pub fn from_one_based(modes: &[usize], num_modes: usize) -> Result<Self> {
        if modes.contains(&0) {
            return Err(invalid("cycle modes are one-based; got 0"));
        }
        Self::new(modes.iter().map(|m| m - 1).collect(), num_modes)
    }

    pub fn period(&self) -> usize {
        self.modes.len()
    }

    /// Mode `ν(i)` at zero-based position `i`.
    pub fn mode_at(&self, i: usize) -> usize {
        self.modes[i % self.modes.len()]
    }

    /// Zero-based successor position.
    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.modes.len()
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m + 1).collect()
    }

    /// One-based wrap-around index: `((i − 1) mod N) + 1` for `i ≥ 1`.
    pub fn mod_index(&self, i: usize) -> Result<usize> {
        if i < 1 {
            return Err(invalid("mod_index is defined for i >= 1"));
        }
        Ok((i - 1) % self.period() + 1)
    }
}

/// Convex combination of a mode's vertex pairs.
///
/// Weights must be non-negative and sum to one within `1e-12`. A vertex
/// indicator returns that vertex unchanged.
pub fn realize(mode: &ModePolytope, weights: &[f64]) -> Result<(Matrix, Vector)> {
    check_convex_weights(weights, mode.num_vertices())?;
    if let Some(l) = weights.iter().position(|&w| w == 1.0) {
        let v = &mode.vertices[l];
        return Ok((v.a.clone(), v.b.clone()));
    }
    let n = mode.dim();
    let mut a = Matrix::zeros(n, n);
    let mut b = Vector::zeros(n);
    for (v, &w) in mode.vertices.iter().zip(weights) {
        a += &v.a * w;
        b += &v.b * w;
    }
    Ok((a, b))
}

fn check_convex_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(invalid(format!("expected {count} vertex weights, got {}", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("vertex weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("vertex weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// How the unknown matrices evolve from one step to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// A uniformly random vertex each step.
    VertexRandom,
    /// Weights uniform over the simplex each step.
    DirichletUniform,
    /// The nominal weights at every step.
    Nominal,
}

impl FromStr for SamplingStrategy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertex-random" => Ok(Self::VertexRandom),
            "dirichlet-uniform" => Ok(Self::DirichletUniform),
            "nominal" => Ok(Self::Nominal),
            other => Err(invalid(format!(
                "unknown sampling strategy '{other}' (expected vertex-random, dirichlet-uniform or nominal)"
            ))),
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::VertexRandom => "vertex-random",
            Self::DirichletUniform => "dirichlet-uniform",
            Self::Nominal => "nominal",
        })
    }
}

/// Convex vertex weights for every step and every mode, `weights[k][j][l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyRealization {
    weights: Vec<Vec<Vec<f64>>>,
}

impl UncertaintyRealization {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    /// Weights of mode `mode` at step `k`.
    pub fn at(&self, k: usize, mode: usize) -> &[f64] {
        &self.weights[k][mode]
    }
}

/// Deterministic stream of per-step uncertainty weights.
pub fn sample_uncertainty(
    system: &SwitchedAffineSystem,
    nominal: &NominalSelection,
    horizon: usize,
    seed: u64,
    strategy: SamplingStrategy,
) -> Result<UncertaintyRealization> {
    if horizon < 1 {
        return Err(invalid("horizon must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..horizon)
        .map(|_| {
            system
                .modes()
                .iter()
                .enumerate()
                .map(|(j, mode)| draw_weights(&mut rng, mode.num_vertices(), strategy, &nominal.weights()[j]))
                .collect()
        })
        .collect();
    Ok(UncertaintyRealization { weights })
}

pub(crate) fn draw_weights<R: Rng>(rng: &mut R, count: usize, strategy: SamplingStrategy, nominal: &[f64]) -> Vec<f64> {
    match strategy {
        SamplingStrategy::Nominal => nominal.to_vec(),
        SamplingStrategy::VertexRandom => {
            let pick = rng.random_range(0..count);
            (0..count).map(|l| if l == pick { 1.0 } else { 0.0 }).collect()
        }
        SamplingStrategy::DirichletUniform => {
            // Normalised unit exponentials are uniform on the simplex.
            let draws: Vec<f64> = (0..count).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            let mut w: Vec<f64> = draws.iter().map(|d| d / total).collect();
            // Keep the sum at one within rounding.
            let drift: f64 = 1.0 - w.iter().sum::<f64>();
            if let Some(last) = w.last_mut() {
                *last = (*last + drift).max(0.0);
            }
            w
        }
    }
}

/// Continuous-time description of one mode with a scalar uncertain parameter:
/// `A(δ) = exp(F T) + δ·ΔA`, `B(δ) = ∫₀ᵀ exp(F s) g ds + δ·ΔB`, `|δ| ≤ bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousMode {
    pub f: Matrix,
    pub g: Vector,
    pub delta_a: Matrix,
    pub delta_b: Vector,
    pub bound: f64,
}

impl ContinuousMode {
    /// Discretises the mode with period `t`; the polytope is the segment
    /// between the two endpoint vertices `δ = −bound` and `δ = +bound`.
    pub fn discretize(&self, t: f64) -> Result<ModePolytope> {
        if !(self.bound >= 0.0) {
            return Err(invalid(format!("uncertainty bound must be non-negative, got {}", self.bound)));
        }
        let n = self.f.nrows();
        if self.delta_a.shape() != (n, n) || self.delta_b.len() != n || self.g.len() != n {
            return Err(invalid("continuous mode has inconsistent dimensions"));
        }
        let g = Matrix::from_column_slice(n, 1, self.g.as_slice());
        let (ad, bd) = expm_affine(&self.f, &g, t)?;
        let bd = bd.column(0).into_owned();
        let vertex = |d: f64| Vertex { a: &ad + &self.delta_a * d, b: &bd + &self.delta_b * d };
        ModePolytope::new(vec![vertex(-self.bound), vertex(self.bound)])
    }
}

/// The two-mode, three-state converter-like benchmark with uncertain
/// off-diagonal couplings.
pub mod example {
    use super::*;

    pub fn f1() -> Matrix {
        Matrix::from_row_slice(3, 3, &[-3.0, -6.0, 3.0, 2.0, 2.0, -3.0, 1.6, 0.0, -2.0])
    }

    pub fn f2() -> Matrix {
        Matrix::from_row_slice(3, 3, &[1.0, 3.0, 3.0, -0.2, -3.0, -3.0, 0.0, 0.0, -2.0])
    }

    pub fn g1() -> Vector {
        Vector::from_column_slice(&[0.5, 0.0, 0.0])
    }

    pub fn g2() -> Vector {
        Vector::from_column_slice(&[0.0, 0.0, 0.5])
    }

    /// Default bounds on `|δ₁|` and `|δ₂|`.
    pub const DELTA1_BOUND: f64 = 0.007;
    pub const DELTA2_BOUND: f64 = 0.015;

    pub fn continuous_modes(delta1_bound: f64, delta2_bound: f64) -> [ContinuousMode; 2] {
        let mut da1 = Matrix::zeros(3, 3);
        da1[(0, 1)] = 1.0;
        let mut da2 = Matrix::zeros(3, 3);
        da2[(1, 0)] = 1.0;
        [
            ContinuousMode {
                f: f1(),
                g: g1(),
                delta_a: da1,
                delta_b: Vector::from_column_slice(&[0.0, 4.0, 0.0]),
                bound: delta1_bound,
            },
            ContinuousMode {
                f: f2(),
                g: g2(),
                delta_a: da2,
                delta_b: Vector::from_column_slice(&[1.4, 0.0, 0.0]),
                bound: delta2_bound,
            },
        ]
    }
}

/// Discretised benchmark system with vertices at `δ = ±bound` per mode.
/// The nominal matrices sit at `δ = 0` (midpoint weights).
pub fn build_example_system(t: f64, delta1_bound: f64, delta2_bound: f64) -> Result<(SwitchedAffineSystem, NominalSelection)> {
    if !(delta1_bound >= 0.0 && delta2_bound >= 0.0) {
        return Err(invalid("uncertainty bounds must be non-negative"));
    }
    let modes = example::continuous_modes(delta1_bound, delta2_bound)
        .iter()
        .map(|m| m.discretize(t))
        .collect::<Result<Vec<_>>>()?;
    let system = SwitchedAffineSystem::new(modes)?;
    let nominal = NominalSelection::midpoint(&system);
    Ok((system, nominal))
}
