//! Ellipsoidal estimates `{x : (x−ρᵢ)ᵀ(Pᵢ−R)(x−ρᵢ) ≤ 1}` of the robust limit
//! cycle, and a sampled check that the attractor is invariant.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::nominal::NominalDesign;
use crate::numerics::{Matrix, SymMatrix, Vector};
use crate::robust::{coupling_block, RobustCertificate};

use super::{ClosedLoop, ClosedLoopState};

#[derive(Clone, Debug, PartialEq)]
pub struct AttractorEllipsoid {
    pub index: usize,
    pub center: Vector,
    pub shape: SymMatrix,
    /// Maps the unit ball onto the ellipsoid: `x = center + map·u`.
    map: Matrix,
}

impl AttractorEllipsoid {
    pub fn new(index: usize, center: Vector, shape: SymMatrix) -> Result<Self> {
        let min_eig = shape.min_eig();
        let chol = Cholesky::new(shape.as_matrix().clone())
            .filter(|_| min_eig > 0.0)
            .ok_or(Error::InvalidCertificatePair { index: index + 1, min_eig })?;
        // M = L Lᵀ, so x − c = L⁻ᵀu has unit M-norm when ‖u‖ = 1.
        let map = chol
            .l()
            .transpose()
            .try_inverse()
            .ok_or(Error::InvalidCertificatePair { index: index + 1, min_eig })?;
        Ok(Self { index, center, shape, map })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn level(&self, x: &Vector) -> f64 {
        self.shape.quad_form(&(x - &self.center))
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.level(x) <= 1.0
    }

    /// Boundary points for plotting: 2 points for `n = 1`, a polygon for
    /// `n = 2`, a latitude/longitude mesh for `n = 3`; empty otherwise.
    pub fn boundary_points(&self, resolution: usize) -> Vec<Vector> {
        let resolution = resolution.max(4);
        let unit: Vec<Vector> = match self.dim() {
            1 => vec![Vector::from_element(1, -1.0), Vector::from_element(1, 1.0)],
            2 => (0..resolution)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / resolution as f64;
                    Vector::from_column_slice(&[a.cos(), a.sin()])
                })
                .collect(),
            3 => {
                let rings = resolution / 2;
                let mut pts = Vec::new();
                for i in 0..=rings {
                    let phi = std::f64::consts::PI * i as f64 / rings as f64;
                    let count = if i == 0 || i == rings { 1 } else { resolution };
                    for k in 0..count {
                        let a = std::f64::consts::TAU * k as f64 / resolution as f64;
                        pts.push(Vector::from_column_slice(&[phi.sin() * a.cos(), phi.sin() * a.sin(), phi.cos()]));
                    }
                }
                pts
            }
            _ => Vec::new(),
        };
        unit.iter().map(|u| &self.center + &self.map * u).collect()
    }

    /// A point drawn uniformly from the ellipsoid.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        &self.center + &self.map * uniform_in_ball(rng, self.dim())
    }
}

fn uniform_in_ball<R: Rng>(rng: &mut R, n: usize) -> Vector {
    let g = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let radius = rng.random::<f64>().powf(1.0 / n as f64);
    g.normalize() * radius
}

/// `max_{λ∈[0,1]} min_x λ·q₁(x) + (1−λ)·q₂(x)` for the two level functions.
/// The ellipsoids are disjoint exactly when this exceeds 1.
pub fn separation(e1: &AttractorEllipsoid, e2: &AttractorEllipsoid) -> f64 {
    let (m1, m2) = (e1.shape.as_matrix(), e2.shape.as_matrix());
    let (c1, c2) = (&e1.center, &e2.center);
    let k1 = e1.shape.quad_form(c1);
    let k2 = e2.shape.quad_form(c2);
    let g = |lam: f64| {
        let m = m1 * lam + m2 * (1.0 - lam);
        let b = m1 * c1 * lam + m2 * c2 * (1.0 - lam);
        let inner = match Cholesky::new(m) {
            Some(ch) => b.dot(&ch.solve(&b)),
            None => return f64::NEG_INFINITY,
        };
        lam * k1 + (1.0 - lam) * k2 - inner
    };
    // g is concave on [0, 1].
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..100 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    gc.max(gd).max(g(0.0)).max(g(1.0))
}

/// Number of uniform samples from each ellipsoid that land in the other.
pub fn cross_membership_hits(e1: &AttractorEllipsoid, e2: &AttractorEllipsoid, samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        if e2.contains(&e1.sample(&mut rng)) {
            hits += 1;
        }
        if e1.contains(&e2.sample(&mut rng)) {
            hits += 1;
        }
    }
    hits
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidPair {
    pub i: usize,
    pub j: usize,
    pub separation: f64,
    pub disjoint: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttractorProjection {
    pub ellipsoids: Vec<AttractorEllipsoid>,
    pub pairs: Vec<EllipsoidPair>,
}

impl AttractorProjection {
    pub fn all_disjoint(&self) -> bool {
        self.pairs.iter().all(|p| p.disjoint)
    }
}

/// One ellipsoid `E(Pᵢ − R, ρᵢ)` per cycle index and their pairwise
/// disjointness.
pub fn attractor_projection(design: &NominalDesign, robust: &RobustCertificate) -> Result<AttractorProjection> {
    if robust.r.dim() != design.dim() {
        return Err(invalid("robust certificate dimension does not match the design"));
    }
    let ellipsoids = (0..design.period())
        .map(|i| {
            let shape = SymMatrix::symmetrized(&(design.p(i).as_matrix() - robust.r.as_matrix()))?;
            AttractorEllipsoid::new(i, design.rho(i).clone(), shape)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..ellipsoids.len() {
        for j in i + 1..ellipsoids.len() {
            let s = separation(&ellipsoids[i], &ellipsoids[j]);
            pairs.push(EllipsoidPair { i, j, separation: s, disjoint: s > 1.0 });
        }
    }
    Ok(AttractorProjection { ellipsoids, pairs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport {
    pub samples: usize,
    /// Samples that satisfied `V ≤ 1` and the θ-argmin condition.
    pub accepted: usize,
    pub max_v_next: f64,
    pub pass: bool,
    /// No sample was accepted, so the pass verdict carries no information.
    pub vacuous: bool,
}

/// Samples attractor states and applies one step per vertex of the active
/// mode; passes when every successor satisfies `V ≤ 1 + tol`.
///
/// States are drawn with `θ`, `ϑ` uniform and `(χ₀ − ρ_θ, 𝔷₁ − ρ_θ)` uniform
/// in the ellipsoid `V ≤ 1`, then `z` is recovered through `Ā_{ν(ϑ)}⁻¹`.
pub fn check_robust_invariance_mc(cl: &ClosedLoop, samples: usize, seed: u64, tol: f64) -> Result<InvarianceReport> {
    let n = cl.design.dim();
    let np = cl.design.period();
    let mut maps = Vec::with_capacity(np);
    for i in 0..np {
        let c = SymMatrix::symmetrized(&coupling_block(cl.design.p(i), &cl.robust.r, &cl.robust.q))?;
        let min_eig = c.min_eig();
        let chol = Cholesky::new(c.into_matrix())
            .filter(|_| min_eig > 0.0)
            .ok_or_else(|| invalid(format!("coupling block {} is not positive definite", i + 1)))?;
        maps.push(chol.l().transpose().try_inverse().ok_or_else(|| invalid("singular coupling block"))?);
    }
    let inverses = (0..np)
        .map(|i| {
            cl.design
                .nominal
                .a(cl.design.cycle.mode_at(i))
                .clone()
                .try_inverse()
                .ok_or_else(|| invalid("nominal matrix is singular; memory state cannot be reconstructed"))
        })
        .collect::<Result<Vec<_>>>()?;

    if samples == 0 {
        log::warn!("invariance check with zero samples passes vacuously");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    let mut max_v_next = f64::NEG_INFINITY;
    for _ in 0..samples {
        let theta = rng.random_range(0..np);
        let vartheta = rng.random_range(0..np);
        let zeta = &maps[theta] * uniform_in_ball(&mut rng, 2 * n);
        let rho = cl.design.rho(theta);
        let x = rho + zeta.rows(0, n);
        let zfrak1 = rho + zeta.rows(n, n);
        let j = cl.design.cycle.mode_at(vartheta);
        let z = &inverses[vartheta] * (zfrak1 - cl.design.nominal.b(j));
        let state = ClosedLoopState { x, z, theta, vartheta };
        if !cl.argmin_ok(&state) || cl.lyapunov(&state) > 1.0 {
            continue;
        }
        accepted += 1;
        let mode = cl.design.system.mode(cl.design.cycle.mode_at(theta));
        for v in mode.vertices() {
            let t = cl.step_with(&state, &v.a, &v.b)?;
            max_v_next = max_v_next.max(cl.lyapunov(&t.next));
        }
    }
    let vacuous = accepted == 0;
    if vacuous && samples > 0 {
        log::warn!("no sampled state satisfied the attractor conditions");
    }
    Ok(InvarianceReport { samples, accepted, max_v_next, pass: vacuous || max_v_next <= 1.0 + tol, vacuous })
}
