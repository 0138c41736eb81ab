//! Robust certification: the LMI conditions on `(R, Q)` at fixed `γ` that make
//! the delayed predictive closed loop converge to a neighbourhood of the
//! nominal limit cycle under polytopic uncertainty.
//!
//! For every cycle position `i` the conditions are
//!
//! ```text
//! [ R+Q   −Q        ]
//! [ ⋆     Pᵢ+Q−2R   ]  ≻ 0
//! ```
//!
//! and, for every vertex `ℓ` of mode `ν(i)`, with `S = Q + 2R`,
//! `ΔA = Aˡ − Ā` and `δ = Aˡ ρᵢ + Bˡ − ρ_{i+1}`,
//!
//! ```text
//! [ (1−γ)(R+Q)−(1−μ)Pᵢ   −(1−γ)Q          0   ΔAᵀS ]
//! [ ⋆                    (1−γ)(Pᵢ+Q−2R)   0   0    ]
//! [ ⋆                    ⋆                γ   δᵀS  ]
//! [ ⋆                    ⋆                ⋆   S    ]  ≻ 0,
//! ```
//!
//! plus `R ⪰ 0` and `Q ≻ 0`.

pub mod lmi;
pub mod solver;

use crate::error::{invalid, Result};
use crate::nominal::NominalDesign;
use crate::numerics::{Matrix, SymMatrix, Vector};

pub use lmi::{LmiBlock, LmiProblem, LmiProblemFile};
pub use solver::{solve_feasibility, FeasibilityResult, SolverOptions};

/// Robust certificate `(R, Q, γ)` and the margin it was certified with.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustCertificate {
    pub r: SymMatrix,
    pub q: SymMatrix,
    pub gamma: f64,
    pub margin: f64,
}

/// One vertex condition matrix, of order `3n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiBlock {
    pub i: usize,
    pub l: usize,
    pub matrix: SymMatrix,
}

/// Eigenvalue margins of every robust condition.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustMarginReport {
    pub coupling_min_eigs: Vec<f64>,
    /// `psi_min_eigs[i][l]`.
    pub psi_min_eigs: Vec<Vec<f64>>,
    pub r_min_eig: f64,
    pub q_min_eig: f64,
    pub valid: bool,
}

impl RobustMarginReport {
    /// Smallest eigenvalue over the coupling and vertex blocks.
    pub fn margin(&self) -> f64 {
        self.coupling_min_eigs
            .iter()
            .chain(self.psi_min_eigs.iter().flatten())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Deviation `δᵢˡ = Aˡ_{ν(i)} ρᵢ + Bˡ_{ν(i)} − ρ_{i+1}` of the nominal cycle
/// under vertex `l`.
pub fn delta_vector(design: &NominalDesign, i: usize, l: usize) -> Result<Vector> {
    if i >= design.period() {
        return Err(invalid(format!("cycle index {i} out of range (period {})", design.period())));
    }
    let mode = design.system.mode(design.cycle.mode_at(i));
    let v = mode
        .vertices()
        .get(l)
        .ok_or_else(|| invalid(format!("vertex index {l} out of range ({} vertices)", mode.num_vertices())))?;
    Ok(&v.a * design.rho(i) + &v.b - design.rho(design.cycle.next(i)))
}

/// `[[R+Q, −Q], [−Q, Pᵢ+Q−2R]]`.
pub fn coupling_block(p: &SymMatrix, r: &SymMatrix, q: &SymMatrix) -> Matrix {
    let n = p.dim();
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(r.as_matrix() + q.as_matrix()));
    m.view_mut((0, n), (n, n)).copy_from(&(-q.as_matrix()));
    m.view_mut((n, 0), (n, n)).copy_from(&(-q.as_matrix()));
    m.view_mut((n, n), (n, n))
        .copy_from(&(p.as_matrix() + q.as_matrix() - r.as_matrix() * 2.0));
    m
}

/// Vertex condition matrix evaluated directly from its block formula.
pub fn psi_block(design: &NominalDesign, r: &SymMatrix, q: &SymMatrix, gamma: f64, i: usize, l: usize) -> Result<PsiBlock> {
    let n = design.dim();
    let delta = delta_vector(design, i, l)?;
    let j = design.cycle.mode_at(i);
    let delta_a = &design.system.mode(j).vertices()[l].a - design.nominal.a(j);
    let p = design.p(i).as_matrix();
    let mu = design.mu();
    let s = q.as_matrix() + r.as_matrix() * 2.0;

    let (o2, o3, o4) = (n, 2 * n, 2 * n + 1);
    let mut m = Matrix::zeros(3 * n + 1, 3 * n + 1);
    m.view_mut((0, 0), (n, n))
        .copy_from(&((r.as_matrix() + q.as_matrix()) * (1.0 - gamma) - p * (1.0 - mu)));
    let off = -q.as_matrix() * (1.0 - gamma);
    m.view_mut((0, o2), (n, n)).copy_from(&off);
    m.view_mut((o2, 0), (n, n)).copy_from(&off.transpose());
    let top_right = delta_a.transpose() * &s;
    m.view_mut((0, o4), (n, n)).copy_from(&top_right);
    m.view_mut((o4, 0), (n, n)).copy_from(&top_right.transpose());
    m.view_mut((o2, o2), (n, n))
        .copy_from(&((p + q.as_matrix() - r.as_matrix() * 2.0) * (1.0 - gamma)));
    m[(o3, o3)] = gamma;
    let row = delta.transpose() * &s;
    m.view_mut((o3, o4), (1, n)).copy_from(&row);
    m.view_mut((o4, o3), (n, 1)).copy_from(&row.transpose());
    m.view_mut((o4, o4), (n, n)).copy_from(&s);
    Ok(PsiBlock { i, l, matrix: SymMatrix::symmetrized(&m)? })
}

/// Layout of the decision vector: upper-triangular entries of `R` (row
/// major), then those of `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RqLayout {
    pub n: usize,
}

impl RqLayout {
    pub fn per_matrix(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn num_vars(&self) -> usize {
        2 * self.per_matrix()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i..self.n).map(move |j| (i, j)))
    }

    /// Symmetric basis matrix of the free entry `(i, j)`.
    fn basis(&self, i: usize, j: usize) -> Matrix {
        let mut e = Matrix::zeros(self.n, self.n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    pub fn unpack(&self, y: &[f64]) -> Result<(SymMatrix, SymMatrix)> {
        if y.len() != self.num_vars() {
            return Err(invalid(format!("expected {} decision variables, got {}", self.num_vars(), y.len())));
        }
        let k = self.per_matrix();
        let build = |vals: &[f64]| {
            let mut m = Matrix::zeros(self.n, self.n);
            for ((i, j), &v) in self.pairs().zip(vals) {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            SymMatrix::new(m)
        };
        Ok((build(&y[..k])?, build(&y[k..])?))
    }

    pub fn pack(&self, r: &SymMatrix, q: &SymMatrix) -> Vec<f64> {
        self.pairs().map(|(i, j)| r[(i, j)]).chain(self.pairs().map(|(i, j)| q[(i, j)])).collect()
    }
}

/// Assembles the robust conditions at fixed `γ` as an LMI over the free
/// entries of `R` and `Q`: one coupling block per cycle position, one vertex
/// block per (position, vertex) pair and the `R ⪰ 0` block.
pub fn assemble_robust_lmi(design: &NominalDesign, gamma: f64) -> Result<LmiProblem> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let n = design.dim();
    let layout = RqLayout { n };
    let mu = design.mu();
    let g1 = 1.0 - gamma;
    let mut prob = LmiProblem::new(layout.num_vars());
    let bases: Vec<Matrix> = layout.pairs().map(|(i, j)| layout.basis(i, j)).collect();

    fn place<S: nalgebra::RawStorage<f64, nalgebra::Dyn, nalgebra::Dyn>>(
        m: &mut Matrix,
        r: usize,
        c: usize,
        block: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, S>,
    ) {
        m.view_mut((r, c), block.shape()).copy_from(block);
    }

    for i in 0..design.period() {
        let p = design.p(i).as_matrix();

        let mut constant = Matrix::zeros(2 * n, 2 * n);
        place(&mut constant, n, n, p);
        let mut coefs = Vec::with_capacity(layout.num_vars());
        for e in &bases {
            let mut c = Matrix::zeros(2 * n, 2 * n);
            place(&mut c, 0, 0, e);
            place(&mut c, n, n, &(e * -2.0));
            coefs.push(c);
        }
        for e in &bases {
            let mut c = Matrix::zeros(2 * n, 2 * n);
            place(&mut c, 0, 0, e);
            place(&mut c, 0, n, &-e);
            place(&mut c, n, 0, &-e);
            place(&mut c, n, n, e);
            coefs.push(c);
        }
        prob.add_block(format!("coupling[{}]", i + 1), constant, coefs)?;
    }

    let (o2, o3, o4) = (n, 2 * n, 2 * n + 1);
    let size = 3 * n + 1;
    for i in 0..design.period() {
        let j = design.cycle.mode_at(i);
        let p = design.p(i).as_matrix();
        for l in 0..design.system.mode(j).num_vertices() {
            let delta = delta_vector(design, i, l)?;
            let delta_a = &design.system.mode(j).vertices()[l].a - design.nominal.a(j);

            let mut constant = Matrix::zeros(size, size);
            place(&mut constant, 0, 0, &(p * -(1.0 - mu)));
            place(&mut constant, o2, o2, &(p * g1));
            constant[(o3, o3)] = gamma;

            // S = Q + 2R enters the last row/column linearly.
            let s_terms = |c: &mut Matrix, s_part: &Matrix| {
                let tr = delta_a.transpose() * s_part;
                place(c, 0, o4, &tr);
                place(c, o4, 0, &tr.transpose());
                let col = s_part * &delta;
                place(c, o4, o3, &Matrix::from_column_slice(n, 1, col.as_slice()));
                place(c, o3, o4, &Matrix::from_row_slice(1, n, col.as_slice()));
                place(c, o4, o4, s_part);
            };

            let mut coefs = Vec::with_capacity(layout.num_vars());
            for e in &bases {
                let mut c = Matrix::zeros(size, size);
                place(&mut c, 0, 0, &(e * g1));
                place(&mut c, o2, o2, &(e * (-2.0 * g1)));
                s_terms(&mut c, &(e * 2.0));
                coefs.push(c);
            }
            for e in &bases {
                let mut c = Matrix::zeros(size, size);
                place(&mut c, 0, 0, &(e * g1));
                place(&mut c, 0, o2, &(e * -g1));
                place(&mut c, o2, 0, &(e * -g1));
                place(&mut c, o2, o2, &(e * g1));
                s_terms(&mut c, e);
                coefs.push(c);
            }
            prob.add_block(format!("vertex[{}][{}]", i + 1, l + 1), constant, coefs)?;
        }
    }

    let mut coefs = Vec::with_capacity(layout.num_vars());
    coefs.extend(bases.iter().cloned());
    coefs.extend(bases.iter().map(|_| Matrix::zeros(n, n)));
    prob.add_block("R", Matrix::zeros(n, n), coefs)?;
    Ok(prob)
}

/// Eigenvalue margins of every robust condition, evaluated directly (without
/// the LMI assembly) at the given `(R, Q, γ)`.
pub fn verify_robust_certificate(design: &NominalDesign, cert: &RobustCertificate) -> Result<RobustMarginReport> {
    let n = design.dim();
    if cert.r.dim() != n || cert.q.dim() != n {
        return Err(invalid("robust certificate dimension does not match the system"));
    }
    let coupling_min_eigs = (0..design.period())
        .map(|i| Ok(SymMatrix::symmetrized(&coupling_block(design.p(i), &cert.r, &cert.q))?.min_eig()))
        .collect::<Result<Vec<_>>>()?;
    let psi_min_eigs = (0..design.period())
        .map(|i| {
            let count = design.system.mode(design.cycle.mode_at(i)).num_vertices();
            (0..count)
                .map(|l| Ok(psi_block(design, &cert.r, &cert.q, cert.gamma, i, l)?.matrix.min_eig()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let r_min_eig = cert.r.min_eig();
    let q_min_eig = cert.q.min_eig();
    let gamma_ok = cert.gamma > 0.0 && cert.gamma < 1.0;
    let valid = gamma_ok
        && r_min_eig >= 0.0
        && q_min_eig > 0.0
        && coupling_min_eigs.iter().chain(psi_min_eigs.iter().flatten()).all(|&m| m > 0.0);
    Ok(RobustMarginReport { coupling_min_eigs, psi_min_eigs, r_min_eig, q_min_eig, valid })
}

/// Minimum eigenvalue of each coupling block; needs no system data.
pub fn coupling_margins(p: &[SymMatrix], r: &SymMatrix, q: &SymMatrix) -> Result<Vec<f64>> {
    p.iter()
        .map(|pi| {
            if pi.dim() != r.dim() || pi.dim() != q.dim() {
                return Err(invalid("P, R and Q must share one dimension"));
            }
            Ok(SymMatrix::symmetrized(&coupling_block(pi, r, q))?.min_eig())
        })
        .collect()
}

/// Assembles and solves the robust LMI at `gamma`, then re-verifies the
/// result through the direct block formulas.
pub fn synthesize_robust_certificate(design: &NominalDesign, gamma: f64, opts: &SolverOptions) -> Result<(RobustCertificate, RobustMarginReport)> {
    let prob = assemble_robust_lmi(design, gamma)?;
    let sol = solve_feasibility(&prob, opts)?;
    let (r, q) = RqLayout { n: design.dim() }.unpack(&sol.assignment)?;
    let mut cert = RobustCertificate { r, q, gamma, margin: sol.verified_margin };
    let report = verify_robust_certificate(design, &cert)?;
    cert.margin = report.margin().min(report.r_min_eig);
    Ok((cert, report))
}

/// Closed-form certificate for a system without uncertainty:
/// `R = 0`, `Q = scale · (1−μ)/(μ−γ) · max_i λ_max(Pᵢ) · I` with `γ < μ`.
pub fn zero_uncertainty_certificate(design: &NominalDesign, gamma: f64, scale: f64) -> Result<RobustCertificate> {
    let mu = design.mu();
    if !(gamma > 0.0 && gamma < mu) {
        return Err(invalid(format!("the closed form needs 0 < gamma < mu, got gamma = {gamma}, mu = {mu}")));
    }
    if !(scale > 1.0) {
        return Err(invalid("scale must exceed 1 for a strict inequality"));
    }
    let n = design.dim();
    let top = design
        .certificate
        .p
        .iter()
        .map(|p| *crate::numerics::sym_eigs(p).eigenvalues.last().unwrap())
        .fold(f64::MIN, f64::max);
    let q = SymMatrix::identity(n).scaled(scale * (1.0 - mu) / (mu - gamma) * top);
    let mut cert = RobustCertificate { r: SymMatrix::zeros(n), q, gamma, margin: 0.0 };
    cert.margin = verify_robust_certificate(design, &cert)?.margin();
    Ok(cert)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaSweepRow {
    pub gamma: f64,
    pub feasible: bool,
    /// Verified margin when feasible, best margin reached otherwise.
    pub margin: f64,
    pub certificate: Option<RobustCertificate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaSweep {
    pub rows: Vec<GammaSweepRow>,
    pub largest_feasible: Option<f64>,
    /// Feasible γ values form a prefix of the sorted grid.
    pub monotone: bool,
}

/// Solves the robust LMI for every `γ` in `grid`.
pub fn gamma_sweep(design: &NominalDesign, grid: &[f64], opts: &SolverOptions) -> Result<GammaSweep> {
    if let Some(bad) = grid.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        return Err(invalid(format!("gamma grid values must lie in (0, 1), got {bad}")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(sorted.len());
    for &gamma in &sorted {
        let row = match synthesize_robust_certificate(design, gamma, opts) {
            Ok((cert, report)) if report.valid => {
                GammaSweepRow { gamma, feasible: true, margin: cert.margin, certificate: Some(cert) }
            }
            Ok((cert, _)) => GammaSweepRow { gamma, feasible: false, margin: cert.margin, certificate: None },
            Err(crate::Error::Infeasible { best_margin, .. }) => {
                GammaSweepRow { gamma, feasible: false, margin: best_margin, certificate: None }
            }
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let largest_feasible = rows.iter().filter(|r| r.feasible).map(|r| r.gamma).fold(None, |a: Option<f64>, g| {
        Some(a.map_or(g, |a| a.max(g)))
    });
    let first_infeasible = rows.iter().position(|r| !r.feasible).unwrap_or(rows.len());
    let monotone = rows[first_infeasible..].iter().all(|r| !r.feasible);
    Ok(GammaSweep { rows, largest_feasible, monotone })
}
