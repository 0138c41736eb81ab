//! Nominal limit cycle, monodromy test and periodic Lyapunov certificates.

use crate::error::{invalid, Error, Result};
use crate::model::{Cycle, NominalSelection, SwitchedAffineSystem};
use crate::numerics::{solve_discrete_lyapunov, spectral_radius, sym_eigs, Matrix, SymMatrix, Vector};

/// Periodic state sequence `ρ₀, …, ρ_{N−1}` with
/// `ρ_{i+1 mod N} = Ā_{ν(i)} ρᵢ + B̄_{ν(i)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitCycle {
    pub rho: Vec<Vector>,
}

impl LimitCycle {
    /// Largest fixed-point residual over the cycle.
    pub fn max_residual(&self, nominal: &NominalSelection, cycle: &Cycle) -> f64 {
        (0..cycle.period())
            .map(|i| {
                let j = cycle.mode_at(i);
                (nominal.a(j) * &self.rho[i] + nominal.b(j) - &self.rho[cycle.next(i)]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Periodic Lyapunov matrices and decay rate `μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalCertificate {
    pub p: Vec<SymMatrix>,
    pub mu: f64,
}

impl NominalCertificate {
    /// Rescales every `Pᵢ` so the largest eigenvalue across the cycle equals
    /// `target`. Feasibility is scale invariant.
    pub fn normalized(&self, target: f64) -> Self {
        let top = self
            .p
            .iter()
            .map(|p| *sym_eigs(p).eigenvalues.last().unwrap())
            .fold(f64::MIN, f64::max);
        let s = target / top;
        Self { p: self.p.iter().map(|p| p.scaled(s)).collect(), mu: self.mu }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonodromyReport {
    /// State-transition matrix over one period, `Ā_{ν(N)} ⋯ Ā_{ν(1)}`.
    pub phi: Matrix,
    pub spectral_radius: f64,
    pub schur_stable: bool,
}

/// Per-position margins of a nominal certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalMarginReport {
    /// `λ_min(Pᵢ)`.
    pub p_min_eigs: Vec<f64>,
    /// `λ_min((1 − μ) Pᵢ − Āᵀ P_{i+1} Ā)`.
    pub decay_min_eigs: Vec<f64>,
    pub valid: bool,
}

impl NominalMarginReport {
    pub fn min_margin(&self) -> f64 {
        self.p_min_eigs.iter().chain(&self.decay_min_eigs).copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_dims(nominal: &NominalSelection, cycle: &Cycle) -> Result<()> {
    if let Some(&bad) = cycle.modes().iter().find(|&&m| m >= nominal.num_modes()) {
        return Err(invalid(format!("cycle refers to mode {} but the system has {}", bad + 1, nominal.num_modes())));
    }
    Ok(())
}

fn transition(nominal: &NominalSelection, cycle: &Cycle) -> Matrix {
    let n = nominal.dim();
    (0..cycle.period()).fold(Matrix::identity(n, n), |acc, i| nominal.a(cycle.mode_at(i)) * acc)
}

/// Product of the nominal state matrices over one period and its Schur test.
pub fn monodromy(nominal: &NominalSelection, cycle: &Cycle) -> Result<MonodromyReport> {
    check_dims(nominal, cycle)?;
    let phi = transition(nominal, cycle);
    let radius = spectral_radius(&phi)?;
    Ok(MonodromyReport { phi, spectral_radius: radius, schur_stable: radius < 1.0 })
}

/// Solves the periodic fixed point for `ρ₀`, then propagates forward.
pub fn compute_limit_cycle(nominal: &NominalSelection, cycle: &Cycle) -> Result<LimitCycle> {
    check_dims(nominal, cycle)?;
    let n = nominal.dim();
    let step = |i: usize, r: &Vector| nominal.a(cycle.mode_at(i)) * r + nominal.b(cycle.mode_at(i));

    let phi = transition(nominal, cycle);
    let affine = (0..cycle.period()).fold(Vector::zeros(n), |r, i| step(i, &r));
    let lhs = Matrix::identity(n, n) - &phi;

    let sv = lhs.clone().singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if !(smin > 1e-13 * smax.max(1.0)) {
        return Err(Error::NoUniqueLimitCycle);
    }
    let lu = lhs.clone().lu();
    let mut rho0 = lu.solve(&affine).ok_or(Error::NoUniqueLimitCycle)?;
    // One round of iterative refinement.
    let resid = &affine - &lhs * &rho0;
    if let Some(corr) = lu.solve(&resid) {
        rho0 += corr;
    }
    if rho0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NoUniqueLimitCycle);
    }

    let mut rho = Vec::with_capacity(cycle.period());
    rho.push(rho0);
    for i in 0..cycle.period() - 1 {
        let next = step(i, &rho[i]);
        rho.push(next);
    }
    Ok(LimitCycle { rho })
}

/// Constructive periodic Lyapunov certificate for decay rate `mu`.
///
/// With `c = 1 − μ`, back-propagation `Pᵢ = c⁻¹ Āᵢᵀ P_{i+1} Āᵢ + I` from a
/// seed `X` returns `c^{−N} Φᵀ X Φ + W`. Choosing `X` as the solution of the
/// discrete Lyapunov equation for `c^{−N/2} Φ` with right-hand side `W` closes
/// the period exactly, and every step carries the slack `c·I`.
pub fn synthesize_nominal_certificate(nominal: &NominalSelection, cycle: &Cycle, mu: f64) -> Result<NominalCertificate> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(invalid(format!("mu must lie in (0, 1), got {mu}")));
    }
    check_dims(nominal, cycle)?;
    let n = nominal.dim();
    let np = cycle.period();
    let c = 1.0 - mu;

    let phi = transition(nominal, cycle);
    let scaled = &phi * c.powf(-(np as f64) / 2.0);
    let scaled_radius = spectral_radius(&scaled)?;
    if scaled_radius >= 1.0 {
        return Err(Error::MuTooLarge { mu, scaled_radius });
    }

    let back = |seed: &Matrix| -> Vec<Matrix> {
        // p[i] for i = 0..N, p[N] = seed
        let mut p = vec![Matrix::zeros(n, n); np + 1];
        p[np] = seed.clone();
        for i in (0..np).rev() {
            let a = nominal.a(cycle.mode_at(i));
            p[i] = a.transpose() * &p[i + 1] * a / c + Matrix::identity(n, n);
        }
        p
    };

    let w = SymMatrix::symmetrized(&back(&Matrix::zeros(n, n))[0])?;
    let x = solve_discrete_lyapunov(&scaled, &w).map_err(|e| match e {
        Error::NotSchurStable { spectral_radius } => Error::MuTooLarge { mu, scaled_radius: spectral_radius },
        other => other,
    })?;
    let mut chain = back(x.as_matrix());
    chain[0] = x.into_matrix();
    chain.truncate(np);
    let p = chain.iter().map(SymMatrix::symmetrized).collect::<Result<Vec<_>>>()?;
    Ok(NominalCertificate { p, mu })
}

/// Eigenvalue margins of `Pᵢ ≻ 0` and `Āᵀ P_{i+1} Ā ≺ (1 − μ) Pᵢ`.
pub fn verify_nominal_certificate(cert: &NominalCertificate, nominal: &NominalSelection, cycle: &Cycle) -> Result<NominalMarginReport> {
    check_dims(nominal, cycle)?;
    if cert.p.len() != cycle.period() {
        return Err(invalid(format!("certificate has {} matrices for a cycle of period {}", cert.p.len(), cycle.period())));
    }
    if cert.p.iter().any(|p| p.dim() != nominal.dim()) {
        return Err(invalid("certificate dimension does not match the system"));
    }
    let mut p_min_eigs = Vec::with_capacity(cycle.period());
    let mut decay_min_eigs = Vec::with_capacity(cycle.period());
    for i in 0..cycle.period() {
        let a = nominal.a(cycle.mode_at(i));
        let pi = cert.p[i].as_matrix();
        let pn = cert.p[cycle.next(i)].as_matrix();
        let decay = SymMatrix::symmetrized(&(pi * (1.0 - cert.mu) - a.transpose() * pn * a))?;
        p_min_eigs.push(cert.p[i].min_eig());
        decay_min_eigs.push(decay.min_eig());
    }
    let valid = p_min_eigs.iter().chain(&decay_min_eigs).all(|&m| m > 0.0);
    Ok(NominalMarginReport { p_min_eigs, decay_min_eigs, valid })
}

/// Largest decay rate `μ` for which `(1 − μ)^{−N/2} Φ` is Schur stable,
/// found by bisection to within `tol` (and capped at `1 − tol`).
pub fn max_mu(nominal: &NominalSelection, cycle: &Cycle, tol: f64) -> Result<f64> {
    if !(tol > 0.0 && tol < 0.5) {
        return Err(invalid(format!("tolerance must lie in (0, 0.5), got {tol}")));
    }
    let report = monodromy(nominal, cycle)?;
    if !report.schur_stable {
        return Err(Error::MuInfeasible { spectral_radius: report.spectral_radius });
    }
    let np = cycle.period() as f64;
    let stable = |mu: f64| -> Result<bool> {
        Ok(spectral_radius(&(&report.phi * (1.0 - mu).powf(-np / 2.0)))? < 1.0)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.min(1.0 - tol))
}

/// Everything the robust stage and the closed loop need from the nominal
/// stage: the uncertain system, its nominal selection, the cycle, the limit
/// cycle and a nominal certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalDesign {
    pub system: SwitchedAffineSystem,
    pub nominal: NominalSelection,
    pub cycle: Cycle,
    pub limit_cycle: LimitCycle,
    pub certificate: NominalCertificate,
}

impl NominalDesign {
    /// Bundles the parts after checking that their dimensions agree.
    pub fn new(
        system: SwitchedAffineSystem,
        nominal: NominalSelection,
        cycle: Cycle,
        limit_cycle: LimitCycle,
        certificate: NominalCertificate,
    ) -> Result<Self> {
        let n = system.dim();
        if nominal.num_modes() != system.num_modes() || nominal.dim() != n {
            return Err(invalid("nominal selection does not match the system"));
        }
        check_dims(&nominal, &cycle)?;
        let np = cycle.period();
        if limit_cycle.rho.len() != np || limit_cycle.rho.iter().any(|r| r.len() != n) {
            return Err(invalid("limit cycle does not match the cycle period or state dimension"));
        }
        if certificate.p.len() != np || certificate.p.iter().any(|p| p.dim() != n) {
            return Err(invalid("nominal certificate does not match the cycle period or state dimension"));
        }
        Ok(Self { system, nominal, cycle, limit_cycle, certificate })
    }

    /// Computes the limit cycle and a constructive certificate for `mu`.
    pub fn synthesize(system: SwitchedAffineSystem, nominal: NominalSelection, cycle: Cycle, mu: f64) -> Result<Self> {
        let report = monodromy(&nominal, &cycle)?;
        if !report.schur_stable {
            return Err(Error::NotSchurStable { spectral_radius: report.spectral_radius });
        }
        let limit_cycle = compute_limit_cycle(&nominal, &cycle)?;
        let certificate = synthesize_nominal_certificate(&nominal, &cycle, mu)?;
        Self::new(system, nominal, cycle, limit_cycle, certificate)
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn period(&self) -> usize {
        self.cycle.period()
    }

    pub fn rho(&self, i: usize) -> &Vector {
        &self.limit_cycle.rho[i]
    }

    pub fn p(&self, i: usize) -> &SymMatrix {
        &self.certificate.p[i]
    }

    pub fn mu(&self) -> f64 {
        self.certificate.mu
    }
}
