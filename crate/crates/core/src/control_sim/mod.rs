//! Delayed predictive min-switching closed loop.
//!
//! The full state is `ξ = (x, z, θ, ϑ)`: plant state, previous plant state,
//! the cycle index chosen at the previous step (applied now) and the one
//! before it. Cycle indices are zero-based here; files and the CLI use
//! one-based indices.

pub mod attractor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{draw_weights, realize, SamplingStrategy};
use crate::nominal::NominalDesign;
use crate::numerics::{Matrix, Vector};
use crate::robust::RobustCertificate;

pub use attractor::{
    attractor_projection, check_robust_invariance_mc, cross_membership_hits, separation, AttractorEllipsoid,
    AttractorProjection, EllipsoidPair, InvarianceReport,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopState {
    pub x: Vector,
    pub z: Vector,
    pub theta: usize,
    pub vartheta: usize,
}

/// `χ₀ = x`, `χ₁ = Ā_{ν(θ)}x + B̄_{ν(θ)}`, `𝔷₀ = z`, `𝔷₁ = Ā_{ν(ϑ)}z + B̄_{ν(ϑ)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionPair {
    pub chi0: Vector,
    pub chi1: Vector,
    pub zfrak0: Vector,
    pub zfrak1: Vector,
}

/// Outcome of one closed-loop step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: ClosedLoopState,
    pub prediction: PredictionPair,
    pub u: usize,
}

/// A certified design ready to be run in closed loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub design: NominalDesign,
    pub robust: RobustCertificate,
}

impl ClosedLoop {
    pub fn new(design: NominalDesign, robust: RobustCertificate) -> Result<Self> {
        if robust.r.dim() != design.dim() || robust.q.dim() != design.dim() {
            return Err(invalid("robust certificate dimension does not match the design"));
        }
        Ok(Self { design, robust })
    }

    fn check_state(&self, s: &ClosedLoopState) -> Result<()> {
        let n = self.design.dim();
        let np = self.design.period();
        if s.x.len() != n || s.z.len() != n {
            return Err(invalid(format!("state vectors must have length {n}")));
        }
        if s.theta >= np || s.vartheta >= np {
            return Err(invalid(format!("cycle indices must lie below the period {np}")));
        }
        Ok(())
    }

    fn nominal_step(&self, index: usize, v: &Vector) -> Vector {
        let j = self.design.cycle.mode_at(index);
        self.design.nominal.a(j) * v + self.design.nominal.b(j)
    }

    pub fn predict(&self, s: &ClosedLoopState) -> PredictionPair {
        PredictionPair {
            chi0: s.x.clone(),
            chi1: self.nominal_step(s.theta, &s.x),
            zfrak0: s.z.clone(),
            zfrak1: self.nominal_step(s.vartheta, &s.z),
        }
    }

    /// `‖v − ρᵢ‖²_{Pᵢ}` for every cycle index.
    pub fn distances(&self, v: &Vector) -> Vec<f64> {
        (0..self.design.period()).map(|i| self.design.p(i).quad_form(&(v - self.design.rho(i)))).collect()
    }

    /// Min-switching choice on the prediction; ties go to the smallest index.
    pub fn control(&self, chi1: &Vector) -> usize {
        argmin(&self.distances(chi1))
    }

    /// Whether `θ` minimises `‖𝔷₁ − ρᵢ‖²_{Pᵢ}`.
    pub fn argmin_ok(&self, s: &ClosedLoopState) -> bool {
        let d = self.distances(&self.predict(s).zfrak1);
        d.iter().all(|&v| d[s.theta] <= v)
    }

    pub fn lyapunov(&self, s: &ClosedLoopState) -> f64 {
        self.lyapunov_from(s.theta, &self.predict(s))
    }

    /// `‖𝔷₁−ρ_θ‖²_{P_θ−2R} + ‖χ₀−𝔷₁‖²_Q + ‖χ₀−ρ_θ‖²_R`.
    pub fn lyapunov_from(&self, theta: usize, pred: &PredictionPair) -> f64 {
        let rho = self.design.rho(theta);
        let b = &pred.zfrak1 - rho;
        let a = &pred.chi0 - rho;
        let e = &pred.chi0 - &pred.zfrak1;
        let (p, r, q) = (self.design.p(theta), &self.robust.r, &self.robust.q);
        p.quad_form(&b) - 2.0 * r.quad_form(&b) + q.quad_form(&e) + r.quad_form(&a)
    }

    /// Membership in the attractor: `V ≤ 1` and the θ-argmin condition.
    pub fn in_attractor(&self, s: &ClosedLoopState) -> bool {
        self.argmin_ok(s) && self.lyapunov(s) <= 1.0
    }

    /// `‖χ₁ − ρ_{θ+1}‖²_{P_{θ+1}} − (1−μ)‖χ₀ − ρ_θ‖²_{P_θ}`; never positive
    /// for a valid nominal certificate.
    pub fn prediction_decay_gap(&self, s: &ClosedLoopState) -> f64 {
        let pred = self.predict(s);
        let next = self.design.cycle.next(s.theta);
        self.design.p(next).quad_form(&(&pred.chi1 - self.design.rho(next)))
            - (1.0 - self.design.mu()) * self.design.p(s.theta).quad_form(&(&pred.chi0 - self.design.rho(s.theta)))
    }

    /// One step with the given realised matrices of the active mode `ν(θ)`.
    pub fn step_with(&self, s: &ClosedLoopState, a: &Matrix, b: &Vector) -> Result<Transition> {
        self.check_state(s)?;
        let prediction = self.predict(s);
        let u = self.control(&prediction.chi1);
        let next = ClosedLoopState { x: a * &s.x + b, z: s.x.clone(), theta: u, vartheta: s.theta };
        Ok(Transition { next, prediction, u })
    }

    /// One step with convex vertex weights for the active mode `ν(θ)`.
    pub fn step(&self, s: &ClosedLoopState, weights: &[f64]) -> Result<Transition> {
        self.check_state(s)?;
        let (a, b) = realize(self.design.system.mode(self.design.cycle.mode_at(s.theta)), weights)?;
        self.step_with(s, &a, &b)
    }

    /// Initial state for plant state `x0` and initial mode `sigma0`: `θ₀` is
    /// the smallest cycle index with `ν(θ₀) = σ₀`, `z₀ = x₀`, `ϑ₀ = θ₀`.
    pub fn initial_state(&self, x0: &Vector, sigma0: usize) -> Result<ClosedLoopState> {
        let theta = self
            .design
            .cycle
            .modes()
            .iter()
            .position(|&m| m == sigma0)
            .ok_or_else(|| invalid(format!("initial mode {} does not occur in the cycle", sigma0 + 1)))?;
        let s = ClosedLoopState { x: x0.clone(), z: x0.clone(), theta, vartheta: theta };
        self.check_state(&s)?;
        Ok(s)
    }

    /// Runs `horizon` steps. The uncertainty stream and the draw of a missing
    /// `sigma0` use separate streams of the same seeded generator.
    pub fn simulate(
        &self,
        x0: &Vector,
        sigma0: Option<usize>,
        horizon: usize,
        seed: u64,
        strategy: SamplingStrategy,
    ) -> Result<Trace> {
        if horizon < 1 {
            return Err(invalid("horizon must be at least 1"));
        }
        let sigma0 = match sigma0 {
            Some(m) => m,
            None => {
                let mut modes = self.design.cycle.modes().to_vec();
                modes.sort_unstable();
                modes.dedup();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                modes[rng.random_range(0..modes.len())]
            }
        };
        let mut state = self.initial_state(x0, sigma0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(horizon);
        let mut v = self.lyapunov(&state);
        for k in 0..horizon {
            let mode = self.design.cycle.mode_at(state.theta);
            let count = self.design.system.mode(mode).num_vertices();
            let weights = draw_weights(&mut rng, count, strategy, &self.design.nominal.weights()[mode]);
            let argmin_ok = self.argmin_ok(&state);
            let t = self.step(&state, &weights)?;
            if t.next.x.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { step: k + 1 });
            }
            let v_next = self.lyapunov(&t.next);
            rows.push(TraceRow {
                k,
                state,
                prediction: t.prediction,
                u: t.u,
                weights,
                v,
                in_attractor: argmin_ok && v <= 1.0,
                argmin_ok,
                v_next,
            });
            state = t.next;
            v = v_next;
        }
        Ok(Trace { rows, final_state: state, seed, strategy, sigma0 })
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub state: ClosedLoopState,
    pub prediction: PredictionPair,
    pub u: usize,
    /// Vertex weights realised for the active mode.
    pub weights: Vec<f64>,
    pub v: f64,
    pub in_attractor: bool,
    pub argmin_ok: bool,
    /// `V` at the next state.
    pub v_next: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub final_state: ClosedLoopState,
    pub seed: u64,
    pub strategy: SamplingStrategy,
    /// Initial mode, zero-based.
    pub sigma0: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First step at which the state lies in the attractor.
    pub fn first_entry(&self) -> Option<usize> {
        self.rows.iter().position(|r| r.in_attractor)
    }

    /// Once inside the attractor, the trace never leaves it.
    pub fn invariant_after_entry(&self) -> bool {
        match self.first_entry() {
            Some(k) => self.rows[k..].iter().all(|r| r.in_attractor),
            None => true,
        }
    }

    /// Largest `V(ξ⁺) − (1−γ)V(ξ) − γ` over steps where the θ-argmin
    /// condition holds; `None` when it never holds.
    pub fn worst_decrement_slack(&self, gamma: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.argmin_ok)
            .map(|r| r.v_next - (1.0 - gamma) * r.v - gamma)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cycle, ModePolytope, NominalSelection, SwitchedAffineSystem, Vertex};
    use crate::nominal::{compute_limit_cycle, LimitCycle, NominalCertificate};
    use crate::numerics::SymMatrix;
    use approx::assert_relative_eq;

    fn scalar_mode(pairs: &[(f64, f64)]) -> ModePolytope {
        ModePolytope::new(
            pairs
                .iter()
                .map(|&(a, b)| Vertex { a: Matrix::from_element(1, 1, a), b: Vector::from_element(1, b) })
                .collect(),
        )
        .unwrap()
    }

    /// Scalar modes (0.5, 1) and (0.5, −1), ν = {1, 2}, P = (1, 1).
    fn toy(r: f64, q: f64) -> ClosedLoop {
        let system = SwitchedAffineSystem::new(vec![scalar_mode(&[(0.5, 1.0)]), scalar_mode(&[(0.5, -1.0)])]).unwrap();
        let nominal = NominalSelection::midpoint(&system);
        let cycle = Cycle::new(vec![0, 1], 2).unwrap();
        let limit_cycle = compute_limit_cycle(&nominal, &cycle).unwrap();
        let certificate = NominalCertificate { p: vec![SymMatrix::identity(1), SymMatrix::identity(1)], mu: 0.5 };
        let design = NominalDesign::new(system, nominal, cycle, limit_cycle, certificate).unwrap();
        let robust = RobustCertificate {
            r: SymMatrix::from_row_slice(1, &[r]).unwrap(),
            q: SymMatrix::from_row_slice(1, &[q]).unwrap(),
            gamma: 0.25,
            margin: 0.0,
        };
        ClosedLoop::new(design, robust).unwrap()
    }

    fn s1(x: f64, z: f64, theta: usize, vartheta: usize) -> ClosedLoopState {
        ClosedLoopState { x: Vector::from_element(1, x), z: Vector::from_element(1, z), theta, vartheta }
    }

    #[test]
    fn prediction_by_substitution() {
        let cl = toy(0.0, 1.0);
        let p = cl.predict(&s1(0.0, 2.0, 0, 1));
        assert_eq!(p.chi1[0], 1.0);
        assert_eq!(p.zfrak1[0], 0.0);
        assert_eq!(p.chi0[0], 0.0);
        assert_eq!(p.zfrak0[0], 2.0);
    }

    #[test]
    fn control_examples() {
        let cl = toy(0.0, 1.0);
        // 1.361 vs 0.028
        assert_eq!(cl.control(&Vector::from_element(1, 0.5)), 1);
        assert_eq!(cl.control(cl.design.rho(1)), 1);
        assert_eq!(cl.control(&Vector::from_element(1, 0.0)), 0);
    }

    #[test]
    fn lyapunov_examples() {
        // P = 1, R = 0, Q = 1, ρ_θ = 0: 𝔷₁ = 1, χ₀ = 2 gives V = 1 + 1.
        let system = SwitchedAffineSystem::new(vec![scalar_mode(&[(1.0, 0.0)]), scalar_mode(&[(1.0, 0.0)])]).unwrap();
        let nominal = NominalSelection::midpoint(&system);
        let cycle = Cycle::new(vec![0, 1], 2).unwrap();
        let lc = LimitCycle { rho: vec![Vector::zeros(1), Vector::zeros(1)] };
        let cert = NominalCertificate { p: vec![SymMatrix::identity(1), SymMatrix::identity(1)], mu: 0.5 };
        let design = NominalDesign::new(system, nominal, cycle, lc, cert).unwrap();
        let robust = RobustCertificate { r: SymMatrix::zeros(1), q: SymMatrix::identity(1), gamma: 0.25, margin: 0.0 };
        let cl = ClosedLoop::new(design, robust).unwrap();
        assert_eq!(cl.lyapunov(&s1(2.0, 1.0, 0, 0)), 2.0);

        let toy = toy(0.1, 1.0);
        let rho = toy.design.rho(0)[0];
        // z such that 𝔷₁ = ρ₁ under mode of ϑ = 2: 0.5 z − 1 = ρ₁
        let z = (rho + 1.0) / 0.5;
        assert_relative_eq!(toy.lyapunov(&s1(rho, z, 0, 1)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn one_step_of_the_toy() {
        let cl = toy(0.0, 1.0);
        let t = cl.step(&s1(0.0, 0.0, 0, 0), &[1.0]).unwrap();
        assert_eq!(t.next.x[0], 1.0);
        assert_eq!(t.next.z[0], 0.0);
        assert_eq!(t.next.vartheta, 0);
        assert_eq!(t.next.x, t.prediction.chi1);
        assert!(cl.step(&s1(0.0, 0.0, 2, 0), &[1.0]).is_err());
    }

    #[test]
    fn toy_trace_converges_to_the_cycle() {
        let cl = toy(0.0, 1.0);
        let trace = cl.simulate(&Vector::from_element(1, 5.0), Some(0), 50, 7, SamplingStrategy::Nominal).unwrap();
        assert_eq!(trace.len(), 50);
        let last = &trace.final_state;
        assert!((last.x[0] - cl.design.rho(last.theta)[0]).abs() < 1e-6);
        assert!(trace.invariant_after_entry());
    }

    #[test]
    fn initial_mode_and_horizon_checks() {
        let cl = toy(0.0, 1.0);
        assert!(cl.simulate(&Vector::zeros(1), None, 0, 1, SamplingStrategy::Nominal).is_err());
        assert!(cl.initial_state(&Vector::zeros(1), 5).is_err());
        let a = cl.simulate(&Vector::zeros(1), None, 3, 11, SamplingStrategy::Nominal).unwrap();
        let b = cl.simulate(&Vector::zeros(1), None, 3, 11, SamplingStrategy::Nominal).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let system = SwitchedAffineSystem::new(vec![scalar_mode(&[(1e200, 0.0)]), scalar_mode(&[(1e200, 0.0)])]).unwrap();
        let nominal = NominalSelection::midpoint(&system);
        let cycle = Cycle::new(vec![0, 1], 2).unwrap();
        let lc = LimitCycle { rho: vec![Vector::zeros(1), Vector::zeros(1)] };
        let cert = NominalCertificate { p: vec![SymMatrix::identity(1), SymMatrix::identity(1)], mu: 0.5 };
        let design = NominalDesign::new(system, nominal, cycle, lc, cert).unwrap();
        let robust = RobustCertificate { r: SymMatrix::zeros(1), q: SymMatrix::identity(1), gamma: 0.25, margin: 0.0 };
        let cl = ClosedLoop::new(design, robust).unwrap();
        match cl.simulate(&Vector::from_element(1, 1.0), Some(0), 10, 0, SamplingStrategy::Nominal) {
            Err(Error::Diverged { step }) => assert_eq!(step, 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
