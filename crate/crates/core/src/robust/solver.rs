//! Small dense LMI feasibility engine.
//!
//! Maximises the common margin `t` subject to `F_b(y) ⪰ t·I` for every block.
//! A short supergradient ascent on `y ↦ min_b λ_min(F_b(y))` (eigenvector
//! outer products give the supergradient) provides a warm start; because any
//! `t` below the current minimum eigenvalue is strictly feasible, the
//! log-det barrier path-following that follows needs no phase-one problem.
//! The result is always re-checked by direct eigenvalue computation.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen_decomposition, Matrix, SymMatrix, Vector};

use super::lmi::LmiProblem;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Margin above which the problem is declared feasible.
    pub feas_tol: f64,
    pub warm_start_iters: usize,
    pub max_newton_iters: usize,
    /// Stop once the barrier duality gap bound drops below this.
    pub gap_tol: f64,
    /// Box `|y_p| < var_bound` keeping the barrier bounded.
    pub var_bound: f64,
    /// Stop as soon as the margin exceeds this (unbounded problems).
    pub margin_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            warm_start_iters: 200,
            max_newton_iters: 2000,
            gap_tol: 1e-10,
            var_bound: 1e6,
            margin_cap: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityResult {
    pub assignment: Vec<f64>,
    /// Margin reached by the optimiser.
    pub margin: f64,
    /// Minimum eigenvalue over all blocks, recomputed at `assignment`.
    pub verified_margin: f64,
    pub block_min_eigs: Vec<f64>,
    pub iterations: usize,
}

/// Maximises the smallest eigenvalue over all blocks of `prob`.
///
/// Returns `Error::Infeasible` with the best margin found when it does not
/// exceed `opts.feas_tol`.
pub fn solve_feasibility(prob: &LmiProblem, opts: &SolverOptions) -> Result<FeasibilityResult> {
    let mut engine = Engine::new(prob, opts);
    let y0 = engine.warm_start();
    let (y, t) = engine.path_follow(y0);

    let block_min_eigs = prob.block_min_eigs(&y);
    let verified_margin = block_min_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(verified_margin > opts.feas_tol) {
        return Err(Error::Infeasible { best_margin: verified_margin.max(t), iterations: engine.iterations });
    }
    Ok(FeasibilityResult { assignment: y, margin: t, verified_margin, block_min_eigs, iterations: engine.iterations })
}

struct Engine<'a> {
    prob: &'a LmiProblem,
    opts: &'a SolverOptions,
    m: usize,
    iterations: usize,
}

impl<'a> Engine<'a> {
    fn new(prob: &'a LmiProblem, opts: &'a SolverOptions) -> Self {
        Self { prob, opts, m: prob.num_vars(), iterations: 0 }
    }

    /// `min_b λ_min(F_b(y))` with a supergradient.
    fn min_eig_and_supergradient(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let mut best = (f64::INFINITY, vec![0.0; self.m]);
        for block in self.prob.blocks() {
            let f = SymMatrix::symmetrized(&block.evaluate(y)).expect("finite square block");
            let (vals, vecs) = sym_eigen_decomposition(&f);
            if vals[0] < best.0 {
                let v = vecs.column(0).into_owned();
                let g = block.coefficients.iter().map(|c| v.dot(&(c * &v))).collect();
                best = (vals[0], g);
            }
        }
        best
    }

    fn warm_start(&mut self) -> Vec<f64> {
        let bound = 0.5 * self.opts.var_bound;
        let mut y = vec![0.0; self.m];
        let (mut best_val, _) = self.min_eig_and_supergradient(&y);
        let mut best_y = y.clone();
        for k in 0..self.opts.warm_start_iters {
            let (val, g) = self.min_eig_and_supergradient(&y);
            if val > best_val {
                best_val = val;
                best_y = y.clone();
            }
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm == 0.0 {
                break;
            }
            let step = 1.0 / ((k + 1) as f64).sqrt();
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi = (*yi + step * gi / gnorm).clamp(-bound, bound);
            }
            self.iterations += 1;
        }
        best_y
    }

    /// Barrier value; `None` outside the strict interior.
    fn barrier(&self, w: &[f64], s: f64) -> Option<f64> {
        let (y, t) = w.split_at(self.m);
        let t = t[0];
        let mut phi = -s * t;
        for block in self.prob.blocks() {
            let k = block.size();
            let slack = block.evaluate(y) - Matrix::identity(k, k) * t;
            let chol = Cholesky::new(slack)?;
            phi -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        let b = self.opts.var_bound;
        for &v in y {
            if v.abs() >= b {
                return None;
            }
            phi -= (b - v).ln() + (b + v).ln();
        }
        phi.is_finite().then_some(phi)
    }

    fn gradient_hessian(&self, w: &[f64], s: f64) -> Option<(Vector, Matrix)> {
        let dim = self.m + 1;
        let (y, t) = w.split_at(self.m);
        let t = t[0];
        let mut grad = Vector::zeros(dim);
        let mut hess = Matrix::zeros(dim, dim);
        grad[self.m] = -s;
        for block in self.prob.blocks() {
            let k = block.size();
            let slack = block.evaluate(y) - Matrix::identity(k, k) * t;
            let inv = Cholesky::new(slack)?.inverse();
            // S⁻¹ G_p for every direction; the margin direction has G = −I.
            let mut prods: Vec<Matrix> = block.coefficients.iter().map(|c| &inv * c).collect();
            prods.push(-&inv);
            for p in 0..dim {
                grad[p] -= prods[p].trace();
                for q in p..dim {
                    let h = prods[p].component_mul(&prods[q].transpose()).sum();
                    hess[(p, q)] += h;
                    if p != q {
                        hess[(q, p)] += h;
                    }
                }
            }
        }
        let b = self.opts.var_bound;
        for (p, &v) in y.iter().enumerate() {
            grad[p] += 1.0 / (b - v) - 1.0 / (b + v);
            hess[(p, p)] += 1.0 / (b - v).powi(2) + 1.0 / (b + v).powi(2);
        }
        Some((grad, hess))
    }

    fn newton_direction(grad: &Vector, hess: &Matrix) -> Option<Vector> {
        if let Some(ch) = Cholesky::new(hess.clone()) {
            return Some(-ch.solve(grad));
        }
        let reg = hess + Matrix::identity(hess.nrows(), hess.ncols()) * (1e-12 * hess.trace().abs().max(1e-300));
        reg.lu().solve(&(-grad))
    }

    fn path_follow(&mut self, y0: Vec<f64>) -> (Vec<f64>, f64) {
        let start = self.prob.margin(&y0);
        let mut w = y0;
        w.push(start - start.abs().max(1.0));

        let barrier_param: f64 = self.prob.block_sizes().iter().sum::<usize>() as f64 + 2.0 * self.m as f64;
        let mut s = 1.0 / start.abs().max(1.0);
        let mut newton_steps = 0;

        'outer: loop {
            // Centering.
            loop {
                if newton_steps >= self.opts.max_newton_iters {
                    break 'outer;
                }
                let Some((grad, hess)) = self.gradient_hessian(&w, s) else { break 'outer };
                let Some(dir) = Self::newton_direction(&grad, &hess) else { break 'outer };
                let decrement = -grad.dot(&dir);
                if !(decrement > 1e-12) {
                    break;
                }
                let phi0 = self.barrier(&w, s).expect("iterate stays interior");
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let trial: Vec<f64> = w.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                    if let Some(phi) = self.barrier(&trial, s) {
                        if phi <= phi0 - 0.25 * alpha * decrement {
                            w = trial;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                newton_steps += 1;
                self.iterations += 1;
                if !accepted {
                    break;
                }
                if w[self.m] >= self.opts.margin_cap {
                    break 'outer;
                }
                if decrement < 1e-9 {
                    break;
                }
            }
            if barrier_param / s < self.opts.gap_tol || w[self.m] >= self.opts.margin_cap {
                break;
            }
            s *= 8.0;
        }
        let t = w.pop().unwrap();
        (w, t)
    }
}
