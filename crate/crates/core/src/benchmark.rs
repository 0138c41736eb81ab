//! Published data for the three-state, two-mode benchmark and the search for
//! the sampling period that reproduces its limit cycle.
//!
//! The benchmark's continuous-time data live in [`crate::model::example`].

use crate::error::{invalid, Result};
use crate::model::{build_example_system, example, Cycle, NominalSelection, SwitchedAffineSystem};
use crate::nominal::{compute_limit_cycle, monodromy};
use crate::numerics::{Matrix, SymMatrix, Vector};

pub const MU: f64 = 0.25;
pub const GAMMA: f64 = 0.125;

pub fn x0() -> Vector {
    Vector::from_column_slice(&[-1.0, 1.0, -1.0])
}

/// Reported limit cycle.
pub fn rho() -> [Vector; 2] {
    [Vector::from_column_slice(&[3.84, -0.65, 0.36]), Vector::from_column_slice(&[1.12, 0.014, 1.1042])]
}

/// Reported nominal certificate. The first matrix is listed with one
/// asymmetric pair (3.77 / 3.778) and is symmetrised by averaging.
pub fn p() -> [SymMatrix; 2] {
    let p1 = Matrix::from_row_slice(3, 3, &[0.73, 3.77, -3.38, 3.778, 25.7, -19.8, -3.38, -19.8, 28.49]);
    let p2 = [4.51, 4.89, -2.9, 4.89, 6.31, -3.58, -2.9, -3.58, 4.02];
    [SymMatrix::symmetrized(&p1).unwrap(), SymMatrix::from_row_slice(3, &p2).unwrap()]
}

pub fn r() -> SymMatrix {
    SymMatrix::from_row_slice(3, &[0.003, 0.003, -0.0051, 0.003, 0.0053, -0.0013, -0.0051, -0.0013, 0.0781]).unwrap()
}

pub fn q() -> SymMatrix {
    SymMatrix::from_row_slice(3, &[65.8, 7.56, -1.33, 7.56, 158.7, -122.6, -1.33, -122.6, 553.01]).unwrap()
}

/// The cycle `ν = {1, 2}`.
pub fn cycle() -> Cycle {
    Cycle::new(vec![0, 1], 2).unwrap()
}

/// Discretised benchmark at period `t` with the default uncertainty bounds.
pub fn system(t: f64) -> Result<(SwitchedAffineSystem, NominalSelection)> {
    build_example_system(t, example::DELTA1_BOUND, example::DELTA2_BOUND)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub t: f64,
    /// Largest Euclidean distance between a computed and a reported `ρᵢ`.
    pub residual: f64,
}

/// Distance between the limit cycle at period `t` and the reported one;
/// `None` when the monodromy is not Schur stable.
pub fn rho_residual(t: f64) -> Option<f64> {
    let (_, nominal) = build_example_system(t, 0.0, 0.0).ok()?;
    let cycle = cycle();
    if !monodromy(&nominal, &cycle).ok()?.schur_stable {
        return None;
    }
    let lc = compute_limit_cycle(&nominal, &cycle).ok()?;
    Some(lc.rho.iter().zip(rho().iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

/// Uniform grid over `(0, t_max]` followed by golden-section refinement
/// around the best grid point.
pub fn calibrate_sampling_period(t_max: f64, grid_points: usize) -> Result<Calibration> {
    if !(t_max > 0.0) || grid_points < 2 {
        return Err(invalid("need t_max > 0 and at least two grid points"));
    }
    let h = t_max / grid_points as f64;
    let (best_k, best) = (1..=grid_points)
        .filter_map(|k| rho_residual(k as f64 * h).map(|r| (k, r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| invalid("no sampling period on the grid gives a stable cycle"))?;

    let f = |t: f64| rho_residual(t).unwrap_or(f64::INFINITY);
    let (mut a, mut b) = (((best_k as f64) - 1.0) * h, ((best_k as f64 + 1.0) * h).min(t_max));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let (t, residual) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(if residual < best { Calibration { t, residual } } else { Calibration { t: best_k as f64 * h, residual: best } })
}
