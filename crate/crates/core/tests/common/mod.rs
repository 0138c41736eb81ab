#![allow(dead_code)]

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sascycle::benchmark;
use sascycle::control_sim::ClosedLoop;
use sascycle::model::{Cycle, ModePolytope, NominalSelection, SwitchedAffineSystem, Vertex};
use sascycle::nominal::{compute_limit_cycle, NominalCertificate, NominalDesign};
use sascycle::numerics::{Matrix, SymMatrix, Vector};
use sascycle::robust::RobustCertificate;

/// Smallest eigenvalue by nalgebra's own symmetric eigensolver, as a
/// cross-check on the crate's Jacobi implementation.
pub fn oracle_min_eig(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn t_star() -> f64 {
    benchmark::calibrate_sampling_period(2.0, 2000).unwrap().t
}

/// Benchmark design at `t` carrying the reported nominal certificate.
pub fn reference_design(t: f64) -> NominalDesign {
    let (system, nominal) = benchmark::system(t).unwrap();
    let cycle = benchmark::cycle();
    let lc = compute_limit_cycle(&nominal, &cycle).unwrap();
    let cert = NominalCertificate { p: benchmark::p().to_vec(), mu: benchmark::MU };
    NominalDesign::new(system, nominal, cycle, lc, cert).unwrap()
}

pub fn reference_robust() -> RobustCertificate {
    RobustCertificate { r: benchmark::r(), q: benchmark::q(), gamma: benchmark::GAMMA, margin: 0.0 }
}

pub fn reference_closed_loop(t: f64) -> ClosedLoop {
    ClosedLoop::new(reference_design(t), reference_robust()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random nominal modes with spectral norm `norm`, so every cycle is Schur
/// stable; single-vertex polytopes.
pub fn random_stable_system(seed: u64, n: usize, modes: usize, norm: f64) -> (SwitchedAffineSystem, NominalSelection) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let polytopes = (0..modes)
        .map(|_| {
            let a = random_matrix(&mut rng, n, n);
            let top = a.singular_values().max();
            let a = a * (norm / top);
            let b = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            ModePolytope::new(vec![Vertex { a, b }]).unwrap()
        })
        .collect();
    let system = SwitchedAffineSystem::new(polytopes).unwrap();
    let nominal = NominalSelection::midpoint(&system);
    (system, nominal)
}

pub fn random_cycle(seed: u64, modes: usize, max_len: usize) -> Cycle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let len = rng.random_range(1..=max_len);
    let seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..modes)).collect();
    Cycle::new(seq, modes).unwrap()
}

/// Scalar toy: nominal modes (0.5, 1) and (0.5, −1) with the cycle {1, 2}.
pub fn scalar_toy() -> (SwitchedAffineSystem, NominalSelection, Cycle) {
    let mode = |b: f64| {
        ModePolytope::new(vec![Vertex { a: Matrix::from_element(1, 1, 0.5), b: Vector::from_element(1, b) }]).unwrap()
    };
    let system = SwitchedAffineSystem::new(vec![mode(1.0), mode(-1.0)]).unwrap();
    let nominal = NominalSelection::midpoint(&system);
    (system, nominal, Cycle::new(vec![0, 1], 2).unwrap())
}

pub fn sym(n: usize, data: &[f64]) -> SymMatrix {
    SymMatrix::from_row_slice(n, data).unwrap()
}
