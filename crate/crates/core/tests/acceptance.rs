//! Acceptance run for the benchmark system and the property oracles.
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sascycle::benchmark;
use sascycle::control_sim::{attractor_projection, cross_membership_hits, ClosedLoop};
use sascycle::model::{realize, SamplingStrategy};
use sascycle::nominal::{
    compute_limit_cycle, max_mu, verify_nominal_certificate, NominalCertificate, NominalDesign,
};
use sascycle::numerics::{Matrix, SymMatrix, Vector};
use sascycle::robust::{
    assemble_robust_lmi, coupling_block, gamma_sweep, psi_block, solve_feasibility, verify_robust_certificate,
    LmiProblem, RobustCertificate, RqLayout, SolverOptions,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

/// Reported P, R, Q: both coupling blocks positive definite without any
/// system data.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (r, q) = (benchmark::r(), benchmark::q());
    let mut mins = Vec::new();
    for p in benchmark::p() {
        let block = coupling_block(&p, &r, &q);
        let jacobi = SymMatrix::symmetrized(&block).unwrap().min_eig();
        let oracle = oracle_min_eig(&block);
        check((jacobi - oracle).abs() <= 1e-10 * block.norm().max(1.0), format!("eigensolvers disagree: {jacobi} vs {oracle}"))?;
        check(jacobi > 0.0, format!("coupling block min eig {jacobi}"))?;
        mins.push(jacobi);
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("coupling min eigs {:.4e}, {:.4e}", mins[0], mins[1]))
}

/// Sampling-period calibration against the reported limit cycle.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cal = benchmark::calibrate_sampling_period(2.0, 2000).map_err(|e| e.to_string())?;
    // Oracle: iterate the nominal map over many periods from the origin.
    let (_, nominal) = benchmark::system(cal.t).unwrap();
    let cycle = benchmark::cycle();
    let mut x = Vector::zeros(3);
    for _ in 0..400 {
        for i in 0..cycle.period() {
            let j = cycle.mode_at(i);
            x = nominal.a(j) * &x + nominal.b(j);
        }
    }
    let lc = compute_limit_cycle(&nominal, &cycle).unwrap();
    check((&x - &lc.rho[0]).norm() < 1e-10, "limit cycle disagrees with forward iteration")?;
    let reference = benchmark::rho();
    let residual = lc.rho.iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    check((residual - cal.residual).abs() < 1e-12, "calibration residual not reproduced")?;
    check(residual <= 5e-2, format!("best residual {residual:.3e} exceeds 5e-2"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!("T* = {:.7}, residual {residual:.3e}", cal.t))
}

/// Reported certificates at T*: nominal decay and the full robust system.
fn criterion_3(t: f64) -> Outcome {
    let design = reference_design(t);
    let nominal = verify_nominal_certificate(&design.certificate, &design.nominal, &design.cycle).unwrap();
    // Oracle: decay matrices formed directly.
    for i in 0..2 {
        let j = design.cycle.mode_at(i);
        let a = design.nominal.a(j);
        let m = design.p(i).as_matrix() * (1.0 - design.mu()) - a.transpose() * design.p(design.cycle.next(i)).as_matrix() * a;
        let o = oracle_min_eig(&m);
        check(o > 1e-6, format!("decay margin {o} at index {}", i + 1))?;
        check(oracle_min_eig(design.p(i).as_matrix()) > 1e-6, "P not positive definite")?;
    }
    check(nominal.valid && nominal.min_margin() > 1e-6, format!("nominal report {nominal:?}"))?;

    let robust = reference_robust();
    let report = verify_robust_certificate(&design, &robust).unwrap();
    let mut oracle_margin = f64::INFINITY;
    for i in 0..2 {
        for l in 0..2 {
            let psi = psi_block(&design, &robust.r, &robust.q, robust.gamma, i, l).unwrap();
            oracle_margin = oracle_margin.min(oracle_min_eig(psi.matrix.as_matrix()));
        }
    }
    check(report.valid, format!("robust report invalid: {report:?}"))?;
    check(report.margin() > 1e-6 && oracle_margin > 1e-6, format!("robust margin {:.3e}", report.margin()))?;
    check(oracle_min_eig(robust.q.as_matrix()) > 0.0 && oracle_min_eig(robust.r.as_matrix()) >= 0.0, "R or Q sign")?;
    Ok(format!("nominal margin {:.4e}, robust margin {:.4e}", nominal.min_margin(), report.margin()))
}

/// Own (R, Q) from the solver, re-verified outside the solver.
fn criterion_4(t: f64) -> Outcome {
    let start = Instant::now();
    let mut designs = vec![("reported P", reference_design(t))];
    let (system, nominal) = benchmark::system(t).unwrap();
    let own = NominalDesign::synthesize(system, nominal, benchmark::cycle(), benchmark::MU).unwrap();
    let mut scaled = own.clone();
    scaled.certificate = own.certificate.normalized(10.0);
    designs.push(("synthesised P", scaled));

    let mut parts = Vec::new();
    for (name, design) in &designs {
        let prob = assemble_robust_lmi(design, benchmark::GAMMA).unwrap();
        check(prob.num_vars() == 12 && prob.block_sizes() == vec![6, 6, 10, 10, 10, 10, 3], "problem shape")?;
        let sol = solve_feasibility(&prob, &SolverOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let (r, q) = RqLayout { n: 3 }.unpack(&sol.assignment).unwrap();
        let cert = RobustCertificate { r, q, gamma: benchmark::GAMMA, margin: sol.verified_margin };
        let report = verify_robust_certificate(design, &cert).unwrap();
        let mut oracle = f64::INFINITY;
        for i in 0..2 {
            oracle = oracle.min(oracle_min_eig(&coupling_block(design.p(i), &cert.r, &cert.q)));
            for l in 0..2 {
                let psi = psi_block(design, &cert.r, &cert.q, cert.gamma, i, l).unwrap();
                oracle = oracle.min(oracle_min_eig(psi.matrix.as_matrix()));
            }
        }
        check(report.valid, format!("{name}: own certificate invalid"))?;
        check(oracle >= 1e-6, format!("{name}: verified margin {oracle:.3e} below 1e-6"))?;
        check(oracle_min_eig(cert.q.as_matrix()) > 0.0, format!("{name}: Q not positive definite"))?;
        check(oracle_min_eig(cert.r.as_matrix()) >= 0.0, format!("{name}: R not positive semidefinite"))?;
        parts.push(format!("{name} margin {oracle:.3e}"));
    }
    within(start.elapsed(), 60.0)?;
    Ok(parts.join(", "))
}

/// 100 seeds × two strategies × 10⁴ steps: attractor invariance after entry
/// and the decrement bound on every step satisfying the θ-argmin condition.
fn criterion_5(t: f64) -> Outcome {
    let start = Instant::now();
    let cl = reference_closed_loop(t);
    let gamma = cl.robust.gamma;
    let mut worst = f64::NEG_INFINITY;
    let mut latest_entry = 0;
    for strategy in [SamplingStrategy::VertexRandom, SamplingStrategy::DirichletUniform] {
        for seed in 0..100 {
            let trace = cl.simulate(&benchmark::x0(), None, 10_000, seed, strategy).map_err(|e| e.to_string())?;
            // Oracle: recompute membership from the recorded V and argmin flags.
            let entry = trace.rows.iter().position(|r| r.v <= 1.0 && r.argmin_ok);
            if let Some(k) = entry {
                check(
                    trace.rows[k..].iter().all(|r| r.v <= 1.0 && r.argmin_ok),
                    format!("{strategy} seed {seed}: left the attractor after step {k}"),
                )?;
                latest_entry = latest_entry.max(k);
            } else {
                return Err(format!("{strategy} seed {seed}: never entered the attractor"));
            }
            for r in trace.rows.iter().filter(|r| r.argmin_ok) {
                let slack = r.v_next - (1.0 - gamma) * r.v - gamma;
                worst = worst.max(slack);
                check(slack <= 1e-9, format!("{strategy} seed {seed} step {}: slack {slack:.3e}", r.k))?;
            }
        }
    }
    within(start.elapsed(), 120.0)?;
    Ok(format!("200 traces, latest entry step {latest_entry}, worst decrement slack {worst:.3e}"))
}

fn random_instance_design(seed: u64) -> NominalDesign {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let k = rng.random_range(2..=3);
    let (system, nominal) = random_stable_system(seed, n, k, 0.9);
    let cycle = random_cycle(seed, k, 6);
    let mu = 0.5 * max_mu(&nominal, &cycle, 1e-9).unwrap();
    NominalDesign::synthesize(system, nominal, cycle, mu).unwrap()
}

fn criterion_6a() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let d = random_instance_design(seed);
        for i in 0..d.period() {
            let j = d.cycle.mode_at(i);
            let r = (d.nominal.a(j) * d.rho(i) + d.nominal.b(j) - d.rho(d.cycle.next(i))).amax();
            worst = worst.max(r);
        }
    }
    check(worst <= 1e-10, format!("fixed-point residual {worst:.3e}"))?;
    Ok(format!("(a) residual {worst:.1e}"))
}

fn criterion_6bc(cl: &ClosedLoop) -> Result<String, String> {
    let mut worst_err: f64 = 0.0;
    let mut worst_decay = f64::NEG_INFINITY;
    let mut steps = 0;
    for seed in 0..10 {
        let trace = cl.simulate(&benchmark::x0(), None, 1000, 1000 + seed, SamplingStrategy::VertexRandom).unwrap();
        for w in trace.rows.windows(2) {
            let (now, next) = (&w[0], &w[1]);
            check(next.prediction.zfrak1 == now.prediction.chi1, format!("prediction shift (s=1) broken at step {}", next.k))?;
            check(next.prediction.zfrak0 == now.prediction.chi0, format!("prediction shift (s=0) broken at step {}", next.k))?;
        }
        for r in &trace.rows {
            let theta = r.state.theta;
            let j = cl.design.cycle.mode_at(theta);
            let (a, b) = realize(cl.design.system.mode(j), &r.weights).unwrap();
            let x_next = &a * &r.state.x + &b;
            let delta_a = &a - cl.design.nominal.a(j);
            let delta = &a * cl.design.rho(theta) + &b - cl.design.rho(cl.design.cycle.next(theta));
            let lhs = &x_next - &r.prediction.chi1;
            let rhs = &delta_a * (&r.prediction.chi0 - cl.design.rho(theta)) + delta;
            worst_err = worst_err.max((lhs - rhs).amax());

            let next = cl.design.cycle.next(theta);
            let lhs_decay = cl.design.p(next).quad_form(&(&r.prediction.chi1 - cl.design.rho(next)));
            let rhs_decay = (1.0 - cl.design.mu()) * cl.design.p(theta).quad_form(&(&r.prediction.chi0 - cl.design.rho(theta)));
            worst_decay = worst_decay.max((lhs_decay - rhs_decay) / rhs_decay.max(1e-300));
            check(lhs_decay <= rhs_decay * (1.0 + 1e-12) + 1e-14, format!("prediction decay violated at step {}", r.k))?;
            steps += 1;
        }
    }
    check(worst_err <= 1e-12, format!("prediction error identity deviation {worst_err:.3e}"))?;
    Ok(format!("(b) {steps} steps, prediction error deviation {worst_err:.1e}; (c) worst relative decay gap {worst_decay:.3}"))
}

fn criterion_6d(design: &NominalDesign) -> Result<String, String> {
    let opts = SolverOptions::default();
    let mut problems: Vec<LmiProblem> = Vec::new();
    for gamma in [0.05, 0.125, 0.3, 0.6, 0.999] {
        problems.push(assemble_robust_lmi(design, gamma).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let m = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let mut p = LmiProblem::new(m);
        for _ in 0..2 {
            let rand_sym = |rng: &mut ChaCha8Rng| {
                let a = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
                (&a + a.transpose()) * 0.5
            };
            let c0 = rand_sym(&mut rng);
            let coefs = (0..m).map(|_| rand_sym(&mut rng)).collect();
            p.add_block("random", c0, coefs).unwrap();
        }
        problems.push(p);
    }
    let (mut feasible, mut infeasible) = (0, 0);
    for p in &problems {
        match solve_feasibility(p, &opts) {
            Ok(sol) => {
                let oracle = p.evaluate(&sol.assignment).iter().map(oracle_min_eig).fold(f64::INFINITY, f64::min);
                check(oracle >= opts.feas_tol / 2.0, format!("feasible verdict re-verifies at {oracle:.3e}"))?;
                feasible += 1;
            }
            Err(sascycle::Error::Infeasible { .. }) => infeasible += 1,
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(format!("(d) {feasible} feasible verdicts re-verified, {infeasible} infeasible"))
}

fn criterion_6e() -> Result<String, String> {
    for seed in 0..20 {
        let d = random_instance_design(500 + seed);
        let mu = d.mu();
        let gamma = 0.5 * mu;
        let top = d.certificate.p.iter().map(|p| -oracle_min_eig(&-p.as_matrix())).fold(0.0, f64::max);
        let q = SymMatrix::identity(d.dim()).scaled(1.01 * (1.0 - mu) / (mu - gamma) * top);
        let cert = RobustCertificate { r: SymMatrix::zeros(d.dim()), q, gamma, margin: 0.0 };
        let report = verify_robust_certificate(&d, &cert).unwrap();
        check(report.valid, format!("seed {seed}: closed-form certificate invalid, margin {:.3e}", report.margin()))?;
    }
    Ok("(e) 20 closed-form certificates valid".into())
}

fn criterion_6f() -> Result<String, String> {
    let (_, nominal, cycle) = scalar_toy();
    let lc = compute_limit_cycle(&nominal, &cycle).unwrap();
    // ρ₂ = 0.5ρ₁ + 1, ρ₁ = 0.5ρ₂ − 1  ⇒  ρ₁ = −2/3, ρ₂ = 2/3.
    let err = (lc.rho[0][0] + 2.0 / 3.0).abs().max((lc.rho[1][0] - 2.0 / 3.0).abs());
    check(err <= 1e-12, format!("toy cycle error {err:.3e}"))?;
    let cert = NominalCertificate { p: vec![SymMatrix::identity(1), SymMatrix::identity(1)], mu: 0.5 };
    check(verify_nominal_certificate(&cert, &nominal, &cycle).unwrap().valid, "toy certificate")?;
    Ok(format!("(f) toy cycle error {err:.1e}"))
}

fn criterion_6(t: f64) -> Outcome {
    let cl = reference_closed_loop(t);
    let parts = [criterion_6a()?, criterion_6bc(&cl)?, criterion_6d(&cl.design)?, criterion_6e()?, criterion_6f()?];
    Ok(parts.join("; "))
}

/// Reported pair at T*: disjoint ellipsoids by the separation test, by the
/// library's sampler and by an independent rejection sampler.
fn criterion_7(t: f64) -> Outcome {
    let design = reference_design(t);
    let robust = reference_robust();
    let proj = attractor_projection(&design, &robust).map_err(|e| e.to_string())?;
    let pair = &proj.pairs[0];
    check(pair.disjoint && pair.separation > 1.0, format!("separation {:.4}", pair.separation))?;
    let (e1, e2) = (&proj.ellipsoids[0], &proj.ellipsoids[1]);
    let hits = cross_membership_hits(e1, e2, 100_000, 9);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut oracle_hits = 0;
    let mut accepted = 0;
    let shapes: Vec<Matrix> = (0..2).map(|i| design.p(i).as_matrix() - robust.r.as_matrix()).collect();
    let level = |i: usize, x: &Vector| {
        let d = x - design.rho(i);
        (d.transpose() * &shapes[i] * &d)[(0, 0)]
    };
    for i in 0..2 {
        // Bounding box half-widths sqrt(M⁻¹_kk).
        let inv = shapes[i].clone().try_inverse().unwrap();
        let half: Vec<f64> = (0..3).map(|k| inv[(k, k)].sqrt()).collect();
        let mut taken = 0;
        while taken < 50_000 {
            let x = Vector::from_fn(3, |k, _| design.rho(i)[k] + half[k] * rng.random_range(-1.0..1.0));
            if level(i, &x) <= 1.0 {
                taken += 1;
                if level(1 - i, &x) <= 1.0 {
                    oracle_hits += 1;
                }
            }
        }
        accepted += taken;
    }
    check(hits == 0 && oracle_hits == 0, format!("cross-membership hits {hits} / {oracle_hits}"))?;
    Ok(format!("separation {:.4}, 2e5 + {accepted} samples, zero hits", pair.separation))
}

fn main() -> ExitCode {
    let t = t_star();
    let runs: Vec<(u32, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(move || criterion_3(t))),
        (4, Box::new(move || criterion_4(t))),
        (5, Box::new(move || criterion_5(t))),
        (6, Box::new(move || criterion_6(t))),
        (7, Box::new(move || criterion_7(t))),
    ];
    let mut failed = 0;
    for (id, run) in runs {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run()))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS ({secs:.2}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id}: FAIL ({secs:.2}s) {detail}");
            }
        }
    }
    // Keep the γ-sweep regression fixture visible alongside the criteria.
    let sweep = gamma_sweep(&reference_design(t), &[0.999], &SolverOptions::default()).unwrap();
    println!("gamma 0.999 sweep: feasible = {}, margin {:.3e}", sweep.rows[0].feasible, sweep.rows[0].margin);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
