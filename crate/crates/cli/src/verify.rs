//! The `verify` subcommand: desk-scale spectral claim checks with explicit
//! tolerances. Exit code 2 when any claim fails.

use parabolic_control::fem::{build_interval_mesh, SpatialDiscretization};
use parabolic_control::reduced::{Observation, ReducedOperator};
use parabolic_control::saddle::{
    assemble_saddle, SaddlePreconditioner, SaddleVariant, WMode,
};
use parabolic_control::spectra::{
    dense_reduced_spectrum, max_eig_reduced, precond_saddle_spectrum, verify_generic_claims,
    verify_spectral_claims, ClaimCheck, ClaimParams, GenericSaddle,
};
use parabolic_control::timeblock::{
    assemble_block_system, build_time_grid, gamma_bound, Coefficients,
};

use crate::config::ExperimentConfig;

fn print_checks(section: &str, checks: &[ClaimCheck], all_ok: &mut bool) {
    for c in checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {section}/{}: {} (margin {:.3e})", c.name, c.detail, c.margin);
        *all_ok &= c.passed;
    }
}

/// Built-in battery: reduced-spectrum inclusion and rank count, the
/// three-cluster structure of both preconditioned saddle variants, the
/// dense-vs-iterative extreme eigenvalue cross-check, and twenty random
/// generic instances. Returns true when everything passes.
pub fn verify_builtin() -> bool {
    let mut ok = true;

    // reduced spectrum at desk scale
    {
        let disc = SpatialDiscretization::new(build_interval_mesh(9).unwrap()).unwrap();
        let grid = build_time_grid(1.0, 8, None).unwrap();
        let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, 1.0)).unwrap();
        let op = ReducedOperator::new(&sys, 1.0, Observation::EndTime);
        match (dense_reduced_spectrum(&op), gamma_bound(1.0, 1.0, 1e-4)) {
            (Ok(report), Ok(gamma)) => {
                let checks = verify_spectral_claims(
                    &report,
                    &ClaimParams {
                        lambda: 1.0,
                        gamma: Some(gamma),
                        n_x: 10,
                        m: 80,
                    },
                );
                print_checks("reduced", &checks, &mut ok);
                match max_eig_reduced(&op, 1e-11) {
                    Ok(lanczos) => {
                        let gap = (report.max_eigenvalue() - lanczos).abs()
                            / report.max_eigenvalue().abs();
                        let passed = gap <= 1e-8;
                        println!(
                            "{} reduced/dense_vs_lanczos: extreme eigenvalues agree to {gap:.3e}",
                            if passed { "PASS" } else { "FAIL" }
                        );
                        ok &= passed;
                    }
                    Err(e) => {
                        println!("FAIL reduced/dense_vs_lanczos: {e}");
                        ok = false;
                    }
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                println!("FAIL reduced/spectrum: {e}");
                ok = false;
            }
        }
    }

    // preconditioned saddle spectra, both variants
    for variant in [SaddleVariant::Sym, SaddleVariant::Disc] {
        let disc = SpatialDiscretization::new(build_interval_mesh(4).unwrap()).unwrap();
        let grid = build_time_grid(1.0, 4, None).unwrap();
        let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, 1.0)).unwrap();
        let saddle = assemble_saddle(&sys, 1.0, variant);
        let outcome = SaddlePreconditioner::new(&saddle, WMode::Exact)
            .and_then(|p| precond_saddle_spectrum(&saddle, &p));
        match outcome {
            Ok(report) => {
                let checks = verify_spectral_claims(
                    &report,
                    &ClaimParams {
                        lambda: 1.0,
                        gamma: None,
                        n_x: 5,
                        m: 20,
                    },
                );
                print_checks(&format!("saddle[{variant:?}]"), &checks, &mut ok);
            }
            Err(e) => {
                println!("FAIL saddle[{variant:?}]: {e}");
                ok = false;
            }
        }
    }

    // random generic instances
    {
        let lambdas = [0.1, 1.0, 10.0];
        let mut failures = 0usize;
        for i in 0..20u64 {
            let n = 3 + (i as usize % 10);
            let m = (3 + ((i as usize * 7 + 3) % 10)).min(n);
            let r = (i as usize * 3 + 1) % (n.min(m) + 1);
            let lambda = lambdas[i as usize % 3];
            let inst = GenericSaddle::random(n, m, r, lambda, 1000 + i);
            match inst.spectrum() {
                Ok(report) => {
                    if verify_generic_claims(&report, &inst).iter().any(|c| !c.passed) {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        let passed = failures == 0;
        println!(
            "{} generic/random_instances: 20 instances, {failures} failures",
            if passed { "PASS" } else { "FAIL" }
        );
        ok &= passed;
    }

    ok
}

/// Claim checks for a specific configuration: dense spectrum of its reduced
/// operator (when small enough) plus the eigenvalue bound from the reaction
/// coefficient.
pub fn verify_config(cfg: &ExperimentConfig) -> bool {
    let mut ok = true;
    let spec = match cfg.problem.to_spec() {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL config/problem: {e}");
            return false;
        }
    };
    let problem = match parabolic_control::problem::validate(spec) {
        Ok(p) => p,
        Err(e) => {
            println!("FAIL config/problem: {e}");
            return false;
        }
    };
    let mesh = match cfg.problem.dim {
        1 => build_interval_mesh(cfg.discretization.n_elems.unwrap_or(1)),
        _ => parabolic_control::fem::build_unit_square_mesh(
            cfg.discretization.n_per_side.unwrap_or(1),
        ),
    };
    let disc = mesh.and_then(SpatialDiscretization::new);
    let grid = build_time_grid(
        problem.t_final(),
        cfg.discretization.n_steps,
        cfg.discretization.taus.clone(),
    );
    let (disc, grid) = match (disc, grid) {
        (Ok(d), Ok(g)) => (d, g),
        (Err(e), _) | (_, Err(e)) => {
            println!("FAIL config/discretization: {e}");
            return false;
        }
    };
    let sys = match assemble_block_system(
        &disc,
        &grid,
        &Coefficients::constant(problem.alpha(), problem.c()),
    ) {
        Ok(s) => s,
        Err(e) => {
            println!("FAIL config/assembly: {e}");
            return false;
        }
    };
    let op = ReducedOperator::new(&sys, problem.lambda(), Observation::EndTime);
    let gamma = gamma_bound(problem.c(), problem.t_final(), 1e-4 * problem.t_final()).ok();
    match dense_reduced_spectrum(&op) {
        Ok(report) => {
            let checks = verify_spectral_claims(
                &report,
                &ClaimParams {
                    lambda: problem.lambda(),
                    gamma,
                    n_x: disc.n_x(),
                    m: sys.total_dim(),
                },
            );
            print_checks("config/reduced", &checks, &mut ok);
        }
        Err(e) => println!("SKIP config/reduced: {e} (using the matrix-free extreme eigenvalue only)"),
    }
    match max_eig_reduced(&op, 1e-10) {
        Ok(eig) => {
            if let Some(g) = gamma {
                let passed = eig <= problem.lambda() + g + 1e-8;
                println!(
                    "{} config/extreme_eigenvalue: {eig:.8} vs bound {:.8}",
                    if passed { "PASS" } else { "FAIL" },
                    problem.lambda() + g
                );
                ok &= passed;
            } else {
                println!("INFO config/extreme_eigenvalue: {eig:.8} (no bound: step regime)");
            }
        }
        Err(e) => {
            println!("FAIL config/extreme_eigenvalue: {e}");
            ok = false;
        }
    }
    ok
}
