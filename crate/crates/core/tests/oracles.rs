//! Cross-module checks that exercise the 2D assembly path and the tracking
//! objective against the dense oracles.

use parabolic_control::fem::{
    assemble_load, build_interval_mesh, build_unit_square_mesh, SpatialDiscretization,
};
use parabolic_control::problem::{validate, DataFunction, ProblemSpec, TargetSpec};
use parabolic_control::reduced::{solve_reduced, Observation, ReducedOperator};
use parabolic_control::spectra::dense;
use parabolic_control::timeblock::{
    assemble_block_system, build_time_grid, BlockVector, Coefficients,
};
use rand::{Rng, SeedableRng};

fn cos_2d_problem(lambda: f64, c: f64) -> ProblemSpec {
    ProblemSpec {
        dim: 2,
        t_final: 1.0,
        lambda,
        alpha: 1.0,
        c,
        y0: DataFunction::CosProduct { freq: 1.0 },
        target: Some(TargetSpec::EndTime(DataFunction::CosProduct { freq: 2.0 })),
    }
}

/// The 2D analogue of the flat-iteration behavior: on the criss-cross
/// triangulation the cosine data spread over many modes, so the counts are
/// well above the 1D case but must stay flat under refinement in space and
/// time.
#[test]
fn weighted_cg_2d_iterations_flat_under_refinement() {
    let problem = validate(cos_2d_problem(1e-3, -5.0)).unwrap();
    let mut counts = Vec::new();
    for (n_side, n_steps) in [(8usize, 20usize), (8, 40), (16, 20), (16, 40)] {
        let disc =
            SpatialDiscretization::new(build_unit_square_mesh(n_side).unwrap()).unwrap();
        let grid = build_time_grid(1.0, n_steps, None).unwrap();
        let sol = solve_reduced(&problem, &disc, &grid, 1e-10, 500).unwrap();
        assert!(sol.report.converged, "{n_side}/{n_steps}");
        counts.push(sol.report.iterations);
    }
    let band = counts.iter().max().unwrap() - counts.iter().min().unwrap();
    assert!(band <= 5, "2D iteration band {band}: {counts:?}");
    assert!(
        counts.iter().all(|&c| c >= 3 && c <= 60),
        "2D counts out of the expected range: {counts:?}"
    );
}

#[test]
fn forward_sweep_2d_matches_dense_solve() {
    let disc = SpatialDiscretization::new(build_unit_square_mesh(3).unwrap()).unwrap();
    let grid = build_time_grid(1.0, 3, None).unwrap();
    let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, -0.5)).unwrap();
    let nx = disc.n_x();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let u = BlockVector::from_fn(3, nx, |_, _| rng.gen_range(-1.0..1.0));
    let y0_load: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = sys.solve_forward(&u, &y0_load).unwrap();

    let k = dense::dense_k(&sys);
    let mu = sys.apply_m(&u).unwrap();
    let mut rhs = nalgebra::DVector::from_column_slice(mu.as_slice());
    for i in 0..nx {
        rhs[i] += y0_load[i] / sys.grid().tau(0);
    }
    let dense_y = k.lu().solve(&rhs).unwrap();
    let err = (nalgebra::DVector::from_column_slice(y.as_slice()) - &dense_y).norm();
    assert!(err <= 1e-11 * dense_y.norm(), "err {err}");
}

/// Tracking objective: the solved control satisfies the dense tracking-form
/// optimality system.
#[test]
fn tracking_solve_matches_dense_operator() {
    let mut spec = cos_2d_problem(5e-2, 1.0);
    spec.dim = 1;
    spec.target = Some(TargetSpec::Tracking(DataFunction::CosProduct { freq: 2.0 }));
    let problem = validate(spec).unwrap();
    let disc = SpatialDiscretization::new(build_interval_mesh(9).unwrap()).unwrap();
    let grid = build_time_grid(1.0, 6, None).unwrap();
    let sol = solve_reduced(&problem, &disc, &grid, 1e-12, 300).unwrap();
    assert!(sol.report.converged);
    assert!(sol.residuals.gradient <= 1e-10, "{:?}", sol.residuals);

    // residual of the dense tracking operator at the solved control
    let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, 1.0)).unwrap();
    let f_q = dense::dense_f_bar(&sys, 5e-2, Observation::Tracking).unwrap();
    let op = ReducedOperator::new(&sys, 5e-2, Observation::Tracking);
    let fu = op.apply(&sol.u).unwrap();
    let expect = &f_q * nalgebra::DVector::from_column_slice(sol.u.as_slice());
    let err = (nalgebra::DVector::from_column_slice(fu.as_slice()) - &expect).norm();
    assert!(err <= 1e-11 * expect.norm().max(1e-300), "err {err}");

    // and the state really tracks the target better than the free evolution
    let y0_load = assemble_load(disc.mesh(), problem.y0(), None).unwrap();
    let free = sys
        .solve_forward(&BlockVector::zeros(6, 10), &y0_load)
        .unwrap();
    let j_free = parabolic_control::reduced::evaluate_objective(
        &problem,
        &disc,
        &grid,
        &BlockVector::zeros(6, 10),
        &free,
    )
    .unwrap();
    assert!(sol.objective < j_free, "{} !< {j_free}", sol.objective);
}

#[test]
fn dense_coo_export_round_trips_entrywise() {
    let disc = SpatialDiscretization::new(build_interval_mesh(3).unwrap()).unwrap();
    let grid = build_time_grid(1.0, 2, None).unwrap();
    let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, 0.5)).unwrap();
    let t = dense::dense_saddle(&sys, 1.0, parabolic_control::saddle::SaddleVariant::Sym);
    let mut buf = Vec::new();
    dense::write_dense_coo(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut rebuilt = nalgebra::DMatrix::zeros(t.nrows(), t.ncols());
    for line in text.lines().skip(1) {
        let mut it = line.split_whitespace();
        let r: usize = it.next().unwrap().parse().unwrap();
        let c: usize = it.next().unwrap().parse().unwrap();
        let v: f64 = it.next().unwrap().parse().unwrap();
        rebuilt[(r, c)] = v;
    }
    assert_eq!(t, rebuilt);
}

#[test]
fn matrix_and_mesh_text_exports_have_expected_shape() {
    let mesh = build_unit_square_mesh(2).unwrap();
    let mut buf = Vec::new();
    mesh.write_tables(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains("# nodes 9 dim 2"));
    assert!(text.contains("# elements 8"));

    let disc = SpatialDiscretization::new(mesh).unwrap();
    let mut buf = Vec::new();
    disc.mass().write_coo(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    // one line per nonzero of the full symmetric matrix plus the header
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with('#'));
    let mut sum = 0.0;
    for l in &lines[1..] {
        let v: f64 = l.split_whitespace().nth(2).unwrap().parse().unwrap();
        sum += v;
    }
    assert!((sum - 1.0).abs() < 1e-12, "entry sum {sum}");
}
