//! Sweep execution: one record per parameter value, failures flagged rather
//! than fatal.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use parabolic_control::fem::{build_interval_mesh, build_unit_square_mesh, SpatialDiscretization};
use parabolic_control::problem::{validate, SolveMethod, ValidatedProblem};
use parabolic_control::reduced::{solve_reduced, Observation, ReducedOperator};
use parabolic_control::saddle::{solve_all_at_once, SaddleOptions};
use parabolic_control::spectra::max_eig_reduced;
use parabolic_control::timeblock::{
    assemble_block_system, build_time_grid, Coefficients, TimeGrid,
};

use crate::config::{apply_sweep_value, ConfigError, ExperimentConfig};

/// Result of one run; carries the fully resolved configuration so every row
/// is reproducible on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sweep_value: Option<f64>,
    pub config: ExperimentConfig,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub res_gradient: Option<f64>,
    pub res_state: Option<f64>,
    pub res_adjoint: Option<f64>,
    pub objective: Option<f64>,
    pub max_eig: Option<f64>,
    pub wall_ms: f64,
    /// Non-silent notes: solver failures and parameter regimes known to be
    /// unreliable are recorded here.
    pub flag: Option<String>,
}

fn build_setup(
    cfg: &ExperimentConfig,
) -> Result<(ValidatedProblem, SpatialDiscretization, TimeGrid), String> {
    let spec = cfg.problem.to_spec().map_err(|e| e.to_string())?;
    let problem = validate(spec).map_err(|e| e.to_string())?;
    let mesh = match cfg.problem.dim {
        1 => build_interval_mesh(cfg.discretization.n_elems.unwrap_or(1)),
        2 => build_unit_square_mesh(cfg.discretization.n_per_side.unwrap_or(1)),
        d => return Err(format!("unsupported dimension {d}")),
    }
    .map_err(|e| e.to_string())?;
    let disc = SpatialDiscretization::new(mesh).map_err(|e| e.to_string())?;
    let grid = build_time_grid(
        cfg.problem.t_final,
        cfg.discretization.n_steps,
        cfg.discretization.taus.clone(),
    )
    .map_err(|e| e.to_string())?;
    Ok((problem, disc, grid))
}

fn run_point(cfg: &ExperimentConfig, sweep_value: Option<f64>) -> RunRecord {
    let start = Instant::now();
    let mut record = RunRecord {
        sweep_value,
        config: cfg.clone(),
        iterations: None,
        converged: None,
        res_gradient: None,
        res_state: None,
        res_adjoint: None,
        objective: None,
        max_eig: None,
        wall_ms: 0.0,
        flag: None,
    };
    let mut notes: Vec<String> = Vec::new();

    match build_setup(cfg) {
        Err(e) => notes.push(e),
        Ok((problem, disc, grid)) => {
            let outcome: Result<(), String> = match cfg.solver.method {
                SolveMethod::Reduced => {
                    if problem.c() <= -15.0 {
                        notes.push(
                            "reaction coefficient at or below -15: results in this regime are not reliable"
                                .into(),
                        );
                    }
                    solve_reduced(&problem, &disc, &grid, cfg.solver.tol, cfg.solver.max_iters)
                        .map(|sol| {
                            record.iterations = Some(sol.report.iterations);
                            record.converged = Some(sol.report.converged);
                            record.res_gradient = Some(sol.residuals.gradient);
                            record.res_state = Some(sol.residuals.state);
                            record.res_adjoint = Some(sol.residuals.adjoint);
                            record.objective = Some(sol.objective);
                            if !sol.report.converged {
                                notes.push(format!(
                                    "solver did not converge ({:?} after {} iterations)",
                                    sol.report.termination, sol.report.iterations
                                ));
                            }
                        })
                        .map_err(|e| e.to_string())
                }
                SolveMethod::AllAtOnce => {
                    if problem.lambda() <= 3e-3 {
                        notes.push(
                            "lambda at or below 3e-3: the approximate-W preconditioner may stagnate"
                                .into(),
                        );
                    }
                    let opts = SaddleOptions {
                        variant: cfg.solver.variant,
                        w_mode: cfg.solver.w_mode,
                        tol: cfg.solver.tol,
                        max_iters: cfg.solver.max_iters,
                    };
                    solve_all_at_once(&problem, &disc, &grid, &opts)
                        .map(|sol| {
                            record.iterations = Some(sol.report.iterations);
                            record.converged = Some(sol.report.converged);
                            record.res_gradient = Some(sol.residuals.gradient);
                            record.res_state = Some(sol.residuals.state);
                            record.res_adjoint = Some(sol.residuals.adjoint);
                            record.objective = Some(sol.objective);
                            if !sol.report.converged {
                                notes.push(format!(
                                    "solver did not converge ({:?} after {} iterations)",
                                    sol.report.termination, sol.report.iterations
                                ));
                            }
                        })
                        .map_err(|e| e.to_string())
                }
                SolveMethod::Eig => {
                    let coeffs = Coefficients::constant(problem.alpha(), problem.c());
                    assemble_block_system(&disc, &grid, &coeffs)
                        .and_then(|sys| {
                            let op = ReducedOperator::new(
                                &sys,
                                problem.lambda(),
                                Observation::EndTime,
                            );
                            max_eig_reduced(&op, cfg.solver.tol.min(1e-10))
                        })
                        .map(|eig| {
                            record.max_eig = Some(eig);
                            record.converged = Some(true);
                        })
                        .map_err(|e| e.to_string())
                }
            };
            if let Err(e) = outcome {
                notes.push(e);
            }
        }
    }

    record.wall_ms = start.elapsed().as_secs_f64() * 1000.0;
    if !notes.is_empty() {
        record.flag = Some(notes.join("; "));
    }
    record
}

/// Execute every sweep point sequentially; per-point failures are recorded
/// and execution continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, ConfigError> {
    match &cfg.sweep {
        None => Ok(vec![run_point(cfg, None)]),
        Some(sweep) => {
            let mut records = Vec::with_capacity(sweep.values.len());
            for &v in &sweep.values {
                match apply_sweep_value(cfg, &sweep.parameter, v) {
                    Ok(point_cfg) => records.push(run_point(&point_cfg, Some(v))),
                    Err(e) => {
                        let mut rec = run_point(cfg, Some(v));
                        rec.flag = Some(e.to_string());
                        rec.iterations = None;
                        records.push(rec);
                    }
                }
            }
            Ok(records)
        }
    }
}

/// Run the base configuration once, ignoring any sweep section.
pub fn run_single(cfg: &ExperimentConfig) -> RunRecord {
    run_point(cfg, None)
}

/// Dense spectrum of the configuration's reduced operator (gated to desk
/// scale by the library's dense limit); for CSV export from the `eig`
/// subcommand.
pub fn dense_spectrum(
    cfg: &ExperimentConfig,
) -> Result<parabolic_control::spectra::SpectrumReport, String> {
    let (problem, disc, grid) = build_setup(cfg)?;
    let sys = assemble_block_system(
        &disc,
        &grid,
        &Coefficients::constant(problem.alpha(), problem.c()),
    )
    .map_err(|e| e.to_string())?;
    let op = ReducedOperator::new(&sys, problem.lambda(), Observation::EndTime);
    parabolic_control::spectra::dense_reduced_spectrum(&op).map_err(|e| e.to_string())
}
