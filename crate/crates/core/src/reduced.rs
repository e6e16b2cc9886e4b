//! Reduced formulation: the problem posed in the control alone.
//!
//! Eliminating state and adjoint turns the optimality condition into a linear
//! system `F u = rhs` where one application of `F` costs one forward and one
//! backward sweep:
//!
//! ```text
//! F u = lambda u + p(y_N(u, 0))          (end-time observation)
//! F u = lambda u + p(y(u, 0))            (tracking observation)
//! ```
//!
//! `F` is self-adjoint and positive definite in the time-weighted mass inner
//! product (the discrete L^2(Q) product), with spectrum contained in
//! `[lambda, lambda + gamma]` where `gamma` does not depend on the mesh or the
//! number of time steps. The CG iteration below therefore runs all its
//! recursions in that inner product; iteration counts stay flat under
//! refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_load, SpatialDiscretization};
use crate::problem::{TargetSpec, ValidatedProblem};
use crate::timeblock::{assemble_block_system, BlockSystem, BlockVector, Coefficients, TimeGrid};

/// Which observation enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// `1/2 ||y(T) - y_Omega||^2`: the adjoint is driven by the terminal
    /// mismatch only.
    EndTime,
    /// `1/2 ||y - y_Q||^2_{L^2(Q)}`: the adjoint carries a distributed source.
    Tracking,
}

/// Matrix-free reduced operator.
pub struct ReducedOperator<'a> {
    sys: &'a BlockSystem,
    lambda: f64,
    observation: Observation,
}

impl<'a> ReducedOperator<'a> {
    pub fn new(sys: &'a BlockSystem, lambda: f64, observation: Observation) -> Self {
        Self {
            sys,
            lambda,
            observation,
        }
    }

    pub fn system(&self) -> &BlockSystem {
        self.sys
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn observation(&self) -> Observation {
        self.observation
    }

    /// `u -> lambda u + p`, one forward sweep with zero initial data and one
    /// backward sweep with the matching observation data.
    pub fn apply(&self, u: &BlockVector) -> Result<BlockVector> {
        let sys = self.sys;
        let zero_init = vec![0.0; sys.n_x()];
        let y = sys.solve_forward(u, &zero_init)?;
        let p = match self.observation {
            Observation::EndTime => sys.solve_backward(y.block(sys.n_steps() - 1), None)?,
            Observation::Tracking => {
                let source = sys.apply_m(&y)?;
                sys.solve_backward(&zero_init, Some(&source))?
            }
        };
        let mut out = p;
        out.axpy(self.lambda, u);
        Ok(out)
    }
}

/// Assembled target data entering the right-hand side.
pub enum TargetLoads {
    EndTime { y_omega_load: Vec<f64> },
    Tracking { yq_loads: BlockVector },
}

/// Right-hand side of the reduced system: `-p` computed from the uncontrolled
/// state `y(0, y0)` and the target data.
pub fn build_reduced_rhs(
    op: &ReducedOperator,
    y0_load: &[f64],
    target: &TargetLoads,
) -> Result<BlockVector> {
    let sys = op.system();
    let u0 = BlockVector::zeros(sys.n_steps(), sys.n_x());
    let y_free = sys.solve_forward(&u0, y0_load)?;
    let mut p = match (op.observation(), target) {
        (Observation::EndTime, TargetLoads::EndTime { y_omega_load }) => {
            // terminal value y_N(0, y0) - y_Omega in coefficient form; the
            // target load is mapped to coefficients through one mass solve
            let y_omega = sys.mass().solve(y_omega_load)?;
            let mut terminal = y_free.block(sys.n_steps() - 1).to_vec();
            for (t, &g) in terminal.iter_mut().zip(&y_omega) {
                *t -= g;
            }
            sys.solve_backward(&terminal, None)?
        }
        (Observation::Tracking, TargetLoads::Tracking { yq_loads }) => {
            // distributed source M (y_free_j - yq_j) = M y_free_j - yq_load_j
            let mut source = sys.apply_m(&y_free)?;
            for n in 0..sys.n_steps() {
                for (s, &l) in source.block_mut(n).iter_mut().zip(yq_loads.block(n)) {
                    *s -= l;
                }
            }
            sys.solve_backward(&vec![0.0; sys.n_x()], Some(&source))?
        }
        _ => {
            return Err(Error::SizeMismatch {
                what: "target loads do not match the operator's observation",
                expected: 0,
                actual: 1,
            })
        }
    };
    p.scale(-1.0);
    Ok(p)
}

/// How a Krylov run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIters,
    Breakdown,
    Stagnation,
}

/// Iteration record of a CG/MINRES run. Residuals are relative to the
/// right-hand side in the solver's own norm; the final absolute residual is
/// kept alongside because the stopping rule is relative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrylovReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub final_residual: f64,
    pub final_residual_abs: f64,
}

impl KrylovReport {
    fn converged_at_entry() -> Self {
        Self {
            iterations: 0,
            residual_history: vec![],
            converged: true,
            termination: Termination::Tolerance,
            final_residual: 0.0,
            final_residual_abs: 0.0,
        }
    }
}

const STAGNATION_WINDOW: usize = 50;

/// Conjugate gradients for the reduced operator, with every inner product
/// taken in the discrete L^2(Q) product. The weighted residual is carried as
/// an auxiliary variable so each iteration needs exactly one weighting apply
/// on top of the operator apply.
pub fn weighted_cg(
    op: &ReducedOperator,
    rhs: &BlockVector,
    tol: f64,
    max_iters: usize,
) -> Result<(BlockVector, KrylovReport)> {
    let sys = op.system();
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let mut u = BlockVector::zeros(n, nx);

    let mut r = rhs.clone();
    let mut z = sys.apply_dm(&r)?; // z = DM r
    let mut rho = z.dot(&r); // ||r||^2 in the weighted norm
    let b_norm = rho.max(0.0).sqrt();
    if b_norm == 0.0 {
        return Ok((u, KrylovReport::converged_at_entry()));
    }

    let mut history = Vec::new();
    let mut p = r.clone();
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for it in 1..=max_iters {
        let v = op.apply(&p)?;
        let w = sys.apply_dm(&v)?;
        let curvature = p.dot(&w);
        if curvature <= 0.0 {
            return Err(Error::Breakdown {
                detail: format!("nonpositive curvature {curvature:.3e} at iteration {it}"),
            });
        }
        let alpha = rho / curvature;
        u.axpy(alpha, &p);
        r.axpy(-alpha, &v);
        z.axpy(-alpha, &w);
        let rho_next = z.dot(&r);
        let res = rho_next.max(0.0).sqrt();
        let rel = res / b_norm;
        history.push(rel);

        if rel <= tol {
            return Ok((
                u,
                KrylovReport {
                    iterations: it,
                    residual_history: history,
                    converged: true,
                    termination: Termination::Tolerance,
                    final_residual: rel,
                    final_residual_abs: res,
                },
            ));
        }
        if rel < best {
            best = rel;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STAGNATION_WINDOW {
                return Ok((
                    u,
                    KrylovReport {
                        iterations: it,
                        residual_history: history,
                        converged: false,
                        termination: Termination::Stagnation,
                        final_residual: rel,
                        final_residual_abs: res,
                    },
                ));
            }
        }

        let beta = rho_next / rho;
        rho = rho_next;
        let mut p_next = r.clone();
        p_next.axpy(beta, &p);
        p = p_next;
    }

    let final_rel = history.last().copied().unwrap_or(1.0);
    Ok((
        u,
        KrylovReport {
            iterations: max_iters,
            residual_history: history,
            converged: false,
            termination: Termination::MaxIters,
            final_residual: final_rel,
            final_residual_abs: final_rel * b_norm,
        },
    ))
}

/// L^2(Q)-style residual norms of a candidate optimality triple.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualNorms {
    /// ||K y - M u - f||, measured as the L^2(Q) norm of the per-step defect.
    pub state: f64,
    /// Same for the backward equation.
    pub adjoint: f64,
    /// ||lambda u + p|| in the discrete L^2(Q) norm.
    pub gradient: f64,
}

/// Solution bundle of either solution path.
#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub u: BlockVector,
    pub y: BlockVector,
    pub p: BlockVector,
    pub objective: f64,
    pub report: KrylovReport,
    pub residuals: ResidualNorms,
}

/// Everything the solvers need in assembled form.
pub(crate) struct AssembledData {
    pub sys: BlockSystem,
    pub y0_load: Vec<f64>,
    pub target: TargetLoads,
    pub observation: Observation,
}

pub(crate) fn assemble_data(
    problem: &ValidatedProblem,
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
) -> Result<AssembledData> {
    let sys = assemble_block_system(
        disc,
        grid,
        &Coefficients::constant(problem.alpha(), problem.c()),
    )?;
    let y0_load = assemble_load(disc.mesh(), problem.y0(), None)?;
    let (target, observation) = match problem.target() {
        TargetSpec::EndTime(f) => (
            TargetLoads::EndTime {
                y_omega_load: assemble_load(disc.mesh(), f, None)?,
            },
            Observation::EndTime,
        ),
        TargetSpec::Tracking(f) => {
            let mut yq = BlockVector::zeros(grid.n_steps(), disc.n_x());
            for n in 0..grid.n_steps() {
                let l = assemble_load(disc.mesh(), f, Some(grid.time(n + 1)))?;
                yq.block_mut(n).copy_from_slice(&l);
            }
            (TargetLoads::Tracking { yq_loads: yq }, Observation::Tracking)
        }
    };
    Ok(AssembledData {
        sys,
        y0_load,
        target,
        observation,
    })
}

/// State/adjoint sweeps with full data for a given control, and the three
/// physical residual norms.
pub(crate) fn recover_state_adjoint(
    data: &AssembledData,
    u: &BlockVector,
) -> Result<(BlockVector, BlockVector)> {
    let sys = &data.sys;
    let y = sys.solve_forward(u, &data.y0_load)?;
    let p = match &data.target {
        TargetLoads::EndTime { y_omega_load } => {
            let y_omega = sys.mass().solve(y_omega_load)?;
            let mut terminal = y.block(sys.n_steps() - 1).to_vec();
            for (t, &g) in terminal.iter_mut().zip(&y_omega) {
                *t -= g;
            }
            sys.solve_backward(&terminal, None)?
        }
        TargetLoads::Tracking { yq_loads } => {
            let mut source = sys.apply_m(&y)?;
            for n in 0..sys.n_steps() {
                for (s, &l) in source.block_mut(n).iter_mut().zip(yq_loads.block(n)) {
                    *s -= l;
                }
            }
            sys.solve_backward(&vec![0.0; sys.n_x()], Some(&source))?
        }
    };
    Ok((y, p))
}

/// The defect of each per-step equation lives in the dual (load) space; its
/// L^2(Q) norm is `sqrt(sum_n tau_n r_n^T M^{-1} r_n)`.
fn dual_residual_norm(sys: &BlockSystem, defect: &BlockVector) -> Result<f64> {
    let mut acc = 0.0;
    for n in 0..sys.n_steps() {
        let minv_r = sys.mass().solve(defect.block(n))?;
        let dot: f64 = defect.block(n).iter().zip(&minv_r).map(|(a, b)| a * b).sum();
        acc += sys.grid().tau(n) * dot.max(0.0);
    }
    Ok(acc.sqrt())
}

pub(crate) fn physical_residuals(
    data: &AssembledData,
    lambda: f64,
    u: &BlockVector,
    y: &BlockVector,
    p: &BlockVector,
) -> Result<ResidualNorms> {
    let sys = &data.sys;
    let n_steps = sys.n_steps();

    // state: K y - M u - (1/tau_1) y0_load e_1
    let mut state = sys.apply_k(y)?;
    let mu = sys.apply_m(u)?;
    state.axpy(-1.0, &mu);
    let inv_tau1 = 1.0 / sys.grid().tau(0);
    for (r, &l) in state.block_mut(0).iter_mut().zip(&data.y0_load) {
        *r -= inv_tau1 * l;
    }

    // adjoint: S_j p_j - (1/tau_j) M p_{j+1} - source_j
    let mut adjoint = BlockVector::zeros(n_steps, sys.n_x());
    let mut tmp = vec![0.0; sys.n_x()];
    for j in 0..n_steps {
        sys.step_matrix(j).matvec(p.block(j), adjoint.block_mut(j));
        let inv_tau = 1.0 / sys.grid().tau(j);
        if j + 1 < n_steps {
            sys.mass().matvec(p.block(j + 1), &mut tmp);
            for (r, &t) in adjoint.block_mut(j).iter_mut().zip(&tmp) {
                *r -= inv_tau * t;
            }
        } else {
            match &data.target {
                TargetLoads::EndTime { y_omega_load } => {
                    // p_{N+1} = y_N - y_Omega: (1/tau_N)(M y_N - y_omega_load)
                    sys.mass().matvec(y.block(n_steps - 1), &mut tmp);
                    for ((r, &t), &l) in adjoint
                        .block_mut(j)
                        .iter_mut()
                        .zip(&tmp)
                        .zip(y_omega_load)
                    {
                        *r -= inv_tau * (t - l);
                    }
                }
                TargetLoads::Tracking { .. } => {}
            }
        }
        if let TargetLoads::Tracking { yq_loads } = &data.target {
            sys.mass().matvec(y.block(j), &mut tmp);
            for ((r, &t), &l) in adjoint.block_mut(j).iter_mut().zip(&tmp).zip(yq_loads.block(j)) {
                *r -= t - l;
            }
        }
    }

    let mut grad = p.clone();
    grad.axpy(lambda, u);

    Ok(ResidualNorms {
        state: dual_residual_norm(sys, &state)?,
        adjoint: dual_residual_norm(sys, &adjoint)?,
        gradient: sys.dm_norm(&grad),
    })
}

pub(crate) fn objective_value(data: &AssembledData, lambda: f64, u: &BlockVector, y: &BlockVector) -> Result<f64> {
    let sys = &data.sys;
    let control_term: f64 = (0..sys.n_steps())
        .map(|n| sys.grid().tau(n) * sys.m_inner(u.block(n), u.block(n)))
        .sum();
    let tracking_term = match &data.target {
        TargetLoads::EndTime { y_omega_load } => {
            let y_omega = sys.mass().solve(y_omega_load)?;
            let mut d = y.block(sys.n_steps() - 1).to_vec();
            for (v, &g) in d.iter_mut().zip(&y_omega) {
                *v -= g;
            }
            sys.m_inner(&d, &d)
        }
        TargetLoads::Tracking { yq_loads } => {
            let mut acc = 0.0;
            for n in 0..sys.n_steps() {
                let yq = sys.mass().solve(yq_loads.block(n))?;
                let mut d = y.block(n).to_vec();
                for (v, &g) in d.iter_mut().zip(&yq) {
                    *v -= g;
                }
                acc += sys.grid().tau(n) * sys.m_inner(&d, &d);
            }
            acc
        }
    };
    Ok(0.5 * tracking_term + 0.5 * lambda * control_term)
}

/// Solve the control problem through the reduced formulation.
pub fn solve_reduced(
    problem: &ValidatedProblem,
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
    tol: f64,
    max_iters: usize,
) -> Result<ControlSolution> {
    let data = assemble_data(problem, disc, grid)?;
    let lambda = problem.lambda();
    let op = ReducedOperator::new(&data.sys, lambda, data.observation);

    let rhs = build_reduced_rhs(&op, &data.y0_load, &data.target)?;

    // Data-relative zero test: a right-hand side at round-off level relative
    // to the problem data means the uncontrolled state already matches the
    // target, so no iteration effort is spent.
    let rhs_norm = data.sys.dm_norm(&rhs);
    let data_scale = {
        let y0 = data.sys.mass().solve(&data.y0_load)?;
        let mut s = data.sys.m_norm(&y0);
        if let TargetLoads::EndTime { y_omega_load } = &data.target {
            let g = data.sys.mass().solve(y_omega_load)?;
            s += data.sys.m_norm(&g);
        }
        s.max(1e-300)
    };
    let (u, report) = if rhs_norm <= 1e-13 * data_scale {
        (
            BlockVector::zeros(data.sys.n_steps(), data.sys.n_x()),
            KrylovReport::converged_at_entry(),
        )
    } else {
        weighted_cg(&op, &rhs, tol, max_iters)?
    };

    let (y, p) = recover_state_adjoint(&data, &u)?;
    let objective = objective_value(&data, lambda, &u, &y)?;
    let residuals = physical_residuals(&data, lambda, &u, &y, &p)?;
    Ok(ControlSolution {
        u,
        y,
        p,
        objective,
        report,
        residuals,
    })
}

/// Discrete objective `J = 1/2 ||y_N - y_Omega||_M^2 + lambda/2 sum tau_n ||u_n||_M^2`
/// (tracking variant integrates the mismatch over all steps).
pub fn evaluate_objective(
    problem: &ValidatedProblem,
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
    u: &BlockVector,
    y: &BlockVector,
) -> Result<f64> {
    let data = assemble_data(problem, disc, grid)?;
    objective_value(&data, problem.lambda(), u, y)
}

/// Gradient of the reduced objective, `lambda u + p(u)`, recomputing state and
/// adjoint with full data.
pub fn reduced_gradient(
    problem: &ValidatedProblem,
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
    u: &BlockVector,
) -> Result<BlockVector> {
    let data = assemble_data(problem, disc, grid)?;
    let (_, p) = recover_state_adjoint(&data, u)?;
    let mut g = p;
    g.axpy(problem.lambda(), u);
    Ok(g)
}
