//! All-at-once optimality systems and their block preconditioner.
//!
//! The coupled first-order conditions in `(y, u, -p)` form a symmetric
//! indefinite 3x3 block system whose leading block `e_N e_N^T (x) M_N` is
//! nonzero only at the final time step, hence highly rank deficient. Two
//! algebraically equivalent forms are assembled:
//!
//! * `Sym` — the row-scaled symmetric form with unknown `(y, u, -p)`,
//! * `Disc` — the discretize-then-optimize form with the multiplier
//!   `zeta = D p`, unknown `(y, u, -zeta)`.
//!
//! Both are preconditioned by a positive definite block preconditioner that
//! augments the leading block with `K^T D M^{-1} K`; the preconditioned
//! operator then has eigenvalue 1 with multiplicity 2m, eigenvalue -1 with
//! multiplicity m - n_x, and the remaining n_x eigenvalues inside
//! `(-1, -1/(1+lambda))`, independently of the discretization level. MINRES
//! with this preconditioner therefore converges in a bounded number of
//! iterations.
//!
//! The exact Schur block `W = e_N e_N^T (x) M_N + lambda/(1+lambda) K^T D M^{-1} K`
//! is dense through `M^{-1}`; the `ExactW` mode factorizes it densely and is
//! gated to desk-scale instances for spectrum verification. Production runs
//! use the `ApproxW` mode, which drops the rank-`n_x` term so that
//! `W_bar^{-1} = (1+lambda)/lambda K^{-1} M D^{-1} K^{-T}` is applied exactly
//! through the cached per-step factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fem::SpatialDiscretization;
use crate::problem::ValidatedProblem;
use crate::reduced::{
    assemble_data, objective_value, physical_residuals, ControlSolution, KrylovReport,
    TargetLoads, Termination,
};
use crate::timeblock::{BlockSystem, BlockVector, TimeGrid};

/// Size gate for dense `W` factorization and dense spectra.
pub const DENSE_LIMIT: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleVariant {
    Sym,
    Disc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMode {
    Exact,
    Approx,
}

/// Matrix-free symmetric saddle operator of total size `3m`, `m = N n_x`.
pub struct SaddleSystem<'a> {
    sys: &'a BlockSystem,
    lambda: f64,
    variant: SaddleVariant,
}

/// Assemble the chosen variant over an existing block system.
pub fn assemble_saddle(
    sys: &BlockSystem,
    lambda: f64,
    variant: SaddleVariant,
) -> SaddleSystem<'_> {
    SaddleSystem {
        sys,
        lambda,
        variant,
    }
}

impl<'a> SaddleSystem<'a> {
    pub fn system(&self) -> &'a BlockSystem {
        self.sys
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variant(&self) -> SaddleVariant {
        self.variant
    }

    /// Total dimension 3m.
    pub fn dim(&self) -> usize {
        3 * self.sys.total_dim()
    }

    fn split<'x>(&self, x: &'x [f64]) -> (BlockVector, BlockVector, BlockVector) {
        let m = self.sys.total_dim();
        let (n, nx) = (self.sys.n_steps(), self.sys.n_x());
        (
            BlockVector::from_slice(n, nx, &x[0..m]),
            BlockVector::from_slice(n, nx, &x[m..2 * m]),
            BlockVector::from_slice(n, nx, &x[2 * m..3 * m]),
        )
    }

    fn join(&self, a: &BlockVector, b: &BlockVector, c: &BlockVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(a.as_slice());
        out.extend_from_slice(b.as_slice());
        out.extend_from_slice(c.as_slice());
        out
    }

    /// Apply the saddle operator to `(y, u, q)` with `q` carrying `-p`
    /// (`Sym`) or `-zeta` (`Disc`).
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::SizeMismatch {
                what: "saddle operator input",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let sys = self.sys;
        let (n, nx) = (sys.n_steps(), sys.n_x());
        let (y, u, q) = self.split(x);

        // row 1: E y + K^T (D) q, with E = e_N e_N^T (x) M_N
        let mut row1 = match self.variant {
            SaddleVariant::Sym => {
                let mut dq = q.clone();
                for j in 0..n {
                    let tau = sys.grid().tau(j);
                    for v in dq.block_mut(j) {
                        *v *= tau;
                    }
                }
                sys.apply_kt(&dq)?
            }
            SaddleVariant::Disc => sys.apply_kt(&q)?,
        };
        let mut my_n = vec![0.0; nx];
        sys.mass().matvec(y.block(n - 1), &mut my_n);
        for (r, &v) in row1.block_mut(n - 1).iter_mut().zip(&my_n) {
            *r += v;
        }

        // row 2: lambda D M u - (D) M q
        let mu = sys.apply_m(&u)?;
        let mq = sys.apply_m(&q)?;
        let mut row2 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let tau = sys.grid().tau(j);
            let scale_q = match self.variant {
                SaddleVariant::Sym => tau,
                SaddleVariant::Disc => 1.0,
            };
            for i in 0..nx {
                row2.block_mut(j)[i] =
                    self.lambda * tau * mu.block(j)[i] - scale_q * mq.block(j)[i];
            }
        }

        // row 3: (D) K y - (D) M u
        let ky = sys.apply_k(&y)?;
        let mut row3 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let scale = match self.variant {
                SaddleVariant::Sym => sys.grid().tau(j),
                SaddleVariant::Disc => 1.0,
            };
            for i in 0..nx {
                row3.block_mut(j)[i] = scale * (ky.block(j)[i] - mu.block(j)[i]);
            }
        }

        Ok(self.join(&row1, &row2, &row3))
    }

    /// Right-hand side for given assembled initial and target loads.
    pub fn rhs(&self, y0_load: &[f64], y_omega_load: &[f64]) -> Result<Vec<f64>> {
        let sys = self.sys;
        let (n, nx) = (sys.n_steps(), sys.n_x());
        if y0_load.len() != nx || y_omega_load.len() != nx {
            return Err(Error::SizeMismatch {
                what: "saddle rhs loads",
                expected: nx,
                actual: y0_load.len(),
            });
        }
        let m = sys.total_dim();
        let mut rhs = vec![0.0; 3 * m];
        // block 1, last slot: target load
        rhs[(n - 1) * nx..m].copy_from_slice(y_omega_load);
        // block 3, first slot: initial load, scaled 1/tau_1 in the Disc form
        let scale = match self.variant {
            SaddleVariant::Sym => 1.0,
            SaddleVariant::Disc => 1.0 / sys.grid().tau(0),
        };
        for (slot, &l) in rhs[2 * m..2 * m + nx].iter_mut().zip(y0_load) {
            *slot = scale * l;
        }
        Ok(rhs)
    }
}

/// Right-hand side per the chosen variant; free-function form.
pub fn saddle_rhs(
    saddle: &SaddleSystem,
    y0_load: &[f64],
    y_omega_load: &[f64],
) -> Result<Vec<f64>> {
    saddle.rhs(y0_load, y_omega_load)
}

enum WSolve {
    Exact(Cholesky<f64, Dyn>),
    Approx,
}

/// Positive definite block preconditioner with the triangular decomposition
/// applied matrix-free; only `M`, per-step factorizations and (in exact mode)
/// one dense factorization of `W` are required.
pub struct SaddlePreconditioner<'a> {
    sys: &'a BlockSystem,
    lambda: f64,
    variant: SaddleVariant,
    w: WSolve,
}

impl<'a> SaddlePreconditioner<'a> {
    pub fn new(saddle: &SaddleSystem<'a>, mode: WMode) -> Result<SaddlePreconditioner<'a>> {
        let sys = saddle.system();
        let lambda = saddle.lambda();
        if lambda <= 0.0 {
            return Err(Error::NonPositive {
                field: "lambda",
                value: lambda,
            });
        }
        let w = match mode {
            WMode::Approx => {
                if lambda < 1e-14 {
                    return Err(Error::SingularW {
                        detail: format!("lambda = {lambda:.3e} leaves W_bar numerically singular"),
                    });
                }
                WSolve::Approx
            }
            WMode::Exact => {
                let m = sys.total_dim();
                if m > DENSE_LIMIT {
                    return Err(Error::TooLargeForDense {
                        size: m,
                        limit: DENSE_LIMIT,
                    });
                }
                let w = crate::spectra::dense::dense_w(sys, lambda)?;
                let chol = Cholesky::new(w).ok_or_else(|| Error::FactorizationFailed {
                    detail: "dense W is not positive definite".into(),
                })?;
                WSolve::Exact(chol)
            }
        };
        Ok(Self {
            sys,
            lambda,
            variant: saddle.variant(),
            w,
        })
    }

    pub fn mode(&self) -> WMode {
        match self.w {
            WSolve::Exact(_) => WMode::Exact,
            WSolve::Approx => WMode::Approx,
        }
    }

    fn solve_w(&self, rhs: &BlockVector) -> Result<BlockVector> {
        match &self.w {
            WSolve::Exact(chol) => {
                let b = DVector::from_column_slice(rhs.as_slice());
                let x = chol.solve(&b);
                Ok(BlockVector::from_slice(
                    rhs.n_blocks(),
                    rhs.block_len(),
                    x.as_slice(),
                ))
            }
            WSolve::Approx => {
                // W_bar^{-1} = (1+lambda)/lambda K^{-1} M D^{-1} K^{-T}
                let sys = self.sys;
                let mut t = sys.solve_kt_system(rhs)?;
                for j in 0..sys.n_steps() {
                    let inv_tau = 1.0 / sys.grid().tau(j);
                    let mt = sys.mass().matvec_alloc(t.block(j));
                    for (v, &w) in t.block_mut(j).iter_mut().zip(&mt) {
                        *v = inv_tau * w;
                    }
                }
                let mut z = sys.solve_k_system(&t)?;
                z.scale((1.0 + self.lambda) / self.lambda);
                Ok(z)
            }
        }
    }

    /// z = P^{-1} r through the decomposition: unit block-upper factor first,
    /// then the block-lower factor with diagonal blocks W (or W_bar),
    /// (1+lambda) D M, and D M (`Sym`) / D^{-1} M (`Disc`).
    pub fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>> {
        let sys = self.sys;
        let m = sys.total_dim();
        if r.len() != 3 * m {
            return Err(Error::SizeMismatch {
                what: "preconditioner input",
                expected: 3 * m,
                actual: r.len(),
            });
        }
        let (n, nx) = (sys.n_steps(), sys.n_x());
        let r1 = BlockVector::from_slice(n, nx, &r[0..m]);
        let r2 = BlockVector::from_slice(n, nx, &r[m..2 * m]);
        let r3 = BlockVector::from_slice(n, nx, &r[2 * m..3 * m]);

        // unit upper factor: w1 = r1 + 1/(1+lambda) K^T M^{-1} r2
        let mut minv_r2 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let s = sys.mass().solve(r2.block(j))?;
            minv_r2.block_mut(j).copy_from_slice(&s);
        }
        let kt = sys.apply_kt(&minv_r2)?;
        let mut w1 = r1.clone();
        w1.axpy(1.0 / (1.0 + self.lambda), &kt);

        // lower factor, row 1: z1 = W^{-1} w1
        let z1 = self.solve_w(&w1)?;

        // row 2: (1+lambda) D M z2 = r2 + D K z1
        let kz1 = sys.apply_k(&z1)?;
        let mut z2 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let inv_tau = 1.0 / sys.grid().tau(j);
            let mut rhs_j = vec![0.0; nx];
            for i in 0..nx {
                rhs_j[i] = inv_tau * r2.block(j)[i] + kz1.block(j)[i];
            }
            let s = sys.mass().solve(&rhs_j)?;
            for (z, &v) in z2.block_mut(j).iter_mut().zip(&s) {
                *z = v / (1.0 + self.lambda);
            }
        }

        // row 3: D M z3 = r3 (Sym) / D^{-1} M z3 = r3 (Disc)
        let mut z3 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let tau = sys.grid().tau(j);
            let s = sys.mass().solve(r3.block(j))?;
            let scale = match self.variant {
                SaddleVariant::Sym => 1.0 / tau,
                SaddleVariant::Disc => tau,
            };
            for (z, &v) in z3.block_mut(j).iter_mut().zip(&s) {
                *z = scale * v;
            }
        }

        let mut out = Vec::with_capacity(3 * m);
        out.extend_from_slice(z1.as_slice());
        out.extend_from_slice(z2.as_slice());
        out.extend_from_slice(z3.as_slice());
        Ok(out)
    }

    /// Forward application of the preconditioner (z -> P z); used to verify
    /// the inverse round-trip. In approximate mode the leading block uses
    /// `W_bar`'s completion `K^T D M^{-1} K` instead of `W`'s.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let sys = self.sys;
        let m = sys.total_dim();
        let (n, nx) = (sys.n_steps(), sys.n_x());
        let y = BlockVector::from_slice(n, nx, &x[0..m]);
        let u = BlockVector::from_slice(n, nx, &x[m..2 * m]);
        let q = BlockVector::from_slice(n, nx, &x[2 * m..3 * m]);

        // (1,1): [E +] K^T D M^{-1} K
        let ky = sys.apply_k(&y)?;
        let mut t = BlockVector::zeros(n, nx);
        for j in 0..n {
            let tau = sys.grid().tau(j);
            let s = sys.mass().solve(ky.block(j))?;
            for (v, &w) in t.block_mut(j).iter_mut().zip(&s) {
                *v = tau * w;
            }
        }
        let mut row1 = sys.apply_kt(&t)?;
        if matches!(self.w, WSolve::Exact(_)) {
            let mut my = vec![0.0; nx];
            sys.mass().matvec(y.block(n - 1), &mut my);
            for (r, &v) in row1.block_mut(n - 1).iter_mut().zip(&my) {
                *r += v;
            }
        }
        // (1,2): -K^T D u
        let mut du = u.clone();
        for j in 0..n {
            let tau = sys.grid().tau(j);
            for v in du.block_mut(j) {
                *v *= tau;
            }
        }
        let ktdu = sys.apply_kt(&du)?;
        row1.axpy(-1.0, &ktdu);

        // (2,1): -D K y ; (2,2): (1+lambda) D M u
        let mu = sys.apply_m(&u)?;
        let mut row2 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let tau = sys.grid().tau(j);
            for i in 0..nx {
                row2.block_mut(j)[i] =
                    tau * ((1.0 + self.lambda) * mu.block(j)[i] - ky.block(j)[i]);
            }
        }

        // (3,3): D M (Sym) / D^{-1} M (Disc)
        let mq = sys.apply_m(&q)?;
        let mut row3 = BlockVector::zeros(n, nx);
        for j in 0..n {
            let tau = sys.grid().tau(j);
            let scale = match self.variant {
                SaddleVariant::Sym => tau,
                SaddleVariant::Disc => 1.0 / tau,
            };
            for i in 0..nx {
                row3.block_mut(j)[i] = scale * mq.block(j)[i];
            }
        }

        let mut out = Vec::with_capacity(3 * m);
        out.extend_from_slice(row1.as_slice());
        out.extend_from_slice(row2.as_slice());
        out.extend_from_slice(row3.as_slice());
        Ok(out)
    }
}

/// Free-function form of [`SaddlePreconditioner::apply_inverse`].
pub fn apply_precond_inverse(p: &SaddlePreconditioner, r: &[f64]) -> Result<Vec<f64>> {
    p.apply_inverse(r)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const STAGNATION_WINDOW: usize = 50;

/// One MINRES sweep (Lanczos in the `P^{-1}` inner product) solving
/// `A d = r` from a zero start. Stops when the recurrence residual estimate
/// drops below `threshold_abs`, on stagnation, or after `max_iters` steps.
fn minres_sweep(
    saddle: &SaddleSystem,
    precond: &SaddlePreconditioner,
    rhs: &[f64],
    threshold_abs: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, Termination, Vec<f64>)> {
    let dim = saddle.dim();
    let mut x = vec![0.0; dim];
    let mut estimates = Vec::new();

    let mut v = rhs.to_vec();
    let mut v_old = vec![0.0; dim];
    let mut z = precond.apply_inverse(&v)?;
    let gamma2 = z.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    if gamma2 <= 0.0 {
        return Err(Error::SingularW {
            detail: format!("preconditioned inner product {gamma2:.3e} is not positive"),
        });
    }
    let mut gamma = gamma2.sqrt();
    let mut gamma_old = 1.0;
    let (mut eta, mut s_old, mut s, mut c_old, mut c) = (gamma, 0.0f64, 0.0f64, 1.0f64, 1.0f64);
    let mut w = vec![0.0; dim];
    let mut w_old = vec![0.0; dim];

    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for it in 1..=max_iters {
        for zi in z.iter_mut() {
            *zi /= gamma;
        }
        let az = saddle.apply(&z)?;
        let delta = az.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let mut v_new: Vec<f64> = az;
        for i in 0..dim {
            v_new[i] -= (delta / gamma) * v[i] + (gamma / gamma_old) * v_old[i];
        }
        let z_new = precond.apply_inverse(&v_new)?;
        let gamma_new2 = z_new.iter().zip(&v_new).map(|(a, b)| a * b).sum::<f64>();
        if gamma_new2 < 0.0 {
            return Err(Error::SingularW {
                detail: format!(
                    "preconditioned inner product {gamma_new2:.3e} turned negative at iteration {it}"
                ),
            });
        }
        let gamma_new = gamma_new2.sqrt();

        let alpha0 = c * delta - c_old * s * gamma;
        let alpha1 = (alpha0 * alpha0 + gamma_new * gamma_new).sqrt();
        let alpha2 = s * delta + c_old * c * gamma;
        let alpha3 = s_old * gamma;
        if alpha1 == 0.0 {
            return Err(Error::Breakdown {
                detail: format!("minres rotation collapsed at iteration {it}"),
            });
        }
        c_old = c;
        s_old = s;
        c = alpha0 / alpha1;
        s = gamma_new / alpha1;

        let mut w_new = vec![0.0; dim];
        for i in 0..dim {
            w_new[i] = (z[i] - alpha3 * w_old[i] - alpha2 * w[i]) / alpha1;
        }
        for i in 0..dim {
            x[i] += c * eta * w_new[i];
        }
        eta = -s * eta;

        w_old = std::mem::replace(&mut w, w_new);
        v_old = std::mem::replace(&mut v, v_new);
        z = z_new;
        gamma_old = std::mem::replace(&mut gamma, gamma_new);

        let est = eta.abs();
        estimates.push(est);
        if est <= threshold_abs || gamma_new == 0.0 {
            return Ok((x, it, Termination::Tolerance, estimates));
        }
        if est < best {
            best = est;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STAGNATION_WINDOW {
                return Ok((x, it, Termination::Stagnation, estimates));
            }
        }
    }
    let its = max_iters;
    Ok((x, its, Termination::MaxIters, estimates))
}

const MAX_MINRES_RESTARTS: usize = 6;

/// Preconditioned MINRES for the symmetric saddle system. The preconditioner
/// must be symmetric positive definite; convergence is measured in the
/// `P^{-1}` norm relative to the right-hand side.
///
/// The short-recurrence residual estimate drifts away from the true residual
/// once the preconditioner's internal scalings get large (small `lambda`,
/// many time steps), so after each inner sweep the true residual is
/// recomputed and the iteration restarted from it until the measured
/// residual meets the tolerance or stops improving. Reported residuals are
/// always the recomputed ones.
pub fn minres_solve(
    saddle: &SaddleSystem,
    precond: &SaddlePreconditioner,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, KrylovReport)> {
    let dim = saddle.dim();
    if rhs.len() != dim {
        return Err(Error::SizeMismatch {
            what: "minres rhs",
            expected: dim,
            actual: rhs.len(),
        });
    }
    let mut x = vec![0.0; dim];
    if norm2(rhs) == 0.0 {
        return Ok((
            x,
            KrylovReport {
                iterations: 0,
                residual_history: vec![],
                converged: true,
                termination: Termination::Tolerance,
                final_residual: 0.0,
                final_residual_abs: 0.0,
            },
        ));
    }

    let pres_norm = |r: &[f64]| -> Result<f64> {
        let z = precond.apply_inverse(r)?;
        let d = z.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
        if d < 0.0 {
            return Err(Error::SingularW {
                detail: format!("preconditioned inner product {d:.3e} is not positive"),
            });
        }
        Ok(d.sqrt())
    };

    let gamma0 = pres_norm(rhs)?;
    if gamma0 == 0.0 {
        return Err(Error::SingularW {
            detail: "nonzero right-hand side has zero preconditioned norm".into(),
        });
    }
    let threshold_abs = tol * gamma0;

    let mut r = rhs.to_vec();
    let mut r_norm = gamma0;
    let mut history = Vec::new();
    let mut total_its = 0usize;
    let mut last_termination = Termination::MaxIters;

    for _restart in 0..MAX_MINRES_RESTARTS {
        let budget = max_iters.saturating_sub(total_its);
        if budget == 0 {
            break;
        }
        let (d, its, termination, estimates) =
            minres_sweep(saddle, precond, &r, threshold_abs, budget)?;
        total_its += its;
        last_termination = termination;
        history.extend(estimates.iter().map(|e| e / gamma0));
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }

        let ax = saddle.apply(&x)?;
        r = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let new_norm = pres_norm(&r)?;
        let rel = new_norm / gamma0;
        if let Some(last) = history.last_mut() {
            *last = rel;
        }
        if rel <= tol {
            return Ok((
                x,
                KrylovReport {
                    iterations: total_its,
                    residual_history: history,
                    converged: true,
                    termination: Termination::Tolerance,
                    final_residual: rel,
                    final_residual_abs: new_norm,
                },
            ));
        }
        if termination == Termination::MaxIters {
            break;
        }
        // a restart that gains less than a factor of two will not recover:
        // the attainable accuracy has been reached
        if new_norm > 0.5 * r_norm {
            last_termination = Termination::Stagnation;
            break;
        }
        r_norm = new_norm;
    }

    let rel = r_norm.min(pres_norm(&r)?) / gamma0;
    Ok((
        x,
        KrylovReport {
            iterations: total_its,
            residual_history: history,
            converged: false,
            termination: last_termination,
            final_residual: rel,
            final_residual_abs: rel * gamma0,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct SaddleOptions {
    pub variant: SaddleVariant,
    pub w_mode: WMode,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            variant: SaddleVariant::Sym,
            w_mode: WMode::Approx,
            tol: 1e-8,
            max_iters: 1000,
        }
    }
}

/// Solve the control problem through the all-at-once system. Reports the
/// state, adjoint and gradient residuals alongside the Krylov record; the
/// multiplier is rescaled back to the adjoint in the `Disc` variant.
pub fn solve_all_at_once(
    problem: &ValidatedProblem,
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
    opts: &SaddleOptions,
) -> Result<ControlSolution> {
    let data = assemble_data(problem, disc, grid)?;
    let lambda = problem.lambda();
    let y_omega_load = match &data.target {
        TargetLoads::EndTime { y_omega_load } => y_omega_load.clone(),
        TargetLoads::Tracking { .. } => {
            return Err(Error::Breakdown {
                detail: "the all-at-once path supports end-time targets only".into(),
            })
        }
    };
    let saddle = assemble_saddle(&data.sys, lambda, opts.variant);
    let precond = SaddlePreconditioner::new(&saddle, opts.w_mode)?;
    let rhs = saddle.rhs(&data.y0_load, &y_omega_load)?;
    let (x, report) = minres_solve(&saddle, &precond, &rhs, opts.tol, opts.max_iters)?;

    let sys = &data.sys;
    let (n, nx, m) = (sys.n_steps(), sys.n_x(), sys.total_dim());
    let y = BlockVector::from_slice(n, nx, &x[0..m]);
    let u = BlockVector::from_slice(n, nx, &x[m..2 * m]);
    // unknown carries -p (Sym) or -zeta = -D p (Disc)
    let mut p = BlockVector::from_slice(n, nx, &x[2 * m..3 * m]);
    p.scale(-1.0);
    if opts.variant == SaddleVariant::Disc {
        for j in 0..n {
            let inv_tau = 1.0 / sys.grid().tau(j);
            for v in p.block_mut(j) {
                *v *= inv_tau;
            }
        }
    }

    let residuals = physical_residuals(&data, lambda, &u, &y, &p)?;
    let objective = objective_value(&data, lambda, &u, &y)?;
    Ok(ControlSolution {
        u,
        y,
        p,
        objective,
        report,
        residuals,
    })
}

/// Dense verification helpers for the generic positive semidefinite leading
/// block setting; instantiated by the spectra module.
pub(crate) fn dense_precond_from_parts(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    lambda: f64,
) -> Option<DMatrix<f64>> {
    let b2_inv = b2.clone().try_inverse()?;
    let x = b2_inv.clone() * b1; // B2^{-1} B1
    let schur = x.transpose() * a2 * &x; // B1^T B2^{-T} A2 B2^{-1} B1
    let p12 = b1.transpose() * b2_inv.transpose() * a2;
    let n = a1.nrows();
    let m = a2.nrows();
    let total = n + 2 * m;
    let mut p = DMatrix::zeros(total, total);
    p.view_mut((0, 0), (n, n)).copy_from(&(a1 + &schur));
    p.view_mut((0, n), (n, m)).copy_from(&p12);
    p.view_mut((n, 0), (m, n)).copy_from(&p12.transpose());
    p.view_mut((n, n), (m, m)).copy_from(&(a2 * (1.0 + lambda)));
    let w33 = b2 * a2.clone().try_inverse()? * b2.transpose();
    p.view_mut((n + m, n + m), (m, m)).copy_from(&w33);
    Some(p)
}

pub(crate) fn dense_saddle_from_parts(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let n = a1.nrows();
    let m = a2.nrows();
    let total = n + 2 * m;
    let mut a = DMatrix::zeros(total, total);
    a.view_mut((0, 0), (n, n)).copy_from(a1);
    a.view_mut((0, n + m), (n, m)).copy_from(&b1.transpose());
    a.view_mut((n, n), (m, m)).copy_from(&(a2 * lambda));
    a.view_mut((n, n + m), (m, m)).copy_from(&b2.transpose());
    a.view_mut((n + m, 0), (m, n)).copy_from(b1);
    a.view_mut((n + m, n), (m, m)).copy_from(b2);
    a
}
