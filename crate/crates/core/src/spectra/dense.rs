//! Dense assembly of the block operators, built directly from the per-step
//! matrices and the block-structure formulas. These serve as the independent
//! route against which the matrix-free applications are verified, and as the
//! input to the dense eigensolves at desk scale.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::reduced::Observation;
use crate::saddle::SaddleVariant;
use crate::timeblock::BlockSystem;

/// Coordinate-list text export (`row col value`, zeros skipped) for external
/// verification of densely assembled operators.
pub fn write_dense_coo<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    writeln!(w, "# dense matrix {} x {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                writeln!(w, "{} {} {:.17e}", r, c, v)?;
            }
        }
    }
    Ok(())
}

/// blockdiag(M, ..., M)
pub fn dense_mass_block(sys: &BlockSystem) -> DMatrix<f64> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let m = sys.mass().to_dense();
    let mut out = DMatrix::zeros(n * nx, n * nx);
    for j in 0..n {
        out.view_mut((j * nx, j * nx), (nx, nx)).copy_from(&m);
    }
    out
}

/// diag(tau_j I)
pub fn dense_d(sys: &BlockSystem) -> DMatrix<f64> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let mut out = DMatrix::zeros(n * nx, n * nx);
    for j in 0..n {
        let tau = sys.grid().tau(j);
        for i in 0..nx {
            out[(j * nx + i, j * nx + i)] = tau;
        }
    }
    out
}

/// The weighting D M: the discrete L^2(Q) Gram matrix.
pub fn dense_dm(sys: &BlockSystem) -> DMatrix<f64> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let m = sys.mass().to_dense();
    let mut out = DMatrix::zeros(n * nx, n * nx);
    for j in 0..n {
        let tau = sys.grid().tau(j);
        out.view_mut((j * nx, j * nx), (nx, nx)).copy_from(&(&m * tau));
    }
    out
}

/// The block lower bidiagonal time-stepping operator.
pub fn dense_k(sys: &BlockSystem) -> DMatrix<f64> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let mass = sys.mass().to_dense();
    let mut out = DMatrix::zeros(n * nx, n * nx);
    for j in 0..n {
        let s = sys.step_matrix(j).to_dense();
        out.view_mut((j * nx, j * nx), (nx, nx)).copy_from(&s);
        if j > 0 {
            let inv_tau = 1.0 / sys.grid().tau(j);
            out.view_mut((j * nx, (j - 1) * nx), (nx, nx))
                .copy_from(&(&mass * (-inv_tau)));
        }
    }
    out
}

/// Observation Gram matrix: `e_N e_N^T (x) M_N` for the end-time objective,
/// `D M` for tracking.
pub fn dense_observation(sys: &BlockSystem, observation: Observation) -> DMatrix<f64> {
    match observation {
        Observation::EndTime => {
            let (n, nx) = (sys.n_steps(), sys.n_x());
            let m = sys.mass().to_dense();
            let mut out = DMatrix::zeros(n * nx, n * nx);
            out.view_mut(((n - 1) * nx, (n - 1) * nx), (nx, nx)).copy_from(&m);
            out
        }
        Observation::Tracking => dense_dm(sys),
    }
}

fn lu_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::FactorizationFailed {
            detail: format!("dense LU solve failed for {what}"),
        })
}

/// The control-to-terminal-state map `u -> y_N(u, 0)` as a dense `n_x x m`
/// matrix (the last block row of `K^{-1} M`).
pub fn dense_forward_map(sys: &BlockSystem) -> Result<DMatrix<f64>> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let k = dense_k(sys);
    let x = lu_solve(&k, &dense_mass_block(sys), "K^{-1} M")?;
    Ok(x.view(((n - 1) * nx, 0), (nx, n * nx)).into_owned())
}

/// `K^{-T} E K^{-1} M` — the observation part shared by the reduced forms.
fn dense_observation_core(sys: &BlockSystem, observation: Observation) -> Result<DMatrix<f64>> {
    let k = dense_k(sys);
    let x = lu_solve(&k, &dense_mass_block(sys), "K^{-1} M")?;
    let ex = dense_observation(sys, observation) * x;
    lu_solve(&k.transpose(), &ex, "K^{-T} (E K^{-1} M)")
}

/// The reduced operator matrix `lambda I + D^{-1} K^{-T} E K^{-1} M`.
pub fn dense_f_bar(
    sys: &BlockSystem,
    lambda: f64,
    observation: Observation,
) -> Result<DMatrix<f64>> {
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let mut z = dense_observation_core(sys, observation)?;
    for j in 0..n {
        let inv_tau = 1.0 / sys.grid().tau(j);
        for r in 0..nx {
            for c in 0..(n * nx) {
                z[(j * nx + r, c)] *= inv_tau;
            }
        }
    }
    for i in 0..(n * nx) {
        z[(i, i)] += lambda;
    }
    Ok(z)
}

/// The symmetric positive definite Gram form `lambda D M + M K^{-T} E K^{-1} M`;
/// its pencil against `D M` carries the same eigenvalues as the reduced
/// operator.
pub fn dense_reduced_gram(
    sys: &BlockSystem,
    lambda: f64,
    observation: Observation,
) -> Result<DMatrix<f64>> {
    let z = dense_observation_core(sys, observation)?;
    let g = dense_mass_block(sys) * z + dense_dm(sys) * lambda;
    // symmetric up to the LU round-off of the two solves
    Ok((&g + &g.transpose()) * 0.5)
}

/// Exact Schur block `W = e_N e_N^T (x) M_N + lambda/(1+lambda) K^T D M^{-1} K`.
pub fn dense_w(sys: &BlockSystem, lambda: f64) -> Result<DMatrix<f64>> {
    let k = dense_k(sys);
    let minv_k = lu_solve(&dense_mass_block(sys), &k, "M^{-1} K")?;
    let w_bar = k.transpose() * dense_d(sys) * minv_k * (lambda / (1.0 + lambda));
    let w = dense_observation(sys, Observation::EndTime) + w_bar;
    Ok((&w + &w.transpose()) * 0.5)
}

/// Dropped-rank approximation `W_bar = lambda/(1+lambda) K^T D M^{-1} K`.
pub fn dense_w_bar(sys: &BlockSystem, lambda: f64) -> Result<DMatrix<f64>> {
    let k = dense_k(sys);
    let minv_k = lu_solve(&dense_mass_block(sys), &k, "M^{-1} K")?;
    let w = k.transpose() * dense_d(sys) * minv_k * (lambda / (1.0 + lambda));
    Ok((&w + &w.transpose()) * 0.5)
}

fn variant_parts(
    sys: &BlockSystem,
    variant: SaddleVariant,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let e = dense_observation(sys, Observation::EndTime);
    let dm = dense_dm(sys);
    let k = dense_k(sys);
    match variant {
        SaddleVariant::Sym => {
            let b1 = dense_d(sys) * &k;
            let b2 = -&dm;
            (e, dm, b1, b2)
        }
        SaddleVariant::Disc => {
            let b2 = -dense_mass_block(sys);
            (e, dm, k, b2)
        }
    }
}

/// Dense assembly of the chosen saddle system.
pub fn dense_saddle(sys: &BlockSystem, lambda: f64, variant: SaddleVariant) -> DMatrix<f64> {
    let (a1, a2, b1, b2) = variant_parts(sys, variant);
    crate::saddle::dense_saddle_from_parts(&a1, &a2, &b1, &b2, lambda)
}

/// Dense assembly of the block preconditioner. `exact = false` drops the
/// rank-deficient observation term from the leading block, matching the
/// approximate-W production mode.
pub fn dense_precond(
    sys: &BlockSystem,
    lambda: f64,
    variant: SaddleVariant,
    exact: bool,
) -> Result<DMatrix<f64>> {
    let (a1, a2, b1, b2) = variant_parts(sys, variant);
    let a1 = if exact {
        a1
    } else {
        DMatrix::zeros(a1.nrows(), a1.ncols())
    };
    let p = crate::saddle::dense_precond_from_parts(&a1, &a2, &b1, &b2, lambda).ok_or(
        Error::FactorizationFailed {
            detail: "preconditioner part inversion failed".into(),
        },
    )?;
    Ok((&p + &p.transpose()) * 0.5)
}
