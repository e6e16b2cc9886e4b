//! Eigenvalue computation and verification of the spectral claims.
//!
//! Three spectra matter here:
//!
//! * the reduced operator, whose eigenvalues must sit in
//!   `[lambda, lambda + gamma]` with at most `n_x` of them above `lambda`;
//! * the preconditioned saddle operator, whose eigenvalues must cluster at 1
//!   (multiplicity 2m), -1 (multiplicity m - n_x) and inside
//!   `(-1, -1/(1+lambda))` (the remaining n_x);
//! * the generic positive-semidefinite-leading-block form of that result,
//!   checked on random instances.
//!
//! Dense computations reduce the symmetric-definite pencils through a
//! Cholesky factor of the right-hand Gram matrix, so every spectrum is real
//! by construction. At scale, the largest reduced eigenvalue is found
//! matrix-free by a Lanczos iteration run in the weighted inner product.

pub mod dense;

use std::io::Write;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::ReducedOperator;
use crate::saddle::{SaddlePreconditioner, SaddleSystem, WMode, DENSE_LIMIT};
use crate::timeblock::BlockVector;

/// Default absolute tolerance for eigenvalue-cluster multiplicity counting.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Open-interval membership margin.
pub const INTERVAL_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Reduced,
    PrecondSaddle,
    GenericSaddle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub value: f64,
    pub multiplicity: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub name: String,
    pub passed: bool,
    /// Distance to the nearest violation; counts report 0 on exact match.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub kind: SpectrumKind,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub cluster_tolerance: f64,
    pub claim_checks: Vec<ClaimCheck>,
}

impl SpectrumReport {
    pub fn from_eigenvalues(kind: SpectrumKind, mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("real eigenvalues"));
        let clusters = cluster_eigenvalues(&eigenvalues, CLUSTER_TOL);
        Self {
            kind,
            eigenvalues,
            clusters,
            cluster_tolerance: CLUSTER_TOL,
            claim_checks: Vec::new(),
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    /// Number of eigenvalues within `tol` of `value`.
    pub fn multiplicity_near(&self, value: f64, tol: f64) -> usize {
        self.eigenvalues
            .iter()
            .filter(|&&e| (e - value).abs() <= tol)
            .count()
    }

    /// CSV export with columns index, value, cluster. Eigenvalues are sorted,
    /// so cluster membership follows the multiplicities cumulatively.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,value,cluster")?;
        let mut cluster = 0usize;
        let mut remaining = self.clusters.first().map(|c| c.multiplicity).unwrap_or(0);
        for (i, &e) in self.eigenvalues.iter().enumerate() {
            while remaining == 0 && cluster + 1 < self.clusters.len() {
                cluster += 1;
                remaining = self.clusters[cluster].multiplicity;
            }
            remaining = remaining.saturating_sub(1);
            writeln!(w, "{},{:.17e},{}", i, e, cluster)?;
        }
        Ok(())
    }
}

/// Greedy gap-based clustering of a sorted list; a new cluster starts when
/// the gap to the previous eigenvalue exceeds `tol`. Multiplicities sum to
/// the input length.
pub fn cluster_eigenvalues(sorted: &[f64], tol: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut start = 0usize;
    for i in 1..=sorted.len() {
        let new_cluster = i == sorted.len() || sorted[i] - sorted[i - 1] > tol;
        if new_cluster {
            let members = &sorted[start..i];
            let value = members.iter().sum::<f64>() / members.len() as f64;
            clusters.push(Cluster {
                value,
                multiplicity: members.len(),
                tolerance: tol,
            });
            start = i;
        }
    }
    clusters
}

/// Eigenvalues of the symmetric-definite pencil (A, B) with B SPD, via the
/// Cholesky reduction L^{-1} A L^{-T}.
pub fn symmetric_definite_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = Cholesky::new(b.clone()).ok_or_else(|| Error::FactorizationFailed {
        detail: "pencil right-hand matrix is not positive definite".into(),
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::FactorizationFailed {
            detail: "triangular solve failed in pencil reduction".into(),
        })?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::FactorizationFailed {
            detail: "triangular solve failed in pencil reduction".into(),
        })?;
    let sym = (&c + &c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().cloned().collect())
}

/// Full spectrum of the reduced operator through the dense symmetric-definite
/// pencil; gated to `m <= DENSE_LIMIT`.
pub fn dense_reduced_spectrum(op: &ReducedOperator) -> Result<SpectrumReport> {
    let sys = op.system();
    let m = sys.total_dim();
    if m > DENSE_LIMIT {
        return Err(Error::TooLargeForDense {
            size: m,
            limit: DENSE_LIMIT,
        });
    }
    let gram = dense::dense_reduced_gram(sys, op.lambda(), op.observation())?;
    let weight = dense::dense_dm(sys);
    let eigenvalues = symmetric_definite_eigenvalues(&gram, &weight)?;
    Ok(SpectrumReport::from_eigenvalues(
        SpectrumKind::Reduced,
        eigenvalues,
    ))
}

const MAX_LANCZOS_BASIS: usize = 300;

/// Largest eigenvalue of the reduced operator, matrix-free: Lanczos in the
/// weighted inner product, with full reorthogonalization against the stored
/// basis. The operator is a rank-limited perturbation of `lambda I`, so the
/// iteration terminates exactly after about `n_x` steps.
pub fn max_eig_reduced(op: &ReducedOperator, tol: f64) -> Result<f64> {
    let sys = op.system();
    let (n, nx) = (sys.n_steps(), sys.n_x());
    let m = n * nx;
    let max_basis = m.min(MAX_LANCZOS_BASIS);

    let mut rng = ChaCha8Rng::seed_from_u64(0x7a6c_5e31);
    let mut v = BlockVector::from_fn(n, nx, |_, _| rng.gen_range(-1.0..1.0));
    let nrm = sys.dm_norm(&v);
    v.scale(1.0 / nrm);

    let mut basis: Vec<BlockVector> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    for k in 0..max_basis {
        let mut w = op.apply(&basis[k])?;
        // classical Gram-Schmidt against the whole basis, twice
        let bw = sys.apply_dm(&w)?;
        let alpha = basis[k].dot(&bw);
        for vi in &basis {
            let c = vi.dot(&bw);
            w.axpy(-c, vi);
        }
        let bw2 = sys.apply_dm(&w)?;
        for vi in &basis {
            let c = vi.dot(&bw2);
            w.axpy(-c, vi);
        }
        alphas.push(alpha);

        let beta = sys.dm_norm(&w);
        let (theta, last) = max_ritz(&alphas, &betas);
        let scale = theta.abs().max(1.0);
        if beta * last.abs() <= tol * scale || beta <= 1e-14 * scale {
            return Ok(theta);
        }
        betas.push(beta);
        w.scale(1.0 / beta);
        basis.push(w);
    }
    Err(Error::NoConvergence {
        what: "Lanczos extreme eigenvalue iteration",
        iterations: max_basis,
    })
}

/// Largest Ritz value of the current tridiagonal matrix and the magnitude of
/// the last component of its eigenvector (the residual factor).
fn max_ritz(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    if k == 1 {
        return (alphas[0], 1.0);
    }
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let mut idx = 0;
    for i in 1..k {
        if eig.eigenvalues[i] > eig.eigenvalues[idx] {
            idx = i;
        }
    }
    (eig.eigenvalues[idx], eig.eigenvectors[(k - 1, idx)])
}

/// Dense generalized spectrum of the preconditioned saddle operator; requires
/// the exact-W preconditioner so the pencil is symmetric definite.
pub fn precond_saddle_spectrum(
    saddle: &SaddleSystem,
    precond: &SaddlePreconditioner,
) -> Result<SpectrumReport> {
    if precond.mode() != WMode::Exact {
        return Err(Error::NotExactW);
    }
    let sys = saddle.system();
    let m = sys.total_dim();
    if m > DENSE_LIMIT {
        return Err(Error::TooLargeForDense {
            size: m,
            limit: DENSE_LIMIT,
        });
    }
    let t = dense::dense_saddle(sys, saddle.lambda(), saddle.variant());
    let p = dense::dense_precond(sys, saddle.lambda(), saddle.variant(), true)?;
    let eigenvalues = symmetric_definite_eigenvalues(&t, &p)?;
    Ok(SpectrumReport::from_eigenvalues(
        SpectrumKind::PrecondSaddle,
        eigenvalues,
    ))
}

/// Parameters for [`verify_spectral_claims`].
#[derive(Debug, Clone, Copy)]
pub struct ClaimParams {
    pub lambda: f64,
    /// A-priori bound on the spectral radius shift; enables the inclusion
    /// check on reduced spectra.
    pub gamma: Option<f64>,
    pub n_x: usize,
    pub m: usize,
}

/// Named pass/fail checks with measured margins. Reduced reports check the
/// interval inclusion and the count of eigenvalues above `lambda`; saddle
/// reports check the three-cluster structure.
pub fn verify_spectral_claims(report: &SpectrumReport, params: &ClaimParams) -> Vec<ClaimCheck> {
    let tol = report.cluster_tolerance;
    let mut checks = Vec::new();
    match report.kind {
        SpectrumKind::Reduced => {
            if let Some(gamma) = params.gamma {
                let lo = params.lambda - tol;
                let hi = params.lambda + gamma + tol;
                let min = report.min_eigenvalue();
                let max = report.max_eigenvalue();
                let margin = (min - lo).min(hi - max);
                checks.push(ClaimCheck {
                    name: "reduced_inclusion".into(),
                    passed: margin >= 0.0,
                    margin,
                    detail: format!(
                        "eigenvalues in [{min:.6e}, {max:.6e}], required [{lo:.6e}, {hi:.6e}]"
                    ),
                });
            }
            let above = report
                .eigenvalues
                .iter()
                .filter(|&&e| e > params.lambda + tol)
                .count();
            checks.push(ClaimCheck {
                name: "reduced_rank_count".into(),
                passed: above <= params.n_x,
                margin: params.n_x as f64 - above as f64,
                detail: format!(
                    "{above} eigenvalues exceed lambda + {tol:.1e}, limit {}",
                    params.n_x
                ),
            });
        }
        SpectrumKind::PrecondSaddle => {
            let expect_one = 2 * params.m;
            let expect_minus = params.m - params.n_x;
            let expect_interval = params.n_x;
            checks.extend(saddle_cluster_checks(
                report,
                params.lambda,
                expect_one,
                expect_minus,
                expect_interval,
            ));
        }
        SpectrumKind::GenericSaddle => {
            // generic reports are verified through verify_generic_claims,
            // which knows the instance's (n, m, r)
        }
    }
    checks
}

fn saddle_cluster_checks(
    report: &SpectrumReport,
    lambda: f64,
    expect_one: usize,
    expect_minus: usize,
    expect_interval: usize,
) -> Vec<ClaimCheck> {
    let tol = report.cluster_tolerance;
    let mut checks = Vec::new();

    let at_one = report.multiplicity_near(1.0, tol);
    checks.push(ClaimCheck {
        name: "saddle_multiplicity_one".into(),
        passed: at_one == expect_one,
        margin: 0.0,
        detail: format!("multiplicity(1) = {at_one}, expected {expect_one} at tol {tol:.1e}"),
    });

    let at_minus = report.multiplicity_near(-1.0, tol);
    checks.push(ClaimCheck {
        name: "saddle_multiplicity_minus_one".into(),
        passed: at_minus == expect_minus,
        margin: 0.0,
        detail: format!("multiplicity(-1) = {at_minus}, expected {expect_minus} at tol {tol:.1e}"),
    });

    let upper = -1.0 / (1.0 + lambda);
    let rest: Vec<f64> = report
        .eigenvalues
        .iter()
        .cloned()
        .filter(|&e| (e - 1.0).abs() > tol && (e + 1.0).abs() > tol)
        .collect();
    let mut margin = f64::INFINITY;
    let mut inside = 0usize;
    for &e in &rest {
        let m = (e - (-1.0)).min(upper - e);
        margin = margin.min(m);
        if m >= INTERVAL_MARGIN {
            inside += 1;
        }
    }
    if rest.is_empty() {
        margin = f64::INFINITY;
    }
    checks.push(ClaimCheck {
        name: "saddle_interval".into(),
        passed: rest.len() == expect_interval && inside == rest.len(),
        margin: if margin.is_finite() { margin } else { 1.0 },
        detail: format!(
            "{} remaining eigenvalues, expected {expect_interval} strictly inside (-1, {upper:.6}); worst margin {margin:.3e}",
            rest.len()
        ),
    });
    checks
}

/// A random instance of the generic saddle form: `A1` positive semidefinite
/// with prescribed nullity `r`, `A2` SPD, `B1` full rank, `B2` invertible.
#[derive(Debug, Clone)]
pub struct GenericSaddle {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    pub rank_deficiency: usize,
}

impl GenericSaddle {
    pub fn random(n: usize, m: usize, rank_deficiency: usize, lambda: f64, seed: u64) -> Self {
        assert!(rank_deficiency <= n, "nullity cannot exceed dimension");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_mat =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        // PSD with nullity exactly r (almost surely)
        let g = rand_mat(n, n - rank_deficiency);
        let a1 = &g * g.transpose();
        // SPD
        let h = rand_mat(m, m);
        let a2 = &h * h.transpose() + DMatrix::identity(m, m) * 0.1;
        let b1 = rand_mat(m, n);
        // invertible almost surely; nudge the diagonal to keep conditioning sane
        let b2 = rand_mat(m, m) + DMatrix::identity(m, m);
        Self {
            a1,
            a2,
            b1,
            b2,
            lambda,
            n,
            m,
            rank_deficiency,
        }
    }

    pub fn operator(&self) -> DMatrix<f64> {
        crate::saddle::dense_saddle_from_parts(&self.a1, &self.a2, &self.b1, &self.b2, self.lambda)
    }

    pub fn preconditioner(&self) -> Result<DMatrix<f64>> {
        let p = crate::saddle::dense_precond_from_parts(
            &self.a1,
            &self.a2,
            &self.b1,
            &self.b2,
            self.lambda,
        )
        .ok_or_else(|| Error::FactorizationFailed {
            detail: "B2 or A2 not invertible in generic instance".into(),
        })?;
        Ok((&p + &p.transpose()) * 0.5)
    }

    /// Dense spectrum of `P^{-1} A` through the symmetric-definite pencil.
    pub fn spectrum(&self) -> Result<SpectrumReport> {
        let a = self.operator();
        let p = self.preconditioner()?;
        let eigenvalues = symmetric_definite_eigenvalues(&a, &p)?;
        Ok(SpectrumReport::from_eigenvalues(
            SpectrumKind::GenericSaddle,
            eigenvalues,
        ))
    }
}

/// Cluster checks for a generic instance: eigenvalue 1 with multiplicity
/// `n + m`, eigenvalue -1 with multiplicity `r`, remaining `m - r` inside
/// `(-1, -1/(1+lambda))`.
pub fn verify_generic_claims(report: &SpectrumReport, inst: &GenericSaddle) -> Vec<ClaimCheck> {
    saddle_cluster_checks(
        report,
        inst.lambda,
        inst.n + inst.m,
        inst.rank_deficiency,
        inst.m - inst.rank_deficiency,
    )
}

/// Convenience: all-in-one verification of the largest reduced eigenvalue
/// against the dense route. Returns (dense max, matrix-free max).
pub fn cross_check_max_eig(op: &ReducedOperator, tol: f64) -> Result<(f64, f64)> {
    let report = dense_reduced_spectrum(op)?;
    let lanczos = max_eig_reduced(op, tol)?;
    Ok((report.max_eigenvalue(), lanczos))
}
