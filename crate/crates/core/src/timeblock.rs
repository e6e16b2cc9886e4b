//! Time grid, block operators and the forward/backward sweeps.
//!
//! With a fixed spatial mesh, mass matrix `M` and stiffness `A = alpha*K + c*M`,
//! the implicit Euler scheme couples the per-interval coefficient vectors
//! through the block lower bidiagonal operator
//!
//! ```text
//! K_blk = diag(S_j) - subdiag((1/tau_j) M),   S_j = (1/tau_j) M + A_j,
//! ```
//!
//! together with `M_blk = diag(M)` and the step-size scaling `D = diag(tau_j I)`.
//! The forward sweep solves `K_blk y = M_blk u + ((1/tau_1) y0_load, 0, ...)`,
//! the backward sweep the transposed system; both reuse one factorization of
//! `S_j` per distinct `(tau_j, alpha_j, c_j)`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{SpatialDiscretization, SymSparseMatrix};

#[derive(Debug, Clone)]
pub struct TimeGrid {
    t_final: f64,
    taus: Vec<f64>,
    times: Vec<f64>,
}

/// Uniform grid `tau_n = T/N` unless explicit step sizes are supplied.
pub fn build_time_grid(t_final: f64, n_steps: usize, taus: Option<Vec<f64>>) -> Result<TimeGrid> {
    if !(t_final > 0.0) {
        return Err(Error::NonPositive {
            field: "T",
            value: t_final,
        });
    }
    if n_steps == 0 {
        return Err(Error::NonPositive {
            field: "N",
            value: 0.0,
        });
    }
    let taus = match taus {
        Some(t) => {
            if t.len() != n_steps {
                return Err(Error::SizeMismatch {
                    what: "time step list",
                    expected: n_steps,
                    actual: t.len(),
                });
            }
            for (i, &tau) in t.iter().enumerate() {
                if !(tau > 0.0) {
                    return Err(Error::NonPositiveStep {
                        index: i,
                        value: tau,
                    });
                }
            }
            let sum: f64 = t.iter().sum();
            if (sum - t_final).abs() > 1e-12 * t_final {
                return Err(Error::BadStepSum {
                    sum,
                    expected: t_final,
                });
            }
            t
        }
        None => vec![t_final / n_steps as f64; n_steps],
    };
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    let mut acc = 0.0;
    for &tau in &taus {
        acc += tau;
        times.push(acc);
    }
    Ok(TimeGrid {
        t_final,
        taus,
        times,
    })
}

impl TimeGrid {
    pub fn n_steps(&self) -> usize {
        self.taus.len()
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.taus[n]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Node time t_n, with t_0 = 0 and t_N = T.
    pub fn time(&self, n: usize) -> f64 {
        self.times[n]
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau_max(&self) -> f64 {
        self.taus.iter().cloned().fold(0.0, f64::max)
    }
}

/// A time-indexed sequence of spatial coefficient vectors (one block per
/// interval I_n, n = 1..N).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    n_blocks: usize,
    block_len: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(n_blocks: usize, block_len: usize) -> Self {
        Self {
            n_blocks,
            block_len,
            data: vec![0.0; n_blocks * block_len],
        }
    }

    pub fn from_fn(n_blocks: usize, block_len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut v = Self::zeros(n_blocks, block_len);
        for n in 0..n_blocks {
            for i in 0..block_len {
                v.data[n * block_len + i] = f(n, i);
            }
        }
        v
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn total_len(&self) -> usize {
        self.data.len()
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[n * self.block_len..(n + 1) * self.block_len]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.block_len..(n + 1) * self.block_len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_slice(n_blocks: usize, block_len: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n_blocks * block_len);
        Self {
            n_blocks,
            block_len,
            data: data.to_vec(),
        }
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &BlockVector) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    /// Plain Euclidean dot product (unweighted).
    pub fn dot(&self, other: &BlockVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Text export: one row per spatial index, one column per time step.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# block vector: {} steps, {} rows", self.n_blocks, self.block_len)?;
        for i in 0..self.block_len {
            let row: Vec<String> = (0..self.n_blocks)
                .map(|n| format!("{:.17e}", self.block(n)[i]))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// Parse the format written by [`BlockVector::write_table`].
    pub fn read_table<R: BufRead>(r: R) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let row = row.map_err(|e| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad number in block vector table: {e}"),
                ))
            })?;
            rows.push(row);
        }
        let block_len = rows.len();
        let n_blocks = rows.first().map(|r| r.len()).unwrap_or(0);
        if block_len == 0 || n_blocks == 0 {
            return Err(Error::SizeMismatch {
                what: "block vector table",
                expected: 1,
                actual: 0,
            });
        }
        let mut v = BlockVector::zeros(n_blocks, block_len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_blocks {
                return Err(Error::SizeMismatch {
                    what: "block vector table row",
                    expected: n_blocks,
                    actual: row.len(),
                });
            }
            for n in 0..n_blocks {
                v.block_mut(n)[i] = row[n];
            }
        }
        Ok(v)
    }
}

/// Per-interval coefficient values; a single pair applies to every interval.
#[derive(Debug, Clone)]
pub struct Coefficients {
    alphas: Vec<f64>,
    cs: Vec<f64>,
}

impl Coefficients {
    pub fn constant(alpha: f64, c: f64) -> Self {
        Self {
            alphas: vec![alpha],
            cs: vec![c],
        }
    }

    pub fn per_interval(alphas: Vec<f64>, cs: Vec<f64>) -> Self {
        Self { alphas, cs }
    }

    fn at(&self, n: usize) -> (f64, f64) {
        let a = if self.alphas.len() == 1 {
            self.alphas[0]
        } else {
            self.alphas[n]
        };
        let c = if self.cs.len() == 1 { self.cs[0] } else { self.cs[n] };
        (a, c)
    }

    fn check(&self, n_steps: usize) -> Result<()> {
        for v in [&self.alphas, &self.cs] {
            if v.len() != 1 && v.len() != n_steps {
                return Err(Error::SizeMismatch {
                    what: "per-interval coefficients",
                    expected: n_steps,
                    actual: v.len(),
                });
            }
        }
        if let Some(&a) = self.alphas.iter().find(|&&a| a < 0.0) {
            return Err(Error::NegativeAlpha { value: a });
        }
        Ok(())
    }
}

struct StepMatrices {
    /// A_n = alpha_n * K + c_n * M
    a: Arc<SymSparseMatrix>,
    /// S_n = (1/tau_n) M + A_n, with its lazily cached factorization
    s: Arc<SymSparseMatrix>,
}

/// Block operators for one (mesh, time grid, coefficients) combination.
/// Immutable after assembly; sweeps over distinct right-hand sides may run
/// concurrently against a shared instance.
pub struct BlockSystem {
    mass: Arc<SymSparseMatrix>,
    grid: TimeGrid,
    n_x: usize,
    steps: Vec<Arc<StepMatrices>>,
    s_factor_count: AtomicUsize,
}

/// Assemble the block system; per-step matrices are shared between steps with
/// identical `(tau, alpha, c)` and factorized lazily, once each.
pub fn assemble_block_system(
    disc: &SpatialDiscretization,
    grid: &TimeGrid,
    coeffs: &Coefficients,
) -> Result<BlockSystem> {
    coeffs.check(grid.n_steps())?;
    let n_x = disc.n_x();
    let mut distinct: HashMap<(u64, u64, u64), Arc<StepMatrices>> = HashMap::new();
    let mut a_cache: HashMap<(u64, u64), Arc<SymSparseMatrix>> = HashMap::new();
    let mut steps = Vec::with_capacity(grid.n_steps());
    for n in 0..grid.n_steps() {
        let (alpha, c) = coeffs.at(n);
        let tau = grid.tau(n);
        let key = (tau.to_bits(), alpha.to_bits(), c.to_bits());
        let entry = match distinct.get(&key) {
            Some(e) => e.clone(),
            None => {
                let a = match a_cache.get(&(alpha.to_bits(), c.to_bits())) {
                    Some(a) => a.clone(),
                    None => {
                        if alpha < 0.0 {
                            return Err(Error::NegativeAlpha { value: alpha });
                        }
                        let a = Arc::new(disc.laplace().add_scaled(alpha, disc.mass(), c));
                        a_cache.insert((alpha.to_bits(), c.to_bits()), a.clone());
                        a
                    }
                };
                let s = Arc::new(disc.mass().add_scaled(1.0 / tau, &a, 1.0));
                let e = Arc::new(StepMatrices { a, s });
                distinct.insert(key, e.clone());
                e
            }
        };
        steps.push(entry);
    }
    Ok(BlockSystem {
        mass: disc.mass().clone(),
        grid: grid.clone(),
        n_x,
        steps,
        s_factor_count: AtomicUsize::new(0),
    })
}

impl BlockSystem {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Total unknown count per variable, m = N * n_x.
    pub fn total_dim(&self) -> usize {
        self.n_steps() * self.n_x
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mass(&self) -> &SymSparseMatrix {
        &self.mass
    }

    pub fn step_matrix(&self, n: usize) -> &SymSparseMatrix {
        &self.steps[n].s
    }

    pub fn step_stiffness(&self, n: usize) -> &SymSparseMatrix {
        &self.steps[n].a
    }

    fn step_factor(&self, n: usize) -> Result<&crate::fem::BandedLdlt> {
        let s = &self.steps[n].s;
        if s.has_factor() {
            return s.factor();
        }
        let f = s.factor()?;
        self.s_factor_count.fetch_add(1, Ordering::Relaxed);
        Ok(f)
    }

    /// Number of per-step factorizations performed so far; for a uniform grid
    /// with constant coefficients this stays at one no matter how many steps
    /// or sweeps run.
    pub fn factorization_count(&self) -> usize {
        self.s_factor_count.load(Ordering::Relaxed)
    }

    fn check_blocks(&self, v: &BlockVector, what: &'static str) -> Result<()> {
        if v.n_blocks() != self.n_steps() || v.block_len() != self.n_x {
            return Err(Error::SizeMismatch {
                what,
                expected: self.total_dim(),
                actual: v.total_len(),
            });
        }
        Ok(())
    }

    /// y -> K_blk y (block lower bidiagonal multiply).
    pub fn apply_k(&self, y: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(y, "apply_k input")?;
        let n_steps = self.n_steps();
        let mut out = BlockVector::zeros(n_steps, self.n_x);
        let mut tmp = vec![0.0; self.n_x];
        for n in 0..n_steps {
            self.steps[n].s.matvec(y.block(n), out.block_mut(n));
            if n > 0 {
                self.mass.matvec(y.block(n - 1), &mut tmp);
                let inv_tau = 1.0 / self.grid.tau(n);
                for (o, t) in out.block_mut(n).iter_mut().zip(&tmp) {
                    *o -= inv_tau * t;
                }
            }
        }
        Ok(out)
    }

    /// p -> K_blk^T p (block upper bidiagonal multiply, exact transpose).
    pub fn apply_kt(&self, p: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(p, "apply_kt input")?;
        let n_steps = self.n_steps();
        let mut out = BlockVector::zeros(n_steps, self.n_x);
        let mut tmp = vec![0.0; self.n_x];
        for n in 0..n_steps {
            self.steps[n].s.matvec(p.block(n), out.block_mut(n));
            if n + 1 < n_steps {
                self.mass.matvec(p.block(n + 1), &mut tmp);
                let inv_tau = 1.0 / self.grid.tau(n + 1);
                for (o, t) in out.block_mut(n).iter_mut().zip(&tmp) {
                    *o -= inv_tau * t;
                }
            }
        }
        Ok(out)
    }

    /// u -> M_blk u (block diagonal mass multiply).
    pub fn apply_m(&self, u: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(u, "apply_m input")?;
        let mut out = BlockVector::zeros(self.n_steps(), self.n_x);
        for n in 0..self.n_steps() {
            self.mass.matvec(u.block(n), out.block_mut(n));
        }
        Ok(out)
    }

    /// u -> D M_blk u; the discrete L^2(Q) Riesz map.
    pub fn apply_dm(&self, u: &BlockVector) -> Result<BlockVector> {
        let mut out = self.apply_m(u)?;
        for n in 0..self.n_steps() {
            let tau = self.grid.tau(n);
            for x in out.block_mut(n) {
                *x *= tau;
            }
        }
        Ok(out)
    }

    /// Discrete L^2(Q) inner product, (x, y) = sum_n tau_n x_n^T M y_n.
    pub fn dm_inner(&self, x: &BlockVector, y: &BlockVector) -> f64 {
        debug_assert_eq!(x.total_len(), y.total_len());
        let mut tmp = vec![0.0; self.n_x];
        let mut acc = 0.0;
        for n in 0..self.n_steps() {
            self.mass.matvec(y.block(n), &mut tmp);
            let xn = x.block(n);
            let dot: f64 = xn.iter().zip(&tmp).map(|(a, b)| a * b).sum();
            acc += self.grid.tau(n) * dot;
        }
        acc
    }

    pub fn dm_norm(&self, x: &BlockVector) -> f64 {
        self.dm_inner(x, x).max(0.0).sqrt()
    }

    /// Spatial L^2(Omega) inner product of two coefficient vectors.
    pub fn m_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let tmp = self.mass.matvec_alloc(y);
        x.iter().zip(&tmp).map(|(a, b)| a * b).sum()
    }

    pub fn m_norm(&self, x: &[f64]) -> f64 {
        self.m_inner(x, x).max(0.0).sqrt()
    }

    /// Forward state sweep: S_n y_n = (1/tau_n) M y_{n-1} + M u_n, with the
    /// assembled initial load entering the first step as (1/tau_1) y0_load.
    pub fn solve_forward(&self, u: &BlockVector, y0_load: &[f64]) -> Result<BlockVector> {
        self.check_blocks(u, "solve_forward control")?;
        if y0_load.len() != self.n_x {
            return Err(Error::SizeMismatch {
                what: "initial load",
                expected: self.n_x,
                actual: y0_load.len(),
            });
        }
        let n_steps = self.n_steps();
        let mut y = BlockVector::zeros(n_steps, self.n_x);
        let mut rhs = vec![0.0; self.n_x];
        let mut tmp = vec![0.0; self.n_x];
        for n in 0..n_steps {
            let inv_tau = 1.0 / self.grid.tau(n);
            self.mass.matvec(u.block(n), &mut rhs);
            if n == 0 {
                for (r, &l) in rhs.iter_mut().zip(y0_load) {
                    *r += inv_tau * l;
                }
            } else {
                self.mass.matvec(y.block(n - 1), &mut tmp);
                for (r, &t) in rhs.iter_mut().zip(&tmp) {
                    *r += inv_tau * t;
                }
            }
            let f = self.step_factor(n)?;
            f.solve_in_place(&mut rhs);
            y.block_mut(n).copy_from_slice(&rhs);
        }
        Ok(y)
    }

    /// Solve K_blk x = rhs by block forward substitution.
    pub fn solve_k_system(&self, rhs: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(rhs, "solve_k rhs")?;
        let n_steps = self.n_steps();
        let mut x = BlockVector::zeros(n_steps, self.n_x);
        let mut tmp = vec![0.0; self.n_x];
        let mut work = vec![0.0; self.n_x];
        for n in 0..n_steps {
            work.copy_from_slice(rhs.block(n));
            if n > 0 {
                self.mass.matvec(x.block(n - 1), &mut tmp);
                let inv_tau = 1.0 / self.grid.tau(n);
                for (w, &t) in work.iter_mut().zip(&tmp) {
                    *w += inv_tau * t;
                }
            }
            let f = self.step_factor(n)?;
            f.solve_in_place(&mut work);
            x.block_mut(n).copy_from_slice(&work);
        }
        Ok(x)
    }

    /// Solve K_blk^T x = rhs by block backward substitution.
    pub fn solve_kt_system(&self, rhs: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(rhs, "solve_kt rhs")?;
        let n_steps = self.n_steps();
        let mut x = BlockVector::zeros(n_steps, self.n_x);
        let mut tmp = vec![0.0; self.n_x];
        let mut work = vec![0.0; self.n_x];
        for n in (0..n_steps).rev() {
            work.copy_from_slice(rhs.block(n));
            if n + 1 < n_steps {
                self.mass.matvec(x.block(n + 1), &mut tmp);
                let inv_tau = 1.0 / self.grid.tau(n + 1);
                for (w, &t) in work.iter_mut().zip(&tmp) {
                    *w += inv_tau * t;
                }
            }
            let f = self.step_factor(n)?;
            f.solve_in_place(&mut work);
            x.block_mut(n).copy_from_slice(&work);
        }
        Ok(x)
    }

    /// Backward adjoint sweep: S_j p_j = (1/tau_j) M p_{j+1} + source_j for
    /// j = N..1, starting from the terminal coefficient vector p_{N+1}.
    /// The optional distributed source enables the tracking objective.
    pub fn solve_backward(
        &self,
        terminal: &[f64],
        source: Option<&BlockVector>,
    ) -> Result<BlockVector> {
        if terminal.len() != self.n_x {
            return Err(Error::SizeMismatch {
                what: "terminal value",
                expected: self.n_x,
                actual: terminal.len(),
            });
        }
        if let Some(src) = source {
            self.check_blocks(src, "backward source")?;
        }
        let n_steps = self.n_steps();
        let mut p = BlockVector::zeros(n_steps, self.n_x);
        let mut next = terminal.to_vec();
        let mut rhs = vec![0.0; self.n_x];
        for j in (0..n_steps).rev() {
            let inv_tau = 1.0 / self.grid.tau(j);
            self.mass.matvec(&next, &mut rhs);
            for r in rhs.iter_mut() {
                *r *= inv_tau;
            }
            if let Some(src) = source {
                for (r, &s) in rhs.iter_mut().zip(src.block(j)) {
                    *r += s;
                }
            }
            let f = self.step_factor(j)?;
            f.solve_in_place(&mut rhs);
            p.block_mut(j).copy_from_slice(&rhs);
            next.copy_from_slice(&rhs);
        }
        Ok(p)
    }
}

/// Closed-form bound `gamma` with `||y_N||^2 <= gamma ||u||^2_{L^2(Q)}`
/// (zero initial data), valid in the stated small-step regime. The branch is
/// selected by the sign of `2 c0 + 1/T`; `c0` is a lower bound for the
/// reaction coefficient.
pub fn gamma_bound(c0: f64, t_final: f64, tau_max: f64) -> Result<f64> {
    if !(t_final > 0.0) {
        return Err(Error::NonPositive {
            field: "T",
            value: t_final,
        });
    }
    if !(tau_max > 0.0) {
        return Err(Error::NonPositiveStep {
            index: 0,
            value: tau_max,
        });
    }
    if 2.0 * c0 > -1.0 / t_final {
        let limit = 0.001 * t_final;
        if tau_max > limit {
            return Err(Error::StepTooLarge { tau_max, limit });
        }
        Ok(3.0 * t_final / (1.0 + 2.0 * c0 * t_final))
    } else {
        let limit = 0.001 * t_final / (1.0 - 2.0 * c0 * t_final);
        if tau_max > limit {
            return Err(Error::StepTooLarge { tau_max, limit });
        }
        Ok(3.0 * t_final * (-2.002 * c0 * t_final).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_interval_mesh;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn small_system(n_steps: usize, n_elems: usize, alpha: f64, c: f64) -> BlockSystem {
        let disc = SpatialDiscretization::new(build_interval_mesh(n_elems).unwrap()).unwrap();
        let grid = build_time_grid(1.0, n_steps, None).unwrap();
        assemble_block_system(&disc, &grid, &Coefficients::constant(alpha, c)).unwrap()
    }

    /// Dense block operator assembled independently from the definition:
    /// S_j = (1/tau_j) M + alpha K + c M built directly from the spatial
    /// matrices, not from the system's cached per-step operators.
    fn dense_k_oracle(
        disc: &SpatialDiscretization,
        grid: &TimeGrid,
        alpha: f64,
        c: f64,
    ) -> DMatrix<f64> {
        let nx = disc.n_x();
        let n = grid.n_steps();
        let mass = disc.mass().to_dense();
        let stiff = disc.laplace().to_dense();
        let m = n * nx;
        let mut k = DMatrix::zeros(m, m);
        for j in 0..n {
            let s = &mass * (1.0 / grid.tau(j) + c) + &stiff * alpha;
            for r in 0..nx {
                for col in 0..nx {
                    k[(j * nx + r, j * nx + col)] = s[(r, col)];
                    if j > 0 {
                        k[(j * nx + r, (j - 1) * nx + col)] = -mass[(r, col)] / grid.tau(j);
                    }
                }
            }
        }
        k
    }

    fn dense_k_for(sys: &BlockSystem, n_elems: usize, alpha: f64, c: f64) -> DMatrix<f64> {
        let disc = SpatialDiscretization::new(build_interval_mesh(n_elems).unwrap()).unwrap();
        dense_k_oracle(&disc, sys.grid(), alpha, c)
    }

    fn random_bv(n: usize, nx: usize, seed: u64) -> BlockVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        BlockVector::from_fn(n, nx, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn time_grid_uniform_and_custom() {
        let g = build_time_grid(1.0, 4, None).unwrap();
        assert_eq!(g.taus(), &[0.25; 4]);
        assert_eq!(g.time(4), 1.0);

        let g = build_time_grid(1.0, 1, None).unwrap();
        assert_eq!(g.taus(), &[1.0]);

        let g = build_time_grid(1.0, 3, Some(vec![0.5, 0.25, 0.25])).unwrap();
        assert_eq!(g.tau(0), 0.5);

        assert!(matches!(
            build_time_grid(1.0, 2, Some(vec![0.5, 0.4])),
            Err(Error::BadStepSum { .. })
        ));
        assert!(matches!(
            build_time_grid(1.0, 2, Some(vec![1.5, -0.5])),
            Err(Error::NonPositiveStep { .. })
        ));
    }

    #[test]
    fn single_step_system_has_no_subdiagonal() {
        let sys = small_system(1, 3, 1.0, 1.0);
        let k = dense_k_for(&sys, 3, 1.0, 1.0);
        let s = sys.step_matrix(0).to_dense();
        assert!((k - s).norm() < 1e-14);
    }

    #[test]
    fn apply_k_matches_dense_oracle() {
        let sys = small_system(3, 3, 1.0, 1.0); // n_x = 4
        let k = dense_k_for(&sys, 3, 1.0, 1.0);
        let y = random_bv(3, 4, 11);
        let out = sys.apply_k(&y).unwrap();
        let expect = &k * DVector::from_column_slice(y.as_slice());
        let err = (DVector::from_column_slice(out.as_slice()) - &expect).norm();
        assert!(err <= 1e-13 * expect.norm().max(1.0), "err {err}");

        let p = random_bv(3, 4, 12);
        let out_t = sys.apply_kt(&p).unwrap();
        let expect_t = k.transpose() * DVector::from_column_slice(p.as_slice());
        let err_t = (DVector::from_column_slice(out_t.as_slice()) - &expect_t).norm();
        assert!(err_t <= 1e-13 * expect_t.norm().max(1.0));
    }

    #[test]
    fn apply_k_integrator_case() {
        // alpha = c = 0: (K y)_1 = (1/tau) M w, (K y)_n = 0 for constant-in-time y
        let sys = small_system(4, 4, 0.0, 0.0);
        let w: Vec<f64> = (0..5).map(|i| 1.0 + i as f64).collect();
        let y = BlockVector::from_fn(4, 5, |_, i| w[i]);
        let out = sys.apply_k(&y).unwrap();
        let mw = sys.mass().matvec_alloc(&w);
        for i in 0..5 {
            assert!((out.block(0)[i] - 4.0 * mw[i]).abs() < 1e-13);
        }
        for n in 1..4 {
            assert!(out.block(n).iter().all(|&v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn transpose_adjointness() {
        let sys = small_system(5, 6, 0.7, -0.3);
        let x = random_bv(5, 7, 1);
        let z = random_bv(5, 7, 2);
        let kx = sys.apply_k(&x).unwrap();
        let ktz = sys.apply_kt(&z).unwrap();
        let lhs = kx.dot(&z);
        let rhs = x.dot(&ktz);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn forward_zero_data_gives_zero() {
        let sys = small_system(3, 4, 1.0, 1.0);
        let u = BlockVector::zeros(3, 5);
        let y = sys.solve_forward(&u, &vec![0.0; 5]).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_integrator_is_exact_for_constant_control() {
        // alpha = c = 0, u = 1, y0 = 0: implicit Euler gives y_n = n tau exactly
        let sys = small_system(8, 5, 0.0, 0.0);
        let u = BlockVector::from_fn(8, 6, |_, _| 1.0);
        let y = sys.solve_forward(&u, &vec![0.0; 6]).unwrap();
        for n in 0..8 {
            let expect = (n + 1) as f64 * 0.125;
            for i in 0..6 {
                assert!((y.block(n)[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_dense_solve() {
        let sys = small_system(4, 4, 1.0, 1.0); // n_x = 5
        let k = dense_k_for(&sys, 4, 1.0, 1.0);
        let u = random_bv(4, 5, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y0_load: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let y = sys.solve_forward(&u, &y0_load).unwrap();

        let mu = sys.apply_m(&u).unwrap();
        let mut rhs = DVector::from_column_slice(mu.as_slice());
        for i in 0..5 {
            rhs[i] += y0_load[i] / sys.grid().tau(0);
        }
        let dense = k.lu().solve(&rhs).unwrap();
        let err = (DVector::from_column_slice(y.as_slice()) - &dense).norm();
        assert!(err <= 1e-11 * dense.norm(), "err {err}");
    }

    #[test]
    fn backward_zero_terminal_gives_zero() {
        let sys = small_system(3, 4, 1.0, -0.5);
        let p = sys.solve_backward(&vec![0.0; 5], None).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_integrator_propagates_terminal_unchanged() {
        let sys = small_system(6, 4, 0.0, 0.0);
        let g: Vec<f64> = (0..5).map(|i| (i as f64) - 2.0).collect();
        let p = sys.solve_backward(&g, None).unwrap();
        for j in 0..6 {
            for i in 0..5 {
                assert!((p.block(j)[i] - g[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_dense_transpose_solve() {
        let sys = small_system(4, 4, 1.0, 1.0);
        let k = dense_k_for(&sys, 4, 1.0, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let p = sys.solve_backward(&g, None).unwrap();

        // K^T (D p) = (0, ..., 0, M g): solve densely and compare
        let mass = sys.mass().to_dense();
        let mut rhs = DVector::zeros(20);
        let mg = &mass * DVector::from_column_slice(&g);
        for i in 0..5 {
            rhs[15 + i] = mg[i];
        }
        let q = k.transpose().lu().solve(&rhs).unwrap();
        for j in 0..4 {
            let tau = sys.grid().tau(j);
            for i in 0..5 {
                let expect = q[j * 5 + i] / tau;
                assert!(
                    (p.block(j)[i] - expect).abs() <= 1e-11 * expect.abs().max(1.0),
                    "block {j} entry {i}"
                );
            }
        }
    }

    #[test]
    fn forward_residual_is_small() {
        let sys = small_system(6, 8, 2.0, -1.0);
        let u = random_bv(6, 9, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let y0_load: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = sys.solve_forward(&u, &y0_load).unwrap();

        let ky = sys.apply_k(&y).unwrap();
        let mut rhs = sys.apply_m(&u).unwrap();
        for (r, &l) in rhs.block_mut(0).iter_mut().zip(&y0_load) {
            *r += l / sys.grid().tau(0);
        }
        let mut diff = ky.clone();
        diff.axpy(-1.0, &rhs);
        let rel = diff.dot(&diff).sqrt() / rhs.dot(&rhs).sqrt();
        assert!(rel <= 1e-10, "relative residual {rel}");
    }

    #[test]
    fn discrete_duality_of_sweeps() {
        // (g, y_N(u, 0))_M = sum_n tau_n (p_n, u_n)_M with p from terminal g
        let sys = small_system(5, 7, 1.3, 0.4);
        let u = random_bv(5, 8, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let y = sys.solve_forward(&u, &vec![0.0; 8]).unwrap();
        let p = sys.solve_backward(&g, None).unwrap();

        let lhs = sys.m_inner(&g, y.block(4));
        let rhs: f64 = (0..5)
            .map(|n| sys.grid().tau(n) * sys.m_inner(p.block(n), u.block(n)))
            .sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn factorizations_are_reused_on_uniform_grids() {
        let sys = small_system(50, 6, 1.0, 1.0);
        assert_eq!(sys.factorization_count(), 0);
        let u = random_bv(50, 7, 10);
        let _ = sys.solve_forward(&u, &vec![0.0; 7]).unwrap();
        let _ = sys.solve_backward(&vec![1.0; 7], None).unwrap();
        assert_eq!(sys.factorization_count(), 1);
    }

    #[test]
    fn d_and_m_commute() {
        let sys = small_system(4, 5, 1.0, 2.0);
        let x = random_bv(4, 6, 11);
        // D (M x)
        let mut dmx = sys.apply_m(&x).unwrap();
        for n in 0..4 {
            let tau = sys.grid().tau(n);
            for v in dmx.block_mut(n) {
                *v *= tau;
            }
        }
        // M (D x)
        let mut dx = x.clone();
        for n in 0..4 {
            let tau = sys.grid().tau(n);
            for v in dx.block_mut(n) {
                *v *= tau;
            }
        }
        let mdx = sys.apply_m(&dx).unwrap();
        for (a, b) in dmx.as_slice().iter().zip(mdx.as_slice()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_bound_reference_values() {
        // 2 c0 T > -1: gamma = 3T / (1 + 2 c0 T)
        let g = gamma_bound(1.0, 1.0, 1e-4).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let g = gamma_bound(0.0, 1.0, 1e-4).unwrap();
        assert!((g - 3.0).abs() < 1e-15);
        // otherwise gamma = 3T exp(-2.002 c0 T)
        let g = gamma_bound(-1.0, 1.0, 1e-4).unwrap();
        assert!((g - 3.0 * (2.002f64).exp()).abs() < 1e-12);
        assert!((g - 22.21).abs() < 0.01);
    }

    #[test]
    fn gamma_bound_rejects_large_steps() {
        assert!(matches!(
            gamma_bound(1.0, 1.0, 0.01),
            Err(Error::StepTooLarge { .. })
        ));
        // second branch limit is tighter: 0.001 T / (1 - 2 c0 T)
        assert!(matches!(
            gamma_bound(-1.0, 1.0, 0.0005),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(gamma_bound(-1.0, 1.0, 0.0003).is_ok());
    }

    #[test]
    fn block_vector_table_round_trip() {
        let v = random_bv(3, 4, 20);
        let mut buf = Vec::new();
        v.write_table(&mut buf).unwrap();
        let back = BlockVector::read_table(&buf[..]).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn nonuniform_grids_factor_per_distinct_step() {
        let disc = SpatialDiscretization::new(build_interval_mesh(4).unwrap()).unwrap();
        let grid = build_time_grid(1.0, 3, Some(vec![0.5, 0.25, 0.25])).unwrap();
        let sys = assemble_block_system(&disc, &grid, &Coefficients::constant(1.0, 0.0)).unwrap();
        let u = BlockVector::zeros(3, 5);
        let _ = sys.solve_forward(&u, &vec![1.0; 5]).unwrap();
        assert_eq!(sys.factorization_count(), 2);
    }

    #[test]
    fn concurrent_sweeps_share_one_system() {
        fn assert_sync<T: Send + Sync>() {}
        assert_sync::<BlockSystem>();

        let sys = small_system(10, 8, 1.0, 0.5);
        let results: Vec<BlockVector> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..4u64)
                .map(|seed| {
                    let sys = &sys;
                    s.spawn(move || {
                        let u = random_bv(10, 9, 200 + seed);
                        sys.solve_forward(&u, &vec![0.0; 9]).unwrap()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        // bit-identical to the sequential answers; the shared factorization
        // is computed once and reused
        for (i, res) in results.iter().enumerate() {
            let u = random_bv(10, 9, 200 + i as u64);
            let expect = sys.solve_forward(&u, &vec![0.0; 9]).unwrap();
            assert_eq!(res, &expect);
        }
    }

    #[test]
    fn per_interval_coefficients_are_honored() {
        let disc = SpatialDiscretization::new(build_interval_mesh(4).unwrap()).unwrap();
        let grid = build_time_grid(1.0, 4, None).unwrap();
        let coeffs =
            Coefficients::per_interval(vec![1.0, 1.0, 2.0, 2.0], vec![0.5, 0.5, -0.5, -0.5]);
        let sys = assemble_block_system(&disc, &grid, &coeffs).unwrap();
        // the per-step operator switches at step 2
        let s0 = sys.step_matrix(0).to_dense();
        let s2 = sys.step_matrix(2).to_dense();
        let expect0 = disc.mass().to_dense() * (4.0 + 0.5) + disc.laplace().to_dense();
        let expect2 = disc.mass().to_dense() * (4.0 - 0.5) + disc.laplace().to_dense() * 2.0;
        assert!((s0 - expect0).norm() < 1e-13);
        assert!((s2 - expect2).norm() < 1e-13);
        // two distinct step matrices, two factorizations
        let u = random_bv(4, 5, 99);
        let _ = sys.solve_forward(&u, &vec![0.0; 5]).unwrap();
        assert_eq!(sys.factorization_count(), 2);

        let bad = Coefficients::per_interval(vec![1.0, -1.0], vec![0.0, 0.0]);
        assert!(matches!(
            assemble_block_system(&disc, &grid, &bad),
            Err(Error::SizeMismatch { .. }) | Err(Error::NegativeAlpha { .. })
        ));
    }
}
