//! Symmetric sparse storage and a banded LDL^T factorization.
//!
//! Matrices assembled on the structured meshes of this crate have small
//! bandwidth (1 in 1D, `n_per_side + 2` on the unit square), so a banded
//! symmetric factorization covers every solve the time stepping needs while
//! staying dependency-free. Only the upper triangle is stored; symmetry is
//! exact by construction.

use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Accumulates (i, j, value) contributions during assembly. Entries are
/// folded onto the upper triangle and duplicate positions are summed when
/// [`SymSparseBuilder::build`] is called, with a deterministic ordering so
/// identical inputs yield bit-identical matrices.
#[derive(Debug, Clone)]
pub struct SymSparseBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymSparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    /// Add `value` at position (i, j); the symmetric mirror entry is implied.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.n && j < self.n, "index out of range");
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, value));
    }

    pub fn build(mut self) -> SymSparseMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col = Vec::with_capacity(self.entries.len());
        let mut val = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *val.last_mut().expect("nonempty") += v;
            } else {
                col.push(c);
                val.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = col.len();
        }
        for i in 1..=self.n {
            row_ptr[i] = row_ptr[i].max(row_ptr[i - 1]);
        }
        SymSparseMatrix {
            n: self.n,
            row_ptr,
            col,
            val,
            factor: OnceLock::new(),
        }
    }
}

/// Sparse symmetric matrix; only entries with `row <= col` are stored.
#[derive(Debug)]
pub struct SymSparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    factor: OnceLock<BandedLdlt>,
}

impl Clone for SymSparseMatrix {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col: self.col.clone(),
            val: self.val.clone(),
            factor: OnceLock::new(),
        }
    }
}

impl SymSparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_upper(&self) -> usize {
        self.val.len()
    }

    /// Iterate over stored upper-triangle entries as (row, col, value).
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col[k], self.val[k]))
        })
    }

    /// y = A x (both triangles applied).
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k];
                let v = self.val[k];
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// a*self + b*other, entrywise over the merged sparsity pattern.
    pub fn add_scaled(&self, a: f64, other: &SymSparseMatrix, b: f64) -> SymSparseMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut builder = SymSparseBuilder::new(self.n);
        for (i, j, v) in self.upper_entries() {
            builder.add(i, j, a * v);
        }
        for (i, j, v) in other.upper_entries() {
            builder.add(i, j, b * v);
        }
        builder.build()
    }

    /// Sum over all entries of the full (symmetric) matrix.
    pub fn entry_sum(&self) -> f64 {
        let mut s = 0.0;
        for (i, j, v) in self.upper_entries() {
            s += if i == j { v } else { 2.0 * v };
        }
        s
    }

    /// Row sums of the full matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n];
        self.matvec_alloc(&ones)
    }

    pub fn bandwidth(&self) -> usize {
        self.upper_entries()
            .map(|(i, j, _)| j - i)
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.upper_entries() {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// Whether the cached factorization has already been computed.
    pub fn has_factor(&self) -> bool {
        self.factor.get().is_some()
    }

    /// Cached LDL^T factorization; computed on first use, shared afterwards.
    pub fn factor(&self) -> Result<&BandedLdlt> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = BandedLdlt::factor(self)?;
        // A concurrent caller may have won the race; either value is identical.
        let _ = self.factor.set(f);
        Ok(self.factor.get().expect("factor just set"))
    }

    /// Solve A x = b through the cached factorization.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let f = self.factor()?;
        let mut x = b.to_vec();
        f.solve_in_place(&mut x);
        Ok(x)
    }

    /// Coordinate-list text export (`row col value` per line, both triangles),
    /// for debugging and external verification.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# symmetric sparse matrix, dim {}", self.n)?;
        for (i, j, v) in self.upper_entries() {
            writeln!(w, "{} {} {:.17e}", i, j, v)?;
            if i != j {
                writeln!(w, "{} {} {:.17e}", j, i, v)?;
            }
        }
        Ok(())
    }
}

/// Banded LDL^T factorization of a symmetric matrix. No pivoting: intended
/// for the positive definite per-step matrices; mildly indefinite systems
/// (very negative reaction coefficients) still factor but are flagged.
#[derive(Debug, Clone)]
pub struct BandedLdlt {
    n: usize,
    bw: usize,
    /// band[i*(bw+1) + d] = L[i, i-d] for d in 1..=bw; slot d=0 is unused.
    band: Vec<f64>,
    diag: Vec<f64>,
    indefinite: bool,
}

impl BandedLdlt {
    pub fn factor(a: &SymSparseMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        let mut diag = vec![0.0; n];
        let mut scale = 0.0f64;
        for (i, j, v) in a.upper_entries() {
            // store A[j, i] in row j at offset j - i
            band[j * stride + (j - i)] += v;
            if i == j {
                diag[i] += v;
                scale = scale.max(v.abs());
            }
        }
        if scale == 0.0 {
            scale = 1.0;
        }

        let mut d = vec![0.0; n];
        let mut indefinite = false;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * stride + (i - j)];
                for k in klo..j {
                    s -= band[i * stride + (i - k)] * band[j * stride + (j - k)] * d[k];
                }
                band[i * stride + (i - j)] = s / d[j];
            }
            let mut s = diag[i];
            for k in lo..i {
                let l = band[i * stride + (i - k)];
                s -= l * l * d[k];
            }
            if s.abs() <= 1e-13 * scale {
                return Err(Error::FactorizationFailed {
                    detail: format!("near-zero pivot {s:.3e} at row {i}"),
                });
            }
            if s < 0.0 {
                indefinite = true;
            }
            d[i] = s;
        }
        Ok(Self {
            n,
            bw,
            band,
            diag: d,
            indefinite,
        })
    }

    /// True when the matrix was not positive definite.
    pub fn is_indefinite(&self) -> bool {
        self.indefinite
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let stride = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in lo..i {
                s -= self.band[i * stride + (i - j)] * b[j];
            }
            b[i] = s;
        }
        for i in 0..self.n {
            b[i] /= self.diag[i];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = b[i];
            for r in (i + 1)..=hi {
                s -= self.band[r * stride + (r - i)] * b[r];
            }
            b[i] = s;
        }
    }

    /// Reconstruct A x = L D L^T x; used to verify the factorization
    /// reproduces the matrix on multiply-back.
    pub fn multiply_back(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let stride = self.bw + 1;
        // y = L^T x
        let mut y = x.to_vec();
        for i in 0..self.n {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = x[i];
            for r in (i + 1)..=hi {
                s += self.band[r * stride + (r - i)] * x[r];
            }
            y[i] = s;
        }
        for i in 0..self.n {
            y[i] *= self.diag[i];
        }
        // z = L y
        let mut z = y.clone();
        for i in (0..self.n).rev() {
            let lo = i.saturating_sub(self.bw);
            let mut s = y[i];
            for j in lo..i {
                s += self.band[i * stride + (i - j)] * y[j];
            }
            z[i] = s;
        }
        z
    }
}
