//! Spatial meshes and conforming P1 finite element assembly.
//!
//! The domain is fixed to the unit interval (1D) or unit square (2D) with
//! homogeneous Neumann boundary everywhere, so no boundary data is stored and
//! no degrees of freedom are eliminated. Mass and stiffness matrices use exact
//! closed-form element integrals; load vectors use a 3-point Gauss rule per
//! segment in 1D and the edge-midpoint rule per triangle in 2D (both exact for
//! quadratics, so the load of a P1 function is exactly `M v`).

mod sparse;

pub use sparse::{BandedLdlt, SymSparseBuilder, SymSparseMatrix};

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::problem::DataFunction;

/// Element connectivity: segments in 1D, triangles in 2D.
#[derive(Debug, Clone)]
pub enum Elements {
    Segments(Vec<[usize; 2]>),
    Triangles(Vec<[usize; 3]>),
}

impl Elements {
    pub fn len(&self) -> usize {
        match self {
            Elements::Segments(e) => e.len(),
            Elements::Triangles(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform generation pattern, kept so point location stays O(1).
#[derive(Debug, Clone, Copy)]
enum Structure {
    Interval { n: usize },
    Square { n: usize },
}

#[derive(Debug, Clone)]
pub struct SpatialMesh {
    dim: usize,
    nodes: Vec<[f64; 2]>,
    elements: Elements,
    structure: Structure,
}

/// Uniform mesh of [0, 1] with `n_elems` segments.
pub fn build_interval_mesh(n_elems: usize) -> Result<SpatialMesh> {
    if n_elems == 0 {
        return Err(Error::ZeroElements);
    }
    let nodes = (0..=n_elems)
        .map(|i| [i as f64 / n_elems as f64, 0.0])
        .collect();
    let elems = (0..n_elems).map(|i| [i, i + 1]).collect();
    Ok(SpatialMesh {
        dim: 1,
        nodes,
        elements: Elements::Segments(elems),
        structure: Structure::Interval { n: n_elems },
    })
}

/// Structured triangulation of [0, 1]^2 with `n_per_side` cells per side,
/// each cell split along the diagonal from its lower-left corner:
/// (n+1)^2 nodes, 2 n^2 triangles.
pub fn build_unit_square_mesh(n_per_side: usize) -> Result<SpatialMesh> {
    if n_per_side == 0 {
        return Err(Error::ZeroElements);
    }
    let n = n_per_side;
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut tris = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            tris.push([v00, v10, v11]);
            tris.push([v00, v11, v01]);
        }
    }
    Ok(SpatialMesh {
        dim: 2,
        nodes,
        elements: Elements::Triangles(tris),
        structure: Structure::Square { n },
    })
}

impl SpatialMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }

    pub fn elements(&self) -> &Elements {
        &self.elements
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Measure (length/area) of one element.
    pub fn element_measure(&self, e: usize) -> f64 {
        match &self.elements {
            Elements::Segments(segs) => {
                let [a, b] = segs[e];
                self.nodes[b][0] - self.nodes[a][0]
            }
            Elements::Triangles(tris) => {
                let [a, b, c] = tris[e];
                let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
                0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
            }
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim
            && point
                .iter()
                .all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x))
    }

    /// Locate `point`; returns the element index and the barycentric weights
    /// of the element's nodes at the point. O(1) on the structured meshes.
    pub fn locate(&self, point: &[f64]) -> Result<(usize, Vec<f64>)> {
        if !self.contains(point) {
            return Err(Error::OutOfDomain {
                point: point.to_vec(),
            });
        }
        match self.structure {
            Structure::Interval { n } => {
                let x = point[0].clamp(0.0, 1.0);
                let e = ((x * n as f64) as usize).min(n - 1);
                let h = 1.0 / n as f64;
                let local = (x - e as f64 * h) / h;
                Ok((e, vec![1.0 - local, local]))
            }
            Structure::Square { n } => {
                let x = point[0].clamp(0.0, 1.0);
                let y = point[1].clamp(0.0, 1.0);
                let h = 1.0 / n as f64;
                let i = ((x * n as f64) as usize).min(n - 1);
                let j = ((y * n as f64) as usize).min(n - 1);
                let u = (x - i as f64 * h) / h;
                let v = (y - j as f64 * h) / h;
                let cell = 2 * (j * n + i);
                if u >= v {
                    // triangle (v00, v10, v11): weights 1-u, u-v, v
                    Ok((cell, vec![1.0 - u, u - v, v]))
                } else {
                    // triangle (v00, v11, v01): weights 1-v, u, v-u
                    Ok((cell + 1, vec![1.0 - v, u, v - u]))
                }
            }
        }
    }

    /// Node/element table export for debugging and oracle comparison.
    pub fn write_tables<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes {} dim {}", self.node_count(), self.dim)?;
        for i in 0..self.node_count() {
            let p = self.node(i);
            match self.dim {
                1 => writeln!(w, "{:.17e}", p[0])?,
                _ => writeln!(w, "{:.17e} {:.17e}", p[0], p[1])?,
            }
        }
        writeln!(w, "# elements {}", self.element_count())?;
        match &self.elements {
            Elements::Segments(segs) => {
                for [a, b] in segs {
                    writeln!(w, "{} {}", a, b)?;
                }
            }
            Elements::Triangles(tris) => {
                for [a, b, c] in tris {
                    writeln!(w, "{} {} {}", a, b, c)?;
                }
            }
        }
        Ok(())
    }
}

/// Mass matrix M with M_kl = \int phi_l phi_k; symmetric positive definite.
pub fn assemble_mass(mesh: &SpatialMesh) -> SymSparseMatrix {
    let mut b = SymSparseBuilder::new(mesh.node_count());
    match &mesh.elements {
        Elements::Segments(segs) => {
            for (e, [i, j]) in segs.iter().enumerate() {
                let h = mesh.element_measure(e);
                b.add(*i, *i, h / 3.0);
                b.add(*j, *j, h / 3.0);
                b.add(*i, *j, h / 6.0);
            }
        }
        Elements::Triangles(tris) => {
            for (e, tri) in tris.iter().enumerate() {
                let area = mesh.element_measure(e);
                for a in 0..3 {
                    for c in a..3 {
                        let v = if a == c { area / 6.0 } else { area / 12.0 };
                        b.add(tri[a], tri[c], v);
                    }
                }
            }
        }
    }
    b.build()
}

/// Stiffness-plus-reaction matrix A with
/// A_kl = alpha \int grad phi_l . grad phi_k + c \int phi_l phi_k.
pub fn assemble_stiffness(mesh: &SpatialMesh, alpha: f64, c: f64) -> Result<SymSparseMatrix> {
    if alpha < 0.0 {
        return Err(Error::NegativeAlpha { value: alpha });
    }
    let mut b = SymSparseBuilder::new(mesh.node_count());
    match &mesh.elements {
        Elements::Segments(segs) => {
            for (e, [i, j]) in segs.iter().enumerate() {
                let h = mesh.element_measure(e);
                let k = alpha / h;
                b.add(*i, *i, k + c * h / 3.0);
                b.add(*j, *j, k + c * h / 3.0);
                b.add(*i, *j, -k + c * h / 6.0);
            }
        }
        Elements::Triangles(tris) => {
            for (e, tri) in tris.iter().enumerate() {
                let area = mesh.element_measure(e);
                let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.nodes[v]).collect();
                // grad phi_a = (b_a, c_a) / (2 area), cyclic edge differences
                let mut bb = [0.0; 3];
                let mut cc = [0.0; 3];
                for a in 0..3 {
                    let (j, k) = ((a + 1) % 3, (a + 2) % 3);
                    bb[a] = p[j][1] - p[k][1];
                    cc[a] = p[k][0] - p[j][0];
                }
                for a in 0..3 {
                    for d in a..3 {
                        let stiff = alpha * (bb[a] * bb[d] + cc[a] * cc[d]) / (4.0 * area);
                        let mass = if a == d { area / 6.0 } else { area / 12.0 };
                        b.add(tri[a], tri[d], stiff + c * mass);
                    }
                }
            }
        }
    }
    Ok(b.build())
}

// 3-point Gauss-Legendre on [-1, 1], exact for degree 5.
const GAUSS3_NODES: [f64; 3] = [-0.774596669241483377, 0.0, 0.774596669241483377];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Load vector (\int f phi_k)_k by the module's quadrature rule. `time` is
/// forwarded to time-dependent data functions.
pub fn assemble_load(
    mesh: &SpatialMesh,
    f: &DataFunction,
    time: Option<f64>,
) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.node_count()];
    match &mesh.elements {
        Elements::Segments(segs) => {
            for [i, j] in segs.iter() {
                let (xa, xb) = (mesh.nodes[*i][0], mesh.nodes[*j][0]);
                let h = xb - xa;
                for (g, &gx) in GAUSS3_NODES.iter().enumerate() {
                    let x = 0.5 * (xa + xb) + 0.5 * h * gx;
                    let w = 0.5 * h * GAUSS3_WEIGHTS[g];
                    let fv = f.eval(&[x], time)?;
                    let local = (x - xa) / h;
                    load[*i] += w * fv * (1.0 - local);
                    load[*j] += w * fv * local;
                }
            }
        }
        Elements::Triangles(tris) => {
            for (e, tri) in tris.iter().enumerate() {
                let area = mesh.element_measure(e);
                let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.nodes[v]).collect();
                // edge midpoints; hat functions take value 1/2 on the two
                // midpoints adjacent to their vertex and 0 on the opposite one
                for a in 0..3 {
                    let j = (a + 1) % 3;
                    let mid = [0.5 * (p[a][0] + p[j][0]), 0.5 * (p[a][1] + p[j][1])];
                    let fv = f.eval(&mid, time)?;
                    let w = area / 3.0;
                    load[tri[a]] += w * fv * 0.5;
                    load[tri[j]] += w * fv * 0.5;
                }
            }
        }
    }
    Ok(load)
}

/// Mesh together with its assembled mass matrix and the pure Laplace part of
/// the stiffness (alpha = 1, c = 0); per-interval operators are formed from
/// these two by scaling.
#[derive(Debug, Clone)]
pub struct SpatialDiscretization {
    mesh: Arc<SpatialMesh>,
    mass: Arc<SymSparseMatrix>,
    laplace: Arc<SymSparseMatrix>,
}

impl SpatialDiscretization {
    pub fn new(mesh: SpatialMesh) -> Result<Self> {
        let mass = assemble_mass(&mesh);
        let laplace = assemble_stiffness(&mesh, 1.0, 0.0)?;
        Ok(Self {
            mesh: Arc::new(mesh),
            mass: Arc::new(mass),
            laplace: Arc::new(laplace),
        })
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn mass(&self) -> &Arc<SymSparseMatrix> {
        &self.mass
    }

    pub fn laplace(&self) -> &Arc<SymSparseMatrix> {
        &self.laplace
    }

    pub fn n_x(&self) -> usize {
        self.mesh.node_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DataFunction;
    use nalgebra::DMatrix;

    #[test]
    fn interval_mesh_basics() {
        let m = build_interval_mesh(1).unwrap();
        assert_eq!(m.node_count(), 2);
        assert_eq!(m.element_count(), 1);
        assert_eq!(m.node(0)[0], 0.0);
        assert_eq!(m.node(1)[0], 1.0);

        let m = build_interval_mesh(2).unwrap();
        assert_eq!(m.node(1)[0], 0.5);

        let m = build_interval_mesh(100).unwrap();
        assert_eq!(m.node_count(), 101);
        for e in 0..100 {
            assert!((m.element_measure(e) - 0.01).abs() < 1e-15);
        }
        assert!(matches!(build_interval_mesh(0), Err(Error::ZeroElements)));
    }

    #[test]
    fn square_mesh_basics() {
        let m = build_unit_square_mesh(1).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.element_count(), 2);

        let m = build_unit_square_mesh(100).unwrap();
        assert_eq!(m.node_count(), 10201);

        for n in [1usize, 3, 7] {
            let m = build_unit_square_mesh(n).unwrap();
            let total: f64 = (0..m.element_count()).map(|e| m.element_measure(e)).sum();
            assert!((total - 1.0).abs() < 1e-13, "area {total} for n={n}");
            assert!((0..m.element_count()).all(|e| m.element_measure(e) > 0.0));
        }
    }

    #[test]
    fn mass_matrix_one_element() {
        let m = build_interval_mesh(1).unwrap();
        let mass = assemble_mass(&m);
        let d = mass.to_dense();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0]);
        assert!((d - expect).norm() < 1e-15);
    }

    #[test]
    fn mass_matrix_two_elements_tridiagonal() {
        let m = build_interval_mesh(2).unwrap();
        let d = assemble_mass(&m).to_dense();
        let h = 0.5;
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[
                h / 3.0,
                h / 6.0,
                0.0,
                h / 6.0,
                2.0 * h / 3.0,
                h / 6.0,
                0.0,
                h / 6.0,
                h / 3.0,
            ],
        );
        assert!((d - expect).norm() < 1e-15);
    }

    #[test]
    fn mass_matrix_invariants() {
        for mesh in [build_interval_mesh(13).unwrap(), build_unit_square_mesh(4).unwrap()] {
            let mass = assemble_mass(&mesh);
            assert!((mass.entry_sum() - 1.0).abs() < 1e-14);
            assert!(mass.row_sums().iter().all(|&s| s >= 0.0));
            let eig = nalgebra::SymmetricEigen::new(mass.to_dense());
            assert!(eig.eigenvalues.iter().all(|&e| e > 0.0), "mass SPD");
        }
    }

    #[test]
    fn stiffness_one_element() {
        let m = build_interval_mesh(1).unwrap();
        let a = assemble_stiffness(&m, 1.0, 0.0).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((a - expect).norm() < 1e-15);
    }

    #[test]
    fn stiffness_pure_reaction_equals_mass() {
        for mesh in [build_interval_mesh(9).unwrap(), build_unit_square_mesh(3).unwrap()] {
            let a = assemble_stiffness(&mesh, 0.0, 1.0).unwrap().to_dense();
            let mass = assemble_mass(&mesh).to_dense();
            assert!((a - mass).norm() < 1e-14);
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        for mesh in [build_interval_mesh(17).unwrap(), build_unit_square_mesh(5).unwrap()] {
            let a = assemble_stiffness(&mesh, 2.0, 0.0).unwrap();
            let ones = vec![1.0; mesh.node_count()];
            let r = a.matvec_alloc(&ones);
            assert!(r.iter().all(|&v| v.abs() <= 1e-13), "max {:?}",
                r.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs())));
        }
    }

    #[test]
    fn stiffness_rejects_negative_alpha() {
        let m = build_interval_mesh(2).unwrap();
        assert!(matches!(
            assemble_stiffness(&m, -1.0, 0.0),
            Err(Error::NegativeAlpha { .. })
        ));
    }

    #[test]
    fn load_constant_one_element() {
        let m = build_interval_mesh(1).unwrap();
        let l = assemble_load(&m, &DataFunction::Constant { value: 1.0 }, None).unwrap();
        assert!((l[0] - 0.5).abs() < 1e-15);
        assert!((l[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn load_of_hat_function_is_mass_column() {
        for mesh in [build_interval_mesh(6).unwrap(), build_unit_square_mesh(3).unwrap()] {
            let mesh = Arc::new(mesh);
            let mass = assemble_mass(&mesh).to_dense();
            let k = mesh.node_count() / 2;
            let mut values = vec![0.0; mesh.node_count()];
            values[k] = 1.0;
            let hat = DataFunction::Tabulated {
                mesh: mesh.clone(),
                values,
            };
            let l = assemble_load(&mesh, &hat, None).unwrap();
            for i in 0..mesh.node_count() {
                assert!(
                    (l[i] - mass[(i, k)]).abs() < 1e-14,
                    "entry {i}: {} vs {}",
                    l[i],
                    mass[(i, k)]
                );
            }
        }
    }

    #[test]
    fn load_cosine_matches_high_order_quadrature() {
        // independent oracle: composite 10-point Gauss-Legendre per element
        const X10: [f64; 10] = [
            -0.973906528517171720,
            -0.865063366688984511,
            -0.679409568299024406,
            -0.433395394129247191,
            -0.148874338981631211,
            0.148874338981631211,
            0.433395394129247191,
            0.679409568299024406,
            0.865063366688984511,
            0.973906528517171720,
        ];
        const W10: [f64; 10] = [
            0.066671344308688138,
            0.149451349150580593,
            0.219086362515982044,
            0.269266719309996355,
            0.295524224714752870,
            0.295524224714752870,
            0.269266719309996355,
            0.219086362515982044,
            0.149451349150580593,
            0.066671344308688138,
        ];
        let n = 64usize;
        let mesh = build_interval_mesh(n).unwrap();
        let f = |x: f64| (std::f64::consts::PI * x).cos();
        let mut oracle = vec![0.0; n + 1];
        for e in 0..n {
            let (xa, xb) = (mesh.node(e)[0], mesh.node(e + 1)[0]);
            let h = xb - xa;
            for g in 0..10 {
                let x = 0.5 * (xa + xb) + 0.5 * h * X10[g];
                let w = 0.5 * h * W10[g];
                let local = (x - xa) / h;
                oracle[e] += w * f(x) * (1.0 - local);
                oracle[e + 1] += w * f(x) * local;
            }
        }
        let l = assemble_load(&mesh, &DataFunction::CosProduct { freq: 1.0 }, None).unwrap();
        let norm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = l
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / norm <= 1e-10, "relative error {}", err / norm);
    }

    #[test]
    fn assembly_is_deterministic() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let a1 = assemble_stiffness(&mesh, 1.5, -2.0).unwrap();
        let a2 = assemble_stiffness(&mesh, 1.5, -2.0).unwrap();
        assert_eq!(a1.dim(), a2.dim());
        for ((i1, j1, v1), (i2, j2, v2)) in a1.upper_entries().zip(a2.upper_entries()) {
            assert_eq!((i1, j1), (i2, j2));
            assert_eq!(v1.to_bits(), v2.to_bits(), "bit-identical assembly");
        }
    }

    #[test]
    fn locate_finds_points() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let (_, w) = mesh.locate(&[0.3, 0.7]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        assert!(mesh.locate(&[1.5, 0.0]).is_err());
    }
}
