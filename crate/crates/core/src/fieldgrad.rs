//! Per-face Jacobian fields and the Poisson solve that turns them into
//! vertex positions, together with its adjoint.
//!
//! For a field `{J_i}` the deformed vertices minimize
//! `Σ_i |f_i| ‖∇_i Φ − J_i‖_F²`. Per output coordinate `k` this is the normal
//! equation `L Φ_k = Gᵀ A j_k` with the cotangent Laplacian `L = Gᵀ A G`.
//! `L` is singular along constants; the solution is fixed by pinning the
//! output centroid to the source centroid.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{FaceGeometry, Mesh};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

/// One 3×3 matrix per face. Row `k` is the target gradient of output
/// coordinate `k` on that face.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField(Vec<Matrix3<f64>>);

impl JacobianField {
    pub fn identity(faces: usize) -> Self {
        Self(vec![Matrix3::identity(); faces])
    }

    pub fn constant(faces: usize, m: Matrix3<f64>) -> Self {
        Self(vec![m; faces])
    }

    pub fn zeros(faces: usize) -> Self {
        Self(vec![Matrix3::zeros(); faces])
    }

    pub fn from_matrices(m: Vec<Matrix3<f64>>) -> Self {
        Self(m)
    }

    /// Row-major per face: entry `(r, c)` of face `f` at `9f + 3r + c`.
    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 9, 0);
        Self(flat.chunks_exact(9).map(Matrix3::from_row_slice).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len() * 9);
        for m in &self.0 {
            for r in 0..3 {
                for c in 0..3 {
                    out.push(m[(r, c)]);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matrices(&self) -> &[Matrix3<f64>] {
        &self.0
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix3<f64>] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Frobenius inner product summed over faces.
    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "jacobian fields of {} and {} faces",
                self.len(),
                other.len()
            )));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|m| m * s).collect())
    }
}

impl std::ops::Index<usize> for JacobianField {
    type Output = Matrix3<f64>;
    fn index(&self, i: usize) -> &Matrix3<f64> {
        &self.0[i]
    }
}

/// Gradient operator, area weights and the factorized Laplacian of a source
/// mesh. Everything here depends only on source geometry and is built once.
#[derive(Clone, Debug)]
pub struct PoissonSystem {
    faces: Vec<[usize; 3]>,
    vertex_count: usize,
    /// gradient of each corner's hat function on its face
    hat_gradients: Vec<[Vector3<f64>; 3]>,
    areas: Vec<f64>,
    normals: Vec<Vector3<f64>>,
    laplacian: CsrMatrix,
    /// index of the vertex eliminated to remove the constant nullspace
    ground: usize,
    factor: EnvelopeCholesky,
    source: Vec<Vector3<f64>>,
    source_centroid: Vector3<f64>,
}

impl PoissonSystem {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let geom = FaceGeometry::new(mesh);
        Self::build(mesh, &geom)
    }

    pub fn build(mesh: &Mesh, geom: &FaceGeometry) -> Result<Self> {
        let n = mesh.vertex_count();
        if n == 0 || mesh.face_count() == 0 {
            return Err(Error::EmptyMesh);
        }
        let components = mesh.connected_components();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }

        let v = mesh.vertices();
        let hat_gradients: Vec<[Vector3<f64>; 3]> = mesh
            .faces()
            .iter()
            .zip(geom.normals.iter().zip(&geom.areas))
            .map(|(f, (nf, &area))| {
                let grad = |opp_from: usize, opp_to: usize| {
                    nf.cross(&(v[f[opp_to]] - v[f[opp_from]])) / (2.0 * area)
                };
                [grad(1, 2), grad(2, 0), grad(0, 1)]
            })
            .collect();

        let mut triplets = Vec::with_capacity(mesh.face_count() * 9);
        for ((f, g), &area) in mesh.faces().iter().zip(&hat_gradients).zip(&geom.areas) {
            for a in 0..3 {
                for b in 0..3 {
                    triplets.push((f[a], f[b], area * g[a].dot(&g[b])));
                }
            }
        }
        let laplacian = CsrMatrix::from_triplets(n, n, triplets);

        let ground = 0;
        let reduced = drop_row_col(&laplacian, ground);
        let factor = EnvelopeCholesky::factor(&reduced)?;

        Ok(Self {
            faces: mesh.faces().to_vec(),
            vertex_count: n,
            hat_gradients,
            areas: geom.areas.clone(),
            normals: geom.normals.clone(),
            laplacian,
            ground,
            factor,
            source: v.to_vec(),
            source_centroid: mesh.centroid(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn source_vertices(&self) -> &[Vector3<f64>] {
        &self.source
    }

    pub fn source_centroid(&self) -> Vector3<f64> {
        self.source_centroid
    }

    /// Hat-function gradients of the three corners of face `f`.
    pub fn hat_gradients(&self, f: usize) -> &[Vector3<f64>; 3] {
        &self.hat_gradients[f]
    }

    /// `G` as an explicit `(3·|F|) × n` matrix: rows `3f..3f+3` hold the x, y
    /// and z components of the per-face gradient.
    pub fn gradient_operator(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.faces.len() * 9);
        for (fi, (f, g)) in self.faces.iter().zip(&self.hat_gradients).enumerate() {
            for (corner, &vtx) in f.iter().enumerate() {
                for (axis, &value) in g[corner].iter().enumerate() {
                    triplets.push((3 * fi + axis, vtx, value));
                }
            }
        }
        CsrMatrix::from_triplets(3 * self.faces.len(), self.vertex_count, triplets)
    }

    /// Per-face gradient of a per-vertex scalar.
    pub fn face_gradients(&self, scalar: &[f64]) -> Vec<Vector3<f64>> {
        self.faces
            .iter()
            .zip(&self.hat_gradients)
            .map(|(f, g)| g[0] * scalar[f[0]] + g[1] * scalar[f[1]] + g[2] * scalar[f[2]])
            .collect()
    }

    /// Solves `L x = b` for `b ⊥ 1`, returning the solution with `x[ground] = 0`.
    fn solve_grounded(&self, b: &[f64]) -> Vec<f64> {
        let reduced: Vec<f64> = b
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.ground)
            .map(|(_, &v)| v)
            .collect();
        let y = self.factor.solve(&reduced);
        let mut x = Vec::with_capacity(b.len());
        x.extend_from_slice(&y[..self.ground]);
        x.push(0.0);
        x.extend_from_slice(&y[self.ground..]);
        x
    }

    fn coordinate_rhs(&self, field: &JacobianField, k: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.vertex_count];
        for (fi, (f, g)) in self.faces.iter().zip(&self.hat_gradients).enumerate() {
            let target = field[fi].row(k).transpose();
            let w = self.areas[fi];
            for corner in 0..3 {
                b[f[corner]] += w * g[corner].dot(&target);
            }
        }
        b
    }

    /// Vertices whose per-face Jacobians best match `field` in the
    /// area-weighted least-squares sense, centroid pinned to the source's.
    pub fn solve(&self, field: &JacobianField) -> Result<Vec<Vector3<f64>>> {
        self.check_field(field)?;
        if !field.is_finite() {
            return Err(Error::non_finite("jacobian field"));
        }
        let coords = per_axis(|k| {
            let mut x = self.solve_grounded(&self.coordinate_rhs(field, k));
            let shift = self.source_centroid[k] - mean(&x);
            x.iter_mut().for_each(|v| *v += shift);
            x
        });
        Ok(zip_coords(&coords))
    }

    /// Pulls a loss gradient w.r.t. the solved vertices back to the field.
    ///
    /// The centering step of [`solve`](Self::solve) is a projector, so
    /// constant upstream gradients map to zero.
    pub fn adjoint(&self, upstream: &[Vector3<f64>]) -> Result<JacobianField> {
        if upstream.len() != self.vertex_count {
            return Err(Error::Shape(format!(
                "upstream has {} rows, mesh has {} vertices",
                upstream.len(),
                self.vertex_count
            )));
        }
        if upstream.iter().any(|g| !g.iter().all(|c| c.is_finite())) {
            return Err(Error::non_finite("upstream vertex gradient"));
        }
        let potentials = per_axis(|k| {
            let mut g: Vec<f64> = upstream.iter().map(|u| u[k]).collect();
            let m = mean(&g);
            g.iter_mut().for_each(|v| *v -= m);
            self.solve_grounded(&g)
        });
        let rows: Vec<Vec<Vector3<f64>>> = potentials.iter().map(|y| self.face_gradients(y)).collect();
        let out = (0..self.faces.len())
            .map(|fi| {
                let a = self.areas[fi];
                Matrix3::from_rows(&[
                    rows[0][fi].transpose() * a,
                    rows[1][fi].transpose() * a,
                    rows[2][fi].transpose() * a,
                ])
            })
            .collect();
        Ok(JacobianField(out))
    }

    /// Actual per-face Jacobians of the piecewise-linear map that sends the
    /// source vertices to `vertices`.
    pub fn jacobians_of_map(&self, vertices: &[Vector3<f64>]) -> Result<JacobianField> {
        if vertices.len() != self.vertex_count {
            return Err(Error::Shape(format!(
                "{} vertices given, mesh has {}",
                vertices.len(),
                self.vertex_count
            )));
        }
        let out = self
            .faces
            .iter()
            .zip(&self.hat_gradients)
            .map(|(f, g)| {
                (0..3).fold(Matrix3::zeros(), |acc, c| acc + vertices[f[c]] * g[c].transpose())
            })
            .collect();
        Ok(JacobianField(out))
    }

    /// Chain rule for [`jacobians_of_map`](Self::jacobians_of_map): maps a
    /// gradient w.r.t. the realized Jacobians to a gradient w.r.t. vertices.
    pub fn jacobians_of_map_backward(&self, upstream: &JacobianField) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.vertex_count];
        for (fi, (f, g)) in self.faces.iter().zip(&self.hat_gradients).enumerate() {
            for c in 0..3 {
                out[f[c]] += upstream[fi] * g[c];
            }
        }
        out
    }

    /// Tangent-plane projector `I − n nᵀ` of each source face: the Jacobian of
    /// the identity map.
    pub fn tangent_projectors(&self) -> Vec<Matrix3<f64>> {
        self.normals
            .iter()
            .map(|n| Matrix3::identity() - n * n.transpose())
            .collect()
    }

    fn check_field(&self, field: &JacobianField) -> Result<()> {
        if field.len() != self.faces.len() {
            return Err(Error::Shape(format!(
                "field has {} faces, mesh has {}",
                field.len(),
                self.faces.len()
            )));
        }
        Ok(())
    }
}

fn drop_row_col(a: &CsrMatrix, k: usize) -> CsrMatrix {
    let n = a.nrows();
    let shift = |i: usize| if i > k { i - 1 } else { i };
    let mut trip = Vec::with_capacity(a.nnz());
    for i in (0..n).filter(|&i| i != k) {
        for (j, v) in a.row(i).filter(|&(j, _)| j != k) {
            trip.push((shift(i), shift(j), v));
        }
    }
    CsrMatrix::from_triplets(n - 1, n - 1, trip)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn zip_coords(c: &[Vec<f64>; 3]) -> Vec<Vector3<f64>> {
    (0..c[0].len())
        .map(|i| Vector3::new(c[0][i], c[1][i], c[2][i]))
        .collect()
}

#[cfg(feature = "parallel")]
fn per_axis<F>(f: F) -> [Vec<f64>; 3]
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let (x, (y, z)) = rayon::join(|| f(0), || rayon::join(|| f(1), || f(2)));
    [x, y, z]
}

#[cfg(not(feature = "parallel"))]
fn per_axis<F>(f: F) -> [Vec<f64>; 3]
where
    F: Fn(usize) -> Vec<f64>,
{
    [f(0), f(1), f(2)]
}

/// Convenience wrapper matching the free-function style used elsewhere.
pub fn build_gradient_operator(mesh: &Mesh, geom: &FaceGeometry) -> Result<PoissonSystem> {
    PoissonSystem::build(mesh, geom)
}
