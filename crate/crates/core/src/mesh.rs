//! Triangle meshes, Wavefront OBJ I/O and per-face differential geometry.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Faces whose area on the unit-sphere-normalized mesh falls below this are
/// rejected: the gradient operator divides by face area.
pub const MIN_NORMALIZED_AREA: f64 = 1e-12;

/// A validated triangle mesh. Faces are counter-clockwise when seen from
/// outside; normals follow the right-hand rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking index bounds, repeated indices and face area.
    ///
    /// Area is checked after an implicit unit-sphere normalization so the
    /// threshold is independent of the units the file was authored in.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::Shape(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::non_finite("vertex coordinates"));
        }

        let radius = if n == 0 {
            0.0
        } else {
            let c = centroid(&vertices);
            vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
        };
        let inv_r2 = if radius > 0.0 { 1.0 / (radius * radius) } else { 0.0 };

        let degenerate: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                f[0] == f[1]
                    || f[1] == f[2]
                    || f[0] == f[2]
                    || triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) * inv_r2
                        <= MIN_NORMALIZED_AREA
            })
            .map(|(i, _)| i)
            .collect();
        if !degenerate.is_empty() {
            return Err(Error::DegenerateFaces { faces: degenerate });
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new positions. Positions are not re-validated for
    /// degeneracy: deformed meshes may legitimately collapse faces.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn centroid(&self) -> Vector3<f64> {
        centroid(&self.vertices)
    }

    /// Number of connected components of the face graph (vertices not used by
    /// any face count as their own component).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let a = find(&mut parent, f[0]);
                let b = find(&mut parent, f[k]);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Reads a Wavefront OBJ file. Only `v` and `f` records are used; texture
    /// and normal references in face records are ignored.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text)
    }

    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut tokens = content.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let coords: Vec<&str> = tokens.collect();
                    if coords.len() < 3 {
                        return Err(Error::Parse {
                            line,
                            message: format!("vertex needs 3 coordinates, found {}", coords.len()),
                        });
                    }
                    let mut p = [0.0; 3];
                    for (k, tok) in coords.iter().take(3).enumerate() {
                        p[k] = tok.parse::<f64>().map_err(|e| Error::Parse {
                            line,
                            message: format!("bad coordinate {tok:?}: {e}"),
                        })?;
                    }
                    vertices.push(Vector3::from(p));
                }
                Some("f") => {
                    let refs: Vec<&str> = tokens.collect();
                    if refs.len() != 3 {
                        return Err(Error::NonTriangleFace {
                            face: faces.len(),
                            line,
                            count: refs.len(),
                        });
                    }
                    let mut face = [0usize; 3];
                    for (k, r) in refs.iter().enumerate() {
                        face[k] = parse_index(r, vertices.len(), line)?;
                    }
                    faces.push(face);
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    /// Writes `v`/`f` records with 9 significant digits and 1-based indices.
    pub fn to_obj_string(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 20);
        for v in &self.vertices {
            let _ = writeln!(
                out,
                "v {} {} {}",
                format_sig9(v.x),
                format_sig9(v.y),
                format_sig9(v.z)
            );
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

fn parse_index(token: &str, vertex_count: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let idx: i64 = head.parse().map_err(|e| Error::Parse {
        line,
        message: format!("bad face index {token:?}: {e}"),
    })?;
    let resolved = match idx {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => (vertex_count as i64 + i).try_into().ok(),
    };
    match resolved {
        Some(r) if r < vertex_count => Ok(r),
        _ => Err(Error::Parse {
            line,
            message: format!("face index {idx} out of range (have {vertex_count} vertices)"),
        }),
    }
}

/// `%.9g`-style formatting.
pub(crate) fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // the rounding may have bumped the exponent; that only costs a digit
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

pub fn centroid(vertices: &[Vector3<f64>]) -> Vector3<f64> {
    if vertices.is_empty() {
        return Vector3::zeros();
    }
    vertices.iter().sum::<Vector3<f64>>() / vertices.len() as f64
}

pub fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Parameters of the similarity that maps a mesh into the unit sphere:
/// `normalized = (original - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub center: Vector3<f64>,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            center: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p / self.scale + self.center
    }
}

/// Centers the mesh on its vertex centroid and scales it so the farthest
/// vertex sits at distance 1.
pub fn normalize_unit_sphere(mesh: &Mesh) -> Result<(Mesh, Normalization)> {
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let center = mesh.centroid();
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0, f64::max);
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::ZeroExtent);
    }
    let norm = Normalization {
        scale: 1.0 / radius,
        center,
    };
    let vertices = mesh.vertices.iter().map(|v| norm.apply(v)).collect();
    Ok((
        Mesh {
            vertices,
            faces: mesh.faces.clone(),
        },
        norm,
    ))
}

/// Per-face area, unit normal and an orthonormal tangent basis.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    pub areas: Vec<f64>,
    pub normals: Vec<Vector3<f64>>,
    pub tangents: Vec<[Vector3<f64>; 2]>,
}

impl FaceGeometry {
    pub fn new(mesh: &Mesh) -> Self {
        Self::from_positions(mesh.faces(), mesh.vertices())
    }

    pub fn from_positions(faces: &[[usize; 3]], vertices: &[Vector3<f64>]) -> Self {
        let mut areas = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut tangents = Vec::with_capacity(faces.len());
        for f in faces {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let e1 = b - a;
            let cross = e1.cross(&(c - a));
            let len = cross.norm();
            let n = cross / len;
            let t1 = e1.normalize();
            let t2 = n.cross(&t1);
            areas.push(0.5 * len);
            normals.push(n);
            tangents.push([t1, t2]);
        }
        Self {
            areas,
            normals,
            tangents,
        }
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

pub fn face_geometry(mesh: &Mesh) -> FaceGeometry {
    FaceGeometry::new(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra_obj() -> &'static str {
        "# tetrahedron\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 2 3 4\nf 1 4 3\n"
    }

    #[test]
    fn loads_tetrahedron() {
        let m = Mesh::parse_obj(tetra_obj()).unwrap();
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.face_count(), 4);
        assert_eq!(m.faces()[0], [0, 2, 1]);
        assert_eq!(m.vertices()[3], Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn ignores_texture_and_normal_records() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3//1\n";
        let m = Mesh::parse_obj(text).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        let m = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn repeated_index_is_degenerate() {
        let err = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\nf 1 2 3\n").unwrap_err();
        match err {
            Error::DegenerateFaces { faces } => assert_eq!(faces, vec![0]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn collinear_face_is_degenerate() {
        let err = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 4\nf 1 2 3\n")
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateFaces { faces } if faces == vec![1]));
    }

    #[test]
    fn quad_is_rejected() {
        let err = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(
            err,
            Error::NonTriangleFace {
                line: 5,
                count: 4,
                ..
            }
        ));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = Mesh::parse_obj("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn round_trip_preserves_printed_values() {
        let m = Mesh::new(
            vec![
                Vector3::new(0.123456789123, -1.5e-7, 3.0),
                Vector3::new(12345.6789, 2.0, -0.5),
                Vector3::new(1e12, 7.0, 1.0 / 3.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let text = m.to_obj_string();
        let back = Mesh::parse_obj(&text).unwrap();
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.to_obj_string(), text);
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() <= 1e-8 * b.norm().max(1.0));
        }
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.5), "0.5");
        assert_eq!(format_sig9(-2.0), "-2");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(2.5e-9), "2.50000000e-9");
    }

    #[test]
    fn normalize_offset_cube() {
        let mut verts = Vec::new();
        for &x in &[-2.0, 2.0] {
            for &y in &[-2.0, 2.0] {
                for &z in &[-2.0, 2.0] {
                    verts.push(Vector3::new(x + 5.0, y, z));
                }
            }
        }
        let faces = crate::shapes::cube().faces().to_vec();
        let cube = Mesh::new(verts, faces).unwrap();
        let (n, t) = normalize_unit_sphere(&cube).unwrap();
        assert!((t.center - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((t.scale - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-12);
        assert!(n.centroid().norm() < 1e-9);
        let rmax = n.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((rmax - 1.0).abs() < 1e-9);
        for (a, b) in n.vertices().iter().zip(cube.vertices()) {
            assert!((t.invert(a) - b).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let ico = crate::shapes::icosahedron();
        let (once, _) = normalize_unit_sphere(&ico).unwrap();
        let (twice, t) = normalize_unit_sphere(&once).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(t.center.norm() < 1e-9);
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_single_vertex_and_empty() {
        let single = Mesh::new(vec![Vector3::new(1.0, 2.0, 3.0)], vec![]).unwrap();
        assert!(matches!(normalize_unit_sphere(&single), Err(Error::ZeroExtent)));
        let empty = Mesh::new(vec![], vec![]).unwrap();
        assert!(matches!(normalize_unit_sphere(&empty), Err(Error::EmptyMesh)));
    }

    #[test]
    fn right_triangle_geometry() {
        let tri = Mesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let g = face_geometry(&tri);
        assert!((g.areas[0] - 0.5).abs() < 1e-15);
        assert!((g.normals[0] - Vector3::z()).norm() < 1e-15);

        let big = tri
            .with_vertices(tri.vertices().iter().map(|v| v * 2.0).collect())
            .unwrap();
        assert!((face_geometry(&big).areas[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn icosahedron_areas_match_closed_form() {
        let ico = crate::shapes::icosahedron();
        let g = face_geometry(&ico);
        // circumradius 1 → edge a = 4 / sqrt(10 + 2 sqrt 5); area = 5 sqrt(3) a^2
        let a = 4.0 / (10.0 + 2.0 * 5f64.sqrt()).sqrt();
        let total = 5.0 * 3f64.sqrt() * a * a;
        assert_eq!(g.areas.len(), 20);
        for &area in &g.areas {
            assert!((area - total / 20.0).abs() < 1e-9);
        }
        assert!((g.total_area() - total).abs() < 1e-9);
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = face_geometry(&crate::shapes::icosphere(2));
        for (n, [t1, t2]) in g.normals.iter().zip(&g.tangents) {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!((t1.norm() - 1.0).abs() < 1e-9);
            assert!((t2.norm() - 1.0).abs() < 1e-9);
            assert!(t1.dot(t2).abs() < 1e-9 && t1.dot(n).abs() < 1e-9 && t2.dot(n).abs() < 1e-9);
        }
    }

    #[test]
    fn reversed_winding_flips_normals() {
        let ico = crate::shapes::icosahedron();
        let flipped = Mesh::new(
            ico.vertices().to_vec(),
            ico.faces().iter().map(|f| [f[0], f[2], f[1]]).collect(),
        )
        .unwrap();
        let a = face_geometry(&ico);
        let b = face_geometry(&flipped);
        for (na, nb) in a.normals.iter().zip(&b.normals) {
            assert!((na + nb).norm() < 1e-12);
        }
    }
}
