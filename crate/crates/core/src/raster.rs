//! Software rasterization with flat diffuse shading and its reverse pass.
//!
//! Pixel `(row, col)` has its center at `(row + 0.5, col + 0.5)` in
//! continuous image coordinates, rows growing downward. A pixel is covered by
//! a triangle when its center lies inside or on the projected triangle;
//! z-buffer ties go to the lower face index.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel stored in [`RenderBuffers::face_id`] for background pixels.
pub const NO_FACE: u32 = u32::MAX;

/// Vertices closer to the eye than this (along the view axis) are behind the
/// camera; triangles touching them are skipped rather than clipped.
pub const NEAR_PLANE: f64 = 1e-4;

/// Maximum camera elevation above or below the equator, in degrees.
pub const MAX_ELEVATION_DEG: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vector3<f64>,
    pub target: Vector3<f64>,
    pub up: Vector3<f64>,
    pub fov_deg: f64,
    pub resolution: usize,
}

/// A point in camera-facing image space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    /// continuous row coordinate
    pub row: f64,
    /// continuous column coordinate
    pub col: f64,
    /// distance along the view axis
    pub depth: f64,
}

impl Camera {
    pub fn new(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_deg: f64,
        resolution: usize,
    ) -> Result<Self> {
        let cam = Self {
            eye,
            target,
            up,
            fov_deg,
            resolution,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let forward = self.target - self.eye;
        if forward.norm() <= 1e-12 {
            return Err(Error::Camera("eye coincides with target".into()));
        }
        if forward.normalize().cross(&self.up).norm() <= 1e-9 {
            return Err(Error::Camera("up hint is parallel to the view direction".into()));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return Err(Error::Camera(format!("fov {} outside (1, 179) degrees", self.fov_deg)));
        }
        if self.resolution < 16 {
            return Err(Error::Camera(format!("resolution {} below 16", self.resolution)));
        }
        Ok(())
    }

    /// (right, up, forward) orthonormal frame.
    pub fn frame(&self) -> [Vector3<f64>; 3] {
        let forward = (self.target - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        [right, up, forward]
    }

    fn focal(&self) -> f64 {
        1.0 / (self.fov_deg.to_radians() * 0.5).tan()
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projected {
        let [right, up, forward] = self.frame();
        let d = p - self.eye;
        let (x, y, z) = (right.dot(&d), up.dot(&d), forward.dot(&d));
        let f = self.focal();
        let half = self.resolution as f64 * 0.5;
        Projected {
            row: (1.0 - f * y / z) * half,
            col: (1.0 + f * x / z) * half,
            depth: z,
        }
    }

    /// Projection plus the gradients of `row` and `col` w.r.t. `p`.
    pub fn project_with_gradient(&self, p: &Vector3<f64>) -> (Projected, Vector3<f64>, Vector3<f64>) {
        let [right, up, forward] = self.frame();
        let d = p - self.eye;
        let (x, y, z) = (right.dot(&d), up.dot(&d), forward.dot(&d));
        let fh = self.focal() * self.resolution as f64 * 0.5;
        let half = self.resolution as f64 * 0.5;
        let projected = Projected {
            row: half - fh * y / z,
            col: half + fh * x / z,
            depth: z,
        };
        let d_row = -(up / z - forward * (y / (z * z))) * fh;
        let d_col = (right / z - forward * (x / (z * z))) * fh;
        (projected, d_row, d_col)
    }

    /// Unit direction from the target toward the eye: a light placed at the
    /// camera.
    pub fn headlight(&self) -> Vector3<f64> {
        (self.eye - self.target).normalize()
    }
}

/// Cameras on a sphere of `radius` about the origin, all looking at the
/// origin. Azimuth and elevation are stratified: each camera owns one azimuth
/// stratum, and elevation strata are assigned by a seeded permutation.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn sample_cameras(
    count: usize,
    seed: u64,
    radius: f64,
    fov_deg: f64,
    resolution: usize,
) -> Result<Vec<Camera>> {
    if count == 0 {
        return Err(Error::Camera("camera count must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Camera(format!("camera radius {radius} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<usize> = (0..count).collect();
    strata.shuffle(&mut rng);
    let max_el = MAX_ELEVATION_DEG.to_radians();
    (0..count)
        .map(|i| {
            let az = 2.0 * PI * (i as f64 + rng.random::<f64>()) / count as f64;
            let u = (strata[i] as f64 + rng.random::<f64>()) / count as f64;
            let el = -max_el + 2.0 * max_el * u;
            let dir = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
            Camera::new(dir * radius, Vector3::zeros(), Vector3::y(), fov_deg, resolution)
        })
        .collect()
}

/// Diffuse shading constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Shading {
    pub albedo: f64,
    pub ambient: f64,
    pub background: f64,
}

impl Default for Shading {
    fn default() -> Self {
        Self {
            albedo: 0.8,
            ambient: 0.2,
            background: 0.0,
        }
    }
}

impl Shading {
    pub fn intensity(&self, normal: &Vector3<f64>, light: &Vector3<f64>) -> f64 {
        self.albedo * normal.dot(light).clamp(0.0, 1.0) + self.ambient
    }
}

/// Output of one rasterization pass, row-major `size × size`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub size: usize,
    pub image: Vec<f64>,
    pub depth: Vec<f64>,
    pub face_id: Vec<u32>,
    pub barycentric: Vec<[f64; 3]>,
}

impl RenderBuffers {
    fn empty(size: usize, background: f64) -> Self {
        let n = size * size;
        Self {
            size,
            image: vec![background; n],
            depth: vec![f64::INFINITY; n],
            face_id: vec![NO_FACE; n],
            barycentric: vec![[0.0; 3]; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.size * self.size
    }

    pub fn covered(&self, pixel: usize) -> bool {
        self.face_id[pixel] != NO_FACE
    }

    pub fn coverage_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != NO_FACE).count()
    }
}

fn face_normal(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Vector3<f64>> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    (len > 0.0).then(|| n / len)
}

/// Signed doubled area of (a, b, p) in (col, row) coordinates.
fn edge(a: &Projected, b: &Projected, p_row: f64, p_col: f64) -> f64 {
    (b.col - a.col) * (p_row - a.row) - (b.row - a.row) * (p_col - a.col)
}

/// Rasterizes `faces` over `vertices` (the current, possibly deformed,
/// positions). Faces are two-sided for coverage; shading uses the face normal
/// from the current winding.
pub fn rasterize(
    faces: &[[usize; 3]],
    vertices: &[Vector3<f64>],
    camera: &Camera,
    light: &Vector3<f64>,
    shading: &Shading,
) -> Result<RenderBuffers> {
    if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::non_finite("vertices passed to the rasterizer"));
    }
    let size = camera.resolution;
    let mut buf = RenderBuffers::empty(size, shading.background);
    let projected: Vec<Projected> = vertices.iter().map(|v| camera.project(v)).collect();

    for (fi, f) in faces.iter().enumerate() {
        let p = [projected[f[0]], projected[f[1]], projected[f[2]]];
        if p.iter().any(|q| q.depth <= NEAR_PLANE) {
            continue;
        }
        let area = edge(&p[0], &p[1], p[2].row, p[2].col);
        if area.abs() < 1e-14 {
            continue;
        }
        let Some(normal) = face_normal(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) else {
            continue;
        };
        let intensity = shading.intensity(&normal, light);

        let min_row = p.iter().map(|q| q.row).fold(f64::INFINITY, f64::min);
        let max_row = p.iter().map(|q| q.row).fold(f64::NEG_INFINITY, f64::max);
        let min_col = p.iter().map(|q| q.col).fold(f64::INFINITY, f64::min);
        let max_col = p.iter().map(|q| q.col).fold(f64::NEG_INFINITY, f64::max);
        let Some(rows) = pixel_span(min_row, max_row, size) else { continue };
        let Some(cols) = pixel_span(min_col, max_col, size) else { continue };

        let inv_depth = [1.0 / p[0].depth, 1.0 / p[1].depth, 1.0 / p[2].depth];
        for r in rows {
            let pr = r as f64 + 0.5;
            for c in cols.clone() {
                let pc = c as f64 + 0.5;
                let l0 = edge(&p[1], &p[2], pr, pc) / area;
                let l1 = edge(&p[2], &p[0], pr, pc) / area;
                let l2 = edge(&p[0], &p[1], pr, pc) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let q = [l0 * inv_depth[0], l1 * inv_depth[1], l2 * inv_depth[2]];
                let depth = 1.0 / (q[0] + q[1] + q[2]);
                let idx = r * size + c;
                let nearer = depth < buf.depth[idx]
                    || (depth == buf.depth[idx] && (fi as u32) < buf.face_id[idx]);
                if nearer {
                    buf.depth[idx] = depth;
                    buf.face_id[idx] = fi as u32;
                    buf.barycentric[idx] = [q[0] * depth, q[1] * depth, q[2] * depth];
                    buf.image[idx] = intensity;
                }
            }
        }
    }
    Ok(buf)
}

/// Pixel indices whose centers can fall within `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, size: usize) -> Option<std::ops::Range<usize>> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(size as f64 - 1.0);
    (first <= last).then(|| first as usize..last as usize + 1)
}

/// Reverse pass of [`rasterize`]: gradient of a loss w.r.t. vertex positions
/// given its gradient w.r.t. the image.
///
/// Pixel-to-face assignment is held fixed, so only the shading normal
/// carries gradient; silhouette and occlusion changes contribute nothing.
pub fn rasterize_backward(
    faces: &[[usize; 3]],
    vertices: &[Vector3<f64>],
    light: &Vector3<f64>,
    shading: &Shading,
    buffers: &RenderBuffers,
    upstream: &[f64],
) -> Result<Vec<Vector3<f64>>> {
    if upstream.len() != buffers.pixel_count() {
        return Err(Error::Shape(format!(
            "upstream has {} pixels, buffers have {}",
            upstream.len(),
            buffers.pixel_count()
        )));
    }
    let mut per_face = vec![0.0; faces.len()];
    for (px, &f) in buffers.face_id.iter().enumerate() {
        if f != NO_FACE {
            per_face[f as usize] += upstream[px];
        }
    }
    let mut grad = vec![Vector3::zeros(); vertices.len()];
    for (fi, f) in faces.iter().enumerate() {
        let g = per_face[fi];
        if g == 0.0 {
            continue;
        }
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let (e1, e2) = (b - a, c - a);
        let cross = e1.cross(&e2);
        let len = cross.norm();
        if len == 0.0 {
            continue;
        }
        let n = cross / len;
        if n.dot(light) <= 0.0 {
            continue;
        }
        // dL/dn, then through n = cross / |cross|
        let dn = light * (g * shading.albedo);
        let dcross = (dn - n * n.dot(&dn)) / len;
        let db = e2.cross(&dcross);
        let dc = dcross.cross(&e1);
        grad[f[0]] -= db + dc;
        grad[f[1]] += db;
        grad[f[2]] += dc;
    }
    Ok(grad)
}

/// Boundary term of the reverse pass, estimated from neighbouring pixel
/// pairs whose face ids differ.
///
/// For each such pair the nearer face owns the boundary. The owner edge that
/// crosses the segment between the two pixel centers is located, and moving
/// the crossing by one pixel is taken to hand the whole non-owner pixel over to
/// the owner color. Steep edges are sampled by horizontal pairs and shallow
/// ones by vertical pairs, so each unit of edge length is counted once.
pub fn silhouette_backward(
    faces: &[[usize; 3]],
    vertices: &[Vector3<f64>],
    camera: &Camera,
    buffers: &RenderBuffers,
    upstream: &[f64],
) -> Result<Vec<Vector3<f64>>> {
    if upstream.len() != buffers.pixel_count() || camera.resolution != buffers.size {
        return Err(Error::Shape(format!(
            "upstream has {} pixels, buffers have {}",
            upstream.len(),
            buffers.pixel_count()
        )));
    }
    let size = buffers.size;
    let mut grad = vec![Vector3::zeros(); vertices.len()];
    let mut cache: std::collections::HashMap<usize, (Projected, Vector3<f64>, Vector3<f64>)> =
        std::collections::HashMap::new();
    let mut proj = |v: usize| *cache.entry(v).or_insert_with(|| camera.project_with_gradient(&vertices[v]));

    for r in 0..size {
        for c in 0..size {
            let a = r * size + c;
            // (neighbour index, true when the pair runs along columns)
            for (b, horizontal) in [(c + 1 < size).then(|| (a + 1, true)), (r + 1 < size).then(|| (a + size, false))]
                .into_iter()
                .flatten()
            {
                let (fa, fb) = (buffers.face_id[a], buffers.face_id[b]);
                if fa == fb {
                    continue;
                }
                let owner_is_a = fb == NO_FACE || (fa != NO_FACE && buffers.depth[a] <= buffers.depth[b]);
                let (owner, other) = if owner_is_a { (a, b) } else { (b, a) };
                let g_other = upstream[other];
                let jump = buffers.image[owner] - buffers.image[other];
                if g_other == 0.0 || jump == 0.0 {
                    continue;
                }
                let face = &faces[buffers.face_id[owner] as usize];
                // fixed coordinate of the segment, and its span along the moving axis
                let (fixed, lo, hi) = if horizontal {
                    (r as f64 + 0.5, c as f64 + 0.5, c as f64 + 1.5)
                } else {
                    (c as f64 + 0.5, r as f64 + 0.5, r as f64 + 1.5)
                };
                for k in 0..3 {
                    let (i0, i1) = (face[k], face[(k + 1) % 3]);
                    let (p0, dr0, dc0) = proj(i0);
                    let (p1, dr1, dc1) = proj(i1);
                    // u: coordinate along the pair axis, w: the fixed one
                    let (u0, w0, u1, w1, du0, dw0, du1, dw1) = if horizontal {
                        (p0.col, p0.row, p1.col, p1.row, dc0, dr0, dc1, dr1)
                    } else {
                        (p0.row, p0.col, p1.row, p1.col, dr0, dc0, dr1, dc1)
                    };
                    let dw = w1 - w0;
                    if dw.abs() < 1e-9 {
                        continue;
                    }
                    let s = (fixed - w0) / dw;
                    if !(0.0..=1.0).contains(&s) {
                        continue;
                    }
                    let x = u0 + s * (u1 - u0);
                    if x < lo || x > hi {
                        continue;
                    }
                    // each edge is sampled along one axis only, the one it crosses more steeply
                    let du = u1 - u0;
                    if du.abs() > dw.abs() || (du.abs() == dw.abs() && !horizontal) {
                        break;
                    }
                    // owner on the low side grows toward the other pixel as x increases
                    let sign = if owner < other { 1.0 } else { -1.0 };
                    let dl_dx = sign * g_other * jump;
                    let dx_du0 = 1.0 - s;
                    let dx_du1 = s;
                    let dx_dw0 = du * (s - 1.0) / dw;
                    let dx_dw1 = -du * s / dw;
                    grad[i0] += (du0 * dx_du0 + dw0 * dx_dw0) * dl_dx;
                    grad[i1] += (du1 * dx_du1 + dw1 * dx_dw1) * dl_dx;
                    break;
                }
            }
        }
    }
    Ok(grad)
}

/// Overlapping square patches of side `patch_size`, spaced by `stride`,
/// covering a `resolution × resolution` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub resolution: usize,
    pub patch_size: usize,
    pub stride: usize,
}

impl PatchGrid {
    pub fn new(resolution: usize, patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 || patch_size > resolution {
            return Err(Error::PatchGrid(format!(
                "patch {patch_size} / stride {stride} invalid for resolution {resolution}"
            )));
        }
        if !resolution.is_multiple_of(patch_size) {
            return Err(Error::PatchGrid(format!(
                "resolution {resolution} is not divisible by patch size {patch_size}"
            )));
        }
        if !(resolution - patch_size).is_multiple_of(stride) {
            return Err(Error::PatchGrid(format!(
                "stride {stride} does not divide resolution - patch size = {}",
                resolution - patch_size
            )));
        }
        Ok(Self {
            resolution,
            patch_size,
            stride,
        })
    }

    /// Patches per side.
    pub fn dim(&self) -> usize {
        (self.resolution - self.patch_size) / self.stride + 1
    }

    pub fn len(&self) -> usize {
        self.dim() * self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, k: usize) -> f64 {
        self.patch_size as f64 * 0.5 + (k * self.stride) as f64
    }

    fn nearest_axis(&self, pixel: usize) -> usize {
        let x = pixel as f64 + 0.5 - self.patch_size as f64 * 0.5;
        let k = (x / self.stride as f64).round().max(0.0) as usize;
        k.min(self.dim() - 1)
    }

    /// Patch whose center is nearest to the center of pixel `(row, col)`.
    pub fn nearest_patch(&self, row: usize, col: usize) -> usize {
        self.nearest_axis(row) * self.dim() + self.nearest_axis(col)
    }

    /// Pixel rows and columns covered by patch `index`.
    pub fn patch_span(&self, index: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (pr, pc) = (index / self.dim(), index % self.dim());
        let (r0, c0) = (pr * self.stride, pc * self.stride);
        (r0..r0 + self.patch_size, c0..c0 + self.patch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexView {
    pub visible: bool,
    pub row: usize,
    pub col: usize,
    pub patch: usize,
}

/// `p(v, r)` and `P(v, r)` for every vertex in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexViewMap {
    pub entries: Vec<VertexView>,
}

impl VertexViewMap {
    /// `(vertex, patch)` for each visible vertex, in vertex order.
    pub fn visible_pairs(&self) -> Vec<(u32, u32)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.visible)
            .map(|(v, e)| (v as u32, e.patch as u32))
            .collect()
    }
}

/// Occlusion tolerance for vertex visibility as a fraction of scene radius.
pub const OCCLUSION_TOLERANCE: f64 = 1e-3;

pub fn scene_radius(vertices: &[Vector3<f64>]) -> f64 {
    vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// A vertex is visible when it projects inside the image and is not behind
/// the z-buffer at its pixel by more than `occlusion_tol`.
pub fn vertex_view_map(
    vertices: &[Vector3<f64>],
    camera: &Camera,
    buffers: &RenderBuffers,
    grid: &PatchGrid,
    occlusion_tol: f64,
) -> Result<VertexViewMap> {
    if grid.resolution != buffers.size || camera.resolution != buffers.size {
        return Err(Error::Shape(format!(
            "patch grid {} / camera {} / buffers {} disagree on resolution",
            grid.resolution, camera.resolution, buffers.size
        )));
    }
    let size = buffers.size as f64;
    let entries = vertices
        .iter()
        .map(|v| {
            let p = camera.project(v);
            let in_bounds = p.depth > NEAR_PLANE
                && p.row >= 0.0
                && p.col >= 0.0
                && p.row < size
                && p.col < size;
            if !in_bounds {
                return VertexView {
                    visible: false,
                    row: 0,
                    col: 0,
                    patch: 0,
                };
            }
            let (row, col) = (p.row as usize, p.col as usize);
            let zbuf = buffers.depth[row * buffers.size + col];
            VertexView {
                visible: p.depth <= zbuf + occlusion_tol,
                row,
                col,
                patch: grid.nearest_patch(row, col),
            }
        })
        .collect();
    Ok(VertexViewMap { entries })
}

/// Binary 8-bit PGM, `round(255·v)` with values clamped to [0, 1].
pub fn pgm_bytes(size: usize, image: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{size} {size}\n255\n").into_bytes();
    out.extend(image.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, size: usize, image: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&pgm_bytes(size, image))
        .map_err(|e| Error::io(path, e))
}
