//! Geometric quality metrics: self-intersection ratio and deviation of the
//! realized map's Jacobians from identity.

pub mod bvh;
pub mod tritri;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fieldgrad::PoissonSystem;
pub use tritri::triangles_intersect;

/// Listed pairs in a report are capped at this many.
pub const PAIR_CAP: usize = 1000;

/// Histogram resolution of [`jacobian_deviation`].
pub const DEVIATION_BINS: usize = 32;

fn shares_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|v| b.contains(v))
}

fn face_corners(f: &[usize; 3], v: &[Vector3<f64>]) -> [Vector3<f64>; 3] {
    [v[f[0]], v[f[1]], v[f[2]]]
}

/// All intersecting non-adjacent face pairs `(i, j)`, `i < j`, sorted.
pub fn intersecting_pairs(faces: &[[usize; 3]], vertices: &[Vector3<f64>]) -> Vec<(usize, usize)> {
    let bvh = bvh::Bvh::build(faces, vertices);
    let mut pairs = Vec::new();
    bvh.self_pairs(tritri::EPS, |i, j| {
        let (fi, fj) = (&faces[i], &faces[j]);
        if !shares_vertex(fi, fj)
            && triangles_intersect(&face_corners(fi, vertices), &face_corners(fj, vertices))
        {
            pairs.push((i.min(j), i.max(j)));
        }
    });
    pairs.sort_unstable();
    pairs
}

/// O(F²) reference for [`intersecting_pairs`].
pub fn intersecting_pairs_brute_force(faces: &[[usize; 3]], vertices: &[Vector3<f64>]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..faces.len() {
        for j in i + 1..faces.len() {
            if !shares_vertex(&faces[i], &faces[j])
                && triangles_intersect(&face_corners(&faces[i], vertices), &face_corners(&faces[j], vertices))
            {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub intersecting_faces: usize,
    pub total_faces: usize,
    pub ratio: f64,
    pub total_pairs: usize,
    /// at most [`PAIR_CAP`] entries
    pub pairs: Vec<(usize, usize)>,
    pub pairs_truncated: bool,
}

impl IntersectionReport {
    pub fn from_pairs(total_faces: usize, pairs: &[(usize, usize)]) -> Self {
        let mut flagged = vec![false; total_faces];
        for &(i, j) in pairs {
            flagged[i] = true;
            flagged[j] = true;
        }
        let intersecting_faces = flagged.iter().filter(|&&f| f).count();
        Self {
            intersecting_faces,
            total_faces,
            ratio: if total_faces == 0 {
                0.0
            } else {
                intersecting_faces as f64 / total_faces as f64
            },
            total_pairs: pairs.len(),
            pairs: pairs.iter().take(PAIR_CAP).copied().collect(),
            pairs_truncated: pairs.len() > PAIR_CAP,
        }
    }
}

/// Fraction of faces that cross at least one face they share no vertex with.
pub fn self_intersection_ratio(faces: &[[usize; 3]], vertices: &[Vector3<f64>]) -> IntersectionReport {
    IntersectionReport::from_pairs(faces.len(), &intersecting_pairs(faces, vertices))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationSummary {
    pub mean: f64,
    pub max: f64,
    /// [`DEVIATION_BINS`] equal bins over `[0, max]`; everything in bin 0 when
    /// `max` is at round-off level
    pub histogram: Vec<usize>,
}

/// Per-face `‖∇_iΦ − (I − n nᵀ)‖_F` of the map from the source to `vertices`.
pub fn jacobian_deviation(system: &PoissonSystem, vertices: &[Vector3<f64>]) -> Result<DeviationSummary> {
    if vertices.len() != system.vertex_count() {
        return Err(Error::Shape(format!(
            "{} vertices for a mesh with {}",
            vertices.len(),
            system.vertex_count()
        )));
    }
    let realized = system.jacobians_of_map(vertices)?;
    let dev: Vec<f64> = realized
        .matrices()
        .iter()
        .zip(system.tangent_projectors())
        .map(|(j, p)| (j - p).norm())
        .collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    let mean = dev.iter().sum::<f64>() / dev.len().max(1) as f64;
    let mut histogram = vec![0usize; DEVIATION_BINS];
    for &d in &dev {
        // round-off level deviations all land in the first bin
        let bin = if max > 1e-12 {
            ((d / max * DEVIATION_BINS as f64) as usize).min(DEVIATION_BINS - 1)
        } else {
            0
        };
        histogram[bin] += 1;
    }
    Ok(DeviationSummary { mean, max, histogram })
}
