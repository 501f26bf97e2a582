//! Finite-difference checks of every hand-written reverse pass.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fieldgrad::{JacobianField, PoissonSystem};
use crate::guidance::{
    GuidanceProvider, GuidanceRequest, ImageTargetProvider, PatchMeanVcProvider, PromptBundle, ViewInput,
};
use crate::mesh::Mesh;
use crate::raster::{rasterize, rasterize_backward, sample_cameras, Camera, PatchGrid, Shading};

pub const ADJOINT_THRESHOLD: f64 = 1e-4;
pub const RASTER_THRESHOLD: f64 = 1e-3;
pub const PROVIDER_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-10)
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
}

fn random_field(rng: &mut ChaCha8Rng, faces: usize, spread: f64) -> JacobianField {
    JacobianField::from_matrices(
        (0..faces)
            .map(|_| Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-spread..spread)))
            .collect(),
    )
}

/// `trials` random (field, upstream, direction) triples; compares the adjoint
/// directional derivative of `Σ u·solve(J)` with central differences.
pub fn poisson_adjoint(mesh: &Mesh, trials: usize, seed: u64) -> Result<SuiteReport> {
    let system = PoissonSystem::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let objective = |field: &JacobianField, u: &[Vector3<f64>]| -> Result<f64> {
        Ok(system.solve(field)?.iter().zip(u).map(|(x, u)| x.dot(u)).sum())
    };
    for _ in 0..trials {
        let field = random_field(&mut rng, system.face_count(), 0.5);
        let u: Vec<_> = (0..system.vertex_count()).map(|_| random_vec(&mut rng)).collect();
        let dir = random_field(&mut rng, system.face_count(), 1.0).add(&JacobianField::identity(system.face_count()).scale(-1.0))?;
        let analytic = system.adjoint(&u)?.dot(&dir);
        let h = 1e-5;
        let plus = objective(&field.add(&dir.scale(h))?, &u)?;
        let minus = objective(&field.add(&dir.scale(-h))?, &u)?;
        worst = worst.max(rel_error(analytic, (plus - minus) / (2.0 * h)));
    }
    Ok(SuiteReport {
        name: "poisson adjoint".into(),
        trials,
        max_rel_error: worst,
        threshold: ADJOINT_THRESHOLD,
    })
}

/// Directional derivative of `Σ u·image` under a vertex perturbation, with
/// `u` restricted to pixels whose face assignment is unchanged by the step.
/// Returns `(analytic, numeric)`, or `None` when no pixel is face-stable.
pub fn raster_directional(
    faces: &[[usize; 3]],
    vertices: &[Vector3<f64>],
    camera: &Camera,
    shading: &Shading,
    upstream: &[f64],
    direction: &[Vector3<f64>],
    h: f64,
) -> Result<Option<(f64, f64)>> {
    let light = camera.headlight();
    let shifted = |s: f64| -> Vec<Vector3<f64>> { vertices.iter().zip(direction).map(|(v, d)| v + d * s).collect() };
    let (vp, vm) = (shifted(h), shifted(-h));
    let base = rasterize(faces, vertices, camera, &light, shading)?;
    let plus = rasterize(faces, &vp, camera, &light, shading)?;
    let minus = rasterize(faces, &vm, camera, &light, shading)?;
    let masked: Vec<f64> = (0..base.pixel_count())
        .map(|i| {
            let stable = base.face_id[i] == plus.face_id[i] && base.face_id[i] == minus.face_id[i] && base.covered(i);
            if stable { upstream[i] } else { 0.0 }
        })
        .collect();
    if masked.iter().all(|&u| u == 0.0) {
        return Ok(None);
    }
    let grad = rasterize_backward(faces, vertices, &light, shading, &base, &masked)?;
    let analytic: f64 = grad.iter().zip(direction).map(|(g, d)| g.dot(d)).sum();
    let dot = |img: &[f64]| -> f64 { img.iter().zip(&masked).map(|(a, b)| a * b).sum() };
    let numeric = (dot(&plus.image) - dot(&minus.image)) / (2.0 * h);
    Ok(Some((analytic, numeric)))
}

/// Raster reverse pass on `mesh` from `trials` sampled cameras.
pub fn raster_backward(mesh: &Mesh, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = sample_cameras(trials, seed, 3.0, 60.0, 64)?;
    let shading = Shading::default();
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for cam in &cameras {
        let u: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir: Vec<_> = (0..mesh.vertex_count()).map(|_| random_vec(&mut rng)).collect();
        if let Some((a, n)) = raster_directional(mesh.faces(), mesh.vertices(), cam, &shading, &u, &dir, 1e-6)? {
            worst = worst.max(rel_error(a, n));
            used += 1;
        }
    }
    Ok(SuiteReport {
        name: "raster backward".into(),
        trials: used,
        max_rel_error: worst,
        threshold: RASTER_THRESHOLD,
    })
}

fn random_request(rng: &mut ChaCha8Rng, grid: &PatchGrid, views: usize, vertices: u32) -> GuidanceRequest {
    let px = grid.resolution * grid.resolution;
    GuidanceRequest {
        iteration: 0,
        resolution: grid.resolution,
        views: (0..views)
            .map(|v| ViewInput {
                camera_id: v,
                image: (0..px).map(|_| rng.random::<f64>()).collect(),
                visible: (0..vertices)
                    .filter_map(|i| {
                        let keep = rng.random_bool(0.7);
                        let patch = rng.random_range(0..grid.len() as u32);
                        keep.then_some((i, patch))
                    })
                    .collect(),
            })
            .collect(),
        prompts: PromptBundle::default(),
    }
}

fn provider_directional<P: GuidanceProvider>(
    provider: &mut P,
    request: &GuidanceRequest,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let grad = provider.evaluate(request)?.gradients;
    let dir: Vec<Vec<f64>> = request
        .views
        .iter()
        .map(|v| v.image.iter().map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let analytic: f64 = grad.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d).sum();
    // both losses are quadratic in the pixels, so a large step costs no accuracy
    let h = 1e-3;
    let mut eval = |s: f64| -> Result<f64> {
        let mut r = request.clone();
        for (view, d) in r.views.iter_mut().zip(&dir) {
            for (p, dp) in view.image.iter_mut().zip(d) {
                *p += s * dp;
            }
        }
        let resp = provider.evaluate(&r)?;
        Ok(resp.semantic_loss + resp.vc_loss)
    };
    let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
    Ok((analytic, numeric))
}

/// Image-target and patch-mean providers on random images.
pub fn provider_gradients(trials: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = PatchGrid::new(32, 8, 4)?;
    let (mut worst_image, mut worst_vc): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let request = random_request(&mut rng, &grid, 3, 12);
        let targets = (0..3).map(|_| (0..32 * 32).map(|_| rng.random::<f64>()).collect()).collect();
        let mut image = ImageTargetProvider::new(targets, 1.5);
        let (a, n) = provider_directional(&mut image, &request, &mut rng)?;
        worst_image = worst_image.max(rel_error(a, n));
        let mut vc = PatchMeanVcProvider::new(grid, 0.7);
        let (a, n) = provider_directional(&mut vc, &request, &mut rng)?;
        worst_vc = worst_vc.max(rel_error(a, n));
    }
    Ok(vec![
        SuiteReport {
            name: "image-target provider".into(),
            trials,
            max_rel_error: worst_image,
            threshold: PROVIDER_THRESHOLD,
        },
        SuiteReport {
            name: "patch-mean provider".into(),
            trials,
            max_rel_error: worst_vc,
            threshold: PROVIDER_THRESHOLD,
        },
    ])
}

/// All suites on `mesh` (expected roughly unit-sized and centered).
pub fn all(mesh: &Mesh, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut reports = vec![poisson_adjoint(mesh, 20, seed)?, raster_backward(mesh, 10, seed)?];
    reports.extend(provider_gradients(10, seed)?);
    Ok(reports)
}
