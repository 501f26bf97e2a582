//! In-core providers with closed-form losses.

use super::{GuidanceProvider, GuidanceRequest, GuidanceResponse};
use crate::error::{Error, Result};
use crate::raster::PatchGrid;

/// Zero loss, zero gradient: leaves only the in-core regularizers active.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullProvider;

impl GuidanceProvider for NullProvider {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse> {
        request.validate()?;
        Ok(GuidanceResponse::zeros(request.views.len(), request.pixel_count()))
    }
}

/// Stand-in semantic loss: `w · ½ Σ_views ‖image − target‖² / pixels`.
#[derive(Clone, Debug)]
pub struct ImageTargetProvider {
    targets: Vec<Vec<f64>>,
    weight: f64,
}

impl ImageTargetProvider {
    pub fn new(targets: Vec<Vec<f64>>, weight: f64) -> Self {
        Self { targets, weight }
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }
}

impl GuidanceProvider for ImageTargetProvider {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse> {
        request.validate()?;
        if request.views.len() != self.targets.len() {
            return Err(Error::Shape(format!(
                "{} views but {} target images",
                request.views.len(),
                self.targets.len()
            )));
        }
        let px = request.pixel_count() as f64;
        let mut loss = 0.0;
        let mut gradients = Vec::with_capacity(self.targets.len());
        for (view, target) in request.views.iter().zip(&self.targets) {
            if target.len() != view.image.len() {
                return Err(Error::Shape("target image resolution differs from render".into()));
            }
            let mut g = Vec::with_capacity(target.len());
            for (&i, &t) in view.image.iter().zip(target) {
                let d = i - t;
                loss += 0.5 * d * d;
                g.push(self.weight * d / px);
            }
            gradients.push(g);
        }
        Ok(GuidanceResponse {
            semantic_loss: self.weight * loss / px,
            vc_loss: 0.0,
            gradients,
        })
    }

    fn needs_fixed_cameras(&self) -> bool {
        true
    }
}

/// View consistency with the patch mean intensity as the per-patch feature:
/// `β/Z Σ_v Σ_{i≠j} (m(P(v,r_i)) − m(P(v,r_j)))²` over ordered view pairs in
/// which `v` is visible, `Z` the number of such pairs.
#[derive(Clone, Debug)]
pub struct PatchMeanVcProvider {
    grid: PatchGrid,
    weight: f64,
}

impl PatchMeanVcProvider {
    pub fn new(grid: PatchGrid, weight: f64) -> Self {
        Self { grid, weight }
    }

    fn patch_mean(&self, image: &[f64], patch: usize) -> f64 {
        let (rows, cols) = self.grid.patch_span(patch);
        let size = self.grid.resolution;
        let mut s = 0.0;
        for r in rows {
            s += image[r * size + cols.start..r * size + cols.end].iter().sum::<f64>();
        }
        s / (self.grid.patch_size * self.grid.patch_size) as f64
    }
}

impl GuidanceProvider for PatchMeanVcProvider {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse> {
        request.validate()?;
        if request.resolution != self.grid.resolution {
            return Err(Error::Shape(format!(
                "request resolution {} vs patch grid {}",
                request.resolution, self.grid.resolution
            )));
        }
        let patches = self.grid.len();
        // per vertex: (view, patch, mean)
        let mut seen: std::collections::BTreeMap<u32, Vec<(usize, usize, f64)>> = Default::default();
        let mut means: Vec<std::collections::HashMap<usize, f64>> = vec![Default::default(); request.views.len()];
        for (vi, view) in request.views.iter().enumerate() {
            for &(vertex, patch) in &view.visible {
                let patch = patch as usize;
                if patch >= patches {
                    return Err(Error::Shape(format!(
                        "view {vi} maps vertex {vertex} to patch {patch}; grid has {patches}"
                    )));
                }
                let m = *means[vi]
                    .entry(patch)
                    .or_insert_with(|| self.patch_mean(&view.image, patch));
                seen.entry(vertex).or_default().push((vi, patch, m));
            }
        }

        let pairs: usize = seen.values().map(|obs| obs.len() * obs.len().saturating_sub(1)).sum();
        let mut gradients = vec![vec![0.0; request.pixel_count()]; request.views.len()];
        if pairs == 0 {
            return Ok(GuidanceResponse {
                semantic_loss: 0.0,
                vc_loss: 0.0,
                gradients,
            });
        }
        let z = pairs as f64;
        let mut loss = 0.0;
        // dL/dm accumulated per (view, patch)
        let mut dmean: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); request.views.len()];
        for obs in seen.values() {
            let k = obs.len() as f64;
            let sum: f64 = obs.iter().map(|o| o.2).sum();
            for (i, a) in obs.iter().enumerate() {
                for (j, b) in obs.iter().enumerate() {
                    if i != j {
                        loss += (a.2 - b.2).powi(2);
                    }
                }
                // each unordered pair appears twice among ordered pairs
                *dmean[a.0].entry(a.1).or_insert(0.0) += 4.0 * (k * a.2 - sum) * self.weight / z;
            }
        }
        let area = (self.grid.patch_size * self.grid.patch_size) as f64;
        let size = self.grid.resolution;
        for (vi, per_patch) in dmean.iter().enumerate() {
            for (&patch, &d) in per_patch {
                let (rows, cols) = self.grid.patch_span(patch);
                for r in rows {
                    for g in &mut gradients[vi][r * size + cols.start..r * size + cols.end] {
                        *g += d / area;
                    }
                }
            }
        }
        Ok(GuidanceResponse {
            semantic_loss: 0.0,
            vc_loss: self.weight * loss / z,
            gradients,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{PromptBundle, ViewInput};

    fn request(images: Vec<Vec<f64>>, res: usize, visible: Vec<Vec<(u32, u32)>>) -> GuidanceRequest {
        GuidanceRequest {
            iteration: 0,
            resolution: res,
            views: images
                .into_iter()
                .zip(visible)
                .enumerate()
                .map(|(i, (image, visible))| ViewInput {
                    camera_id: i,
                    image,
                    visible,
                })
                .collect(),
            prompts: PromptBundle::default(),
        }
    }

    #[test]
    fn image_target_zero_at_target() {
        let t = vec![vec![0.3; 256], vec![0.7; 256]];
        let mut p = ImageTargetProvider::new(t.clone(), 1.0);
        let r = p.evaluate(&request(t, 16, vec![vec![], vec![]])).unwrap();
        assert_eq!(r.semantic_loss, 0.0);
        assert!(r.gradients.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn image_target_single_pixel_offset() {
        let t = vec![vec![0.5; 256]];
        let mut img = t.clone();
        let eps = 0.1;
        img[0][37] += eps;
        let mut p = ImageTargetProvider::new(t, 1.0);
        let r = p.evaluate(&request(img, 16, vec![vec![]])).unwrap();
        assert!((r.semantic_loss - eps * eps / (2.0 * 256.0)).abs() < 1e-15);
        assert!((r.gradients[0][37] - eps / 256.0).abs() < 1e-15);
        assert_eq!(r.gradients[0][36], 0.0);
    }

    #[test]
    fn image_target_view_count_mismatch() {
        let mut p = ImageTargetProvider::new(vec![vec![0.0; 256]], 1.0);
        let err = p
            .evaluate(&request(vec![vec![0.0; 256]; 2], 16, vec![vec![]; 2]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn vc_two_views_one_vertex() {
        let grid = PatchGrid::new(32, 16, 16).unwrap();
        let mut a = vec![0.0; 1024];
        let mut b = vec![0.0; 1024];
        for r in 0..16 {
            for c in 0..16 {
                a[r * 32 + c] = 0.2;
                b[r * 32 + c] = 0.6;
            }
        }
        let mut p = PatchMeanVcProvider::new(grid, 1.0);
        let req = request(vec![a, b], 32, vec![vec![(0, 0)], vec![(0, 0)]]);
        let r = p.evaluate(&req).unwrap();
        assert!((r.vc_loss - 0.16).abs() < 1e-12);
        // dL/dm = ±4·0.4/Z = ∓0.8, spread over 256 pixels
        assert!((r.gradients[0][0] + 0.8 / 256.0).abs() < 1e-15);
        assert!((r.gradients[1][0] - 0.8 / 256.0).abs() < 1e-15);
        assert_eq!(r.gradients[0][16], 0.0);
    }

    #[test]
    fn vc_single_view_vertex_contributes_nothing() {
        let grid = PatchGrid::new(32, 16, 16).unwrap();
        let mut p = PatchMeanVcProvider::new(grid, 1.0);
        let req = request(vec![vec![0.1; 1024], vec![0.9; 1024]], 32, vec![vec![(3, 1)], vec![(4, 2)]]);
        let r = p.evaluate(&req).unwrap();
        assert_eq!(r.vc_loss, 0.0);
        assert!(r.gradients.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn vc_rejects_out_of_range_patch() {
        let grid = PatchGrid::new(32, 16, 16).unwrap();
        let mut p = PatchMeanVcProvider::new(grid, 1.0);
        let req = request(vec![vec![0.0; 1024]], 32, vec![vec![(0, 4)]]);
        assert!(matches!(p.evaluate(&req), Err(Error::Shape(_))));
    }

    #[test]
    fn identical_views_have_zero_vc() {
        let grid = PatchGrid::new(32, 16, 8).unwrap();
        let img: Vec<f64> = (0..1024).map(|i| (i % 37) as f64 / 37.0).collect();
        let vis = vec![(0, 0), (1, 4), (2, 8)];
        let mut p = PatchMeanVcProvider::new(grid, 2.0);
        let r = p
            .evaluate(&request(vec![img.clone(), img], 32, vec![vis.clone(), vis]))
            .unwrap();
        assert_eq!(r.vc_loss, 0.0);
        assert!(r.gradients.iter().flatten().all(|&g| g == 0.0));
    }
}
