//! One deformation problem held in memory: parameters, optimizer state and
//! the per-iteration evaluation chain.

use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamParams};
use super::config::{CameraConfig, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::fieldgrad::{JacobianField, PoissonSystem};
use crate::guidance::{GuidanceProvider, GuidanceRequest, PromptBundle, ViewInput};
use crate::losses::{identity_regularization, LossBreakdown};
use crate::mesh::Mesh;
use crate::raster::{
    rasterize, rasterize_backward, sample_cameras, scene_radius, silhouette_backward,
    vertex_view_map, Camera, PatchGrid, RenderBuffers, Shading, OCCLUSION_TOLERANCE,
};

/// Everything a session needs besides the mesh and the provider.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionSettings {
    pub mode: Mode,
    pub alpha: f64,
    pub cameras: CameraConfig,
    pub grid: PatchGrid,
    pub shading: Shading,
    pub silhouette_gradients: bool,
    pub prompts: PromptBundle,
    pub adam: AdamParams,
}

impl SessionSettings {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let o = &config.optimizer;
        Ok(Self {
            mode: config.mode,
            alpha: config.losses.alpha,
            cameras: config.cameras.clone(),
            grid: config.patch_grid()?,
            shading: config.render.shading(),
            silhouette_gradients: config.render.silhouette_gradients,
            prompts: config.prompts.clone(),
            adam: AdamParams {
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
            },
        })
    }
}

/// Result of evaluating the loss chain at the current parameters.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    /// gradient w.r.t. the flat parameter vector
    pub gradient: Vec<f64>,
    pub vertices: Vec<Vector3<f64>>,
}

/// Cameras for `iteration`: the base seed when `fixed`, otherwise a fresh
/// stream per iteration.
pub fn cameras_for(config: &CameraConfig, iteration: usize, fixed: bool) -> Result<Vec<Camera>> {
    let seed = if fixed {
        config.seed
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(iteration as u64 + 1);
        rng.next_u64()
    };
    sample_cameras(config.views, seed, config.radius, config.fov_deg, config.resolution)
}

pub struct Session<P: GuidanceProvider> {
    settings: SessionSettings,
    system: PoissonSystem,
    source: Vec<Vector3<f64>>,
    provider: P,
    params: Vec<f64>,
    adam: Adam,
    iteration: usize,
    last_request: Option<GuidanceRequest>,
}

impl<P: GuidanceProvider> Session<P> {
    /// `mesh` is expected in working (normalized) coordinates.
    pub fn new(mesh: &Mesh, settings: SessionSettings, provider: P) -> Result<Self> {
        let system = PoissonSystem::new(mesh)?;
        let params = match settings.mode {
            Mode::Jacobian => JacobianField::identity(mesh.face_count()).to_flat(),
            Mode::VertexDisplacement => vec![0.0; 3 * mesh.vertex_count()],
        };
        let adam = Adam::new(params.len(), settings.adam);
        Ok(Self {
            settings,
            system,
            source: mesh.vertices().to_vec(),
            provider,
            params,
            adam,
            iteration: 0,
            last_request: None,
        })
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    pub fn system(&self) -> &PoissonSystem {
        &self.system
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.system.faces()
    }

    pub fn source(&self) -> &[Vector3<f64>] {
        &self.source
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn provider_mut(&mut self) -> &mut P {
        &mut self.provider
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameters without touching optimizer state.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    /// The request sent to the provider by the latest evaluation.
    pub fn last_request(&self) -> Option<&GuidanceRequest> {
        self.last_request.as_ref()
    }

    pub fn field(&self) -> Option<JacobianField> {
        (self.settings.mode == Mode::Jacobian).then(|| JacobianField::from_flat(&self.params))
    }

    pub fn fixed_cameras(&self) -> bool {
        self.provider.needs_fixed_cameras()
    }

    pub fn cameras(&self, iteration: usize) -> Result<Vec<Camera>> {
        cameras_for(&self.settings.cameras, iteration, self.fixed_cameras())
    }

    /// Current vertex positions in working coordinates.
    pub fn vertices(&self) -> Result<Vec<Vector3<f64>>> {
        match self.settings.mode {
            Mode::Jacobian => {
                let field = JacobianField::from_flat(&self.params);
                // the identity field reproduces the source; skip the round-off
                if field.matrices().iter().all(|m| *m == nalgebra::Matrix3::identity()) {
                    return Ok(self.source.clone());
                }
                self.system.solve(&field)
            }
            Mode::VertexDisplacement => Ok(self
                .source
                .iter()
                .zip(self.params.chunks_exact(3))
                .map(|(s, d)| s + Vector3::new(d[0], d[1], d[2]))
                .collect()),
        }
    }

    /// Renders every camera at the given positions.
    pub fn render(&self, vertices: &[Vector3<f64>], cameras: &[Camera]) -> Result<Vec<RenderBuffers>> {
        let faces = self.system.faces();
        let shading = self.settings.shading;
        crate::par::map(cameras, |_, cam| rasterize(faces, vertices, cam, &cam.headlight(), &shading))
            .into_iter()
            .collect()
    }

    /// Forward and backward through the whole chain at the current parameters.
    pub fn evaluate(&mut self) -> Result<Evaluation> {
        let vertices = self.vertices()?;
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::non_finite("vertices"));
        }
        let cameras = self.cameras(self.iteration)?;
        let buffers = self.render(&vertices, &cameras)?;
        let tol = OCCLUSION_TOLERANCE * scene_radius(&vertices);
        let grid = self.settings.grid;
        let views = cameras
            .iter()
            .zip(&buffers)
            .enumerate()
            .map(|(i, (cam, buf))| {
                let map = vertex_view_map(&vertices, cam, buf, &grid, tol)?;
                Ok(ViewInput {
                    camera_id: i,
                    image: buf.image.clone(),
                    visible: map.visible_pairs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let request = GuidanceRequest {
            iteration: self.iteration,
            resolution: self.settings.cameras.resolution,
            views,
            prompts: self.settings.prompts.clone(),
        };
        self.last_request = Some(request.clone());
        let response = self.provider.evaluate(&request)?;
        response.validate(&request)?;

        let faces = self.system.faces();
        let shading = self.settings.shading;
        let silhouette = self.settings.silhouette_gradients;
        let per_view = crate::par::map(&cameras, |i, cam| -> Result<Vec<Vector3<f64>>> {
            let light = cam.headlight();
            let mut g = rasterize_backward(faces, &vertices, &light, &shading, &buffers[i], &response.gradients[i])?;
            if silhouette {
                let s = silhouette_backward(faces, &vertices, cam, &buffers[i], &response.gradients[i])?;
                for (a, b) in g.iter_mut().zip(s) {
                    *a += b;
                }
            }
            Ok(g)
        });
        // fixed view order keeps the sum bitwise reproducible
        let mut vertex_grad = vec![Vector3::zeros(); vertices.len()];
        for g in per_view {
            for (a, b) in vertex_grad.iter_mut().zip(g?) {
                *a += b;
            }
        }
        if vertex_grad.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::non_finite("vertex gradient"));
        }

        let (loss, gradient) = match self.settings.mode {
            Mode::Jacobian => {
                let field = JacobianField::from_flat(&self.params);
                let provider_grad = self.system.adjoint(&vertex_grad)?;
                if !provider_grad.is_finite() {
                    return Err(Error::non_finite("Jacobian gradient"));
                }
                let (id_value, id_grad) = identity_regularization(&field, self.settings.alpha);
                if !id_value.is_finite() || !id_grad.is_finite() {
                    return Err(Error::non_finite("identity regularization"));
                }
                let (loss, total) = crate::losses::compose(
                    response.semantic_loss,
                    response.vc_loss,
                    &provider_grad,
                    (id_value, &id_grad),
                )?;
                (loss, total.to_flat())
            }
            Mode::VertexDisplacement => (
                LossBreakdown::new(response.semantic_loss, response.vc_loss, 0.0),
                vertex_grad.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
            ),
        };
        if !loss.is_finite() {
            return Err(Error::non_finite("total loss"));
        }
        Ok(Evaluation { loss, gradient, vertices })
    }

    /// Evaluates, then takes one Adam step. Returns the pre-step evaluation.
    pub fn step(&mut self) -> Result<Evaluation> {
        let eval = self.evaluate()?;
        self.adam.step(&mut self.params, &eval.gradient);
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::non_finite("parameters after the optimizer step"));
        }
        self.iteration += 1;
        Ok(eval)
    }
}

/// Renders `vertices` from `cameras`, for building image targets.
pub fn render_targets(
    faces: &[[usize; 3]],
    vertices: &[Vector3<f64>],
    cameras: &[Camera],
    shading: &Shading,
) -> Result<Vec<Vec<f64>>> {
    crate::par::map(cameras, |_, cam| rasterize(faces, vertices, cam, &cam.headlight(), shading).map(|b| b.image))
        .into_iter()
        .collect()
}
