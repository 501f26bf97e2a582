//! Browser bindings: orbit rendering, Poisson region edits, and a step-wise
//! optimizer comparing the Jacobian and vertex parameterizations.

use jacfield::fieldgrad::{JacobianField, PoissonSystem};
use jacfield::guidance::ImageTargetProvider;
use jacfield::metrics::self_intersection_ratio;
use jacfield::optim::config::RunConfig;
use jacfield::optim::session::{cameras_for, render_targets};
use jacfield::optim::{Mode, Session, SessionSettings};
use jacfield::raster::{rasterize, Camera, Shading};
use jacfield::{shapes, Matrix3, Mesh, Vector3};
use wasm_bindgen::prelude::*;

fn err(e: jacfield::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn shape(name: &str) -> Result<Mesh, JsValue> {
    Ok(match name {
        "icosphere" => shapes::icosphere(3),
        "cube" => shapes::cube(),
        "torus" => shapes::torus(0.7, 0.28, 40, 20),
        "uv-sphere" => shapes::uv_sphere(32, 16),
        other => return Err(JsValue::from_str(&format!("unknown shape {other}"))),
    })
}

fn orbit_camera(azimuth_deg: f64, elevation_deg: f64, resolution: usize) -> Result<Camera, JsValue> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.clamp(-80.0, 80.0).to_radians());
    let eye = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * 3.2;
    Camera::new(eye, Vector3::zeros(), Vector3::y(), 50.0, resolution).map_err(err)
}

/// Grey-level render as RGBA bytes, covered pixels tinted.
fn rgba(faces: &[[usize; 3]], vertices: &[Vector3<f64>], camera: &Camera) -> Result<Vec<u8>, JsValue> {
    let shading = Shading {
        background: 0.08,
        ..Shading::default()
    };
    let buf = rasterize(faces, vertices, camera, &camera.headlight(), &shading).map_err(err)?;
    let mut out = Vec::with_capacity(buf.image.len() * 4);
    for (v, &f) in buf.image.iter().zip(&buf.face_id) {
        let g = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
        if f == jacfield::raster::NO_FACE {
            out.extend_from_slice(&[g, g, g, 255]);
        } else {
            out.extend_from_slice(&[g, (g as f64 * 0.92) as u8, (g as f64 * 0.8) as u8, 255]);
        }
    }
    Ok(out)
}

/// A mesh with a cached Poisson system; edits replace its current positions.
#[wasm_bindgen]
pub struct Viewer {
    mesh: Mesh,
    system: PoissonSystem,
    current: Vec<Vector3<f64>>,
}

#[wasm_bindgen]
impl Viewer {
    #[wasm_bindgen(constructor)]
    pub fn new(shape_name: &str) -> Result<Viewer, JsValue> {
        let mesh = shape(shape_name)?;
        let system = PoissonSystem::new(&mesh).map_err(err)?;
        let current = mesh.vertices().to_vec();
        Ok(Viewer { mesh, system, current })
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn render(&self, azimuth_deg: f64, elevation_deg: f64, resolution: usize) -> Result<Vec<u8>, JsValue> {
        let cam = orbit_camera(azimuth_deg, elevation_deg, resolution)?;
        rgba(self.mesh.faces(), &self.current, &cam)
    }

    /// Faces whose centroid lies above `height` get `diag(sx, sy, sz)` followed
    /// by a twist of `twist_deg` about y; all others keep the identity. The
    /// Poisson solve blends the two regions. Returns the self-intersection ratio.
    pub fn edit(&mut self, height: f64, sx: f64, sy: f64, sz: f64, twist_deg: f64) -> Result<f64, JsValue> {
        let t = twist_deg.to_radians();
        let twist = Matrix3::new(t.cos(), 0.0, t.sin(), 0.0, 1.0, 0.0, -t.sin(), 0.0, t.cos());
        let target = twist * Matrix3::from_diagonal(&Vector3::new(sx, sy, sz));
        let v = self.mesh.vertices();
        let field = JacobianField::from_matrices(
            self.mesh
                .faces()
                .iter()
                .map(|f| {
                    let c = (v[f[0]] + v[f[1]] + v[f[2]]) / 3.0;
                    if c.y > height { target } else { Matrix3::identity() }
                })
                .collect(),
        );
        self.current = self.system.solve(&field).map_err(err)?;
        Ok(self_intersection_ratio(self.mesh.faces(), &self.current).ratio)
    }

    pub fn reset(&mut self) {
        self.current = self.mesh.vertices().to_vec();
    }
}

/// Image-target optimization toward renders of the sphere stretched by
/// `(sx, sy, sz)`, in either parameterization.
#[wasm_bindgen]
pub struct DeformDemo {
    session: Session<ImageTargetProvider>,
    last_loss: f64,
}

#[wasm_bindgen]
impl DeformDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(vertex_mode: bool, learning_rate: f64, sx: f64, sy: f64, sz: f64) -> Result<DeformDemo, JsValue> {
        let mesh = shapes::icosphere(2);
        let mut config = RunConfig::new("demo.obj");
        config.mode = if vertex_mode { Mode::VertexDisplacement } else { Mode::Jacobian };
        config.optimizer.learning_rate = learning_rate;
        config.losses.alpha = 0.0;
        config.cameras.views = 6;
        config.cameras.resolution = 64;
        config.patches.size = 16;
        config.patches.stride = 16;
        config.validate_values().map_err(err)?;
        let scale = Matrix3::from_diagonal(&Vector3::new(sx, sy, sz));
        let target: Vec<_> = mesh.vertices().iter().map(|p| scale * p).collect();
        let cameras = cameras_for(&config.cameras, 0, true).map_err(err)?;
        let images = render_targets(mesh.faces(), &target, &cameras, &config.render.shading()).map_err(err)?;
        let settings = SessionSettings::from_config(&config).map_err(err)?;
        let session = Session::new(&mesh, settings, ImageTargetProvider::new(images, 1.0)).map_err(err)?;
        Ok(DeformDemo {
            session,
            last_loss: f64::NAN,
        })
    }

    /// Runs `n` optimizer steps; returns the loss before the last one.
    pub fn step(&mut self, n: usize) -> Result<f64, JsValue> {
        for _ in 0..n {
            self.last_loss = self.session.step().map_err(err)?.loss.total;
        }
        Ok(self.last_loss)
    }

    pub fn iteration(&self) -> usize {
        self.session.iteration()
    }

    pub fn intersection_ratio(&self) -> Result<f64, JsValue> {
        let v = self.session.vertices().map_err(err)?;
        Ok(self_intersection_ratio(self.session.faces(), &v).ratio)
    }

    pub fn render(&self, azimuth_deg: f64, elevation_deg: f64, resolution: usize) -> Result<Vec<u8>, JsValue> {
        let cam = orbit_camera(azimuth_deg, elevation_deg, resolution)?;
        let v = self.session.vertices().map_err(err)?;
        rgba(self.session.faces(), &v, &cam)
    }
}
