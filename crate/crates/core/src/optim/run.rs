//! File-driven runs: load, optimize, write artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde_json::json;

use super::config::{ProviderConfig, RunConfig};
use super::session::{cameras_for, render_targets, Session, SessionSettings};
use crate::error::{Error, Result};
use crate::guidance::protocol::LossWeights;
use crate::guidance::remote::SessionParams;
use crate::guidance::{GuidanceProvider, ImageTargetProvider, NullProvider, PatchMeanVcProvider, RemoteProvider};
use crate::losses::{LossBreakdown, LossLog};
use crate::mesh::{normalize_unit_sphere, Mesh, Normalization};
use crate::metrics::{self_intersection_ratio, IntersectionReport};
use crate::raster::write_pgm;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// deformed mesh in the coordinates of the input file
    pub mesh: Mesh,
    /// one row per iteration plus a final row for the returned mesh
    pub losses: Vec<LossBreakdown>,
    pub intersections: IntersectionReport,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn final_loss(&self) -> &LossBreakdown {
        self.losses.last().expect("at least one evaluation")
    }
}

/// The source mesh as loaded and in working coordinates.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub original: Mesh,
    pub working: Mesh,
    pub normalization: Normalization,
}

impl Prepared {
    pub fn new(original: Mesh) -> Result<Self> {
        let (working, normalization) = normalize_unit_sphere(&original)?;
        Ok(Self {
            original,
            working,
            normalization,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(Mesh::load_obj(path)?)
    }

    /// Maps working-coordinate positions back to the input frame. The
    /// untouched source maps to the input vertices exactly.
    pub fn export(&self, vertices: &[Vector3<f64>]) -> Result<Mesh> {
        if vertices == self.working.vertices() {
            return Ok(self.original.clone());
        }
        self.original
            .with_vertices(vertices.iter().map(|v| self.normalization.invert(v)).collect())
    }
}

/// Builds the provider named by `config` for the prepared mesh.
pub fn build_provider(config: &RunConfig, prepared: &Prepared) -> Result<Box<dyn GuidanceProvider + Send>> {
    let weights = &config.losses;
    Ok(match &config.provider {
        ProviderConfig::None => Box::new(NullProvider),
        ProviderConfig::PatchMeanVc => Box::new(PatchMeanVcProvider::new(config.patch_grid()?, weights.beta)),
        ProviderConfig::ImageTarget {
            target_mesh,
            target_scale,
        } => {
            let target = match target_mesh {
                Some(path) => {
                    let m = Mesh::load_obj(path)?;
                    let v: Vec<_> = m.vertices().iter().map(|p| prepared.normalization.apply(p)).collect();
                    m.with_vertices(v)?
                }
                None => prepared.working.clone(),
            };
            let c = target.centroid();
            let scaled: Vec<_> = target.vertices().iter().map(|p| c + (p - c) * *target_scale).collect();
            let cameras = cameras_for(&config.cameras, 0, true)?;
            let images = render_targets(target.faces(), &scaled, &cameras, &config.render.shading())?;
            Box::new(ImageTargetProvider::new(images, weights.semantic_weight))
        }
        ProviderConfig::Remote {
            endpoint,
            directional,
        } => Box::new(RemoteProvider::connect(
            endpoint,
            SessionParams {
                resolution: config.cameras.resolution,
                views: config.cameras.views,
                patch_size: config.patches.size,
                stride: config.patches.stride,
                prompts: config.prompts.clone(),
                weights: LossWeights {
                    semantic: weights.semantic_weight,
                    vc: weights.beta,
                },
                directional: *directional,
            },
        )?),
    })
}

/// Validates `config`, builds its provider and runs it.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let prepared = Prepared::load(&config.mesh)?;
    let provider = build_provider(config, &prepared)?;
    run_prepared(config, &prepared, provider)
}

/// Runs with an explicit provider; `config.mesh` is not read.
pub fn run_prepared<P: GuidanceProvider>(config: &RunConfig, prepared: &Prepared, provider: P) -> Result<RunOutcome> {
    config.validate_values()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let settings = SessionSettings::from_config(config)?;
    let mut session = Session::new(&prepared.working, settings, provider)?;
    write_echo(config, prepared, session.fixed_cameras())?;

    let csv_path = out.join("loss.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut log = LossLog::new(BufWriter::new(file)).map_err(|e| Error::io(&csv_path, e))?;
    let snapshots = out.join("snapshots");
    if config.snapshot_every > 0 {
        fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
    }

    let iterations = config.optimizer.iterations;
    let mut losses = Vec::with_capacity(iterations + 1);
    for k in 0..=iterations {
        if config.snapshot_every > 0 && k % config.snapshot_every == 0 {
            let path = snapshots.join(format!("iter_{k:06}.obj"));
            prepared.export(&session.vertices()?)?.save_obj(path)?;
        }
        let result = if k < iterations { session.step() } else { session.evaluate() };
        let eval = match result {
            Ok(e) => e,
            Err(e) => return Err(abort(out, prepared, &session, e)),
        };
        log.append(k, &eval.loss).map_err(|e| Error::io(&csv_path, e))?;
        losses.push(eval.loss);
    }
    log.flush().map_err(|e| Error::io(&csv_path, e))?;

    let vertices = session.vertices()?;
    let mesh = prepared.export(&vertices)?;
    mesh.save_obj(out.join("final.obj"))?;
    let intersections = self_intersection_ratio(session.faces(), &vertices);
    Ok(RunOutcome {
        mesh,
        losses,
        intersections,
        output_dir: out.clone(),
    })
}

fn write_echo(config: &RunConfig, prepared: &Prepared, fixed_cameras: bool) -> Result<()> {
    let n = &prepared.normalization;
    let echo = json!({
        "config": config,
        "engine_version": env!("CARGO_PKG_VERSION"),
        "normalization": {
            "scale": n.scale,
            "center": [n.center.x, n.center.y, n.center.z],
        },
        "cameras": if fixed_cameras { "fixed" } else { "resampled per iteration" },
        "translation": "output centroid pinned to the source centroid",
        "identity_norm": "unsquared Frobenius",
        "parallel": cfg!(feature = "parallel"),
    });
    let path = config.output_dir.join("config_echo.json");
    let text = serde_json::to_string_pretty(&echo).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes whatever helps post-mortem for `error`, then hands it back.
fn abort<P: GuidanceProvider>(out: &Path, prepared: &Prepared, session: &Session<P>, error: Error) -> Error {
    let dump = || -> Result<()> {
        match &error {
            Error::ProviderUnavailable(_) | Error::Protocol(_) | Error::VersionMismatch { .. } | Error::Io { .. } => {
                prepared.export(&session.vertices()?)?.save_obj(out.join("checkpoint.obj"))?;
                let state = json!({
                    "iteration": session.iteration(),
                    "mode": session.settings().mode,
                    "parameters": session.params(),
                    "error": error.to_string(),
                });
                let path = out.join("checkpoint.json");
                fs::write(&path, state.to_string()).map_err(|e| Error::io(&path, e))
            }
            Error::NonFiniteResponse { view, pixel } => {
                if let Some(req) = session.last_request() {
                    let v = &req.views[*view];
                    let sanitized: Vec<f64> = v.image.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
                    write_pgm(out.join(format!("diagnostic_view_{view}.pgm")), req.resolution, &sanitized)?;
                }
                write_diagnostic(out, session.iteration(), &error, Some((*view, *pixel)))
            }
            Error::NonFinite { .. } => write_diagnostic(out, session.iteration(), &error, None),
            _ => Ok(()),
        }
    };
    // the original error matters more than a failed dump
    let _ = dump();
    error
}

fn write_diagnostic(out: &Path, iteration: usize, error: &Error, location: Option<(usize, usize)>) -> Result<()> {
    let doc = json!({
        "iteration": iteration,
        "error": error.to_string(),
        "view": location.map(|l| l.0),
        "pixel": location.map(|l| l.1),
    });
    let path = out.join("diagnostic.json");
    fs::write(&path, doc.to_string()).map_err(|e| Error::io(&path, e))
}
