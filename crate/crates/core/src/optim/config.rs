//! Run configuration: a JSON document with nested sections, plus flat
//! dotted-path overrides (`optimizer.iterations=0`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::guidance::PromptBundle;
use crate::raster::{PatchGrid, Shading};

/// Environment variable that replaces the remote provider endpoint.
pub const ENDPOINT_ENV: &str = "JACFIELD_GUIDANCE_ENDPOINT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// optimize per-face Jacobians, vertices come from the Poisson solve
    Jacobian,
    /// optimize per-vertex offsets directly (ablation baseline)
    VertexDisplacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// identity regularization weight
    pub alpha: f64,
    /// view-consistency weight (applied by the provider)
    pub beta: f64,
    /// semantic loss weight (applied by the provider)
    pub semantic_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            semantic_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub views: usize,
    pub seed: u64,
    pub radius: f64,
    pub fov_deg: f64,
    pub resolution: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            views: 4,
            seed: 0,
            radius: 3.0,
            fov_deg: 60.0,
            resolution: 224,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub albedo: f64,
    pub ambient: f64,
    pub background: f64,
    /// add the silhouette-edge gradient term to the reverse pass
    pub silhouette_gradients: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let s = Shading::default();
        Self {
            albedo: s.albedo,
            ambient: s.ambient,
            background: s.background,
            silhouette_gradients: true,
        }
    }
}

impl RenderConfig {
    pub fn shading(&self) -> Shading {
        Shading {
            albedo: self.albedo,
            ambient: self.ambient,
            background: self.background,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub size: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { size: 32, stride: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// renders of `target_mesh` (or the source) scaled by `target_scale`
    /// about the centroid, from fixed cameras
    ImageTarget {
        #[serde(default)]
        target_mesh: Option<PathBuf>,
        #[serde(default = "one")]
        target_scale: f64,
    },
    PatchMeanVc,
    Remote {
        endpoint: String,
        #[serde(default)]
        directional: bool,
    },
    /// no guidance; only the identity term acts
    None,
}

fn one() -> f64 {
    1.0
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::ImageTarget {
            target_mesh: None,
            target_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub prompts: PromptBundle,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub losses: LossConfig,
    #[serde(default)]
    pub cameras: CameraConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub patches: PatchConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    /// write a snapshot every this many iterations; 0 disables
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_mode() -> Mode {
    Mode::Jacobian
}

impl RunConfig {
    pub fn new(mesh: impl Into<PathBuf>) -> Self {
        Self {
            mesh: mesh.into(),
            output_dir: default_output(),
            mode: Mode::Jacobian,
            prompts: PromptBundle::default(),
            optimizer: OptimizerConfig::default(),
            losses: LossConfig::default(),
            cameras: CameraConfig::default(),
            render: RenderConfig::default(),
            patches: PatchConfig::default(),
            provider: ProviderConfig::default(),
            snapshot_every: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path`, applies `key=value` overrides in order, validates.
    pub fn load_with_overrides(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces a remote endpoint with the value of [`ENDPOINT_ENV`], if set.
    pub fn apply_env(&mut self) {
        if let (Ok(value), ProviderConfig::Remote { endpoint, .. }) =
            (std::env::var(ENDPOINT_ENV), &mut self.provider)
        {
            if !value.is_empty() {
                *endpoint = value;
            }
        }
    }

    pub fn patch_grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.cameras.resolution, self.patches.size, self.patches.stride)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mesh.is_file() {
            return Err(Error::Config(format!("mesh {} does not exist", self.mesh.display())));
        }
        if let ProviderConfig::ImageTarget {
            target_mesh: Some(p), ..
        } = &self.provider
        {
            if !p.is_file() {
                return Err(Error::Config(format!("target mesh {} does not exist", p.display())));
            }
        }
        self.validate_values()
    }

    /// Checks everything except the existence of files.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate_values(&self) -> Result<()> {
        let l = &self.losses;
        for (name, w) in [("alpha", l.alpha), ("beta", l.beta), ("semantic_weight", l.semantic_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("losses.{name} must be a finite value ≥ 0, got {w}")));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return Err(Error::Config("optimizer constants out of range".into()));
        }
        if self.cameras.views == 0 {
            return Err(Error::Config("cameras.views must be at least 1".into()));
        }
        if !(self.cameras.radius > 1.0) {
            return Err(Error::Config(format!(
                "cameras.radius {} must exceed the unit-sphere mesh radius",
                self.cameras.radius
            )));
        }
        if let ProviderConfig::ImageTarget { target_scale, .. } = self.provider {
            if !(target_scale > 0.0) {
                return Err(Error::Config(format!("provider.target_scale {target_scale} must be positive")));
            }
        }
        self.patch_grid().map_err(|e| Error::Config(e.to_string()))?;
        crate::raster::Camera::new(
            nalgebra::Vector3::z() * self.cameras.radius,
            nalgebra::Vector3::zeros(),
            nalgebra::Vector3::y(),
            self.cameras.fov_deg,
            self.cameras.resolution,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Sets `a.b.c` in `doc` to `value`, parsed as JSON when possible and as a
/// string otherwise. Intermediate objects must already exist unless they are
/// optional sections absent from the file; unknown leaf keys are caught when
/// the document is deserialized.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed key path {path:?}")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {key} is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(r#"{"mesh": "a.obj"}"#).unwrap();
        assert_eq!(c.mode, Mode::Jacobian);
        assert_eq!(c.optimizer.learning_rate, 0.002);
        assert_eq!(c.losses.alpha, 1.0);
        assert_eq!(c.patches, PatchConfig { size: 32, stride: 16 });
        assert_eq!(c.cameras.resolution, 224);
        c.validate_values().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"mesh": "a.obj", "iterations": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mesh": "a.obj", "optimizer": {"iteratons": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mesh": "a.obj", "provider": {"kind": "remote", "endpoint": "x", "typo": 1}}"#).is_err());
        let c = RunConfig::new("a.obj");
        assert!(c.with_overrides(&["optimizer.iteratons=3".into()]).is_err());
        assert!(c.with_overrides(&["nosuch.section=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::new("a.obj")
            .with_overrides(&[
                "optimizer.iterations=0".into(),
                "mode=vertex-displacement".into(),
                "losses.alpha=2.5".into(),
                "losses.alpha=5".into(),
                "provider.kind=patch-mean-vc".into(),
            ])
            .unwrap();
        assert_eq!(c.optimizer.iterations, 0);
        assert_eq!(c.mode, Mode::VertexDisplacement);
        assert_eq!(c.losses.alpha, 5.0);
        assert_eq!(c.provider, ProviderConfig::PatchMeanVc);
    }

    #[test]
    fn remote_provider_and_env() {
        let mut c = RunConfig::from_json(
            r#"{"mesh": "a.obj", "provider": {"kind": "remote", "endpoint": "127.0.0.1:1"}}"#,
        )
        .unwrap();
        assert_eq!(
            c.provider,
            ProviderConfig::Remote {
                endpoint: "127.0.0.1:1".into(),
                directional: false
            }
        );
        // env handling is exercised with a value that cannot clash with other tests
        std::env::set_var(ENDPOINT_ENV, "unix:/tmp/jacfield-test.sock");
        c.apply_env();
        std::env::remove_var(ENDPOINT_ENV);
        assert!(matches!(&c.provider, ProviderConfig::Remote { endpoint, .. } if endpoint == "unix:/tmp/jacfield-test.sock"));
    }

    #[test]
    fn invalid_values_rejected() {
        let base = RunConfig::new("a.obj");
        for o in ["losses.alpha=-1", "cameras.views=0", "patches.stride=20", "cameras.resolution=100", "cameras.radius=0.5"] {
            let c = base.with_overrides(&[o.to_string()]).unwrap();
            assert!(c.validate_values().is_err(), "{o} accepted");
        }
    }

    #[test]
    fn malformed_override() {
        let mut doc = serde_json::json!({"a": 1});
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "a..b=1").is_err());
        assert!(apply_override(&mut doc, "a.b=1").is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig::new("x.obj").with_overrides(&["render.background=0.5".into()]).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
