//! Guidance providers: whatever turns rendered views into losses and
//! per-pixel gradients.
//!
//! Procedural providers live in-core. Neural objectives run in a separate
//! service reached through [`remote::RemoteProvider`]; only images, vertex →
//! patch tables and pixel gradients cross that boundary.

pub mod procedural;
pub mod protocol;
pub mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use procedural::{ImageTargetProvider, NullProvider, PatchMeanVcProvider};
pub use remote::RemoteProvider;

/// Target prompt and the caption of the undeformed source.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptBundle {
    pub target: String,
    pub base: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewInput {
    pub camera_id: usize,
    /// row-major `resolution × resolution` intensities
    pub image: Vec<f64>,
    /// `(vertex, patch)` for each vertex visible in this view
    pub visible: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceRequest {
    pub iteration: usize,
    pub resolution: usize,
    pub views: Vec<ViewInput>,
    pub prompts: PromptBundle,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Shape("guidance request has no views".into()));
        }
        let px = self.resolution * self.resolution;
        for (i, v) in self.views.iter().enumerate() {
            if v.image.len() != px {
                return Err(Error::Shape(format!(
                    "view {i} has {} pixels, expected {px}",
                    v.image.len()
                )));
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.resolution * self.resolution
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceResponse {
    pub semantic_loss: f64,
    pub vc_loss: f64,
    /// d(semantic + vc)/d(image), one per request view
    pub gradients: Vec<Vec<f64>>,
}

impl GuidanceResponse {
    pub fn zeros(views: usize, pixels: usize) -> Self {
        Self {
            semantic_loss: 0.0,
            vc_loss: 0.0,
            gradients: vec![vec![0.0; pixels]; views],
        }
    }

    /// Checks dimensions against the request and that every value is finite.
    pub fn validate(&self, request: &GuidanceRequest) -> Result<()> {
        if self.gradients.len() != request.views.len() {
            return Err(Error::Shape(format!(
                "response has {} gradient images for {} views",
                self.gradients.len(),
                request.views.len()
            )));
        }
        for (view, g) in self.gradients.iter().enumerate() {
            if g.len() != request.pixel_count() {
                return Err(Error::Shape(format!(
                    "gradient image {view} has {} pixels, expected {}",
                    g.len(),
                    request.pixel_count()
                )));
            }
            if let Some(pixel) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteResponse { view, pixel });
            }
        }
        if !self.semantic_loss.is_finite() {
            return Err(Error::non_finite("semantic loss from provider"));
        }
        if !self.vc_loss.is_finite() {
            return Err(Error::non_finite("view-consistency loss from provider"));
        }
        Ok(())
    }
}

pub trait GuidanceProvider {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse>;

    /// Whether this provider needs the same cameras every iteration.
    fn needs_fixed_cameras(&self) -> bool {
        false
    }
}

impl<P: GuidanceProvider + ?Sized> GuidanceProvider for Box<P> {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse> {
        (**self).evaluate(request)
    }

    fn needs_fixed_cameras(&self) -> bool {
        (**self).needs_fixed_cameras()
    }
}
