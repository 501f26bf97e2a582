//! Identity regularization and composition of all loss terms.

use std::io::Write;

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fieldgrad::JacobianField;

/// Below this Frobenius distance from identity a face's regularizer gradient
/// is taken to be zero.
pub const IDENTITY_TIP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub view_consistency: f64,
    pub identity_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(semantic: f64, view_consistency: f64, identity_reg: f64) -> Self {
        Self {
            semantic,
            view_consistency,
            identity_reg,
            total: semantic + view_consistency + identity_reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.semantic.is_finite()
            && self.view_consistency.is_finite()
            && self.identity_reg.is_finite()
            && self.total.is_finite()
    }
}

/// `α Σ_i ‖J_i − I‖_F` (unsquared) and its gradient.
pub fn identity_regularization(field: &JacobianField, alpha: f64) -> (f64, JacobianField) {
    let mut value = 0.0;
    let grads = field
        .matrices()
        .iter()
        .map(|j| {
            let d = j - Matrix3::identity();
            let norm = d.norm();
            value += norm;
            if norm < IDENTITY_TIP {
                Matrix3::zeros()
            } else {
                d * (alpha / norm)
            }
        })
        .collect();
    (alpha * value, JacobianField::from_matrices(grads))
}

/// Sums the provider-path gradient (already pulled back to the field) and the
/// identity term.
pub fn compose(
    semantic: f64,
    view_consistency: f64,
    provider_gradient: &JacobianField,
    identity: (f64, &JacobianField),
) -> Result<(LossBreakdown, JacobianField)> {
    if provider_gradient.len() != identity.1.len() {
        return Err(Error::Shape(format!(
            "provider gradient has {} faces, identity gradient {}",
            provider_gradient.len(),
            identity.1.len()
        )));
    }
    let total = provider_gradient.add(identity.1)?;
    Ok((LossBreakdown::new(semantic, view_consistency, identity.0), total))
}

/// Appends `iteration,semantic,vc,identity,total` rows.
pub struct LossLog<W: Write> {
    out: W,
}

impl<W: Write> LossLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "iteration,semantic,vc,identity,total")?;
        Ok(Self { out })
    }

    pub fn append(&mut self, iteration: usize, l: &LossBreakdown) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{iteration},{:e},{:e},{:e},{:e}",
            l.semantic, l.view_consistency, l.identity_reg, l.total
        )
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
