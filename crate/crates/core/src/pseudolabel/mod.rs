//! Stereo-constrained pseudo-labels: attention-based merging (ABM),
//! rotation-guided refinement (RGR), their fusion, and the rolling update of
//! the inter-view rotation.

pub mod attention;
pub mod bfgs;
pub mod refine;

use serde::{Deserialize, Serialize};

pub use attention::{abm_merge, joint_attention, AttentionWeights, Softness};
pub use refine::{rgr_objective, rgr_refine, RefineDiagnostics, RefineSettings};

use crate::error::{Error, Result};
use crate::geometry::{kabsch_rotation, so3_mean, JointSet, Rotation};
use crate::scene::HeatmapStack;

/// Which terms produced a pseudo-label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// `α ŷ_abm + (1 − α) ŷ_rgr`.
    Fused,
    AbmOnly,
    RgrOnly,
    /// The momentum predictions themselves (self-distillation).
    Identity,
}

impl Provenance {
    pub fn uses_abm(self) -> bool {
        matches!(self, Provenance::Fused | Provenance::AbmOnly)
    }

    pub fn uses_rgr(self) -> bool {
        matches!(self, Provenance::Fused | Provenance::RgrOnly)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelPair {
    pub first: JointSet,
    pub second: JointSet,
    pub provenance: Provenance,
    pub refinement: Option<RefineDiagnostics>,
}

/// `ŷ = α ŷ_abm + (1 − α) ŷ_rgr` for both views.
pub fn combine_pseudo(
    abm: (&JointSet, &JointSet),
    rgr: (&JointSet, &JointSet),
    alpha: f64,
) -> Result<(JointSet, JointSet)> {
    check_alpha(alpha)?;
    let mix = |a: &JointSet, b: &JointSet| a.zip_map(b, |p, q| p * alpha + q * (1.0 - alpha));
    Ok((mix(abm.0, rgr.0), mix(abm.1, rgr.1)))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "fusion weight must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Inputs shared by every sample of a batch.
#[derive(Clone, Debug)]
pub struct LabelSettings<'a> {
    pub rotation: &'a Rotation,
    pub alpha: f64,
    pub beta: Softness,
    pub refine: &'a RefineSettings,
    pub mode: Provenance,
}

/// Pseudo-labels for one pair of momentum predictions.
///
/// Predictions are wrist-aligned first. When refinement falls back on a
/// degenerate pair its term equals the predictions.
pub fn pseudo_label(
    j1: &JointSet,
    j2: &JointSet,
    h1: &HeatmapStack,
    h2: &HeatmapStack,
    s: &LabelSettings<'_>,
) -> Result<PseudoLabelPair> {
    let (j1, j2) = (j1.aligned(), j2.aligned());
    let abm = if s.mode.uses_abm() {
        let w = joint_attention(h1, h2, s.beta);
        Some(abm_merge(&j1, &j2, &w, s.rotation)?)
    } else {
        None
    };
    let (rgr, refinement) = if s.mode.uses_rgr() {
        let (a, b, d) = rgr_refine(&j1, &j2, s.rotation, s.refine)?;
        (Some((a, b)), Some(d))
    } else {
        (None, None)
    };
    let (first, second) = match (abm, rgr) {
        (Some(a), Some(r)) => combine_pseudo((&a.0, &a.1), (&r.0, &r.1), s.alpha)?,
        (Some(a), None) => a,
        (None, Some(r)) => r,
        (None, None) => (j1, j2),
    };
    Ok(PseudoLabelPair {
        first,
        second,
        provenance: s.mode,
        refinement,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationUpdate {
    pub rotation: Rotation,
    /// Pairs that contributed a Kabsch rotation.
    pub used: usize,
    pub degenerate: usize,
}

/// `R ← proj(η R_prev + (1 − η) mean_batch)` where `mean_batch` is the chordal
/// mean of the per-pair Kabsch rotations. Degenerate pairs are skipped; if
/// all are degenerate `R_prev` is kept.
pub fn update_rotation(
    r_prev: &Rotation,
    batch: &[(JointSet, JointSet)],
    eta: f64,
) -> Result<RotationUpdate> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "rotation momentum must lie in [0, 1], got {eta}"
        )));
    }
    let rotations: Vec<Rotation> = batch
        .iter()
        .filter_map(|(a, b)| kabsch_rotation(a, b).ok())
        .collect();
    let degenerate = batch.len() - rotations.len();
    let keep = |degenerate| RotationUpdate {
        rotation: *r_prev,
        used: rotations.len(),
        degenerate,
    };
    if rotations.is_empty() || eta == 1.0 {
        return Ok(keep(degenerate));
    }
    let batch_mean = match so3_mean(&rotations, None) {
        Ok(m) => m,
        Err(_) => return Ok(keep(batch.len())),
    };
    let rotation = so3_mean(&[*r_prev, batch_mean], Some(&[eta, 1.0 - eta]))?;
    Ok(RotationUpdate {
        rotation,
        used: rotations.len(),
        degenerate,
    })
}
