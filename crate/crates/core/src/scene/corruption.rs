//! Per-view error model of the raw single-view estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_JOINTS;

/// Systematic error and visibility of one camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewCorruption {
    /// Constant per-joint offset (mm) in this camera's frame.
    pub bias: Vec<[f64; 3]>,
    /// In `(0, 1]`; the noise standard deviation of this view is
    /// `noise_sigma / visibility`.
    pub visibility: f64,
}

impl ViewCorruption {
    pub fn clean() -> Self {
        Self {
            bias: vec![[0.0; 3]; NUM_JOINTS],
            visibility: 1.0,
        }
    }
}

/// Error model linking raw estimates to ground truth, and joint error to
/// heatmap confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionModel {
    pub views: [ViewCorruption; 2],
    /// Isotropic per-coordinate noise (mm) at full visibility.
    pub noise_sigma: f64,
    /// Log-standard-deviation of a per-sample noise multiplier shared by both
    /// views (how hard the frame is); 0 gives every sample the same noise level.
    pub noise_spread: f64,
    /// Decay constant of the confidence law `exp(-error / confidence_sigma)` (mm).
    pub confidence_sigma: f64,
}

impl CorruptionModel {
    /// Zero bias, zero noise.
    pub fn clean() -> Self {
        Self {
            views: [ViewCorruption::clean(), ViewCorruption::clean()],
            noise_sigma: 0.0,
            noise_spread: 0.0,
            confidence_sigma: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.noise_spread >= 0.0) || !self.noise_spread.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise spread must be finite and nonnegative, got {}",
                self.noise_spread
            )));
        }
        if !(self.confidence_sigma > 0.0) || !self.confidence_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "confidence sigma must be positive, got {}",
                self.confidence_sigma
            )));
        }
        for (v, view) in self.views.iter().enumerate() {
            if !(view.visibility > 0.0 && view.visibility <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "view {} visibility {} outside (0, 1]",
                    v + 1,
                    view.visibility
                )));
            }
            if view.bias.len() != NUM_JOINTS {
                return Err(Error::InvalidParameter(format!(
                    "view {} bias has {} joints, expected {NUM_JOINTS}",
                    v + 1,
                    view.bias.len()
                )));
            }
            if view.bias.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "view {} bias has non-finite entries",
                    v + 1
                )));
            }
        }
        Ok(())
    }

    /// Effective noise standard deviation of a view (mm per coordinate).
    pub fn view_noise(&self, view: usize) -> f64 {
        self.noise_sigma / self.views[view].visibility
    }
}

/// Recipe for drawing a [`CorruptionModel`] once per dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionParams {
    /// Biases are drawn uniformly from `[-bias_range, bias_range]` per coordinate.
    pub bias_range: f64,
    /// Complementary occlusion contrast `c >= 1`. For every joint one view is
    /// marked occluded and its bias is multiplied by `c`; the other view's bias
    /// is divided by `c`. `c = 1` gives independent biases.
    pub occlusion_contrast: f64,
    pub noise_sigma: f64,
    pub noise_spread: f64,
    pub visibility: [f64; 2],
    pub confidence_sigma: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            bias_range: 15.0,
            occlusion_contrast: 3.5,
            noise_sigma: 8.0,
            noise_spread: 0.5,
            visibility: [1.0, 0.5],
            confidence_sigma: 30.0,
        }
    }
}

impl CorruptionParams {
    /// No bias and no noise.
    pub fn clean() -> Self {
        Self {
            bias_range: 0.0,
            occlusion_contrast: 1.0,
            noise_sigma: 0.0,
            noise_spread: 0.0,
            visibility: [1.0, 1.0],
            confidence_sigma: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bias_range >= 0.0) || !self.bias_range.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bias_range must be finite and nonnegative, got {}",
                self.bias_range
            )));
        }
        if !(self.occlusion_contrast >= 1.0) || !self.occlusion_contrast.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "occlusion_contrast must be >= 1, got {}",
                self.occlusion_contrast
            )));
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<CorruptionModel> {
        self.validate()?;
        let draw_field = |rng: &mut R| -> Vec<[f64; 3]> {
            (0..NUM_JOINTS)
                .map(|_| {
                    std::array::from_fn(|_| {
                        if self.bias_range > 0.0 {
                            rng.random_range(-self.bias_range..=self.bias_range)
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        };
        let mut first = draw_field(rng);
        let mut second = draw_field(rng);
        let c = self.occlusion_contrast;
        for k in 0..NUM_JOINTS {
            let occluded_first: bool = rng.random();
            let (occluded, visible) = if occluded_first {
                (&mut first[k], &mut second[k])
            } else {
                (&mut second[k], &mut first[k])
            };
            occluded.iter_mut().for_each(|x| *x *= c);
            visible.iter_mut().for_each(|x| *x /= c);
        }
        let model = CorruptionModel {
            views: [
                ViewCorruption {
                    bias: first,
                    visibility: self.visibility[0],
                },
                ViewCorruption {
                    bias: second,
                    visibility: self.visibility[1],
                },
            ],
            noise_sigma: self.noise_sigma,
            noise_spread: self.noise_spread,
            confidence_sigma: self.confidence_sigma,
        };
        model.validate()?;
        Ok(model)
    }
}
