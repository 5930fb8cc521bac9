//! Per-joint 2D confidence maps.
//!
//! A stack is stored by its per-joint peaks; dense 32x32 maps are rendered on
//! demand as Gaussian bumps whose maximum equals the recorded peak value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_JOINTS;

/// Heatmap side length in pixels.
pub const HEATMAP_SIZE: usize = 32;

/// Spatial standard deviation of a rendered peak (pixels).
pub const PEAK_SPREAD: f64 = 1.5;

/// One dense map, row-major.
pub type Heatmap = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPeak {
    pub row: u8,
    pub col: u8,
    /// Peak confidence in `[0, 1]`.
    pub value: f64,
}

/// Peak confidence for a joint whose estimate is off by `error_mm`.
pub fn peak_confidence(error_mm: f64, confidence_sigma: f64) -> f64 {
    (-error_mm / confidence_sigma).exp().clamp(0.0, 1.0)
}

fn render_peak(peak: &HeatmapPeak) -> Heatmap {
    let denom = 2.0 * PEAK_SPREAD * PEAK_SPREAD;
    let (r0, c0) = (peak.row as f64, peak.col as f64);
    let mut map = Vec::with_capacity(HEATMAP_SIZE * HEATMAP_SIZE);
    for r in 0..HEATMAP_SIZE {
        for c in 0..HEATMAP_SIZE {
            let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
            map.push((peak.value * (-d2 / denom).exp()).clamp(0.0, 1.0));
        }
    }
    map
}

/// Dense map for one joint: a Gaussian bump at `location` (row, col) whose
/// height is `exp(-joint_error / confidence_sigma)`.
pub fn synthesize_heatmap(
    joint_error_mm: f64,
    location: (u8, u8),
    confidence_sigma: f64,
) -> Result<Heatmap> {
    if !(joint_error_mm >= 0.0) || !joint_error_mm.is_finite() {
        return Err(Error::InvalidInput(format!(
            "joint error must be finite and nonnegative, got {joint_error_mm}"
        )));
    }
    if !(confidence_sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence sigma must be positive, got {confidence_sigma}"
        )));
    }
    let peak = HeatmapPeak {
        row: location.0,
        col: location.1,
        value: peak_confidence(joint_error_mm, confidence_sigma),
    };
    check_location(&peak)?;
    Ok(render_peak(&peak))
}

fn check_location(peak: &HeatmapPeak) -> Result<()> {
    if peak.row as usize >= HEATMAP_SIZE || peak.col as usize >= HEATMAP_SIZE {
        return Err(Error::InvalidInput(format!(
            "peak location ({}, {}) outside the {HEATMAP_SIZE}x{HEATMAP_SIZE} grid",
            peak.row, peak.col
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStack {
    peaks: Vec<HeatmapPeak>,
}

impl HeatmapStack {
    pub fn new(peaks: Vec<HeatmapPeak>) -> Result<Self> {
        if peaks.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_JOINTS} heatmaps, got {}",
                peaks.len()
            )));
        }
        for p in &peaks {
            check_location(p)?;
            if !(0.0..=1.0).contains(&p.value) {
                return Err(Error::InvalidInput(format!(
                    "peak value {} outside [0, 1]",
                    p.value
                )));
            }
        }
        Ok(Self { peaks })
    }

    /// Every joint at full confidence in the grid center.
    pub fn uniform(value: f64) -> Result<Self> {
        let c = (HEATMAP_SIZE / 2) as u8;
        Self::new(vec![
            HeatmapPeak {
                row: c,
                col: c,
                value
            };
            NUM_JOINTS
        ])
    }

    /// Extracts the per-joint peak (first maximum in row-major order) from
    /// dense maps.
    pub fn from_dense(maps: &[Heatmap]) -> Result<Self> {
        let peaks =
            maps.iter()
                .map(|m| {
                    if m.len() != HEATMAP_SIZE * HEATMAP_SIZE {
                        return Err(Error::InvalidInput(format!(
                            "heatmap has {} entries, expected {}",
                            m.len(),
                            HEATMAP_SIZE * HEATMAP_SIZE
                        )));
                    }
                    let (idx, value) = m.iter().copied().enumerate().fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, v)| if v > best.1 { (i, v) } else { best },
                    );
                    Ok(HeatmapPeak {
                        row: (idx / HEATMAP_SIZE) as u8,
                        col: (idx % HEATMAP_SIZE) as u8,
                        value,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        Self::new(peaks)
    }

    pub fn peaks(&self) -> &[HeatmapPeak] {
        &self.peaks
    }

    /// `max(h_j)` for joint `j`.
    pub fn peak_value(&self, joint: usize) -> f64 {
        self.peaks[joint].value
    }

    pub fn render(&self, joint: usize) -> Heatmap {
        render_peak(&self.peaks[joint])
    }

    pub fn render_all(&self) -> Vec<Heatmap> {
        self.peaks.iter().map(render_peak).collect()
    }
}
