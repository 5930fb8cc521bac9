//! Single-view estimators and their momentum (mean-teacher) copies.
//!
//! The concrete estimator is a per-view linear correction head applied to a raw
//! detection: `joints = G · raw + o`, with a 3x3 gain `G` and one offset per
//! joint. Its parameters are exposed as a flat vector so that the momentum
//! update and checkpoints do not depend on the layout.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{JointSet, NUM_JOINTS, WRIST};
use crate::scene::{HeatmapStack, View, ViewInput};

/// Largest allowed `‖G − I‖_F` of a gain matrix.
pub const GAIN_BOUND: f64 = 2.0;

const OFFSETS_PER_VIEW: usize = NUM_JOINTS * 3;
const PARAMS_PER_VIEW: usize = OFFSETS_PER_VIEW + 9;

/// Joint estimate of one view together with its detection confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub joints: JointSet,
    pub heatmaps: HeatmapStack,
}

/// A single-view pose estimator `H(· | θ)`.
pub trait Estimator {
    fn predict(&self, view: View, input: ViewInput<'_>) -> Prediction;
}

/// Parameters of the linear correction head, one block per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    values: Vec<f64>,
}

impl EstimatorParams {
    pub const LEN: usize = 2 * PARAMS_PER_VIEW;

    /// Identity gain and zero offsets in both views.
    pub fn identity() -> Self {
        let mut values = vec![0.0; Self::LEN];
        for v in 0..2 {
            let g = v * PARAMS_PER_VIEW + OFFSETS_PER_VIEW;
            values[g] = 1.0;
            values[g + 4] = 1.0;
            values[g + 8] = 1.0;
        }
        Self { values }
    }

    /// Flat layout: for each view, 63 offsets (joint-major, xyz) followed by
    /// the 9 gain entries in row-major order.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                Self::LEN,
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn offset(&self, view: View, joint: usize) -> Vector3<f64> {
        let i = view.index() * PARAMS_PER_VIEW + 3 * joint;
        Vector3::new(self.values[i], self.values[i + 1], self.values[i + 2])
    }

    pub fn set_offset(&mut self, view: View, joint: usize, value: Vector3<f64>) {
        let i = view.index() * PARAMS_PER_VIEW + 3 * joint;
        self.values[i..i + 3].copy_from_slice(value.as_slice());
    }

    pub fn gain(&self, view: View) -> Matrix3<f64> {
        let i = view.index() * PARAMS_PER_VIEW + OFFSETS_PER_VIEW;
        Matrix3::from_row_slice(&self.values[i..i + 9])
    }

    pub fn set_gain(&mut self, view: View, gain: &Matrix3<f64>) {
        let i = view.index() * PARAMS_PER_VIEW + OFFSETS_PER_VIEW;
        for r in 0..3 {
            for c in 0..3 {
                self.values[i + 3 * r + c] = gain[(r, c)];
            }
        }
    }

    /// Whether flat index `i` belongs to a gain matrix.
    pub fn is_gain_index(i: usize) -> bool {
        i % PARAMS_PER_VIEW >= OFFSETS_PER_VIEW
    }

    /// Pulls each gain back onto the ball `‖G − I‖_F ≤ GAIN_BOUND`.
    pub fn project(&mut self) {
        for view in View::BOTH {
            let d = self.gain(view) - Matrix3::identity();
            let n = d.norm();
            if n > GAIN_BOUND {
                self.set_gain(view, &(Matrix3::identity() + d * (GAIN_BOUND / n)));
            }
        }
    }

    /// `θ ← θ − step_i · g_i`, with separate step sizes for offsets and gains,
    /// followed by [`Self::project`].
    pub fn descend(&mut self, gradient: &[f64], offset_rate: f64, gain_rate: f64) {
        for (i, (p, g)) in self.values.iter_mut().zip(gradient).enumerate() {
            let rate = if Self::is_gain_index(i) {
                gain_rate
            } else {
                offset_rate
            };
            *p -= rate * g;
        }
        self.project();
    }

    pub fn max_abs_diff(&self, other: &EstimatorParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Corrected joints for one view, before wrist alignment.
    pub fn correct(&self, view: View, raw: &JointSet) -> JointSet {
        let g = self.gain(view);
        let pts = raw
            .points()
            .iter()
            .enumerate()
            .map(|(k, p)| g * p + self.offset(view, k))
            .collect();
        JointSet::from_points_unchecked(pts).expect("21 joints")
    }

    /// Gradient of [`loss`] for one sample with respect to every parameter.
    ///
    /// With `x_k = raw_k − raw_0` the aligned prediction is
    /// `p_k = G x_k + o_k − o_0`, so for the residual `r_k = p_k − ŷ_k`:
    /// `∂/∂o_k = 2 r_k` (k ≠ 0), `∂/∂o_0 = −2 Σ r_k`, `∂/∂G = 2 Σ r_k x_kᵀ`.
    pub fn loss_gradient(&self, inputs: [ViewInput<'_>; 2], pseudo: [&JointSet; 2]) -> Vec<f64> {
        let mut grad = vec![0.0; Self::LEN];
        for view in View::BOTH {
            let base = view.index() * PARAMS_PER_VIEW;
            let raw = inputs[view.index()].raw;
            let label = pseudo[view.index()];
            let g = self.gain(view);
            let o0 = self.offset(view, WRIST);
            let mut sum_r = Vector3::zeros();
            let mut grad_g = Matrix3::zeros();
            for k in 0..NUM_JOINTS {
                if k == WRIST {
                    continue;
                }
                let x = raw[k] - raw[WRIST];
                let pred = g * x + self.offset(view, k) - o0;
                let r = 2.0 * (pred - (label[k] - label[WRIST]));
                grad[base + 3 * k..base + 3 * k + 3].copy_from_slice(r.as_slice());
                sum_r += r;
                grad_g += r * x.transpose();
            }
            let w = base + 3 * WRIST;
            grad[w..w + 3].copy_from_slice((-sum_r).as_slice());
            let gi = base + OFFSETS_PER_VIEW;
            for r in 0..3 {
                for c in 0..3 {
                    grad[gi + 3 * r + c] = grad_g[(r, c)];
                }
            }
        }
        grad
    }
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl Estimator for EstimatorParams {
    /// Heatmaps pass through unchanged.
    fn predict(&self, view: View, input: ViewInput<'_>) -> Prediction {
        Prediction {
            joints: self.correct(view, input.raw),
            heatmaps: input.heatmaps.clone(),
        }
    }
}

/// Sum over both views of the squared distances between wrist-aligned
/// predictions and pseudo-labels (mm²).
pub fn loss(pred: [&JointSet; 2], pseudo: [&JointSet; 2]) -> f64 {
    pred.iter()
        .zip(pseudo)
        .map(|(p, y)| p.aligned().squared_distance(&y.aligned()))
        .sum()
}

/// Exponential moving average of estimator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub params: EstimatorParams,
    pub eta: f64,
    /// Number of completed updates.
    pub iteration: u64,
}

impl MomentumState {
    pub fn new(params: EstimatorParams, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {eta}"
            )));
        }
        Ok(Self {
            params,
            eta,
            iteration: 0,
        })
    }

    /// `θ̄ ← η θ̄ + (1 − η) θ`.
    pub fn update(&mut self, theta: &EstimatorParams) {
        let eta = self.eta;
        for (bar, t) in self.params.values.iter_mut().zip(&theta.values) {
            *bar = eta * *bar + (1.0 - eta) * t;
        }
        self.iteration += 1;
    }
}

/// Functional form of [`MomentumState::update`].
pub fn momentum_update(state: &MomentumState, theta: &EstimatorParams) -> MomentumState {
    let mut next = state.clone();
    next.update(theta);
    next
}
