//! Root-relative MPJPE, the pooled single-view (Mono-M) and fused dual-view
//! (Dual-M) metrics, and the bucketed pseudo-label error analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{JointSet, Rotation, NUM_JOINTS};

/// Mean Euclidean joint error (mm) after wrist-aligning both sets.
pub fn mpjpe(pred: &JointSet, gt: &JointSet) -> f64 {
    let p0 = pred.wrist();
    let g0 = gt.wrist();
    pred.points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| ((p - p0) - (g - g0)).norm())
        .sum::<f64>()
        / NUM_JOINTS as f64
}

fn check_paired(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} ground-truth pairs",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    Ok(())
}

/// Per-view mean MPJPE.
pub fn per_view_mpjpe(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]]) -> Result<[f64; 2]> {
    check_paired(pred, gt)?;
    let n = pred.len() as f64;
    Ok(std::array::from_fn(|v| {
        pred.iter()
            .zip(gt)
            .map(|(p, g)| mpjpe(&p[v], &g[v]))
            .sum::<f64>()
            / n
    }))
}

/// MPJPE pooled over both views of every sample.
pub fn mono_m(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]]) -> Result<f64> {
    let [a, b] = per_view_mpjpe(pred, gt)?;
    Ok((a + b) / 2.0)
}

/// Both views fused into each view's frame:
/// `((j1 + Rᵀ j2) / 2, (R j1 + j2) / 2)` on wrist-aligned joints.
pub fn fuse_views(j1: &JointSet, j2: &JointSet, r: &Rotation) -> [JointSet; 2] {
    let (a, b) = (j1.aligned(), j2.aligned());
    [
        a.zip_map(&b.rotate_inverse(r), |p, q| (p + q) * 0.5),
        a.rotate(r).zip_map(&b, |p, q| (p + q) * 0.5),
    ]
}

/// MPJPE of the fused predictions against each view's ground truth, pooled.
pub fn dual_m(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]], r: &Rotation) -> Result<f64> {
    check_paired(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let [f1, f2] = fuse_views(&p[0], &p[1], r);
            mpjpe(&f1, &g[0]) + mpjpe(&f2, &g[1])
        })
        .sum();
    Ok(total / (2.0 * pred.len() as f64))
}

pub const BUCKETS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean prediction error of the samples in the bucket; `None` when empty.
    pub mean_prediction_error: Option<f64>,
    pub mean_fused_error: Option<f64>,
    pub mean_abm_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityTable {
    pub buckets: Vec<Bucket>,
    /// Fewer than seven distinct prediction errors.
    pub degenerate: bool,
}

/// Bucket index of `e` among seven equal-width intervals over `[lo, hi]`;
/// the last interval is closed.
pub fn bucket_index(e: f64, lo: f64, hi: f64) -> usize {
    let width = (hi - lo) / BUCKETS as f64;
    if !(width > 0.0) {
        return 0;
    }
    (((e - lo) / width).floor() as usize).min(BUCKETS - 1)
}

/// Groups samples into seven equal-width intervals of prediction error and
/// averages the pseudo-label errors with (fused) and without (ABM only) the
/// refinement term in each.
pub fn complementarity_table(
    prediction_error: &[f64],
    fused_error: &[f64],
    abm_error: &[f64],
) -> Result<ComplementarityTable> {
    let n = prediction_error.len();
    if n == 0 || fused_error.len() != n || abm_error.len() != n {
        return Err(Error::InvalidInput(
            "complementarity needs equally many nonzero error entries".into(),
        ));
    }
    let lo = prediction_error
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = prediction_error
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / BUCKETS as f64;
    let mut sums = [[0.0; 3]; BUCKETS];
    let mut counts = [0usize; BUCKETS];
    for i in 0..n {
        let b = bucket_index(prediction_error[i], lo, hi);
        counts[b] += 1;
        sums[b][0] += prediction_error[i];
        sums[b][1] += fused_error[i];
        sums[b][2] += abm_error[i];
    }
    let buckets = (0..BUCKETS)
        .map(|b| {
            let mean = |k: usize| (counts[b] > 0).then(|| sums[b][k] / counts[b] as f64);
            Bucket {
                lower: lo + width * b as f64,
                upper: if b + 1 == BUCKETS {
                    hi
                } else {
                    lo + width * (b + 1) as f64
                },
                count: counts[b],
                mean_prediction_error: mean(0),
                mean_fused_error: mean(1),
                mean_abm_error: mean(2),
            }
        })
        .collect();
    let mut distinct = prediction_error.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Ok(ComplementarityTable {
        buckets,
        degenerate: distinct.len() < BUCKETS,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mono_m: f64,
    pub dual_m: f64,
    pub per_view: [f64; 2],
    pub sample_count: usize,
    /// Dual-M exceeded the worse single view.
    pub fusion_warning: bool,
    pub complementarity: Option<ComplementarityTable>,
}

/// Mono-M, Dual-M and per-view MPJPE for one set of predictions.
pub fn evaluate(pred: &[[JointSet; 2]], gt: &[[JointSet; 2]], r: &Rotation) -> Result<EvalReport> {
    let per_view = per_view_mpjpe(pred, gt)?;
    let dual = dual_m(pred, gt, r)?;
    Ok(EvalReport {
        mono_m: (per_view[0] + per_view[1]) / 2.0,
        dual_m: dual,
        per_view,
        sample_count: pred.len(),
        fusion_warning: dual > per_view[0].max(per_view[1]),
        complementarity: None,
    })
}
