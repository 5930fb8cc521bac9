//! The adaptation loop: rotation initialization, then repeated momentum
//! prediction, pseudo-labeling, gradient step, momentum update and rotation
//! update. Also checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, FormatVersion};
use crate::error::{Error, Result};
use crate::estimator::{loss, Estimator, EstimatorParams, MomentumState};
use crate::geometry::{geodesic_angle, kabsch_rotation, so3_mean, JointSet, Rotation};
use crate::metrics::{self, complementarity_table, mpjpe, ComplementarityTable, EvalReport};
use crate::pseudolabel::{
    check_alpha, pseudo_label, update_rotation, LabelSettings, Provenance, RefineSettings, Softness,
};
use crate::scene::{derive_seed, DualViewSample, View};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Weight of the merged term in the fused pseudo-label.
    pub alpha: f64,
    pub beta: Softness,
    pub eta_theta: f64,
    pub eta_r: f64,
    /// Prediction pairs averaged for the initial rotation.
    pub init_pairs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Step size for the per-joint offsets.
    pub learning_rate: f64,
    /// Step size for the gain matrices.
    pub gain_learning_rate: f64,
    /// Heavy-ball momentum of the optimizer; 0 is plain gradient descent.
    pub optimizer_momentum: f64,
    pub pseudo_labels: Provenance,
    pub refine: RefineSettings,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: Softness::INFINITE,
            eta_theta: 0.99,
            eta_r: 0.999,
            init_pairs: 1000,
            batch_size: 32,
            epochs: 20,
            learning_rate: 1e-2,
            gain_learning_rate: 0.0,
            optimizer_momentum: 0.0,
            pseudo_labels: Provenance::Fused,
            refine: RefineSettings::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(0.0..1.0).contains(&self.eta_theta) {
            return bad("eta_theta must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eta_r) {
            return bad("eta_r must lie in [0, 1]");
        }
        if self.init_pairs < 1 {
            return bad("init_pairs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(self.gain_learning_rate >= 0.0) || !self.gain_learning_rate.is_finite() {
            return bad("gain_learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.optimizer_momentum) {
            return bad("optimizer_momentum must lie in [0, 1)");
        }
        self.refine.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        container::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    pub fn total_iterations(&self, samples: usize) -> usize {
        self.epochs * self.batches_per_epoch(samples)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Initialization {
    pub rotation: Rotation,
    pub used: usize,
    pub degenerate: usize,
}

/// Chordal mean of the Kabsch rotations of the first `n` prediction pairs.
pub fn initialize_rotation<E: Estimator + Sync>(
    estimator: &E,
    samples: &[DualViewSample],
    n: usize,
) -> Result<Initialization> {
    if n == 0 || samples.len() < n {
        return Err(Error::InvalidInput(format!(
            "rotation initialization needs {n} samples, dataset has {}",
            samples.len()
        )));
    }
    let rotations: Vec<Option<Rotation>> = samples[..n]
        .par_iter()
        .map(|s| {
            let j1 = estimator.predict(View::First, s.input(View::First)).joints;
            let j2 = estimator
                .predict(View::Second, s.input(View::Second))
                .joints;
            kabsch_rotation(&j1, &j2).ok()
        })
        .collect();
    let rotations: Vec<Rotation> = rotations.into_iter().flatten().collect();
    if rotations.is_empty() {
        return Err(Error::InitializationFailed { attempted: n });
    }
    Ok(Initialization {
        rotation: so3_mean(&rotations, None)?,
        used: rotations.len(),
        degenerate: n - rotations.len(),
    })
}

/// Everything the loop mutates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub theta: EstimatorParams,
    pub velocity: Vec<f64>,
    pub teacher: MomentumState,
    pub rotation: Rotation,
    pub initial_rotation: Rotation,
}

impl AdaptState {
    pub fn new(
        theta: EstimatorParams,
        rotation: Rotation,
        config: &AdaptationConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            velocity: vec![0.0; EstimatorParams::LEN],
            teacher: MomentumState::new(theta.clone(), config.eta_theta)?,
            theta,
            rotation,
            initial_rotation: rotation,
        })
    }

    /// The momentum estimator, which is the model reported after adaptation.
    pub fn adapted(&self) -> &EstimatorParams {
        &self.teacher.params
    }

    /// Completed updates `T`.
    pub fn iteration(&self) -> usize {
        self.teacher.iteration as usize
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub iteration: usize,
    pub epoch: usize,
    pub batch_size: usize,
    /// Mean per-sample loss of the live estimator against the pseudo-labels (mm²).
    pub loss: f64,
    pub gradient_norm: f64,
    /// Geodesic change of `R` in this iteration (rad).
    pub rotation_drift: f64,
    /// Geodesic distance of `R` to the true rotation (rad), when monitored.
    pub rotation_error: Option<f64>,
    /// Mean MPJPE of the pseudo-labels against ground truth, when monitored.
    pub pseudo_label_error: Option<f64>,
    pub refine_initial: Option<f64>,
    pub refine_final: Option<f64>,
    pub refine_iterations: Option<f64>,
    pub refine_degenerate: usize,
    pub kabsch_degenerate: usize,
}

/// Ground truth used only to annotate the event log.
#[derive(Clone, Copy, Debug)]
pub struct Monitor<'a> {
    pub rotation: &'a Rotation,
}

/// Sample indices of batch `iteration` under the config's ordering.
pub fn batch_indices(config: &AdaptationConfig, samples: usize, iteration: usize) -> Vec<usize> {
    let per_epoch = config.batches_per_epoch(samples);
    let epoch = iteration / per_epoch;
    let b = iteration % per_epoch;
    let mut order: Vec<usize> = (0..samples).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 5, epoch as u64));
        order.shuffle(&mut rng);
    }
    let start = b * config.batch_size;
    order[start..(start + config.batch_size).min(samples)].to_vec()
}

fn label_settings<'a>(config: &'a AdaptationConfig, rotation: &'a Rotation) -> LabelSettings<'a> {
    LabelSettings {
        rotation,
        alpha: config.alpha,
        beta: config.beta,
        refine: &config.refine,
        mode: config.pseudo_labels,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// One adaptation iteration on the given batch.
pub fn step(
    state: &mut AdaptState,
    samples: &[DualViewSample],
    batch: &[usize],
    config: &AdaptationConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<Event> {
    let iteration = state.iteration();
    let teacher = &state.teacher.params;
    let settings = label_settings(config, &state.rotation);

    // (1)-(2): momentum predictions and pseudo-labels, reduced in batch order.
    let labeled = batch
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let p1 = teacher.predict(View::First, s.input(View::First));
            let p2 = teacher.predict(View::Second, s.input(View::Second));
            let label = pseudo_label(
                &p1.joints,
                &p2.joints,
                &p1.heatmaps,
                &p2.heatmaps,
                &settings,
            )?;
            Ok(((p1.joints, p2.joints), label))
        })
        .collect::<Result<Vec<_>>>()?;

    // (3): loss and gradient of the live estimator.
    let theta = &state.theta;
    let mut grad = vec![0.0; EstimatorParams::LEN];
    let mut total_loss = 0.0;
    for (&i, (_, label)) in batch.iter().zip(&labeled) {
        let s = &samples[i];
        let inputs = [s.input(View::First), s.input(View::Second)];
        let pred = [
            theta.correct(View::First, inputs[0].raw),
            theta.correct(View::Second, inputs[1].raw),
        ];
        total_loss += loss([&pred[0], &pred[1]], [&label.first, &label.second]);
        for (g, gi) in grad
            .iter_mut()
            .zip(theta.loss_gradient(inputs, [&label.first, &label.second]))
        {
            *g += gi;
        }
    }
    let n = batch.len() as f64;
    let batch_loss = total_loss / n;
    grad.iter_mut().for_each(|g| *g /= n);
    if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { iteration });
    }

    // (4): gradient step on θ.
    for (v, g) in state.velocity.iter_mut().zip(&grad) {
        *v = config.optimizer_momentum * *v + g;
    }
    state.theta.descend(
        &state.velocity,
        config.learning_rate,
        config.gain_learning_rate,
    );
    // (5): momentum estimator.
    state.teacher.update(&state.theta);
    // (6): rotation, from the momentum predictions of this batch.
    let preds: Vec<(JointSet, JointSet)> = labeled.iter().map(|(p, _)| p.clone()).collect();
    let update = update_rotation(&state.rotation, &preds, config.eta_r)?;
    let drift = geodesic_angle(&state.rotation, &update.rotation);
    state.rotation = update.rotation;

    let refinements: Vec<_> = labeled
        .iter()
        .filter_map(|(_, l)| l.refinement.as_ref())
        .collect();
    let valid = || refinements.iter().filter(|d| !d.degenerate);
    Ok(Event {
        iteration,
        epoch: iteration / config.batches_per_epoch(samples.len()),
        batch_size: batch.len(),
        loss: batch_loss,
        gradient_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        rotation_drift: drift,
        rotation_error: monitor.map(|m| geodesic_angle(&state.rotation, m.rotation)),
        pseudo_label_error: monitor.and_then(|_| {
            mean(batch.iter().zip(&labeled).map(|(&i, (_, l))| {
                let gt = &samples[i].ground_truth;
                (mpjpe(&l.first, &gt[0]) + mpjpe(&l.second, &gt[1])) / 2.0
            }))
        }),
        refine_initial: mean(valid().map(|d| d.initial_objective)),
        refine_final: mean(valid().map(|d| d.final_objective)),
        refine_iterations: mean(valid().map(|d| d.iterations as f64)),
        refine_degenerate: refinements.iter().filter(|d| d.degenerate).count(),
        kabsch_degenerate: update.degenerate,
    })
}

/// Runs iterations until `until` updates have completed (capped at the
/// configured schedule).
pub fn run(
    state: &mut AdaptState,
    samples: &[DualViewSample],
    config: &AdaptationConfig,
    until: Option<usize>,
    monitor: Option<Monitor<'_>>,
    mut on_event: impl FnMut(&Event),
) -> Result<Vec<Event>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "cannot adapt on an empty dataset".into(),
        ));
    }
    let total = config.total_iterations(samples.len());
    let end = until.map_or(total, |u| u.min(total));
    let mut events = Vec::new();
    while state.iteration() < end {
        let batch = batch_indices(config, samples.len(), state.iteration());
        let event = step(state, samples, &batch, config, monitor)?;
        on_event(&event);
        events.push(event);
    }
    Ok(events)
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub initialization: Initialization,
    pub state: AdaptState,
    pub events: Vec<Event>,
}

/// Initializes the rotation from `theta0`'s predictions and runs the full schedule.
pub fn adapt(
    theta0: &EstimatorParams,
    samples: &[DualViewSample],
    config: &AdaptationConfig,
    monitor: Option<Monitor<'_>>,
) -> Result<AdaptOutcome> {
    config.validate()?;
    let initialization = initialize_rotation(theta0, samples, config.init_pairs)?;
    let mut state = AdaptState::new(theta0.clone(), initialization.rotation, config)?;
    let events = run(&mut state, samples, config, None, monitor, |_| {})?;
    Ok(AdaptOutcome {
        initialization,
        state,
        events,
    })
}

/// Predictions of `estimator` for every sample.
pub fn predict_all<E: Estimator + Sync>(
    estimator: &E,
    samples: &[DualViewSample],
) -> Vec<[JointSet; 2]> {
    samples
        .par_iter()
        .map(|s| {
            [
                estimator.predict(View::First, s.input(View::First)).joints,
                estimator
                    .predict(View::Second, s.input(View::Second))
                    .joints,
            ]
        })
        .collect()
}

pub fn ground_truth(samples: &[DualViewSample]) -> Vec<[JointSet; 2]> {
    samples.iter().map(|s| s.ground_truth.clone()).collect()
}

/// Mono-M / Dual-M of `params` on `samples`, fusing with `rotation`.
pub fn evaluate_params(
    params: &EstimatorParams,
    samples: &[DualViewSample],
    rotation: &Rotation,
) -> Result<EvalReport> {
    metrics::evaluate(
        &predict_all(params, samples),
        &ground_truth(samples),
        rotation,
    )
}

/// Per-sample prediction error against fused and merge-only pseudo-label
/// errors, bucketed into seven intervals.
pub fn complementarity(
    params: &EstimatorParams,
    samples: &[DualViewSample],
    rotation: &Rotation,
    config: &AdaptationConfig,
) -> Result<ComplementarityTable> {
    let fused = AdaptationConfig {
        pseudo_labels: Provenance::Fused,
        ..config.clone()
    };
    let merged = AdaptationConfig {
        pseudo_labels: Provenance::AbmOnly,
        ..config.clone()
    };
    let rows = samples
        .par_iter()
        .map(|s| {
            let p1 = params.predict(View::First, s.input(View::First));
            let p2 = params.predict(View::Second, s.input(View::Second));
            let gt = &s.ground_truth;
            let err = |a: &JointSet, b: &JointSet| (mpjpe(a, &gt[0]) + mpjpe(b, &gt[1])) / 2.0;
            let mut out = [err(&p1.joints, &p2.joints), 0.0, 0.0];
            for (slot, cfg) in [(1, &fused), (2, &merged)] {
                let l = pseudo_label(
                    &p1.joints,
                    &p2.joints,
                    &p1.heatmaps,
                    &p2.heatmaps,
                    &label_settings(cfg, rotation),
                )?;
                out[slot] = err(&l.first, &l.second);
            }
            Ok(out)
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    complementarity_table(&col(0), &col(1), &col(2))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DVCK";
pub const CHECKPOINT_VERSION: FormatVersion = FormatVersion {
    major: 1,
    minor: 0,
    patch: 0,
};

/// On-disk form of an [`AdaptState`] with the identity of its run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub template_hash: String,
    pub config: AdaptationConfig,
    pub state: AdaptState,
}

impl Checkpoint {
    pub fn new(state: &AdaptState, config: &AdaptationConfig, template_hash: &str) -> Self {
        Self {
            config_hash: config.hash(),
            template_hash: template_hash.to_string(),
            config: config.clone(),
            state: state.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("checkpoint serializes");
        container::encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, payload) = container::decode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION.major, bytes)?;
        serde_json::from_slice(payload).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }

    /// State for continuing under `config` on data built from `template_hash`.
    pub fn resume(&self, config: &AdaptationConfig, template_hash: &str) -> Result<AdaptState> {
        let current = config.hash();
        if current != self.config_hash {
            return Err(Error::ConfigMismatch {
                stored: self.config_hash.clone(),
                current,
            });
        }
        if template_hash != self.template_hash {
            return Err(Error::TemplateMismatch {
                stored: self.template_hash.clone(),
                current: template_hash.to_string(),
            });
        }
        Ok(self.state.clone())
    }
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    container::write_file(path, &checkpoint.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&container::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(AdaptationConfig::default().validate().is_ok());
        for bad in [
            AdaptationConfig {
                alpha: 1.1,
                ..Default::default()
            },
            AdaptationConfig {
                eta_theta: 1.0,
                ..Default::default()
            },
            AdaptationConfig {
                eta_r: 1.01,
                ..Default::default()
            },
            AdaptationConfig {
                init_pairs: 0,
                ..Default::default()
            },
            AdaptationConfig {
                batch_size: 0,
                ..Default::default()
            },
            AdaptationConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = AdaptationConfig::default();
        let b = AdaptationConfig {
            alpha: 0.71,
            ..Default::default()
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), AdaptationConfig::default().hash());
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let c = AdaptationConfig {
            batch_size: 7,
            ..Default::default()
        };
        let mut seen: Vec<usize> = (0..c.batches_per_epoch(30))
            .flat_map(|b| batch_indices(&c, 30, 5 * 5 + b))
            .collect();
        seen.sort();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
        assert_eq!(batch_indices(&c, 30, 4).len(), 2);
    }
}
