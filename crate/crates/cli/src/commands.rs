use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dualhand::adapt::{
    self, complementarity, evaluate_params, initialize_rotation, read_checkpoint, AdaptState,
    AdaptationConfig, Checkpoint, Monitor,
};
use dualhand::estimator::EstimatorParams;
use dualhand::geometry::geodesic_angle;
use dualhand::metrics::{ComplementarityTable, EvalReport};
use dualhand::pseudolabel::Provenance;
use dualhand::scene::{generate_dataset, read_dataset, write_dataset, Dataset};
use dualhand::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::failure::{io_failure, Failure, Outcome};
use crate::manifest::{file_sha256, load_verified, now, DatasetRef, Outputs};

pub const DATASET_FILE: &str = "dataset.dvhd";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const FAILURE_FILE: &str = "failure_state.json";
pub const COMPLEMENTARITY_FILE: &str = "complementarity.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";

/// Baseline and adapted scores of one run on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset_sha256: String,
    pub pseudo_labels: Provenance,
    pub iterations: usize,
    pub initial_rotation_error_deg: f64,
    pub final_rotation_error_deg: f64,
    pub baseline: EvalReport,
    pub adapted: EvalReport,
}

#[derive(Serialize)]
struct FailureDump<'a> {
    iteration: usize,
    message: String,
    last_finite_state: &'a AdaptState,
}

fn json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configuration serializes")
}

fn load_dataset(path: &Path) -> Outcome<(Dataset, DatasetRef)> {
    let dataset = read_dataset(path)?;
    let sha256 = file_sha256(path)?;
    Ok((
        dataset,
        DatasetRef {
            path: path.to_path_buf(),
            sha256,
        },
    ))
}

fn rotation_error_deg(dataset: &Dataset, r: &dualhand::geometry::Rotation) -> f64 {
    geodesic_angle(r, dataset.relative_rotation()).to_degrees()
}

fn metrics_for(
    dataset: &Dataset,
    data: &DatasetRef,
    state: &AdaptState,
    pseudo_labels: Provenance,
) -> Outcome<RunMetrics> {
    Ok(RunMetrics {
        dataset_sha256: data.sha256.clone(),
        pseudo_labels,
        iterations: state.iteration(),
        initial_rotation_error_deg: rotation_error_deg(dataset, &state.initial_rotation),
        final_rotation_error_deg: rotation_error_deg(dataset, &state.rotation),
        baseline: evaluate_params(
            &EstimatorParams::identity(),
            &dataset.samples,
            &state.initial_rotation,
        )?,
        adapted: evaluate_params(state.adapted(), &dataset.samples, &state.rotation)?,
    })
}

pub fn synth(config: &Path, out: &Path, force: bool) -> Outcome {
    let started = now();
    let config = ExperimentConfig::load(config)?;
    let data_path = out.join(DATASET_FILE);
    if data_path.exists() && !force {
        return Err(Failure::Data(format!(
            "{} exists; pass --force to overwrite",
            data_path.display()
        )));
    }
    let mut outputs = Outputs::create(out, force)?;
    let dataset = generate_dataset(&config.scene)?;
    let sha256 = write_dataset(&dataset, &data_path)?;
    outputs.record_file(DATASET_FILE)?;
    outputs.record_file(&format!("{DATASET_FILE}.manifest.json"))?;
    outputs.finish(
        "synth",
        json(&config.scene),
        Some(DatasetRef {
            path: data_path.clone(),
            sha256,
        }),
        Vec::new(),
        started,
    )?;
    println!(
        "wrote {} samples to {}",
        dataset.samples.len(),
        data_path.display()
    );
    Ok(())
}

pub fn adapt(
    data: &Path,
    config: &Path,
    out: &Path,
    ablate: Option<Provenance>,
    resume: Option<&Path>,
    force: bool,
) -> Outcome {
    let started = now();
    let mut ac: AdaptationConfig = ExperimentConfig::load(config)?.adapt;
    if let Some(mode) = ablate {
        ac.pseudo_labels = mode;
    }
    let (dataset, data_ref) = load_dataset(data)?;
    if (1..ac.init_pairs).contains(&dataset.samples.len()) {
        eprintln!(
            "init_pairs {} exceeds the dataset; using all {} samples",
            ac.init_pairs,
            dataset.samples.len()
        );
        ac.init_pairs = dataset.samples.len();
    }
    let template = dataset.header.template_hash.clone();
    let mut outputs = Outputs::create(out, force)?;

    let mut state = match resume {
        Some(path) => read_checkpoint(path)?.resume(&ac, &template)?,
        None => {
            let init = initialize_rotation(
                &EstimatorParams::identity(),
                &dataset.samples,
                ac.init_pairs,
            )?;
            eprintln!(
                "initial rotation from {} pairs ({} degenerate), {:.3} deg from truth",
                init.used,
                init.degenerate,
                rotation_error_deg(&dataset, &init.rotation)
            );
            AdaptState::new(EstimatorParams::identity(), init.rotation, &ac)?
        }
    };

    let events_path = outputs.path(EVENTS_FILE);
    let mut log =
        BufWriter::new(File::create(&events_path).map_err(|e| io_failure(&events_path, e))?);
    let mut log_error = None;
    let per_epoch = ac.batches_per_epoch(dataset.samples.len().max(1));
    let truth = *dataset.relative_rotation();
    let result = adapt::run(
        &mut state,
        &dataset.samples,
        &ac,
        None,
        Some(Monitor { rotation: &truth }),
        |e| {
            let line = serde_json::to_string(e).expect("event serializes");
            if let Err(err) = writeln!(log, "{line}") {
                log_error.get_or_insert(err);
            }
            if (e.iteration + 1) % per_epoch == 0 {
                eprintln!(
                    "epoch {}/{}: loss {:.3}, rotation error {:.3} deg",
                    e.epoch + 1,
                    ac.epochs,
                    e.loss,
                    e.rotation_error.unwrap_or(f64::NAN).to_degrees()
                );
            }
        },
    );
    log.flush().map_err(|e| io_failure(&events_path, e))?;
    drop(log);
    if let Some(err) = log_error {
        return Err(io_failure(&events_path, err));
    }
    outputs.record_file(EVENTS_FILE)?;

    if let Err(err) = result {
        if let Error::NonFiniteLoss { iteration } = err {
            let message = err.to_string();
            outputs.write_json(
                FAILURE_FILE,
                &FailureDump {
                    iteration,
                    message: message.clone(),
                    last_finite_state: &state,
                },
            )?;
            outputs.finish("adapt", json(&ac), Some(data_ref), Vec::new(), started)?;
            return Err(Failure::Numerical(format!(
                "{message}; last finite state written to {}",
                out.join(FAILURE_FILE).display()
            )));
        }
        return Err(err.into());
    }

    outputs.write(
        CHECKPOINT_FILE,
        &Checkpoint::new(&state, &ac, &template).to_bytes(),
    )?;
    let metrics = metrics_for(&dataset, &data_ref, &state, ac.pseudo_labels)?;
    outputs.write_json(METRICS_FILE, &metrics)?;
    outputs.finish(
        "adapt",
        json(&ac),
        Some(data_ref),
        vec![CHECKPOINT_FILE.to_string()],
        started,
    )?;
    println!(
        "Mono-M {:.3} -> {:.3}, Dual-M {:.3} -> {:.3}",
        metrics.baseline.mono_m,
        metrics.adapted.mono_m,
        metrics.baseline.dual_m,
        metrics.adapted.dual_m
    );
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |x| format!("{x:.6}"))
}

pub fn complementarity_tsv(table: &ComplementarityTable) -> String {
    let mut s = String::from(
        "lower\tupper\tcount\tmean_prediction_error\tmean_fused_error\tmean_abm_error\n",
    );
    for b in &table.buckets {
        let _ = writeln!(
            s,
            "{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            b.lower,
            b.upper,
            b.count,
            opt(b.mean_prediction_error),
            opt(b.mean_fused_error),
            opt(b.mean_abm_error)
        );
    }
    s
}

pub fn eval(data: &Path, ckpt: &Path, out: &Path, sweep: Option<&[usize]>, force: bool) -> Outcome {
    let started = now();
    let (dataset, data_ref) = load_dataset(data)?;
    let checkpoint = read_checkpoint(ckpt)?;
    if checkpoint.template_hash != dataset.header.template_hash {
        return Err(Error::TemplateMismatch {
            stored: checkpoint.template_hash.clone(),
            current: dataset.header.template_hash.clone(),
        }
        .into());
    }
    if let Some(sizes) = sweep {
        if let Some(&n) = sizes.iter().find(|&&n| n == 0 || n > dataset.samples.len()) {
            return Err(Failure::Config(format!(
                "sweep size {n} must lie in 1..={}",
                dataset.samples.len()
            )));
        }
    }
    let mut outputs = Outputs::create(out, force)?;
    let state = &checkpoint.state;
    let mut metrics = metrics_for(&dataset, &data_ref, state, checkpoint.config.pseudo_labels)?;
    let table = complementarity(
        state.adapted(),
        &dataset.samples,
        &state.rotation,
        &checkpoint.config,
    )?;
    outputs.write(COMPLEMENTARITY_FILE, complementarity_tsv(&table).as_bytes())?;
    metrics.adapted.complementarity = Some(table);
    outputs.write_json(METRICS_FILE, &metrics)?;

    if let Some(sizes) = sweep {
        let mut s = String::from("n\tmono_m\tdual_m\trotation_error_deg\n");
        for &n in sizes {
            let config = AdaptationConfig {
                init_pairs: checkpoint.config.init_pairs.min(n),
                ..checkpoint.config.clone()
            };
            let run = adapt::adapt(
                &EstimatorParams::identity(),
                &dataset.samples[..n],
                &config,
                None,
            )?;
            let report =
                evaluate_params(run.state.adapted(), &dataset.samples, &run.state.rotation)?;
            let err = rotation_error_deg(&dataset, &run.state.rotation);
            eprintln!("sweep n={n}: Dual-M {:.3}", report.dual_m);
            let _ = writeln!(
                s,
                "{n}\t{:.6}\t{:.6}\t{err:.6}",
                report.mono_m, report.dual_m
            );
        }
        outputs.write(SWEEP_FILE, s.as_bytes())?;
    }

    outputs.finish(
        "eval",
        json(&checkpoint.config),
        Some(data_ref),
        vec![ckpt.display().to_string()],
        started,
    )?;
    println!(
        "Mono-M {:.3}, Dual-M {:.3} (baseline {:.3}, {:.3})",
        metrics.adapted.mono_m,
        metrics.adapted.dual_m,
        metrics.baseline.mono_m,
        metrics.baseline.dual_m
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: PathBuf,
    pub pseudo_labels: Provenance,
    pub mono_baseline: f64,
    pub mono_adapted: f64,
    /// Relative improvement in percent; positive is better.
    pub mono_gain_pct: f64,
    pub dual_baseline: f64,
    pub dual_adapted: f64,
    pub dual_gain_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset_sha256: String,
    pub rows: Vec<ReportRow>,
}

pub fn gain_pct(baseline: f64, adapted: f64) -> f64 {
    100.0 * (baseline - adapted) / baseline
}

pub fn build_report(dirs: &[PathBuf]) -> Outcome<Report> {
    let mut rows = Vec::new();
    let mut dataset: Option<(String, PathBuf)> = None;
    for dir in dirs {
        let manifest = load_verified(dir)?;
        if !manifest.artifacts.contains_key(METRICS_FILE) {
            return Err(Failure::Data(format!(
                "{} is not a completed run",
                dir.display()
            )));
        }
        let path = dir.join(METRICS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
        let m: RunMetrics = serde_json::from_str(&text)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        match &dataset {
            Some((sha, first)) if *sha != m.dataset_sha256 => {
                return Err(Failure::Data(format!(
                    "runs {} and {} were evaluated on different datasets",
                    first.display(),
                    dir.display()
                )))
            }
            Some(_) => {}
            None => dataset = Some((m.dataset_sha256.clone(), dir.clone())),
        }
        rows.push(ReportRow {
            run: dir.clone(),
            pseudo_labels: m.pseudo_labels,
            mono_baseline: m.baseline.mono_m,
            mono_adapted: m.adapted.mono_m,
            mono_gain_pct: gain_pct(m.baseline.mono_m, m.adapted.mono_m),
            dual_baseline: m.baseline.dual_m,
            dual_adapted: m.adapted.dual_m,
            dual_gain_pct: gain_pct(m.baseline.dual_m, m.adapted.dual_m),
        });
    }
    let dataset_sha256 = dataset.map(|d| d.0).unwrap_or_default();
    Ok(Report {
        dataset_sha256,
        rows,
    })
}

pub fn render_report(report: &Report) -> String {
    let label = |p: Provenance| {
        serde_json::to_value(p)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    };
    let mut s = format!(
        "{:<24} {:<9} {:>10} {:>18} {:>10} {:>18}\n",
        "run", "labels", "Mono-M", "adapted", "Dual-M", "adapted"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<24} {:<9} {:>10.2} {:>18} {:>10.2} {:>18}",
            r.run.display().to_string(),
            label(r.pseudo_labels),
            r.mono_baseline,
            format!("{:.2} ({:+.1}%)", r.mono_adapted, r.mono_gain_pct),
            r.dual_baseline,
            format!("{:.2} ({:+.1}%)", r.dual_adapted, r.dual_gain_pct),
        );
    }
    s
}

pub fn report(dirs: &[PathBuf], out: Option<&Path>, force: bool) -> Outcome {
    let started = now();
    let report = build_report(dirs)?;
    let text = render_report(&report);
    print!("{text}");
    if let Some(out) = out {
        let mut outputs = Outputs::create(out, force)?;
        outputs.write("report.txt", text.as_bytes())?;
        outputs.write_json("report.json", &report)?;
        outputs.finish("report", json(&dirs), None, Vec::new(), started)?;
    }
    Ok(())
}
