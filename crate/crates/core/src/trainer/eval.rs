//! Evaluation protocols: replay test days through the full pipeline under
//! one or more fusion backends, score each day's final map against ground
//! truth, and aggregate.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{BackendKind, Mntd};
use crate::metrics::{accumulate, report, ConfusionMatrix, MetricsReport, MetricsRow};
use crate::neural::LstmParams;
use crate::perception::{ClusterConfig, N_CLASSES};
use crate::pipeline::{apply_frame, observations_for_frames, ObservationSource, ScanProvider};
use crate::voxmap::{GroundTruthMap, MapConfig, VoxelMap};

/// One backend under evaluation.
#[derive(Debug, Clone)]
pub struct BackendSpec {
    pub label: String,
    pub backend: BackendKind,
}

impl BackendSpec {
    pub fn new(label: impl Into<String>, backend: BackendKind) -> Self {
        BackendSpec {
            label: label.into(),
            backend,
        }
    }

    pub fn mntd_text(&self) -> String {
        match self.backend.mntd() {
            None => "-".to_string(),
            Some(m) => m.to_string(),
        }
    }
}

/// Evaluation outcome of one backend over the test days.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub label: String,
    pub backend: BackendKind,
    pub day_rows: Vec<MetricsRow>,
    /// Arithmetic mean of the per-day metrics.
    pub mean: MetricsReport,
}

fn mean_report(rows: &[MetricsRow]) -> MetricsReport {
    let n = rows.len().max(1) as f64;
    MetricsReport {
        overall_accuracy: rows.iter().map(|r| r.metrics.overall_accuracy).sum::<f64>() / n,
        mean_accuracy: rows.iter().map(|r| r.metrics.mean_accuracy).sum::<f64>() / n,
        mean_iou: rows.iter().map(|r| r.metrics.mean_iou).sum::<f64>() / n,
    }
}

/// Replay `test_days` once and score every backend on the same observation
/// stream. Each backend owns an independent map; recurrent state persists
/// across days, subject to retention pruning.
pub fn evaluate_backends(
    provider: &ScanProvider,
    source: &ObservationSource,
    cluster_cfg: &ClusterConfig,
    map_config: &MapConfig,
    params: Option<&LstmParams>,
    specs: &[BackendSpec],
    test_days: std::ops::Range<usize>,
) -> Result<Vec<EvalResult>> {
    let cfg = provider.config().clone();
    if test_days.end > cfg.days {
        return Err(Error::Argument(format!(
            "test days {:?} exceed the scenario's {} days",
            test_days, cfg.days
        )));
    }
    if specs.iter().any(|s| s.backend.is_recurrent()) && params.is_none() {
        return Err(Error::Config(
            "recurrent backends need trained fusion weights".into(),
        ));
    }
    let ground_truth: Vec<(usize, GroundTruthMap)> = test_days
        .clone()
        .map(|day| Ok((day, provider.ground_truth(day)?)))
        .collect::<Result<_>>()?;

    struct BackendState {
        spec: BackendSpec,
        map: VoxelMap,
        rows: Vec<MetricsRow>,
    }
    let mut states: Vec<BackendState> = specs
        .iter()
        .map(|spec| BackendState {
            spec: spec.clone(),
            map: VoxelMap::new(map_config.clone()),
            rows: Vec::new(),
        })
        .collect();

    for (day, gt) in &ground_truth {
        let first = (*day * cfg.frames_per_day) as u64;
        let last = first + cfg.frames_per_day as u64;
        let frame_obs = observations_for_frames(provider, source, cluster_cfg, first..last)?;
        // Backends are independent given the shared observation stream.
        let results: Vec<Result<()>> = states
            .par_iter_mut()
            .map(|state| {
                for (frame, obs) in &frame_obs {
                    let time = cfg.frame_time(*frame);
                    apply_frame(
                        &mut state.map,
                        obs,
                        time,
                        *frame,
                        state.spec.backend,
                        params,
                    )?;
                    state.map.prune_expired(time);
                }
                Ok(())
            })
            .collect();
        for r in results {
            r?;
        }
        for state in &mut states {
            let mut cm = ConfusionMatrix::new(N_CLASSES);
            accumulate(&mut cm, &state.map, gt)?;
            state.rows.push(MetricsRow {
                day: *day,
                backend: state.spec.backend.name().to_string(),
                mntd: state.spec.mntd_text(),
                metrics: report(&cm)?,
            });
        }
    }

    Ok(states
        .into_iter()
        .map(|s| EvalResult {
            mean: mean_report(&s.rows),
            label: s.spec.label,
            backend: s.spec.backend,
            day_rows: s.rows,
        })
        .collect())
}

/// The three-way comparison: nap-gated LSTM (one-day MNTD), plain LSTM,
/// Bayesian update.
pub fn comparison_specs(frames_per_day: usize) -> Vec<BackendSpec> {
    vec![
        BackendSpec::new(
            "naplstm",
            BackendKind::NapLstm(Mntd::Frames(frames_per_day as u64)),
        ),
        BackendSpec::new("lstm", BackendKind::StandardLstm),
        BackendSpec::new("bayes", BackendKind::Bayes),
    ]
}

/// The standard napping-duration sweep grid, in frames, plus the one-day
/// sentinel.
pub fn sweep_grid(frames_per_day: usize) -> Vec<(String, Mntd)> {
    let mut grid: Vec<(String, Mntd)> = [1u64, 10, 100, 200, 500, 1000]
        .iter()
        .map(|&f| (f.to_string(), Mntd::Frames(f)))
        .collect();
    grid.push(("day".to_string(), Mntd::Frames(frames_per_day as u64)));
    grid
}

pub fn sweep_specs(frames_per_day: usize) -> Vec<BackendSpec> {
    sweep_grid(frames_per_day)
        .into_iter()
        .map(|(label, m)| BackendSpec::new(format!("naplstm@{label}"), BackendKind::NapLstm(m)))
        .collect()
}
