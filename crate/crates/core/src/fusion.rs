//! Per-cell semantic fusion backends.
//!
//! Three mechanisms turn a cell's observation stream into class
//! probabilities:
//!
//! * [`BackendKind::Bayes`] — multiplies successive class likelihoods under
//!   a first-order Markov assumption and renormalizes (log-space, floored);
//! * [`BackendKind::StandardLstm`] — recurrent state fusion that drops back
//!   to the zero state whenever even one observation frame is missing;
//! * [`BackendKind::NapLstm`] — recurrent fusion whose state "naps" across
//!   observation gaps up to a maximum napping duration (MNTD) and is
//!   reinitialized to zeros for longer gaps.
//!
//! All cells of a map share one set of LSTM weights; the cell itself only
//! stores its `(S, h)` state tuple and current probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{lstm_step, softmax, LstmParams, LstmState, PROB_FLOOR};
use crate::voxmap::{Cell, CellKey};

/// Maximum napping time duration, counted in missing observation frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mntd {
    Frames(u64),
    /// Never reinitialize, regardless of gap length.
    Infinite,
}

impl Mntd {
    /// Parse `"inf"`, `"day"` or a frame count. `frames_per_day` resolves
    /// the day sentinel.
    pub fn parse(text: &str, frames_per_day: u64) -> Result<Self> {
        match text {
            "inf" | "infinite" => Ok(Mntd::Infinite),
            "day" => Ok(Mntd::Frames(frames_per_day)),
            other => other
                .parse::<u64>()
                .map(Mntd::Frames)
                .map_err(|_| Error::Argument(format!("bad MNTD value `{other}`"))),
        }
    }

    pub fn allows(&self, missing_frames: u64) -> bool {
        match self {
            Mntd::Infinite => true,
            Mntd::Frames(m) => missing_frames <= *m,
        }
    }
}

impl std::fmt::Display for Mntd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mntd::Infinite => write!(f, "inf"),
            Mntd::Frames(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Bayes,
    StandardLstm,
    NapLstm(Mntd),
}

impl BackendKind {
    pub fn is_recurrent(&self) -> bool {
        !matches!(self, BackendKind::Bayes)
    }

    /// The effective napping duration: a standard LSTM is the zero-duration
    /// special case (any missing frame resets the state).
    pub fn mntd(&self) -> Option<Mntd> {
        match self {
            BackendKind::Bayes => None,
            BackendKind::StandardLstm => Some(Mntd::Frames(0)),
            BackendKind::NapLstm(m) => Some(*m),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::Bayes => "bayes",
            BackendKind::StandardLstm => "lstm",
            BackendKind::NapLstm(_) => "naplstm",
        }
    }
}

/// One semantic observation of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEvent {
    pub frame: u64,
    pub time_s: f64,
    pub payload: ObservationPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationPayload {
    /// Per-class likelihood (the classifier's squashed probabilities),
    /// consumed by the Bayesian backend.
    Likelihood(Vec<f64>),
    /// Pooled cell feature, consumed by the recurrent backends.
    Feature(Vec<f64>),
    /// Both payloads, for pipelines that feed any backend.
    Both {
        likelihood: Vec<f64>,
        feature: Vec<f64>,
    },
}

impl ObservationPayload {
    pub fn likelihood(&self) -> Option<&[f64]> {
        match self {
            ObservationPayload::Likelihood(l) => Some(l),
            ObservationPayload::Both { likelihood, .. } => Some(likelihood),
            ObservationPayload::Feature(_) => None,
        }
    }

    pub fn feature(&self) -> Option<&[f64]> {
        match self {
            ObservationPayload::Feature(f) => Some(f),
            ObservationPayload::Both { feature, .. } => Some(feature),
            ObservationPayload::Likelihood(_) => None,
        }
    }
}

/// Fuse one likelihood into a prior: `posterior ∝ prior ⊙ likelihood`,
/// computed in log space with each factor floored at [`PROB_FLOOR`].
///
/// For chaining a whole observation stream, prefer [`fuse_stream`] /
/// [`apply_observation`]: they accumulate log evidence per cell so each
/// incoming likelihood is floored exactly once, which keeps long chains
/// equal to the normalized product of their factors.
pub fn bayes_update(prior: &[f64], likelihood: &[f64]) -> Result<Vec<f64>> {
    if prior.len() != likelihood.len() {
        return Err(Error::Argument(format!(
            "prior has {} classes, likelihood {}",
            prior.len(),
            likelihood.len()
        )));
    }
    if prior.iter().chain(likelihood).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Argument(
            "probabilities must be non-negative and finite".into(),
        ));
    }
    let logs: Vec<f64> = prior
        .iter()
        .zip(likelihood)
        .map(|(p, l)| p.max(PROB_FLOOR).ln() + l.max(PROB_FLOOR).ln())
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|v| v / z).collect())
}

/// Decide whether a cell's recurrent state survives the gap up to
/// `now_frame`. With `gap` frames between consecutive observations there are
/// `gap - 1` missing observations; the state is retained iff that count does
/// not exceed the MNTD, otherwise it is reinitialized to zeros.
///
/// Returns `true` when the state was retained.
pub fn nap_gate(cell: &mut Cell, now_frame: u64, mntd: Mntd) -> Result<bool> {
    if now_frame < cell.last_obs_frame {
        return Err(Error::Argument(format!(
            "observation at frame {now_frame} precedes the cell's last frame {}",
            cell.last_obs_frame
        )));
    }
    let gap = now_frame - cell.last_obs_frame;
    let missing = gap.saturating_sub(1);
    if mntd.allows(missing) {
        Ok(true)
    } else {
        if let Some(state) = &mut cell.state {
            for layer in &mut state.layers {
                layer.cell.iter_mut().for_each(|v| *v = 0.0);
                layer.hidden.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(false)
    }
}

/// Advance a cell's recurrent state with one pooled feature and refresh its
/// class probabilities through the shared decoder.
pub fn recurrent_update(cell: &mut Cell, f_cell: &[f64], params: &LstmParams) -> Result<()> {
    if f_cell.len() != params.input_dim {
        return Err(Error::Config(format!(
            "cell feature dim {} does not match lstm input dim {}",
            f_cell.len(),
            params.input_dim
        )));
    }
    let state = match cell.state.take() {
        Some(s) => s,
        None => LstmState::zeros_like(params),
    };
    let next = lstm_step(params, f_cell, &state)?;
    cell.prob = params.decode_hidden(next.top_hidden());
    cell.state = Some(next);
    Ok(())
}

/// Merge one floored likelihood into a cell's accumulated log evidence and
/// return the implied posterior. Log scores are re-centered each update so
/// arbitrarily long streams cannot drift toward negative infinity.
pub fn bayes_observe(log_evidence: &mut Vec<f64>, likelihood: &[f64], n_classes: usize) -> Result<Vec<f64>> {
    if likelihood.len() != n_classes {
        return Err(Error::Argument(format!(
            "likelihood has {} classes, expected {n_classes}",
            likelihood.len()
        )));
    }
    if likelihood.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Argument(
            "likelihoods must be non-negative and finite".into(),
        ));
    }
    if log_evidence.is_empty() {
        // Uniform prior contributes a constant that normalization removes.
        log_evidence.resize(n_classes, 0.0);
    }
    for (s, l) in log_evidence.iter_mut().zip(likelihood) {
        *s += l.max(PROB_FLOOR).ln();
    }
    let max = log_evidence.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for s in log_evidence.iter_mut() {
        *s -= max;
    }
    Ok(softmax(log_evidence))
}

/// Scratch cell for stream fusion outside a map.
pub fn scratch_cell() -> Cell {
    Cell {
        occupancy_logodds: 0.0,
        feature: Vec::new(),
        state: None,
        prob: Vec::new(),
        bayes_log: Vec::new(),
        last_obs_time: f64::NEG_INFINITY,
        last_obs_frame: 0,
        gt_label: None,
    }
}

/// Apply one observation event to a cell under the given backend. Returns
/// the cell's probabilities after the update.
///
/// For recurrent backends the nap gate runs against the cell's previous
/// observation frame before the stamps are advanced, so call this before (or
/// instead of) the map-level occupancy update for the same event.
pub fn apply_observation(
    cell: &mut Cell,
    event: &ObservationEvent,
    backend: BackendKind,
    params: Option<&LstmParams>,
    n_classes: usize,
) -> Result<Vec<f64>> {
    match backend {
        BackendKind::Bayes => {
            let likelihood = event.payload.likelihood().ok_or_else(|| {
                Error::Argument("bayes backend needs a likelihood payload".into())
            })?;
            cell.prob = bayes_observe(&mut cell.bayes_log, likelihood, n_classes)?;
        }
        BackendKind::StandardLstm | BackendKind::NapLstm(_) => {
            let params = params.ok_or_else(|| {
                Error::Config("recurrent backend needs shared LSTM weights".into())
            })?;
            let feature = event.payload.feature().ok_or_else(|| {
                Error::Argument("recurrent backend needs a feature payload".into())
            })?;
            let mntd = backend.mntd().expect("recurrent backend has a napping bound");
            if cell.state.is_some() {
                nap_gate(cell, event.frame, mntd)?;
            }
            recurrent_update(cell, feature, params)?;
        }
    }
    cell.last_obs_time = event.time_s;
    cell.last_obs_frame = event.frame;
    Ok(cell.prob.clone())
}

/// Fuse a cell's full (time-sorted) event stream; returns the probabilities
/// after every event.
pub fn fuse_stream(
    events: &[ObservationEvent],
    backend: BackendKind,
    params: Option<&LstmParams>,
    n_classes: usize,
) -> Result<Vec<Vec<f64>>> {
    for pair in events.windows(2) {
        if pair[1].frame <= pair[0].frame {
            return Err(Error::Argument(format!(
                "events are not sorted: frame {} follows {}",
                pair[1].frame, pair[0].frame
            )));
        }
    }
    let mut cell = scratch_cell();
    events
        .iter()
        .map(|e| apply_observation(&mut cell, e, backend, params, n_classes))
        .collect()
}

/// Write a per-cell probability history in the standard CSV layout.
pub fn write_prob_history_csv(
    out: &mut dyn std::io::Write,
    entries: &[(CellKey, u64, Vec<f64>)],
    n_classes: usize,
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<prob history>", e);
    let mut header = String::from("cell_ix,cell_iy,cell_iz,frame");
    for c in 0..n_classes {
        header.push_str(&format!(",prob_{c}"));
    }
    header.push_str(",argmax");
    writeln!(out, "{header}").map_err(io_err)?;
    for (key, frame, prob) in entries {
        let argmax = prob
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let probs = prob
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            key.ix, key.iy, key.iz, frame, probs, argmax
        )
        .map_err(io_err)?;
    }
    Ok(())
}
