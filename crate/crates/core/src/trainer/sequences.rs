//! Per-cell observation sequences assembled from replayed training days,
//! and segment sampling for mini-batch training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::perception::SemanticClass;
use crate::pipeline::FrameObservations;
use crate::voxmap::{CellKey, GroundTruthMap};

#[derive(Debug, Clone, PartialEq)]
pub struct SeqStep {
    pub frame: u64,
    pub feature: Vec<f64>,
    /// Ground-truth label at this step's day.
    pub label: SemanticClass,
}

/// One cell's labeled observation history across the training days. Gaps
/// are implicit in the frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSequence {
    pub key: CellKey,
    pub steps: Vec<SeqStep>,
}

/// Associate per-frame observations with per-day ground truth.
///
/// One sequence per cell ever observed with at least one labeled step;
/// steps on don't-care or unlabeled cells are dropped. Frames must be
/// strictly increasing per cell.
pub fn build_sequences(
    frame_obs: &[(u64, FrameObservations)],
    ground_truth: &[GroundTruthMap],
    frames_per_day: usize,
) -> Result<Vec<CellSequence>> {
    let mut by_cell: std::collections::HashMap<CellKey, Vec<SeqStep>> =
        std::collections::HashMap::new();
    let mut last_frame: std::collections::HashMap<CellKey, u64> = std::collections::HashMap::new();
    for (frame, obs) in frame_obs {
        let day = (*frame / frames_per_day as u64) as usize;
        let gt = ground_truth.get(day).ok_or_else(|| {
            Error::Argument(format!("no ground truth for day {day} (frame {frame})"))
        })?;
        for (key, cell_obs) in obs {
            if let Some(prev) = last_frame.get(key) {
                if *prev >= *frame {
                    return Err(Error::Argument(format!(
                        "frame-time collision for cell {key:?}: {prev} then {frame}"
                    )));
                }
            }
            last_frame.insert(*key, *frame);
            let Some(label) = gt.labels.get(key) else {
                continue;
            };
            if *label == SemanticClass::DontCare {
                continue;
            }
            by_cell.entry(*key).or_default().push(SeqStep {
                frame: *frame,
                feature: cell_obs.feature.clone(),
                label: *label,
            });
        }
    }
    let mut sequences: Vec<CellSequence> = by_cell
        .into_iter()
        .filter(|(_, steps)| !steps.is_empty())
        .map(|(key, steps)| CellSequence { key, steps })
        .collect();
    sequences.sort_by_key(|s| s.key);
    Ok(sequences)
}

/// Deterministically subsample at most `max` sequences.
pub fn subsample_sequences(
    mut sequences: Vec<CellSequence>,
    max: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CellSequence> {
    if sequences.len() <= max {
        return sequences;
    }
    for i in (1..sequences.len()).rev() {
        let j = rng.random_range(0..=i);
        sequences.swap(i, j);
    }
    sequences.truncate(max);
    sequences.sort_by_key(|s| s.key);
    sequences
}

/// A sampled training segment: sequence index, start step, length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub seq: usize,
    pub start: usize,
    pub len: usize,
}

/// Uniformly sample `(sequence, start)` pairs — uniform over the set of all
/// valid pairs, i.e. a sequence is drawn in proportion to its length. Each
/// segment runs from its start to at most `cap` steps (shorter near the
/// sequence end, no padding).
pub fn sample_batch(
    sequences: &[CellSequence],
    batch_size: usize,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Segment>> {
    if sequences.is_empty() {
        return Err(Error::Argument("no sequences to sample from".into()));
    }
    if cap == 0 {
        return Err(Error::Argument("segment cap must be positive".into()));
    }
    let mut prefix = Vec::with_capacity(sequences.len() + 1);
    prefix.push(0usize);
    for s in sequences {
        prefix.push(prefix.last().unwrap() + s.steps.len());
    }
    let total = *prefix.last().unwrap();
    if total == 0 {
        return Err(Error::Argument("sequences contain no steps".into()));
    }
    Ok((0..batch_size)
        .map(|_| {
            let pair = rng.random_range(0..total);
            let seq = prefix.partition_point(|&p| p <= pair) - 1;
            let start = pair - prefix[seq];
            Segment {
                seq,
                start,
                len: cap.min(sequences[seq].steps.len() - start),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::CellObs;
    use crate::rng::stream_rng;

    fn obs(f: f64) -> CellObs {
        CellObs {
            feature: vec![f, -f],
            likelihood: vec![0.25; 4],
        }
    }

    fn key(i: i32) -> CellKey {
        CellKey { ix: i, iy: 0, iz: 0 }
    }

    fn gt_with(labels: &[(CellKey, SemanticClass)]) -> GroundTruthMap {
        let mut gt = GroundTruthMap::new(0.4);
        for (k, l) in labels {
            gt.labels.insert(*k, *l);
        }
        gt
    }

    #[test]
    fn gap_free_cell_yields_full_day_sequence() {
        let frames_per_day = 5;
        let gt = gt_with(&[(key(1), SemanticClass::Car)]);
        let frame_obs: Vec<(u64, FrameObservations)> = (0..5u64)
            .map(|f| (f, vec![(key(1), obs(f as f64))]))
            .collect();
        let seqs = build_sequences(&frame_obs, &[gt], frames_per_day).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].steps.len(), 5);
        assert!(seqs[0].steps.windows(2).all(|w| w[1].frame == w[0].frame + 1));
    }

    #[test]
    fn cells_associate_across_days_with_gaps() {
        let frames_per_day = 4;
        let gt0 = gt_with(&[(key(2), SemanticClass::Background)]);
        let gt1 = gt_with(&[]); // unlabeled on day 1
        let gt2 = gt_with(&[(key(2), SemanticClass::Car)]);
        let frame_obs: Vec<(u64, FrameObservations)> = vec![
            (1, vec![(key(2), obs(1.0))]),
            (9, vec![(key(2), obs(2.0))]), // day 2
        ];
        let seqs = build_sequences(&frame_obs, &[gt0, gt1, gt2], frames_per_day).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].steps.len(), 2);
        assert_eq!(seqs[0].steps[0].label, SemanticClass::Background);
        assert_eq!(seqs[0].steps[1].label, SemanticClass::Car);
        assert_eq!(seqs[0].steps[1].frame - seqs[0].steps[0].frame, 8);
    }

    #[test]
    fn dontcare_steps_are_dropped_and_empty_cells_vanish() {
        let frames_per_day = 3;
        let gt = gt_with(&[
            (key(1), SemanticClass::DontCare),
            (key(2), SemanticClass::Pedestrian),
        ]);
        let frame_obs: Vec<(u64, FrameObservations)> = vec![
            (0, vec![(key(1), obs(0.0)), (key(2), obs(1.0))]),
            (1, vec![(key(1), obs(2.0)), (key(3), obs(3.0))]),
        ];
        let seqs = build_sequences(&frame_obs, &[gt], frames_per_day).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].key, key(2));
    }

    #[test]
    fn frame_collision_is_an_argument_error() {
        let frames_per_day = 3;
        let gt = gt_with(&[(key(1), SemanticClass::Car)]);
        let frame_obs: Vec<(u64, FrameObservations)> = vec![
            (0, vec![(key(1), obs(0.0))]),
            (0, vec![(key(1), obs(1.0))]),
        ];
        assert!(matches!(
            build_sequences(&frame_obs, &[gt], frames_per_day),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sequence_count_matches_replay_oracle() {
        let frames_per_day = 6;
        let mut rng = stream_rng(5, &[0]);
        let mut frame_obs: Vec<(u64, FrameObservations)> = Vec::new();
        let mut gt = GroundTruthMap::new(0.4);
        for i in 0..20 {
            if rng.random_range(0.0..1.0) < 0.7 {
                let label = SemanticClass::from_id(rng.random_range(0..5u8)).unwrap();
                gt.labels.insert(key(i), label);
            }
        }
        for f in 0..6u64 {
            let mut frame = Vec::new();
            for i in 0..20 {
                if rng.random_range(0.0..1.0) < 0.5 {
                    frame.push((key(i), obs(f as f64)));
                }
            }
            frame_obs.push((f, frame));
        }
        let seqs = build_sequences(&frame_obs, &[gt.clone()], frames_per_day).unwrap();
        // Oracle: distinct observed cells with a non-dontcare label.
        let mut expected = std::collections::HashSet::new();
        for (_, frame) in &frame_obs {
            for (k, _) in frame {
                match gt.labels.get(k) {
                    Some(l) if *l != SemanticClass::DontCare => {
                        expected.insert(*k);
                    }
                    _ => {}
                }
            }
        }
        assert_eq!(seqs.len(), expected.len());
    }

    #[test]
    fn whole_sequences_when_cap_covers_everything() {
        let seqs = vec![CellSequence {
            key: key(1),
            steps: (0..7)
                .map(|f| SeqStep {
                    frame: f,
                    feature: vec![0.0],
                    label: SemanticClass::Car,
                })
                .collect(),
        }];
        let mut rng = stream_rng(1, &[2]);
        for seg in sample_batch(&seqs, 32, 100, &mut rng).unwrap() {
            assert_eq!(seg.start + seg.len, 7);
        }
    }

    #[test]
    fn one_step_sequences_give_singleton_segments() {
        let seqs = vec![CellSequence {
            key: key(1),
            steps: vec![SeqStep {
                frame: 0,
                feature: vec![0.0],
                label: SemanticClass::Car,
            }],
        }];
        let mut rng = stream_rng(2, &[2]);
        for seg in sample_batch(&seqs, 16, 5, &mut rng).unwrap() {
            assert_eq!((seg.start, seg.len), (0, 1));
        }
    }

    #[test]
    fn start_indices_are_uniform_within_three_sigma() {
        let n_steps = 10usize;
        let seqs = vec![CellSequence {
            key: key(1),
            steps: (0..n_steps as u64)
                .map(|f| SeqStep {
                    frame: f,
                    feature: vec![0.0],
                    label: SemanticClass::Car,
                })
                .collect(),
        }];
        let mut rng = stream_rng(3, &[2]);
        let draws = 10_000usize;
        let mut counts = vec![0usize; n_steps];
        for seg in sample_batch(&seqs, draws, 3, &mut rng).unwrap() {
            counts[seg.start] += 1;
        }
        let mean = draws as f64 / n_steps as f64;
        let sigma = (draws as f64 * (1.0 / n_steps as f64) * (1.0 - 1.0 / n_steps as f64)).sqrt();
        for (start, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "start {start} drawn {c} times"
            );
        }
    }
}
