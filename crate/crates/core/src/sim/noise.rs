//! Observation-noise injection: class-conditional confusion, class-prototype
//! feature substitution, synthesized classifier softmax, and per-cell
//! observation dropout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::render::gaussian;
use super::world::{STREAM_DROPOUT, STREAM_NOISE, STREAM_PROTO};
use crate::error::{Error, Result};
use crate::perception::{SemanticClass, N_CLASSES};
use crate::rng::stream_rng;
use crate::voxmap::CellKey;

/// Fixed per-class feature prototypes, the payload recurrent fusion sees in
/// oracle-observation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub vectors: Vec<Vec<f64>>,
}

impl ClassPrototypes {
    /// Seeded random prototypes, Gram-Schmidt orthogonalized so every class
    /// is equally separable regardless of the seed. Needs `dim >= 4`.
    pub fn generate(seed: u64, dim: usize) -> Self {
        let mut rng = stream_rng(seed, &[STREAM_PROTO]);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(N_CLASSES);
        while vectors.len() < N_CLASSES {
            let mut raw: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            for prev in &vectors {
                let dot: f64 = raw.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() / (1.5 * 1.5);
                for (r, p) in raw.iter_mut().zip(prev) {
                    *r -= dot * p;
                }
            }
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue; // linearly dependent draw, try again
            }
            vectors.push(raw.into_iter().map(|v| 1.5 * v / norm).collect());
        }
        ClassPrototypes { vectors }
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }
}

/// Validate a row-stochastic confusion matrix.
pub fn validate_confusion(confusion: &[[f64; N_CLASSES]; N_CLASSES]) -> Result<()> {
    for (i, row) in confusion.iter().enumerate() {
        if row.iter().any(|p| *p < 0.0 || *p > 1.0 || !p.is_finite()) {
            return Err(Error::Argument(format!(
                "confusion row {i} has invalid entries"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "confusion row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Resample an observed class from the confusion row of the true class.
pub fn corrupt_class(
    true_class: SemanticClass,
    confusion: &[[f64; N_CLASSES]; N_CLASSES],
    rng: &mut impl Rng,
) -> SemanticClass {
    let row = &confusion[true_class.index().min(N_CLASSES - 1)];
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if draw < acc {
            return SemanticClass::from_id(j as u8).unwrap();
        }
    }
    SemanticClass::from_id((N_CLASSES - 1) as u8).unwrap()
}

/// One synthesized object observation.
#[derive(Debug, Clone)]
pub struct SyntheticObservation {
    pub observed: SemanticClass,
    /// Smoothed one-hot softmax a confident classifier would emit.
    pub likelihood: Vec<f64>,
    /// Prototype of the observed class plus jitter.
    pub feature: Vec<f64>,
}

/// RNG stream for noise decisions of one object in one frame.
pub fn noise_rng(seed: u64, frame: u64, object_index: u64) -> ChaCha8Rng {
    stream_rng(seed, &[STREAM_NOISE, frame, object_index])
}

pub fn synthesize_observation(
    true_class: SemanticClass,
    confusion: &[[f64; N_CLASSES]; N_CLASSES],
    peak: f64,
    prototypes: &ClassPrototypes,
    jitter: f64,
    rng: &mut impl Rng,
) -> SyntheticObservation {
    let observed = corrupt_class(true_class, confusion, rng);
    let smoothed = (1.0 - peak) / (N_CLASSES - 1) as f64;
    let mut likelihood = vec![smoothed; N_CLASSES];
    likelihood[observed.index()] = peak;
    let feature = prototypes.vectors[observed.index()]
        .iter()
        .map(|v| v + jitter * gaussian(rng))
        .collect();
    SyntheticObservation {
        observed,
        likelihood,
        feature,
    }
}

/// Corrupt a batch of per-object predictions (one frame).
pub fn inject_observation_noise(
    true_classes: &[SemanticClass],
    confusion: &[[f64; N_CLASSES]; N_CLASSES],
    seed: u64,
    frame: u64,
) -> Result<Vec<SemanticClass>> {
    validate_confusion(confusion)?;
    Ok(true_classes
        .iter()
        .enumerate()
        .map(|(i, c)| corrupt_class(*c, confusion, &mut noise_rng(seed, frame, i as u64)))
        .collect())
}

fn key_hash(key: CellKey) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in [key.ix as u64, key.iy as u64, key.iz as u64] {
        h ^= v;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Per cell-frame observation dropout: i.i.d. Bernoulli, so per-cell gap
/// lengths are geometric.
pub fn cell_observed(seed: u64, frame: u64, key: CellKey, dropout: f64) -> bool {
    if dropout <= 0.0 {
        return true;
    }
    let mut rng = stream_rng(seed, &[STREAM_DROPOUT, frame, key_hash(key)]);
    rng.random_range(0.0..1.0) >= dropout
}
