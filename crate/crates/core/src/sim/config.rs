//! Scenario configuration and the built-in profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::N_CLASSES;

/// Complete description of a synthetic parking-lot scenario.
///
/// Everything downstream (world layout, scans, ground truth, observation
/// noise) is a deterministic function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: usize,
    pub frames_per_day: usize,
    /// Scan rate in Hz; day length in seconds is `frames_per_day / frame_rate`.
    pub frame_rate: f64,
    /// Lot extent in meters (x, y).
    pub world_extent: [f64; 2],
    /// Sensor range in meters.
    pub max_range: f64,
    /// Number of parking slots, split between inner and outer rows.
    pub car_slots: usize,
    /// Long-run fraction of occupied slot-days.
    pub car_occupancy: f64,
    /// Mean stay length in days once parked (geometric holding times).
    pub car_stay_days: f64,
    pub pedestrians_per_day: usize,
    pub cyclists_per_day: usize,
    /// Agent speeds, m/s.
    pub pedestrian_speed: f64,
    pub cyclist_speed: f64,
    /// Robot patrol speed upper bound, m/s (the path is traversed at
    /// constant speed below this).
    pub robot_speed_max: f64,
    /// Surface sampling density at the sensor, points per square meter.
    pub point_density: f64,
    /// Hard cap on points per scan; excess is subsampled deterministically.
    pub max_points_per_scan: usize,
    /// Gaussian coordinate noise, meters.
    pub coord_noise_sigma: f64,
    /// Per cell-frame probability that an observation is dropped.
    pub dropout: f64,
    /// Row-stochastic class confusion used for observation-noise injection;
    /// `confusion[i][j]` is the probability that a class-`i` object is
    /// observed as class `j`.
    pub confusion: [[f64; N_CLASSES]; N_CLASSES],
    /// Peak probability the synthesized classifier softmax assigns to its
    /// predicted class.
    pub oracle_peak: f64,
    /// Dimension of the class-prototype features fed to recurrent fusion.
    pub feature_dim: usize,
    /// Gaussian jitter added to prototype features.
    pub feature_jitter: f64,
    /// Voxel resolution shared by maps and ground truth, meters.
    pub resolution: f64,
}

/// Identity confusion matrix (observations always match the true class).
pub fn identity_confusion() -> [[f64; N_CLASSES]; N_CLASSES] {
    let mut m = [[0.0; N_CLASSES]; N_CLASSES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// The default noisy confusion: background is misread occasionally, while
/// sparse car and cyclist returns are more often taken for clutter or for
/// each other than recognized, so naive per-observation fusion fails on them.
pub fn default_confusion() -> [[f64; N_CLASSES]; N_CLASSES] {
    [
        [0.80, 0.10, 0.05, 0.05], // background
        [0.46, 0.42, 0.06, 0.06], // car: mostly mistaken for clutter
        [0.15, 0.05, 0.75, 0.05], // pedestrian
        [0.05, 0.47, 0.05, 0.43], // cyclist: mostly mistaken for a car
    ]
}

impl ScenarioConfig {
    /// Desk-scale default: 14 days, noisy observations, CPU-friendly.
    pub fn desk(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            days: 14,
            frames_per_day: 600,
            frame_rate: 2.0,
            world_extent: [60.0, 40.0],
            max_range: 10.0,
            car_slots: 40,
            car_occupancy: 0.6,
            car_stay_days: 2.5,
            pedestrians_per_day: 24,
            cyclists_per_day: 12,
            pedestrian_speed: 1.2,
            cyclist_speed: 2.2,
            robot_speed_max: 2.0,
            point_density: 5.0,
            max_points_per_scan: 1600,
            coord_noise_sigma: 0.02,
            dropout: 0.30,
            confusion: default_confusion(),
            oracle_peak: 0.9,
            feature_dim: 8,
            feature_jitter: 0.15,
            resolution: 0.4,
        }
    }

    /// Tiny profile for smoke tests: 2 days, small lot, completes in seconds.
    pub fn smoke(seed: u64) -> Self {
        ScenarioConfig {
            days: 2,
            frames_per_day: 240,
            car_slots: 8,
            world_extent: [30.0, 20.0],
            max_range: 8.0,
            pedestrians_per_day: 2,
            cyclists_per_day: 1,
            max_points_per_scan: 1200,
            ..Self::desk(seed)
        }
    }

    /// Full-scale day structure (10 Hz sensor); still synthetic.
    pub fn paper(seed: u64) -> Self {
        ScenarioConfig {
            frames_per_day: 3000,
            frame_rate: 10.0,
            max_points_per_scan: 4000,
            point_density: 10.0,
            ..Self::desk(seed)
        }
    }

    pub fn day_seconds(&self) -> f64 {
        self.frames_per_day as f64 / self.frame_rate
    }

    pub fn total_frames(&self) -> u64 {
        (self.days * self.frames_per_day) as u64
    }

    pub fn frame_time(&self, frame: u64) -> f64 {
        frame as f64 / self.frame_rate
    }

    pub fn day_of_frame(&self, frame: u64) -> usize {
        (frame / self.frames_per_day as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.world_extent[0] <= 0.0 || self.world_extent[1] <= 0.0 {
            return Err(Error::Argument("world extent must be positive".into()));
        }
        if self.days == 0 || self.frames_per_day == 0 {
            return Err(Error::Config("need at least one day and one frame".into()));
        }
        if self.frame_rate <= 0.0 {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be a probability, got {}",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.car_occupancy) {
            return Err(Error::Config("car occupancy must be a probability".into()));
        }
        if !(0.0..1.0).contains(&self.oracle_peak) {
            return Err(Error::Config("oracle peak must be in (0, 1)".into()));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.iter().any(|p| *p < 0.0 || *p > 1.0) {
                return Err(Error::Config(format!(
                    "confusion row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "confusion row {i} sums to {sum}, expected 1"
                )));
            }
        }
        if self.resolution <= 0.0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dim must be positive".into()));
        }
        if self.max_range <= 0.0 || self.robot_speed_max <= 0.0 || self.point_density <= 0.0 {
            return Err(Error::Config(
                "range, robot speed and point density must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format("scenario config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_is_valid() {
        ScenarioConfig::desk(0).validate().unwrap();
        ScenarioConfig::smoke(0).validate().unwrap();
        ScenarioConfig::paper(0).validate().unwrap();
    }

    #[test]
    fn zero_extent_is_rejected() {
        let mut cfg = ScenarioConfig::desk(0);
        cfg.world_extent = [0.0, 40.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bad_confusion_row_is_rejected() {
        let mut cfg = ScenarioConfig::desk(0);
        cfg.confusion[1][0] = 0.9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ScenarioConfig::desk(42);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
