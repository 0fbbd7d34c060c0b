//! On-disk dataset layout: per-day scan directories, ground-truth map
//! snapshots, the scenario config echo, and a manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::ground_truth::build_ground_truth;
use super::render::render_scan;
use super::world::World;
use crate::error::{Error, Result};
use crate::perception::{load_scan, save_scan, PointCloudScan};
use crate::voxmap::snapshot::{load_ground_truth, save_ground_truth};
use crate::voxmap::GroundTruthMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub days: usize,
    pub frames_per_day: usize,
}

pub fn day_dir(root: &Path, day: usize) -> PathBuf {
    root.join(format!("day_{day:02}"))
}

pub fn scan_path(root: &Path, day: usize, frame_in_day: usize) -> PathBuf {
    day_dir(root, day).join(format!("scan_{frame_in_day:06}.txt"))
}

pub fn gt_path(root: &Path, day: usize) -> PathBuf {
    root.join("gt").join(format!("day_{day:02}.map"))
}

/// Render and write the full dataset: scans, per-day ground truth, config
/// echo and manifest. The directory must already exist and be writable.
pub fn write_dataset(world: &World, root: &Path) -> Result<()> {
    let cfg = &world.config;
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    mkdir(root)?;
    mkdir(&root.join("gt"))?;
    cfg.save(&root.join("scenario.json"))?;
    let manifest = DatasetManifest {
        format_version: 1,
        days: cfg.days,
        frames_per_day: cfg.frames_per_day,
    };
    let manifest_text =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(root.join("manifest.json"), manifest_text)
        .map_err(|e| Error::io(root.join("manifest.json").display().to_string(), e))?;
    for day in 0..cfg.days {
        mkdir(&day_dir(root, day))?;
        for f in 0..cfg.frames_per_day {
            let frame = (day * cfg.frames_per_day + f) as u64;
            let scan = render_scan(world, frame);
            save_scan(&scan_path(root, day, f), &scan)?;
        }
        let gt = build_ground_truth(world, day);
        save_ground_truth(&gt_path(root, day), &gt)?;
    }
    Ok(())
}

/// Lazily loading view of an on-disk dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: ScenarioConfig,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|_| {
            Error::Argument(format!(
                "no dataset at {}: missing manifest.json (run the simulate command first)",
                root.display()
            ))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        let config = ScenarioConfig::load(&root.join("scenario.json"))?;
        if manifest.days != config.days || manifest.frames_per_day != config.frames_per_day {
            return Err(Error::format(
                "manifest",
                "day layout disagrees with scenario.json",
            ));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            config,
            manifest,
        })
    }

    pub fn scan(&self, frame: u64) -> Result<PointCloudScan> {
        let day = self.config.day_of_frame(frame);
        let in_day = frame as usize - day * self.config.frames_per_day;
        load_scan(&scan_path(&self.root, day, in_day))
    }

    pub fn ground_truth(&self, day: usize) -> Result<GroundTruthMap> {
        load_ground_truth(&gt_path(&self.root, day))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::generate_world;

    #[test]
    fn dataset_roundtrips_through_disk() {
        let mut cfg = ScenarioConfig::smoke(2);
        cfg.days = 1;
        cfg.frames_per_day = 4;
        cfg.robot_speed_max = 200.0;
        let world = generate_world(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&world, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.config, cfg);
        for frame in 0..4u64 {
            let loaded = ds.scan(frame).unwrap();
            let rendered = render_scan(&world, frame);
            assert_eq!(loaded, rendered);
        }
        let gt = ds.ground_truth(0).unwrap();
        assert_eq!(gt, build_ground_truth(&world, 0));
    }

    #[test]
    fn missing_dataset_mentions_simulate() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::open(&dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("simulate"), "{err}");
    }
}
