use std::time::Instant;

use romap_core::perception::ClusterConfig;
use romap_core::pipeline::{observations_for_frames, ObservationSource, ScanProvider};
use romap_core::sim::{generate_world, ScenarioConfig};
use romap_core::trainer::{
    build_sequences, comparison_specs, evaluate_backends, sweep_specs, train_fusion, TrainConfig,
};
use romap_core::voxmap::MapConfig;

fn main() {
    let t0 = Instant::now();
    let cfg = ScenarioConfig::desk(7);
    let world = generate_world(&cfg).unwrap();
    let provider = ScanProvider::World(&world);
    let source = ObservationSource::oracle_from_config(&cfg);
    let cluster = ClusterConfig::default();
    let map_config = MapConfig { resolution: cfg.resolution, ..MapConfig::default() };
    println!("[{:?}] world ready, robot speed {:.2} m/s, path {:.0} m", t0.elapsed(), world.robot_speed, world.path.total_len());

    // Train on days 0..6
    let train_frames = 0..(7 * cfg.frames_per_day) as u64;
    let train_obs = observations_for_frames(&provider, &source, &cluster, train_frames).unwrap();
    println!("[{:?}] train obs ready: {} frames", t0.elapsed(), train_obs.len());
    let gts: Vec<_> = (0..7).map(|d| provider.ground_truth(d).unwrap()).collect();
    let sequences = build_sequences(&train_obs, &gts, cfg.frames_per_day).unwrap();
    let n_steps: usize = sequences.iter().map(|s| s.steps.len()).sum();
    let mut counts = [0usize; 5];
    for s in &sequences { for st in &s.steps { counts[st.label.index()] += 1; } }
    println!("[{:?}] sequences {} steps {} label counts {:?}", t0.elapsed(), sequences.len(), n_steps, counts);
    drop(train_obs);

    let train_cfg = TrainConfig {
        epochs: 120,
        batches_per_epoch: 100,
        base_lr: 0.015,
        decay: 0.975,
        momentum: Some(0.9),
        segment_cap: 40,
        truncation: 40,
        seed: 7,
        ..TrainConfig::default()
    };
    let trained = train_fusion(sequences, cfg.feature_dim, &train_cfg).unwrap();
    for row in trained.curve.iter().step_by(5) {
        println!("  epoch {} loss {:.4} lr {:.5}", row.epoch, row.mean_loss, row.lr);
    }
    println!("[{:?}] trained, final loss {:.4}", t0.elapsed(), trained.curve.last().unwrap().mean_loss);

    // Comparison on days 7..14
    let results = evaluate_backends(&provider, &source, &cluster, &map_config, Some(&trained.params), &comparison_specs(cfg.frames_per_day), 7..cfg.days).unwrap();
    for r in &results {
        println!("{:10} overall {:.4} mean {:.4} miou {:.4}", r.label, r.mean.overall_accuracy, r.mean.mean_accuracy, r.mean.mean_iou);
        for d in &r.day_rows { print!("   d{}:{:.3}", d.day, d.metrics.mean_iou); }
        println!();
    }
    println!("[{:?}] comparison done", t0.elapsed());

    // MNTD sweep
    let sweep = evaluate_backends(&provider, &source, &cluster, &map_config, Some(&trained.params), &sweep_specs(cfg.frames_per_day), 7..cfg.days).unwrap();
    for r in &sweep {
        println!("{:14} overall {:.4} mean {:.4} miou {:.4}", r.label, r.mean.overall_accuracy, r.mean.mean_accuracy, r.mean.mean_iou);
    }
    println!("[{:?}] sweep done", t0.elapsed());
}
