use romap_core::metrics::{accumulate, report, ConfusionMatrix};
use romap_core::perception::{ClusterConfig, SemanticClass, N_CLASSES};
use romap_core::pipeline::{observations_for_frames, ObservationSource, ScanProvider};
use romap_core::sim::{generate_world, identity_confusion, ScenarioConfig};
use romap_core::trainer::{build_sequences, comparison_specs, evaluate_backends, train_fusion, TrainConfig};
use romap_core::voxmap::MapConfig;

fn main() {
    let mut cfg = ScenarioConfig::smoke(77);
    cfg.confusion = identity_confusion();
    cfg.dropout = 0.0;
    let world = generate_world(&cfg).unwrap();
    let provider = ScanProvider::World(&world);
    let source = ObservationSource::oracle_from_config(&cfg);
    let cluster = ClusterConfig::default();
    let map_config = MapConfig { resolution: cfg.resolution, ..MapConfig::default() };

    let train_obs = observations_for_frames(&provider, &source, &cluster, 0..cfg.frames_per_day as u64).unwrap();
    let gt0 = provider.ground_truth(0).unwrap();
    let sequences = build_sequences(&train_obs, std::slice::from_ref(&gt0), cfg.frames_per_day).unwrap();
    println!("sequences: {}", sequences.len());
    let mut label_counts = [0usize; 5];
    let mut steps_total = 0;
    for s in &sequences { for st in &s.steps { label_counts[st.label.index()] += 1; steps_total += 1; } }
    println!("labeled steps {} counts {:?}", steps_total, label_counts);
    let train_cfg = TrainConfig {
        epochs: 30, batches_per_epoch: 25, hidden_dim: 16, num_layers: 1,
        batch_size: 16, segment_cap: 60, truncation: 60, base_lr: 0.08, seed: 1,
        ..TrainConfig::default()
    };
    let trained = train_fusion(sequences, cfg.feature_dim, &train_cfg).unwrap();
    for row in &trained.curve { println!("epoch {} loss {:.4} lr {:.5}", row.epoch, row.mean_loss, row.lr); }

    let specs = comparison_specs(cfg.frames_per_day);
    let results = evaluate_backends(&provider, &source, &cluster, &map_config, Some(&trained.params), &specs, 1..2).unwrap();
    for r in &results {
        println!("{}: overall {:.4} mean {:.4} miou {:.4}", r.label, r.mean.overall_accuracy, r.mean.mean_accuracy, r.mean.mean_iou);
    }

    // diagnostics: observability of day-1 GT cells
    let gt1 = provider.ground_truth(1).unwrap();
    let day1_obs = observations_for_frames(&provider, &source, &cluster, cfg.frames_per_day as u64..(2*cfg.frames_per_day) as u64).unwrap();
    let mut observed: std::collections::HashSet<_> = Default::default();
    for (_, obs) in &day1_obs { for (k, _) in obs { observed.insert(*k); } }
    let mut gt_total = 0; let mut gt_seen = 0; let mut per_class = [[0usize;2];5];
    for (k, l) in &gt1.labels {
        if *l == SemanticClass::DontCare { continue; }
        gt_total += 1;
        let seen = observed.contains(k);
        if seen { gt_seen += 1; }
        per_class[l.index()][if seen {1} else {0}] += 1;
    }
    println!("day1 GT cells {} observed {} ({:.2}%)", gt_total, gt_seen, 100.0*gt_seen as f64/gt_total as f64);
    println!("per class [unseen, seen]: {:?}", per_class);
    let _ = ConfusionMatrix::new(N_CLASSES);
    let _ = (accumulate, report);
}
