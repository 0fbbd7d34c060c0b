use romap_core::fusion::BackendKind;
use romap_core::metrics::{accumulate, ConfusionMatrix};
use romap_core::perception::{ClusterConfig, N_CLASSES};
use romap_core::pipeline::{apply_frame, observations_for_frames, ObservationSource, ScanProvider};
use romap_core::sim::{generate_world, ScenarioConfig};
use romap_core::trainer::{build_sequences, train_fusion, TrainConfig};
use romap_core::voxmap::{MapConfig, VoxelMap};

fn per_class_iou(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.n_classes())
        .map(|i| {
            let diag = cm.count(i, i) as f64;
            let support = cm.support(i) as f64;
            let pred: f64 = (0..cm.n_classes()).map(|j| cm.count(j, i) as f64).sum();
            if support == 0.0 { f64::NAN } else { diag / (support + pred - diag) }
        })
        .collect()
}

fn main() {
    let cfg = ScenarioConfig::desk(7);
    let world = generate_world(&cfg).unwrap();
    let provider = ScanProvider::World(&world);
    let source = ObservationSource::oracle_from_config(&cfg);
    let cluster = ClusterConfig::default();
    let train_obs = observations_for_frames(&provider, &source, &cluster, 0..(7 * cfg.frames_per_day) as u64).unwrap();
    let gts: Vec<_> = (0..7).map(|d| provider.ground_truth(d).unwrap()).collect();
    let sequences = build_sequences(&train_obs, &gts, cfg.frames_per_day).unwrap();
    drop(train_obs);
    let train_cfg = TrainConfig { epochs: 120, batches_per_epoch: 100, base_lr: 0.015, decay: 0.975, momentum: Some(0.9), segment_cap: 40, truncation: 40, seed: 7, ..TrainConfig::default() };
    let trained = train_fusion(sequences, cfg.feature_dim, &train_cfg).unwrap();

    for (name, backend) in [
        ("standard", BackendKind::StandardLstm),
        ("bayes", BackendKind::Bayes),
    ] {
        let mut map = VoxelMap::new(MapConfig { resolution: cfg.resolution, ..MapConfig::default() });
        let mut total = [[0u64; 4]; 4];
        for day in 7..10 {
            let frames = (day * cfg.frames_per_day) as u64..((day + 1) * cfg.frames_per_day) as u64;
            let obs = observations_for_frames(&provider, &source, &cluster, frames).unwrap();
            for (frame, o) in &obs {
                let t = cfg.frame_time(*frame);
                apply_frame(&mut map, o, t, *frame, backend, Some(&trained.params)).unwrap();
                map.prune_expired(t);
            }
            let gt = provider.ground_truth(day).unwrap();
            let mut cm = ConfusionMatrix::new(N_CLASSES);
            accumulate(&mut cm, &map, &gt).unwrap();
            for i in 0..4 { for j in 0..4 { total[i][j] += cm.count(i, j); } }
            println!("{name} d{day} iou {:?}", per_class_iou(&cm).iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
        }
        println!("{name} 3-day confusion rows:");
        for r in total { println!("   {:?}", r); }
    }
}
