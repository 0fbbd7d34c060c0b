use romap_core::fusion::{BackendKind, Mntd};
use romap_core::metrics::{accumulate, ConfusionMatrix};
use romap_core::neural::{lstm_step, LstmState};
use romap_core::perception::{ClusterConfig, N_CLASSES};
use romap_core::pipeline::{apply_frame, observations_for_frames, ObservationSource, ScanProvider};
use romap_core::sim::{generate_world, ClassPrototypes, ScenarioConfig};
use romap_core::trainer::{build_sequences, train_fusion, TrainConfig};
use romap_core::voxmap::{MapConfig, VoxelMap};

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
    let train_cfg = TrainConfig { epochs: 80, batches_per_epoch: 60, base_lr: 0.02, decay: 0.97, momentum: Some(0.9), segment_cap: 40, truncation: 40, seed: 7, ..TrainConfig::default() };
    let trained = train_fusion(sequences, cfg.feature_dim, &train_cfg).unwrap();

    // Fresh-state single-observation decodes per prototype.
    let protos = ClassPrototypes::generate(cfg.seed, cfg.feature_dim);
    for (c, p) in protos.vectors.iter().enumerate() {
        let s = lstm_step(&trained.params, p, &LstmState::zeros_like(&trained.params)).unwrap();
        let probs = trained.params.decode_hidden(s.top_hidden());
        println!("1-obs decode of prototype {}: {:?}", c, probs.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
        // two and three successive identical observations
        let s2 = lstm_step(&trained.params, p, &s).unwrap();
        let probs2 = trained.params.decode_hidden(s2.top_hidden());
        println!("2-obs decode of prototype {}: {:?}", c, probs2.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
        let s3 = lstm_step(&trained.params, p, &s2).unwrap();
        let probs3 = trained.params.decode_hidden(s3.top_hidden());
        println!("3-obs decode of prototype {}: {:?}", c, probs3.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    }

    // Standard LSTM confusion over day 7.
    let mut map = VoxelMap::new(MapConfig { resolution: cfg.resolution, ..MapConfig::default() });
    let day = 7usize;
    let frames = (day * cfg.frames_per_day) as u64..((day + 1) * cfg.frames_per_day) as u64;
    let obs = observations_for_frames(&provider, &source, &cluster, frames).unwrap();
    for (frame, o) in &obs {
        let t = cfg.frame_time(*frame);
        apply_frame(&mut map, o, t, *frame, BackendKind::StandardLstm, Some(&trained.params)).unwrap();
        map.prune_expired(t);
    }
    let gt = provider.ground_truth(day).unwrap();
    let mut cm = ConfusionMatrix::new(N_CLASSES);
    accumulate(&mut cm, &map, &gt).unwrap();
    println!("standard-lstm day7 confusion (rows true bg/car/ped/cyc):");
    for row in cm.rows() { println!("  {:?}", row); }

    // Same for nap@1
    let mut map1 = VoxelMap::new(MapConfig { resolution: cfg.resolution, ..MapConfig::default() });
    for (frame, o) in &obs {
        let t = cfg.frame_time(*frame);
        apply_frame(&mut map1, o, t, *frame, BackendKind::NapLstm(Mntd::Frames(10)), Some(&trained.params)).unwrap();
        map1.prune_expired(t);
    }
    let mut cm1 = ConfusionMatrix::new(N_CLASSES);
    accumulate(&mut cm1, &map1, &gt).unwrap();
    println!("nap@10 day7 confusion:");
    for row in cm1.rows() { println!("  {:?}", row); }
}
