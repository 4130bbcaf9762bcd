use gatedpose::io::{load_sequences, save_sequences};
use gatedpose::mask::DEFAULT_CONFIDENCE_THRESHOLD;
use gatedpose::metrics::{protocol1, protocol2, to_global, EvalSequence, ScaleGranularity};
use gatedpose::network::{
    load_checkpoint, make_training_windows, train, FillMode, GateMode, InputNorm, MaskPolicy, NetworkConfig,
    PoseLiftNet, PreparedSequence, TrainConfig,
};
use gatedpose::synth::{synth_scene, OcclusionConfig, SynthConfig};
use gatedpose::trajectory::{solve_long, SolverOptions, TrajectoryProblem};

fn scene_config() -> SynthConfig {
    SynthConfig {
        n_people: 2,
        n_frames: 150,
        seed: 12,
        occlusion: Some(OcclusionConfig { theta: 0.6, kernel: 5 }),
        ..Default::default()
    }
}

#[test]
fn synthetic_scene_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.jsonl");
    let seqs = synth_scene(&scene_config()).unwrap().sequences;
    save_sequences(&path, &seqs).unwrap();
    assert_eq!(load_sequences(&path).unwrap(), seqs);
}

#[test]
fn trained_checkpoint_reloads_to_identical_predictions() {
    let cfg = scene_config();
    let mut seqs: Vec<PreparedSequence> = synth_scene(&cfg)
        .unwrap()
        .sequences
        .iter()
        .map(|s| PreparedSequence::from_pose(s, &cfg.camera, DEFAULT_CONFIDENCE_THRESHOLD))
        .collect();
    let norm = InputNorm::fit(&seqs);
    seqs.iter_mut().for_each(|s| s.standardize(&norm));
    let mut nc = NetworkConfig::with_blocks(1, 3, 16, GateMode::TwoStream);
    nc.seed = 2;
    let mut net = PoseLiftNet::new(nc).unwrap();
    net.input_norm = norm;
    let policy = MaskPolicy::Random { thetas: vec![1.0, 0.55], kernel: 5 };
    let set = make_training_windows(seqs.clone(), net.receptive_field(), policy, FillMode::Zero).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let tc = TrainConfig { epochs: 2, batch_size: 64, bn_calibration_windows: 128, ..Default::default() };
    let outcome = train(&mut net, &set, &tc, None, Some(&path), None).unwrap();
    assert_eq!(outcome.history.len(), 2);

    let mut restored = load_checkpoint(&path).unwrap().net;
    assert_eq!(restored, net);
    let s = &seqs[0];
    let coords = s.filled_coords(&s.mask, FillMode::Zero);
    let a = net.predict_sequence(&coords, &s.mask).unwrap();
    let b = restored.predict_sequence(&coords, &s.mask).unwrap();
    assert_eq!(a.len(), s.len());
    assert_eq!(a, b);
}

#[test]
fn recovered_trajectory_gives_near_zero_global_error_for_true_poses() {
    let cfg = SynthConfig { occlusion: None, ..scene_config() };
    let seqs = synth_scene(&cfg).unwrap().sequences;
    let mut eval = vec![];
    for s in &seqs {
        let rel = s.joints_3d_rel.clone().unwrap();
        let truth = s.root.clone().unwrap();
        let problem =
            TrajectoryProblem::new(rel.clone(), s.joints_2d.clone(), s.occlusion(DEFAULT_CONFIDENCE_THRESHOLD), cfg.camera, 0.0, 0.0)
                .unwrap();
        let sol = solve_long(&problem, 100, 50, &SolverOptions::default()).unwrap();
        assert!(sol.converged.iter().all(|&c| c));
        eval.push(EvalSequence {
            person: s.person,
            action: s.action.clone(),
            frames: s.frames.clone(),
            pred: to_global(&rel, &sol.roots),
            gt: to_global(&rel, &truth),
        });
    }
    let p2 = protocol2(&eval, ScaleGranularity::PerSequence).unwrap().overall_mm;
    assert!(p2 < 1e-3, "{p2}");
    assert!(protocol1(&eval).unwrap().overall_mm < 1e-6);
}
