use benchsim::demos::{tuple_indices, ACTION_DIM, INDEX_FILE};
use benchsim::*;
use proptest::prelude::*;

#[test]
fn generated_episodes_all_succeed_and_are_reproducible() {
    let cfg = TaskConfig::new(TaskId::LatchPull);
    let options = DemoOptions { retry_fraction: 0.3 };
    let a = generate_demos_with(&cfg, 12, 4, options).unwrap();
    let b = generate_demos_with(&cfg, 12, 4, options).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 12);
    assert!(a.episodes.iter().any(|e| e.disabled_grasps == 1));
    for ep in &a.episodes {
        let mut c = cfg.clone();
        c.disabled_grasps = ep.disabled_grasps;
        let (mut s, _) = env_reset(&c, ep.seed);
        for t in 0..ep.steps() {
            assert_eq!(s.proprio(), ep.proprio_at(t));
            env_step(&c, &mut s, ep.action_at(t)).unwrap();
        }
        assert!(s.success, "stored episode {} does not replay to success", ep.seed);
        assert_eq!(s.proprio(), ep.proprio_at(ep.steps()));
    }
}

#[test]
fn generation_aborts_after_ten_n_attempts() {
    let mut cfg = TaskConfig::new(TaskId::LatchPull);
    cfg.disabled_grasps = 1000;
    match generate_demos(&cfg, 3, 0) {
        Err(BenchError::GenerationFailed { attempts, successes, wanted }) => {
            assert_eq!((attempts, successes, wanted), (30, 0, 3));
        }
        other => panic!("expected abort, got {other:?}"),
    }
    assert!(generate_demos(&TaskConfig::new(TaskId::LatchPull), 0, 0).is_err());
}

#[test]
fn exhaustive_tuple_sweep_stays_in_bounds() {
    let ds = generate_demos(&TaskConfig::new(TaskId::PressButton), 5, 1).unwrap();
    let (h, l) = (4, 16);
    let anchors = ds.anchors();
    assert_eq!(anchors.len(), ds.episodes.iter().map(|e| e.steps()).sum::<usize>());
    for (e, t) in anchors {
        let ep = &ds.episodes[e];
        let tuple = ds.tuple(e, t, h, l);
        assert_eq!(tuple.actions.len(), l * ACTION_DIM);
        let (future, idx) = tuple_indices(ep.steps(), t, h, l);
        assert!(future <= ep.steps());
        assert!(idx.iter().all(|&i| i < ep.steps()));
        assert_eq!(tuple.front, ep.front_at(t));
        assert_eq!(tuple.wrist_future, ep.wrist_at(future));
    }
}

#[test]
fn dataset_roundtrips_through_disk_and_detects_tampering() {
    let ds = generate_demos(&TaskConfig::new(TaskId::PlaceBlock), 3, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = DemoDataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);

    let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert!(index.contains("sha256"));
    let victim = dir.path().join("episode_0001.bin");
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    assert!(matches!(DemoDataset::load(dir.path()), Err(BenchError::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tuple_indices_are_padded_clamps(steps in 1usize..200, h in 1usize..20, l in 1usize..40, frac in 0.0f64..1.0) {
        let t = ((steps as f64 * frac) as usize).min(steps - 1);
        let (future, idx) = tuple_indices(steps, t, h, l);
        prop_assert_eq!(future, (t + h).min(steps));
        prop_assert_eq!(idx.len(), l);
        for (i, &k) in idx.iter().enumerate() {
            prop_assert!(k < steps);
            prop_assert_eq!(k, (t + i).min(steps - 1));
        }
    }
}
