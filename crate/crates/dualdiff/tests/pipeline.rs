use std::sync::OnceLock;

use benchsim::{generate_demos, DemoDataset, Env, InitMode, TaskConfig, TaskId};
use dualdiff::aggregator::smooth;
use dualdiff::diffusion::{ddpm_loss, select_rows, switch_draw, Branch};
use dualdiff::koopman::{dko_loss, reg_loss};
use dualdiff::pipeline::*;
use dualdiff::Error;
use numgraph::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        latent_dim: 16,
        denoiser_hidden: 32,
        denoiser_layers: 2,
        step_embed: 8,
        checkpoint_every: 1,
        ..TrainConfig::default()
    }
}

fn demos() -> &'static DemoDataset {
    static DATA: OnceLock<DemoDataset> = OnceLock::new();
    DATA.get_or_init(|| generate_demos(&TaskConfig::new(TaskId::LatchPull), 2, 3).unwrap())
}

fn small_policy() -> &'static PolicyBundle {
    static POLICY: OnceLock<PolicyBundle> = OnceLock::new();
    POLICY.get_or_init(|| train(demos(), &small_config(2)).unwrap().0)
}

#[test]
fn config_defaults_and_toml_roundtrip() {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.epochs, cfg.chunk_len, cfg.horizon, cfg.diffusion_steps), (200, 16, 4, 30));
    assert_eq!((cfg.switch_prob, cfg.dko_weight, cfg.reg_weight, cfg.eta), (0.6, 0.3, 1e-4, 0.97));
    assert_eq!(cfg.samples(), 30);
    let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
    assert_eq!(back, cfg);
    let partial = TrainConfig::from_toml_str("epochs = 3\nhorizon = 8\n[augment]\nflip_prob = 0.0\n").unwrap();
    assert_eq!((partial.epochs, partial.horizon, partial.augment.flip_prob), (3, 8, 0.0));
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "epochs = \"many\"",
        "unknown_field = 1",
        "horizon = 20",
        "switch_prob = 1.5",
        "eta = 0.0",
        "sg_window = 4",
        "[augment]\nflip_prob = 2.0",
    ] {
        let err = TrainConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
    assert_eq!(Error::Numerical("x".into()).exit_code(), 3);
}

#[test]
fn seed_derivation_is_stable_and_order_sensitive() {
    assert_eq!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 2, 3]));
    assert_ne!(derive_seed(&[1, 2, 3]), derive_seed(&[3, 2, 1]));
    assert_ne!(derive_seed(&[1]), derive_seed(&[1, 0]));
}

#[test]
fn variant_names_roundtrip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
    assert!("both".parse::<Variant>().is_err());
}

#[test]
fn one_epoch_on_two_episodes_is_finite() {
    let (_, report) = train(demos(), &small_config(1)).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert!(report.epochs[0].loss.is_finite());
    assert!(report.optimizer_steps > 0);
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config(1);
    let (a, ra) = train(demos(), &cfg).unwrap();
    let (b, rb) = train(demos(), &cfg).unwrap();
    assert_eq!(ra, rb);
    for ((_, na, ta), (_, nb, tb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta, tb);
    }
}

#[test]
fn branch_frequency_follows_switch_probability() {
    let data = generate_demos(&TaskConfig::new(TaskId::LatchPull), 10, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 8,
        ..small_config(8)
    };
    let (_, report) = train(&data, &cfg).unwrap();
    let draws = data.anchors().len() * cfg.epochs;
    assert!(draws >= 2400, "only {draws} draws");
    assert!((report.visual_fraction - 0.6).abs() <= 0.03, "{}", report.visual_fraction);
}

#[test]
fn total_loss_equals_recomputed_parts() {
    let policy = small_policy();
    let cfg = &policy.config;
    let anchors: Vec<(usize, usize)> = demos().anchors().into_iter().take(12).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let batch = assemble_batch(demos(), &anchors, cfg, &policy.normalizer, &mut rng).unwrap();
    let mut draw = rng.clone();

    let tape = Tape::new();
    let parts = batch_losses(&tape, policy, &batch, &mut rng).unwrap();

    // Independent recomputation on a fresh tape with the same draws.
    let tape2 = Tape::new();
    let m = policy.dko_modules();
    let dko = dko_loss(&tape2, &m, &batch.images, cfg.dko_weight).unwrap().item();
    let reg = reg_loss(&tape2, &policy.params, &policy.nets.koopman).item();
    let inputs = batch.images.inputs(&tape2);
    let f_v = policy
        .nets
        .encoder
        .encode(&tape2, &policy.params, inputs.current.0, inputs.current.1)
        .unwrap();
    let f_u = policy.nets.latent.forward(&tape2, &policy.params, f_v).unwrap();
    let q = tape2.constant(batch.proprio.clone());
    let f_f = policy.nets.fusion.fuse(&tape2, &policy.params, f_v, q, None).unwrap().f_f;
    let branches: Vec<Branch> = (0..anchors.len()).map(|_| switch_draw(cfg.switch_prob, &mut draw)).collect();
    assert_eq!(branches, parts.branches);
    let cond = select_rows(f_u, f_f, &branches).unwrap();
    let ddpm = ddpm_loss(&policy.denoiser(), cond, &batch.actions, &policy.schedule, &mut draw)
        .unwrap()
        .item();

    let total = parts.total.item();
    assert!((total - (ddpm + dko + cfg.reg_weight * reg)).abs() <= 1e-12);
    assert!((parts.ddpm.item() - ddpm).abs() <= 1e-12);
    assert!((parts.dko.item() - dko).abs() <= 1e-12);
    assert!((parts.reg.item() - reg).abs() <= 1e-12);
}

#[test]
fn batches_respect_episode_bounds_and_normalization() {
    let policy = small_policy();
    let anchors = demos().anchors();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = assemble_batch(demos(), &anchors, &policy.config, &policy.normalizer, &mut rng).unwrap();
    assert_eq!(batch.actions.shape(), &[anchors.len(), 16 * 3]);
    assert!(batch.actions.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    assert!(batch.proprio.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    let px = batch.images.current_aug.0.data();
    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn normalizer_roundtrips() {
    let n = &small_policy().normalizer;
    let row = demos().episodes[0].action_at(5).to_vec();
    let back = n.actions_inverse(&n.actions(&row));
    for (a, b) in row.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn checkpoints_roundtrip_and_are_written_periodically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 1,
        ..small_config(2)
    };
    let (policy, _) = train_with_checkpoints(demos(), &cfg, Some(dir.path())).unwrap();
    assert!(dir.path().join("epoch_0001.ckpt").exists());
    let final_path = dir.path().join("policy.ckpt");
    let loaded = PolicyBundle::load(&final_path).unwrap();
    assert_eq!(loaded.config, policy.config);
    assert_eq!(loaded.normalizer, policy.normalizer);
    for ((_, _, a), (_, _, b)) in loaded.params.iter().zip(policy.params.iter()) {
        assert_eq!(a, b);
    }
    let mut bytes = std::fs::read(&final_path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(&final_path, bytes).unwrap();
    assert!(PolicyBundle::load(&final_path).is_err());
}

#[test]
fn first_round_pools_only_fresh_chunks() {
    let policy = small_policy();
    let (env, obs) = Env::reset(TaskConfig::new(TaskId::LatchPull), 4);
    let mut state = InferenceState::default();
    let out = infer_round(policy, &obs, &mut state, env.state.step, Variant::Dual, 9).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.actions.len(), policy.config.horizon);
    for cands in &out.pool.steps {
        assert_eq!(cands.len(), 2);
        assert!(cands.iter().all(|c| c.birth_step == 0));
    }
    assert!(out.records.iter().all(|r| r.test_loss >= 0.0 && r.test_loss.is_finite()));
    assert_eq!(
        out.trace_rows().len(),
        out.pool.steps.iter().map(Vec::len).sum::<usize>()
    );
}

#[test]
fn identical_conditionings_give_identical_chunks() {
    let policy = small_policy();
    let c = vec![0.25; policy.config.latent_dim];
    let mut state = InferenceState::default();
    let out = infer_round_with_latents(policy, &c, &c, &mut state, 0, Variant::Dual, 3).unwrap();
    assert_eq!(out.records[0].actions, out.records[1].actions);
    assert_eq!(out.records[0].test_loss, out.records[1].test_loss);
    let h = policy.config.horizon;
    let rows: Vec<[f64; 3]> = (0..h)
        .map(|i| {
            let r = policy.normalizer.actions_inverse(out.records[0].row(i));
            [r[0], r[1], r[2]]
        })
        .collect();
    let expected = smooth_with_context(&[], &rows, policy.config.sg_window, policy.config.sg_polyorder).unwrap();
    assert_eq!(out.actions, expected);
}

#[test]
fn later_rounds_pool_across_history() {
    let policy = small_policy();
    let c: Vec<f64> = (0..policy.config.latent_dim).map(|i| i as f64 / 10.0).collect();
    let mut state = InferenceState::default();
    let h = policy.config.horizon;
    let mut last = None;
    for round in 0..6 {
        last = Some(infer_round_with_latents(policy, &c, &c, &mut state, round * h, Variant::Dual, 3).unwrap());
    }
    let out = last.unwrap();
    assert!(out.pool.steps.iter().all(|cands| cands.len() == 8));
    let rows = out.trace_rows();
    assert_eq!(rows.len(), 32);
}

#[test]
fn single_branch_variants_only_pool_their_branch() {
    let policy = small_policy();
    let c = vec![0.1; policy.config.latent_dim];
    for (variant, branch) in [(Variant::VisualOnly, Branch::Visual), (Variant::FusedOnly, Branch::Fused)] {
        let mut state = InferenceState::default();
        for round in 0..3 {
            let out = infer_round_with_latents(policy, &c, &c, &mut state, round * 4, variant, 1).unwrap();
            assert_eq!(out.records.len(), 1);
            assert!(out.pool.steps.iter().flatten().all(|cand| cand.branch == branch));
        }
    }
}

#[test]
fn rollouts_are_deterministic_and_rate_limited() {
    let policy = small_policy();
    let task = TaskConfig::new(TaskId::LatchPull).with_init(InitMode::Perturbed);
    let a = rollout(policy, &task, 21, Variant::Dual).unwrap();
    let b = rollout(policy, &task, 21, Variant::Dual).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.aggregation, b.aggregation);
    assert!(a.trace.len() <= task.step_limit);
    let (env, _) = Env::reset(task.clone(), 21);
    let mut prev = env.state.joints;
    for r in &a.trace.records {
        assert!((r.cmd_q1 - prev[0]).abs() <= task.joint_rate + 1e-12);
        assert!((r.cmd_q2 - prev[1]).abs() <= task.joint_rate + 1e-12);
        prev = [r.cmd_q1, r.cmd_q2];
    }
    let visual = rollout(policy, &task, 21, Variant::VisualOnly).unwrap();
    assert!(visual.trace.records.iter().all(|r| r.branch.as_deref() == Some("visual")));
    assert!(visual.aggregation.iter().all(|r| r.branch == Branch::Visual));
}

#[test]
fn rollout_rejects_mismatched_task() {
    let policy = small_policy();
    let err = rollout(policy, &TaskConfig::new(TaskId::PressButton), 1, Variant::Dual).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn evaluation_rates_are_exact_and_order_independent() {
    let policy = small_policy();
    let spec = EvalSpec {
        tasks: vec![TaskId::LatchPull],
        conditions: vec![InitMode::Fixed, InitMode::Perturbed],
        variants: vec![Variant::Dual, Variant::FusedOnly],
        episodes: 3,
        seed: 5,
        horizons: Vec::new(),
    };
    let report = evaluate(|_, _| Some(policy), &spec).unwrap();
    assert_eq!(report.cells.len(), 4);
    for c in &report.cells {
        assert_eq!(c.episodes, 3);
        assert_eq!(c.success_rate, c.successes as f64 / 3.0);
        assert_eq!(c.runs.len(), 3);
        assert_eq!(c.traces.len(), 3);
    }
    let seeds: Vec<u64> = report.cells[0].runs.iter().map(|r| r.seed).collect();
    assert!(report.cells.iter().all(|c| c.runs.iter().map(|r| r.seed).collect::<Vec<_>>() == seeds));

    let mut shuffled = spec.clone();
    shuffled.conditions.reverse();
    shuffled.variants.reverse();
    let again = evaluate(|_, _| Some(policy), &shuffled).unwrap();
    for c in &report.cells {
        let other = again.cell(c.task, c.condition, c.variant).unwrap();
        assert_eq!(other.runs, c.runs);
    }
    let table = report.to_table();
    assert_eq!(table.lines().count(), 5);
    let json = report.to_json().unwrap();
    let parsed: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.cells.len(), 4);
    assert!(evaluate(|_, _| Some(policy), &EvalSpec { episodes: 0, ..spec }).is_err());
}

#[test]
fn horizon_sweep_adds_one_cell_per_horizon() {
    let policy = small_policy();
    let spec = EvalSpec {
        variants: vec![Variant::Dual],
        conditions: vec![InitMode::Fixed],
        horizons: vec![2, 8],
        ..EvalSpec::new(TaskId::LatchPull, 1, 9)
    };
    let report = evaluate(|_, _| Some(policy), &spec).unwrap();
    let horizons: Vec<usize> = report.cells.iter().map(|c| c.horizon).collect();
    assert_eq!(horizons, vec![2, 8]);
    let bad = EvalSpec { horizons: vec![17], ..spec };
    assert_eq!(evaluate(|_, _| Some(policy), &bad).unwrap_err().exit_code(), 2);
}

#[test]
fn saliency_maps_are_normalized() {
    let policy = small_policy();
    let (_, obs) = Env::reset(TaskConfig::new(TaskId::LatchPull), 2);
    let maps = saliency(policy, &obs).unwrap();
    for m in [&maps.front, &maps.wrist] {
        assert_eq!((m.width, m.height), (32, 32));
        assert!(m.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.pixels.iter().any(|v| *v == 1.0));
    }
}

#[test]
fn zero_encoder_has_zero_saliency() {
    let mut policy = small_policy().clone();
    let ids: Vec<_> = policy
        .params
        .iter()
        .filter(|(_, name, _)| name.starts_with("encoder."))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        let shape = policy.params.get(id).shape().to_vec();
        policy.params.set(id, Tensor::zeros(shape)).unwrap();
    }
    let (_, obs) = Env::reset(TaskConfig::new(TaskId::LatchPull), 2);
    let maps = saliency(&policy, &obs).unwrap();
    assert!(maps.front.pixels.iter().chain(&maps.wrist.pixels).all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clipped_commands_stay_within_rate(
        cmd in proptest::array::uniform3(-4.0f64..4.0),
        prev in proptest::array::uniform2(-3.0f64..3.0),
        rate in 0.001f64..0.5,
    ) {
        let out = clip_command(cmd, prev, rate);
        prop_assert!((out[0] - prev[0]).abs() <= rate + 1e-12);
        prop_assert!((out[1] - prev[1]).abs() <= rate + 1e-12);
        prop_assert_eq!(out[2], cmd[2]);
    }

    #[test]
    fn context_smoothing_returns_fresh_rows(
        committed in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 0..12),
        fresh in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..8),
    ) {
        let out = smooth_with_context(&committed, &fresh, 7, 3).unwrap();
        prop_assert_eq!(out.len(), fresh.len());
        let ctx = 3.min(committed.len());
        let rows: Vec<f64> = committed[committed.len() - ctx..].iter().chain(&fresh).flatten().copied().collect();
        let n = rows.len() / 3;
        let full = smooth(&rows, n, 3, 7, 3).unwrap();
        let want: Vec<f64> = full[ctx * 3..].to_vec();
        let got: Vec<f64> = out.iter().flatten().copied().collect();
        prop_assert_eq!(got, want);
    }
}
