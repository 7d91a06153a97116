mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tankdef::a3c::{compute_returns, entropy, RolloutBuffer, RolloutStep};
use tankdef::engine::{
    load_stage, Action, Cell, EngineConfig, EntityId, GameEvent, GameState, ScriptedPolicy, Side, TileKind, DEFAULT_STAGE,
    SMALL_STAGE,
};
use tankdef::eval::{aggregate, export_report, read_csv_report, EpisodeResult, ReportFormat};
use tankdef::goalmap::{closest_enemy_to_base, goal_bonus, render_mask, resolve_targets, GoalMap, ResolvedTarget, TargetMeta, TargetSelector, TargetSpec};
use tankdef::mts::{MtsRuntime, NetworkSource, StrategyConfig};
use tankdef::nn::{conv2d, forward, softmax, Architecture, NetInput, NetworkParams, Tensor};
use tankdef::observation::{preprocess, render_frame, FrameStack, Frame, GrayImage, ObsConfig, grayscale};
use tankdef::scenario::Scenario;

fn cfg_small() -> EngineConfig {
    EngineConfig {
        max_enemies: 2,
        ..EngineConfig::default()
    }
}

fn any_action() -> impl Strategy<Value = Action> {
    (0..Action::COUNT).prop_map(|i| Action::from_index(i).unwrap())
}

fn player_actions(state: &GameState, a: Action, b: Action) -> BTreeMap<EntityId, Action> {
    let mut m = BTreeMap::new();
    for id in state.alive_player_ids() {
        m.insert(id, if id == EntityId(0) { a } else { b });
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn engine_is_deterministic(seed in any::<u64>(), acts in prop::collection::vec((any_action(), any_action()), 1..400)) {
        let run = || {
            let mut s = load_stage(DEFAULT_STAGE, &EngineConfig::default(), seed).unwrap();
            let mut total = 0.0;
            for &(a, b) in &acts {
                if s.is_terminal() { break; }
                let out = s.step(&player_actions(&s, a, b)).unwrap();
                total += out.rewards.values().sum::<f64>();
            }
            (s.to_bytes(), total)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn engine_tick_invariants(seed in any::<u64>(), acts in prop::collection::vec((any_action(), any_action()), 1..300)) {
        let cfg = EngineConfig::default();
        let mut s = load_stage(DEFAULT_STAGE, &cfg, seed).unwrap();
        let hard = s.grid.count(TileKind::HardWall);
        let mut reward_total = 0.0;
        let mut player_kills = 0usize;
        for &(a, b) in &acts {
            if s.is_terminal() { break; }
            let out = s.step(&player_actions(&s, a, b)).unwrap();
            reward_total += out.rewards.values().sum::<f64>();
            player_kills += out.events.iter().filter(|e| matches!(e, GameEvent::EnemyDestroyed { by, .. } if by.0 < 2)).count();
            let alive_enemies = s.tanks.iter().filter(|t| t.alive && t.side == Side::Enemy).count();
            prop_assert!(alive_enemies <= cfg.max_enemies);
            prop_assert_eq!(s.grid.count(TileKind::HardWall), hard);
            for t in s.tanks.iter().filter(|t| t.alive) {
                prop_assert_eq!(s.grid.get(t.pos), Some(TileKind::Empty), "tank {:?} on {:?}", t.id, t.pos);
            }
        }
        prop_assert_eq!(reward_total, cfg.reward_per_kill * player_kills as f64);
    }

    #[test]
    fn enemies_respawn_when_cells_stay_free(seed in any::<u64>()) {
        // players idle; the cap is refilled once spawn cells have been free long enough
        let cfg = EngineConfig { p_fire: 0.0, p_advance: 1.0, ..cfg_small() };
        let mut s = load_stage(SMALL_STAGE, &cfg, seed).unwrap();
        let mut short_for = 0u32;
        for _ in 0..200 {
            if s.is_terminal() { break; }
            let alive_before = s.tanks.iter().filter(|t| t.alive && t.side == Side::Enemy).count();
            let free = !s.free_spawn_cells().is_empty();
            s.step(&player_actions(&s, Action::Noop, Action::Noop)).unwrap();
            let alive_after = s.tanks.iter().filter(|t| t.alive && t.side == Side::Enemy).count();
            if alive_before < cfg.max_enemies && free {
                short_for += 1;
            } else {
                short_for = 0;
            }
            if alive_after > alive_before { short_for = 0; }
            prop_assert!(short_for <= cfg.respawn_delay + 1, "no spawn after {} ticks", short_for);
        }
    }

    #[test]
    fn preprocess_always_yields_net_size(fill in any::<[u8; 3]>(), boxes in prop::collection::vec((0usize..104, 0usize..104, 1usize..30, any::<[u8; 3]>()), 0..10)) {
        let cfg = ObsConfig::default();
        let mut f = Frame::filled(104, 104, fill);
        for (x, y, s, c) in boxes { f.fill_rect(x, y, s.min(104 - x), s.min(104 - y), c); }
        let g = preprocess(&f, &cfg).unwrap();
        prop_assert_eq!((g.width, g.height), cfg.net_size);
        prop_assert_eq!(g.pixels.len(), 84 * 84);
    }

    #[test]
    fn brighter_rgb_never_darkens_gray(pixels in prop::collection::vec(any::<[u8; 3]>(), 16)) {
        let w = [0.299, 0.587, 0.114];
        let mut f = Frame::filled(4, 4, [0, 0, 0]);
        let mut g = Frame::filled(4, 4, [0, 0, 0]);
        for (i, p) in pixels.iter().enumerate() {
            let (x, y) = (i % 4, i / 4);
            f.fill_rect(x, y, 1, 1, *p);
            g.fill_rect(x, y, 1, 1, p.map(|v| v.saturating_mul(2)));
        }
        let (a, b) = (grayscale(&f, w), grayscale(&g, w));
        for (x, y) in a.iter().zip(&b) { prop_assert!(y >= x); }
    }

    #[test]
    fn frame_stack_keeps_latest_in_order(capacity in 1usize..6, pushes in 0usize..12) {
        let mut st = FrameStack::new(capacity);
        for k in 0..pushes {
            st.push(GrayImage { width: 2, height: 2, pixels: vec![(k + 1) as u8; 4] });
        }
        let t = st.tensor();
        let kept = pushes.min(capacity);
        prop_assert_eq!(st.len(), kept);
        for j in 0..kept {
            // oldest retained frame first
            let expected = (pushes - kept + j + 1) as f32 / 255.0;
            let slot = capacity - kept + j;
            prop_assert!(t.frame(slot).iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f32..50.0, 6)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn conv_matches_quadruple_loop(
        c in 1usize..4, o in 1usize..4, k in 1usize..4, stride in 1usize..3, extra in 0usize..5, seed in any::<u64>()
    ) {
        let (h, w) = (k + extra, k + extra + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // small integers keep every partial sum exact in f32
        let mut ints = |n: usize| (0..n).map(|_| rng.gen_range(-4i32..=4) as f32).collect::<Vec<_>>();
        let input = ints(c * h * w);
        let weight = ints(o * c * k * k);
        let bias = ints(o);
        let out = conv2d(
            &Tensor::from_vec(&[c, h, w], input.clone()).unwrap(),
            &Tensor::from_vec(&[o, c, k, k], weight.clone()).unwrap(),
            &Tensor::from_vec(&[o], bias.clone()).unwrap(),
            stride,
        ).unwrap();
        prop_assert_eq!(out.data(), &common::naive_conv(&input, (c, h, w), &weight, (o, k), &bias, stride)[..]);
    }

    #[test]
    fn mask_sum_is_square_union(cells in prop::collection::vec((0i32..13, 0i32..13), 0..12)) {
        let cfg = ObsConfig::default();
        let cells: Vec<Cell> = cells.into_iter().map(|(c, r)| Cell::new(c, r)).collect();
        let meta = TargetMeta {
            resolved: cells.iter().enumerate().map(|(i, &cell)| ResolvedTarget {
                cell, entity: None, priority: i as i32, bonus_reward: 2.0, working_region: None, spec_index: i,
            }).collect(),
            resolved_at_tick: 0,
        };
        let m = render_mask(&meta, &cfg);
        let sum: u64 = m.native.pixels.iter().map(|&p| p as u64).sum();
        let area = common::square_union_area(&cells, cfg.cell_px, cfg.native_size.0, cfg.native_size.1);
        prop_assert_eq!(sum, 255 * area as u64);
        prop_assert!(m.native.pixels.iter().all(|&p| p == 0 || p == 255));
    }

    #[test]
    fn closest_enemy_matches_brute_force(seed in any::<u64>()) {
        let s = common::random_state(seed, 6);
        prop_assert_eq!(closest_enemy_to_base(&s), common::brute_closest(&s));
    }

    #[test]
    fn resolve_targets_is_pure(seed in any::<u64>()) {
        let s = common::random_state(seed, 5);
        let gm = GoalMap::from_entries([("g".to_string(), vec![
            TargetSpec::new(TargetSelector::ClosestEnemyToBase, 0),
            TargetSpec::new(TargetSelector::FixedLocation { cell: Cell::new(4, 4) }, 1),
        ])]);
        prop_assert_eq!(resolve_targets(&gm, &s, "g").unwrap(), resolve_targets(&gm, &s.clone(), "g").unwrap());
    }

    #[test]
    fn goal_bonus_is_non_negative(seed in any::<u64>(), kills in prop::collection::vec((2u32..12, 0u32..2, 0i32..9, 0i32..9), 0..8)) {
        let s = common::random_state(seed, 6);
        let gm = GoalMap::from_entries([
            ("a".to_string(), vec![TargetSpec::new(TargetSelector::ClosestEnemyToBase, 0)]),
            ("b".to_string(), vec![TargetSpec::new(TargetSelector::FixedLocation { cell: Cell::new(4, 4) }, 0)]),
        ]);
        let metas: BTreeMap<String, TargetMeta> = ["a", "b"].iter().map(|g| (g.to_string(), resolve_targets(&gm, &s, g).unwrap())).collect();
        let membership: BTreeMap<EntityId, String> = [(EntityId(0), "a".to_string()), (EntityId(1), "b".to_string())].into();
        let events: Vec<GameEvent> = kills.iter().map(|&(e, by, c, r)| GameEvent::EnemyDestroyed {
            enemy: EntityId(e), cell: Cell::new(c, r), by: EntityId(by),
        }).collect();
        prop_assert!(goal_bonus(&events, &metas, &membership).values().all(|&b| b >= 0.0));
        prop_assert!(goal_bonus(&[], &metas, &membership).values().all(|&b| b == 0.0));
    }

    #[test]
    fn returns_match_forward_sums(
        rewards in prop::collection::vec(-20.0f64..20.0, 1..6), bootstrap in -50.0f64..50.0,
        terminal in any::<bool>(), gamma in 0.0f64..1.0,
    ) {
        let buf = synthetic_buffer(&rewards, bootstrap, terminal);
        let (ret, adv) = compute_returns(&buf, gamma).unwrap();
        let oracle = common::forward_sum_returns(&rewards, bootstrap, terminal, gamma);
        for (i, (a, b)) in ret.iter().zip(&oracle).enumerate() {
            prop_assert!((a - b).abs() <= 1e-6, "t={} {} vs {}", i, a, b);
            prop_assert_eq!(adv[i], a - buf.steps[i].value);
        }
    }

    #[test]
    fn entropy_is_bounded_by_uniform(logits in prop::collection::vec(-10.0f32..10.0, 6)) {
        let p = softmax(&logits);
        let h = entropy(&p);
        prop_assert!(h >= -1e-6);
        prop_assert!(h <= (6.0f64).ln() + 1e-6);
    }

    #[test]
    fn clipping_bounds_the_global_norm(scale in 1.0f32..1e4, seed in any::<u64>()) {
        let arch = Architecture::single_stream(1);
        let mut g = NetworkParams::<f32>::init(arch, seed);
        g.scale(scale);
        g.clip_global_norm(40.0);
        prop_assert!(g.global_norm() <= 40.0 * (1.0 + 1e-5));
    }

    #[test]
    fn aggregation_matches_recomputation(eps in prop::collection::vec((-100i32..500, 1u64..400), 0..40)) {
        let per: Vec<EpisodeResult> = eps.iter().map(|&(r, s)| EpisodeResult {
            total_reward: r as f64 * 0.5, steps: s, status: tankdef::engine::Status::BaseDestroyed,
        }).collect();
        let rep = aggregate(7, 1, per.clone());
        let n = per.len();
        let mut rs = 0.0;
        let mut ss = 0.0;
        for e in &per { rs += e.total_reward; ss += e.steps as f64; }
        let (mr, ms) = if n == 0 { (0.0, 0.0) } else { (rs / n as f64, ss / n as f64) };
        prop_assert_eq!(rep.mean_total_reward, mr);
        prop_assert_eq!(rep.mean_steps_per_episode, ms);
        prop_assert_eq!(rep.insufficient_data, n == 0);
    }

    #[test]
    fn csv_report_round_trips(eps in prop::collection::vec((-1e3f64..1e3, 1u64..400), 1..20), step in any::<u64>()) {
        let per: Vec<EpisodeResult> = eps.iter().map(|&(r, s)| EpisodeResult {
            total_reward: r, steps: s, status: tankdef::engine::Status::StepLimit,
        }).collect();
        let rep = aggregate(step, 3, per);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        export_report(std::slice::from_ref(&rep), None, &[], &path, ReportFormat::Csv).unwrap();
        let rows = read_csv_report(&path).unwrap();
        prop_assert_eq!(rows.len(), 1);
        prop_assert_eq!(rows[0].milestone_step, Some(step));
        prop_assert_eq!(rows[0].mean_total_reward, rep.mean_total_reward);
        prop_assert_eq!(rows[0].mean_steps_per_episode, rep.mean_steps_per_episode);
    }
}

fn shared_cache() -> Arc<tankdef::nn::ForwardCache<f32>> {
    use std::sync::OnceLock;
    static CACHE: OnceLock<Arc<tankdef::nn::ForwardCache<f32>>> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let p = NetworkParams::<f32>::init(Architecture::single_stream(1), 0);
            let state = vec![0.5f32; 84 * 84];
            Arc::new(forward(&p, NetInput { state: &state, mask: None }).unwrap().1)
        })
        .clone()
}

fn synthetic_buffer(rewards: &[f64], bootstrap: f64, terminal: bool) -> RolloutBuffer<f32> {
    let cache = shared_cache();
    RolloutBuffer {
        steps: rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| RolloutStep {
                cache: cache.clone(),
                action: i % 6,
                reward: r,
                value: (i as f64) * 0.25 - 0.5,
            })
            .collect(),
        bootstrap,
        terminal,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_mask_weights_reduce_to_single_stream(seed in any::<u64>()) {
        let dual = NetworkParams::<f32>::init(Architecture::dual_stream(2), seed);
        let single_arch = Architecture::single_stream(2);
        let mut tensors: Vec<Tensor<f32>> = dual.tensors().to_vec();
        for t in &mut tensors[4..8] { t.fill(0.0); }
        let zeroed = NetworkParams::from_tensors(*dual.arch(), tensors.clone()).unwrap();
        // drop the mask stream and the fc columns that read it
        let fc = &tensors[8];
        let (rows, cols) = (fc.shape()[0], fc.shape()[1]);
        let half = cols / 2;
        let fc_state: Vec<f32> = fc.data().chunks_exact(cols).flat_map(|r| r[..half].to_vec()).collect();
        let mut single_t: Vec<Tensor<f32>> = tensors[..4].to_vec();
        single_t.push(Tensor::from_vec(&[rows, half], fc_state).unwrap());
        single_t.extend(tensors[9..].iter().cloned());
        let single = NetworkParams::from_tensors(single_arch, single_t).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state: Vec<f32> = (0..2 * 84 * 84).map(|_| rng.gen()).collect();
        let mask: Vec<f32> = (0..84 * 84).map(|_| rng.gen()).collect();
        let (a, _) = forward(&zeroed, NetInput { state: &state, mask: Some(&mask) }).unwrap();
        let (b, _) = forward(&single, NetInput { state: &state, mask: None }).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) { prop_assert!((x - y).abs() <= 1e-5); }
        prop_assert!((a.value - b.value).abs() <= 1e-5);
    }

    #[test]
    fn scripted_runtime_is_reproducible(seed in any::<u64>(), policy in 0usize..4) {
        let policy = ScriptedPolicy::ALL[policy];
        let sc = Scenario::small(StrategyConfig::scripted(policy));
        let run = || {
            let mut env = sc.new_env(seed).unwrap();
            let mut rt: MtsRuntime = sc.runtime(NetworkSource::Fresh { seed }, seed).unwrap();
            let mut trace = Vec::new();
            while !env.state().is_terminal() {
                let obs = BTreeMap::new();
                let d = rt.decide(env.state(), &obs).unwrap();
                trace.push(d.actions.clone());
                env.step(&d.actions).unwrap();
            }
            (trace, env.state().state_hash())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn decide_partitions_players_into_groups(seed in any::<u64>()) {
        let sc = Scenario::small(tankdef::scenario::strategy_preset("goal_map_pair").unwrap());
        let rt = sc.runtime(NetworkSource::Fresh { seed }, seed).unwrap();
        let state = sc.new_state(seed).unwrap();
        let membership = rt.membership();
        let mut seen: Vec<EntityId> = membership.keys().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, state.player_ids());
        let total: usize = rt.group_ids().iter().map(|g| rt.members(g).unwrap().len()).sum();
        prop_assert_eq!(total, state.player_ids().len());
    }
}

#[test]
fn render_matches_grid_size() {
    let s = load_stage(SMALL_STAGE, &cfg_small(), 0).unwrap();
    let f = render_frame(&s, 10);
    assert_eq!((f.width, f.height), (90, 90));
}
