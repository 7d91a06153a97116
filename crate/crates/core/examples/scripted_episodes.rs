//! Plays the default stage with each scripted player policy and prints the
//! mean episode length and team reward.
//!
//!     cargo run --release --example scripted_episodes -- 20

use std::collections::BTreeMap;

use tankdef::engine::{load_stage, Action, EngineConfig, EntityId, ScriptedController, ScriptedPolicy, DEFAULT_STAGE};

fn main() {
    let episodes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = EngineConfig::default();

    let start = load_stage(DEFAULT_STAGE, &cfg, 0).unwrap();
    for row in start.grid.rows() {
        println!("{row}");
    }
    println!();

    for policy in ScriptedPolicy::ALL {
        let (mut ticks, mut reward) = (0u64, 0.0);
        for seed in 0..episodes {
            let mut state = load_stage(DEFAULT_STAGE, &cfg, seed).unwrap();
            let mut ctl = ScriptedController::new(policy, seed);
            while !state.is_terminal() {
                let actions: BTreeMap<EntityId, Action> =
                    state.alive_player_ids().into_iter().map(|id| (id, ctl.act(&state, id))).collect();
                reward += state.step(&actions).unwrap().rewards.values().sum::<f64>();
            }
            ticks += state.tick;
        }
        println!(
            "{:<12} mean ticks {:>7.1}  mean reward {:>6.1}",
            policy.name(),
            ticks as f64 / episodes as f64,
            reward / episodes as f64
        );
    }
}
