//! Resolves a goal map against a live state and writes the rendered goal
//! mask next to the game frame.
//!
//!     cargo run --release --example goal_mask -- /tmp/goal

use std::path::PathBuf;

use tankdef::engine::{Action, EngineConfig, DEFAULT_STAGE};
use tankdef::goalmap::{render_mask, resolve_targets, GoalMap};
use tankdef::observation::{render_frame, ObsConfig};

const GOALS: &str = r#"
[[yellow]]
selector = "all_enemies_in_region"
rect = [0, 0, 6, 12]
priority = 0
bonus = 2.0
working_region = [0, 0, 6, 12]

[[green]]
selector = "closest_enemy_to_base"
priority = 0

[[green]]
selector = "fixed_location"
cell = [6, 9]
priority = 1
"#;

fn main() {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "goal_mask_out".into()).into();
    std::fs::create_dir_all(&out).unwrap();

    let cfg = EngineConfig::default();
    let mut state = tankdef::engine::load_stage(DEFAULT_STAGE, &cfg, 3).unwrap();
    // let the enemies spread out a little
    for _ in 0..40 {
        let idle = state.alive_player_ids().into_iter().map(|id| (id, Action::Noop)).collect();
        state.step(&idle).unwrap();
    }
    let goals = GoalMap::from_toml(GOALS).unwrap();
    goals.validate(13, 13).unwrap();
    let obs = ObsConfig::default();

    render_frame(&state, obs.cell_px).save_png(&out.join("frame.png")).unwrap();
    for (group, _) in goals.groups() {
        let meta = resolve_targets(&goals, &state, group).unwrap();
        for t in &meta.resolved {
            println!("{group}: priority {} -> {:?}", t.priority, t.cell);
        }
        let mask = render_mask(&meta, &obs);
        mask.native.save_png(&out.join(format!("mask_{group}.png"))).unwrap();
    }
    println!("wrote {}", out.display());
}
