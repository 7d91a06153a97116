//! Trains the goal-map pair on the small stage, then compares the greedy
//! final policy against random play.
//!
//!     cargo run --release --example train_small -- 20000 4 /tmp/run

use std::path::PathBuf;
use std::time::Instant;

use tankdef::a3c::{train, Hyperparams, TrainConfig};
use tankdef::engine::ScriptedPolicy;
use tankdef::eval::{evaluate, evaluate_with};
use tankdef::mts::{NetworkSource, StrategyConfig};
use tankdef::scenario::Scenario;

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let workers: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let out_dir: PathBuf = args.next().unwrap_or_else(|| "train_small_out".into()).into();

    let cfg = TrainConfig {
        scenario: Scenario::small(StrategyConfig::goal_map_pair()),
        hyper: Hyperparams {
            workers,
            total_steps: steps,
            seed: 1,
            ..Hyperparams::default()
        },
        out_dir,
    };
    let started = Instant::now();
    let out = train(&cfg).unwrap();
    println!(
        "{} decision steps, {} updates, {} episodes in {:.0} s; log at {}",
        out.final_set.step,
        out.updates,
        out.episodes,
        started.elapsed().as_secs_f64(),
        out.log_path.display()
    );

    let learned = evaluate(&out.final_set, &cfg.scenario, 3000, 7).unwrap();
    let random = evaluate_with(
        &Scenario::small(StrategyConfig::scripted(ScriptedPolicy::Random)),
        NetworkSource::Fresh { seed: 0 },
        0,
        3000,
        7,
    )
    .unwrap();
    for (name, r) in [("learned", &learned), ("random", &random)] {
        println!(
            "{name:<8} reward {:>6.2}  steps/episode {:>5.1}  ({} episodes)",
            r.mean_total_reward, r.mean_steps_per_episode, r.episodes
        );
    }
}
